#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "deskmt/corpus.hpp"
#include "deskmt/error.hpp"
#include "deskmt/unicode.hpp"

namespace deskmt {

namespace metrics_detail {

inline std::vector<std::string> ws_tokens(const std::string& text) {
  std::vector<std::string> toks;
  std::istringstream ss(unicode::nfc(text));
  std::string t;
  while (ss >> t) toks.push_back(t);
  return toks;
}

// n-gram multiset counts over a token sequence.
template <typename Tok>
std::map<std::vector<Tok>, long> ngram_counts(const std::vector<Tok>& toks, int n) {
  std::map<std::vector<Tok>, long> counts;
  if (static_cast<int>(toks.size()) >= n)
    for (size_t i = 0; i + n <= toks.size(); ++i)
      counts[std::vector<Tok>(toks.begin() + i, toks.begin() + i + n)] += 1;
  return counts;
}

template <typename Tok>
long clipped_matches(const std::map<std::vector<Tok>, long>& hyp,
                     const std::map<std::vector<Tok>, long>& ref) {
  long m = 0;
  for (const auto& [g, c] : hyp) {
    auto it = ref.find(g);
    if (it != ref.end()) m += std::min(c, it->second);
  }
  return m;
}

inline std::vector<char32_t> chars_no_space(const std::string& text) {
  std::vector<char32_t> out;
  for (char32_t c : unicode::codepoints(unicode::nfc(text)))
    if (c != U' ' && c != U'\t') out.push_back(c);
  return out;
}

}  // namespace metrics_detail

// Corpus BLEU: geometric mean of modified n-gram precisions (1..max_n) over
// corpus-summed clipped counts, times the brevity penalty exp(1-r/c) when
// c < r. Zero precisions are floored at 1e-16 so tiny corpora stay defined.
inline double bleu(const std::vector<std::string>& hyps, const std::vector<std::string>& refs,
                   int max_n = 4) {
  require(hyps.size() == refs.size(), "METRIC_ERROR", "hypothesis/reference count mismatch");
  require(!hyps.empty(), "METRIC_ERROR", "empty corpus");
  using namespace metrics_detail;
  constexpr double kFloor = 1e-16;

  std::vector<long> matches(max_n + 1, 0), totals(max_n + 1, 0);
  long hyp_len = 0, ref_len = 0;
  for (size_t i = 0; i < hyps.size(); ++i) {
    auto h = ws_tokens(hyps[i]);
    auto r = ws_tokens(refs[i]);
    hyp_len += static_cast<long>(h.size());
    ref_len += static_cast<long>(r.size());
    for (int n = 1; n <= max_n; ++n) {
      auto hc = ngram_counts(h, n);
      auto rc = ngram_counts(r, n);
      matches[n] += clipped_matches(hc, rc);
      for (const auto& [_, c] : hc) totals[n] += c;
    }
  }
  if (hyp_len == 0) return 0.0;
  double log_p = 0;
  for (int n = 1; n <= max_n; ++n) {
    double p = totals[n] > 0 ? static_cast<double>(matches[n]) / static_cast<double>(totals[n])
                             : 0.0;
    log_p += std::log(std::max(p, kFloor));
  }
  double bp = hyp_len < ref_len
                  ? std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len))
                  : 1.0;
  return bp * std::exp(log_p / max_n);
}

// ChrF++: character n-grams (orders 1..char_n, spaces removed) plus word
// n-grams (orders 1..word_n); per order, precision/recall from corpus-summed
// counts, F_beta with beta=2; orders empty on both sides are skipped; the
// final score is the macro-average over the remaining orders.
inline double chrf_pp(const std::vector<std::string>& hyps, const std::vector<std::string>& refs,
                      int char_n = 6, int word_n = 2, double beta = 2.0) {
  require(hyps.size() == refs.size(), "METRIC_ERROR", "hypothesis/reference count mismatch");
  require(!hyps.empty(), "METRIC_ERROR", "empty corpus");
  using namespace metrics_detail;

  int n_orders = char_n + word_n;
  std::vector<long> tp(n_orders, 0), hyp_total(n_orders, 0), ref_total(n_orders, 0);

  for (size_t i = 0; i < hyps.size(); ++i) {
    auto hc = chars_no_space(hyps[i]);
    auto rc = chars_no_space(refs[i]);
    for (int n = 1; n <= char_n; ++n) {
      auto h = ngram_counts(hc, n);
      auto r = ngram_counts(rc, n);
      tp[n - 1] += clipped_matches(h, r);
      for (const auto& [_, c] : h) hyp_total[n - 1] += c;
      for (const auto& [_, c] : r) ref_total[n - 1] += c;
    }
    auto hw = ws_tokens(hyps[i]);
    auto rw = ws_tokens(refs[i]);
    for (int n = 1; n <= word_n; ++n) {
      auto h = ngram_counts(hw, n);
      auto r = ngram_counts(rw, n);
      tp[char_n + n - 1] += clipped_matches(h, r);
      for (const auto& [_, c] : h) hyp_total[char_n + n - 1] += c;
      for (const auto& [_, c] : r) ref_total[char_n + n - 1] += c;
    }
  }

  double b2 = beta * beta;
  double sum_f = 0;
  int used = 0;
  for (int o = 0; o < n_orders; ++o) {
    if (hyp_total[o] == 0 && ref_total[o] == 0) continue;  // order absent on both sides
    double p = hyp_total[o] > 0 ? static_cast<double>(tp[o]) / hyp_total[o] : 0.0;
    double r = ref_total[o] > 0 ? static_cast<double>(tp[o]) / ref_total[o] : 0.0;
    double denom = b2 * p + r;
    sum_f += denom > 0 ? (1 + b2) * p * r / denom : 0.0;
    ++used;
  }
  return used > 0 ? sum_f / used : 0.0;
}

struct EvalRow {
  std::string pair;
  double bleu = 0;
  double chrf_pp = 0;
  size_t n_sentences = 0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  std::string config_echo;
};

// Report file: TSV `pair<TAB>bleu<TAB>chrf_pp<TAB>n_sentences`, scores x100
// with 3 decimals.
inline std::string format_report(const EvalReport& report,
                                 const std::vector<std::string>& header_comments = {}) {
  std::ostringstream out;
  for (const auto& c : header_comments) out << "# " << c << '\n';
  out << "pair\tbleu\tchrf_pp\tn_sentences\n";
  out.setf(std::ios::fixed);
  out.precision(3);
  for (const auto& r : report.rows)
    out << r.pair << '\t' << r.bleu * 100.0 << '\t' << r.chrf_pp * 100.0 << '\t' << r.n_sentences
        << '\n';
  return out.str();
}

}  // namespace deskmt
