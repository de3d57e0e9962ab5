#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "deskmt/error.hpp"
#include "deskmt/unicode.hpp"

namespace deskmt {

// Language codes: the eleven built-in codes plus user-registered extensions.
class LangRegistry {
public:
  static const std::vector<std::string>& builtin() {
    static const std::vector<std::string> codes = {"aym", "cni", "bzd", "gn",  "oto", "nah",
                                                   "quy", "tar", "shp", "hch", "es"};
    return codes;
  }

  static LangRegistry& instance() {
    static LangRegistry reg;
    return reg;
  }

  void register_code(const std::string& code) {
    validate_shape(code);
    extra_.insert(code);
  }

  bool known(const std::string& code) const {
    const auto& b = builtin();
    return std::find(b.begin(), b.end(), code) != b.end() || extra_.count(code) > 0;
  }

private:
  static void validate_shape(const std::string& code) {
    bool ok = code.size() >= 2 && code.size() <= 3;
    for (char c : code) ok = ok && c >= 'a' && c <= 'z';
    require(ok, "LANG_ERROR", "language code must be 2-3 lowercase ASCII letters: '" + code + "'");
  }

  std::set<std::string> extra_;
};

struct LangCode {
  std::string code;

  LangCode() = default;
  explicit LangCode(std::string c) : code(std::move(c)) {
    require(LangRegistry::instance().known(code), "LANG_ERROR",
            "unknown language code '" + code + "' (register extension codes first)");
  }

  bool operator==(const LangCode& o) const { return code == o.code; }
  bool operator<(const LangCode& o) const { return code < o.code; }
};

struct MonoCorpus {
  LangCode lang;
  std::string source_tag;
  std::vector<std::string> lines;  // NFC, non-empty, no line breaks
  size_t n_sentences = 0;
  uint64_t n_bytes = 0;  // sum of line byte lengths + one newline per line

  void recount() {
    n_sentences = lines.size();
    n_bytes = 0;
    for (const auto& l : lines) n_bytes += l.size() + 1;
  }
};

struct ManifestEntry {
  std::string lang;
  std::string source_tag;
  std::string path;
  size_t n_sentences = 0;
  uint64_t n_bytes = 0;
};

struct Manifest {
  std::vector<ManifestEntry> entries;
  size_t total_sentences = 0;
  uint64_t total_bytes = 0;
};

struct SentencePair {
  std::string src;
  std::string tgt;
  bool operator==(const SentencePair& o) const { return src == o.src && tgt == o.tgt; }
};

struct ParallelCorpus {
  LangCode src_lang;
  LangCode tgt_lang;
  std::vector<SentencePair> pairs;

  std::string pair_code() const { return src_lang.code + "-" + tgt_lang.code; }
};

struct DevSplit {
  uint64_t seed = 0;
  double fraction = 0.0;
  ParallelCorpus train_part;
  ParallelCorpus val_part;
};

namespace detail {
inline std::string read_file_checked(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "IO_ERROR", "cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  std::string bytes = ss.str();
  long long bad = unicode::first_invalid_utf8(bytes);
  if (bad >= 0)
    fail("DECODE_ERROR", "invalid UTF-8 in " + path + " at byte offset " + std::to_string(bad));
  return bytes;
}

inline std::vector<std::string> split_lines(const std::string& bytes) {
  std::vector<std::string> lines;
  size_t start = 0;
  for (size_t i = 0; i <= bytes.size(); ++i) {
    if (i == bytes.size() || bytes[i] == '\n') {
      if (i > start || i < bytes.size()) lines.emplace_back(bytes.substr(start, i - start));
      start = i + 1;
    }
  }
  // A trailing fragment without newline is still a line; an empty trailing
  // fragment after the final newline is not.
  if (!lines.empty() && lines.back().empty() && !bytes.empty() && bytes.back() == '\n')
    lines.pop_back();
  return lines;
}

inline std::string strip_trailing_ws(const std::string& s) {
  size_t end = s.size();
  while (end > 0 && (s[end - 1] == ' ' || s[end - 1] == '\t' || s[end - 1] == '\r')) --end;
  return s.substr(0, end);
}
}  // namespace detail

// Reads a line corpus: one sentence per line, trailing whitespace stripped,
// empty lines dropped, NFC applied.
inline MonoCorpus ingest_monolingual(const std::string& path, const LangCode& lang,
                                     const std::string& source_tag) {
  std::string bytes = detail::read_file_checked(path);
  MonoCorpus corpus;
  corpus.lang = lang;
  corpus.source_tag = source_tag;
  for (auto& raw : detail::split_lines(bytes)) {
    std::string line = detail::strip_trailing_ws(raw);
    if (line.empty()) continue;
    corpus.lines.push_back(unicode::nfc(line));
  }
  require(!corpus.lines.empty(), "EMPTY_CORPUS", "no sentences after normalization: " + path);
  corpus.recount();
  return corpus;
}

inline void write_monolingual(const MonoCorpus& corpus, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "IO_ERROR", "cannot write file: " + path);
  for (const auto& l : corpus.lines) out << l << '\n';
}

inline Manifest build_manifest(const std::vector<MonoCorpus>& corpora,
                               const std::vector<std::string>& paths) {
  require(corpora.size() == paths.size(), "MANIFEST_ERROR", "corpora/path count mismatch");
  Manifest m;
  std::set<std::pair<std::string, std::string>> seen;
  for (size_t i = 0; i < corpora.size(); ++i) {
    const auto& c = corpora[i];
    auto key = std::make_pair(c.lang.code, c.source_tag);
    require(seen.insert(key).second, "MANIFEST_ERROR",
            "duplicate manifest entry: " + c.lang.code + "/" + c.source_tag);
    m.entries.push_back({c.lang.code, c.source_tag, paths[i], c.n_sentences, c.n_bytes});
    m.total_sentences += c.n_sentences;
    m.total_bytes += c.n_bytes;
  }
  return m;
}

// Manifest file: tab-separated, bit-exact rewritable. Leading '#' lines other
// than the totals line are comments and are ignored on load.
inline void save_manifest(const Manifest& m, const std::string& path,
                          const std::vector<std::string>& header_comments = {}) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "IO_ERROR", "cannot write manifest: " + path);
  out << "#manifest\tv1\n";
  for (const auto& c : header_comments) out << "# " << c << '\n';
  for (const auto& e : m.entries)
    out << e.lang << '\t' << e.source_tag << '\t' << e.path << '\t' << e.n_sentences << '\t'
        << e.n_bytes << '\n';
  out << "#total\t" << m.total_sentences << '\t' << m.total_bytes << '\n';
}

inline Manifest load_manifest(const std::string& path) {
  std::string bytes = detail::read_file_checked(path);
  auto lines = detail::split_lines(bytes);
  require(!lines.empty() && lines[0] == "#manifest\tv1", "FORMAT_ERROR",
          "not a manifest file: " + path);
  Manifest m;
  bool saw_total = false;
  for (size_t i = 1; i < lines.size(); ++i) {
    const std::string& l = lines[i];
    std::vector<std::string> cols;
    size_t start = 0;
    for (size_t j = 0; j <= l.size(); ++j)
      if (j == l.size() || l[j] == '\t') {
        cols.push_back(l.substr(start, j - start));
        start = j + 1;
      }
    if (!l.empty() && l[0] == '#') {
      if (cols[0] == "#total") {
        require(cols.size() == 3, "FORMAT_ERROR", "bad totals line in " + path);
        require(std::stoull(cols[1]) == m.total_sentences && std::stoull(cols[2]) == m.total_bytes,
                "FORMAT_ERROR", "manifest totals do not match entries in " + path);
        saw_total = true;
      }
      continue;
    }
    require(cols.size() == 5, "FORMAT_ERROR",
            "bad manifest line " + std::to_string(i + 1) + " in " + path);
    ManifestEntry e{cols[0], cols[1], cols[2], std::stoull(cols[3]),
                    static_cast<uint64_t>(std::stoull(cols[4]))};
    m.total_sentences += e.n_sentences;
    m.total_bytes += e.n_bytes;
    m.entries.push_back(std::move(e));
  }
  require(saw_total, "FORMAT_ERROR", "manifest missing totals line: " + path);
  return m;
}

// Two-column TSV, `src<TAB>tgt` per line.
inline ParallelCorpus load_parallel(const std::string& path, const LangCode& src,
                                    const LangCode& tgt) {
  std::string bytes = detail::read_file_checked(path);
  ParallelCorpus pc;
  pc.src_lang = src;
  pc.tgt_lang = tgt;
  auto lines = detail::split_lines(bytes);
  for (size_t i = 0; i < lines.size(); ++i) {
    std::string line = detail::strip_trailing_ws(lines[i]);
    if (line.empty()) continue;
    size_t tab = line.find('\t');
    require(tab != std::string::npos && line.find('\t', tab + 1) == std::string::npos,
            "FORMAT_ERROR",
            "line " + std::to_string(i + 1) + " of " + path + ": expected exactly one tab");
    std::string s = unicode::nfc(detail::strip_trailing_ws(line.substr(0, tab)));
    std::string t = unicode::nfc(line.substr(tab + 1));
    require(!s.empty() && !t.empty(), "FORMAT_ERROR",
            "line " + std::to_string(i + 1) + " of " + path + ": empty source or target");
    pc.pairs.push_back({std::move(s), std::move(t)});
  }
  require(!pc.pairs.empty(), "EMPTY_CORPUS", "no sentence pairs in " + path);
  return pc;
}

inline void write_parallel(const ParallelCorpus& pc, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "IO_ERROR", "cannot write file: " + path);
  for (const auto& p : pc.pairs) out << p.src << '\t' << p.tgt << '\n';
}

// Seeded Fisher-Yates shuffle, then a prefix of floor(fraction * n) pairs
// becomes the train part and the rest the validation part.
inline DevSplit split_dev(const ParallelCorpus& dev, double fraction, uint64_t seed) {
  require(fraction > 0.0 && fraction < 1.0, "SPLIT_ERROR",
          "fraction must lie strictly between 0 and 1");
  require(dev.pairs.size() >= 2, "SPLIT_ERROR", "need at least 2 dev pairs to split");
  std::vector<size_t> order(dev.pairs.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  for (size_t i = order.size() - 1; i > 0; --i) {
    size_t j = rng() % (i + 1);
    std::swap(order[i], order[j]);
  }
  size_t n_train = static_cast<size_t>(fraction * static_cast<double>(dev.pairs.size()));
  DevSplit split;
  split.seed = seed;
  split.fraction = fraction;
  split.train_part.src_lang = split.val_part.src_lang = dev.src_lang;
  split.train_part.tgt_lang = split.val_part.tgt_lang = dev.tgt_lang;
  for (size_t i = 0; i < order.size(); ++i)
    (i < n_train ? split.train_part : split.val_part).pairs.push_back(dev.pairs[order[i]]);
  return split;
}

}  // namespace deskmt
