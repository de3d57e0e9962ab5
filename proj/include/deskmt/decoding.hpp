#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "deskmt/error.hpp"
#include "deskmt/model.hpp"
#include "deskmt/tokenizer.hpp"

namespace deskmt {

struct BeamConfig {
  int beam_size = 4;
  int max_len = 64;
  double length_penalty_alpha = 0.6;

  void validate() const {
    require(beam_size >= 1 && max_len >= 1 && length_penalty_alpha >= 0, "CONFIG_ERROR",
            "beam_size and max_len must be >= 1, alpha >= 0");
  }
};

// GNMT length penalty; len counts generated tokens excluding EOS.
inline double length_penalty(size_t len, double alpha) {
  return std::pow((5.0 + static_cast<double>(len)) / 6.0, alpha);
}

namespace decode_detail {

// Log-softmax of the last decoder position for each candidate prefix.
// prefix excludes the BOS pad; candidates are all ids except PAD.
inline std::vector<double> next_log_probs(const Params<float>& params, const TokenSeq& src,
                                          const TokenSeq& prefix) {
  TokenSeq dec_in;
  dec_in.push_back(Vocab::kPad);
  dec_in.insert(dec_in.end(), prefix.begin(), prefix.end());
  auto logits = forward<float>(nullptr, params, {src}, {dec_in});
  long T = logits->shape[1], V = logits->shape[2];
  const float* x = logits->data.data() + (T - 1) * V;
  double mx = x[0];
  for (long c = 1; c < V; ++c) mx = std::max(mx, static_cast<double>(x[c]));
  double z = 0;
  for (long c = 0; c < V; ++c) z += std::exp(x[c] - mx);
  double lz = std::log(z) + mx;
  std::vector<double> lp(V);
  for (long c = 0; c < V; ++c) lp[c] = x[c] - lz;
  return lp;
}

}  // namespace decode_detail

// Greedy argmax decoding; ties break toward the lowest token id; the
// returned sequence excludes EOS.
inline TokenSeq greedy_decode(const Params<float>& params, const TokenSeq& src_ids, int max_len) {
  require(max_len >= 1, "CONFIG_ERROR", "max_len must be >= 1");
  TokenSeq out;
  for (int step = 0; step < max_len; ++step) {
    auto lp = decode_detail::next_log_probs(params, src_ids, out);
    int best = -1;
    for (int c = 0; c < static_cast<int>(lp.size()); ++c) {
      if (c == Vocab::kPad) continue;
      if (best < 0 || lp[c] > lp[best]) best = c;
    }
    if (best == Vocab::kEos) break;
    out.push_back(best);
  }
  return out;
}

// Length-normalized beam search: score = logprob / length_penalty(len).
// Each step selects the top beam_size extensions over *all* candidates
// including EOS; EOS extensions retire to a finished pool (consuming their
// beam slot), so with beam_size=1 and alpha=0 the search reduces exactly to
// greedy decoding. The final answer is the best-scoring hypothesis across
// the finished pool and whatever is still ongoing at max_len.
inline TokenSeq beam_decode(const Params<float>& params, const TokenSeq& src_ids,
                            const BeamConfig& cfg) {
  cfg.validate();
  struct Hyp {
    TokenSeq ids;
    double logprob = 0;
    bool finished = false;
  };
  auto score = [&](const Hyp& h) {
    return h.logprob / length_penalty(h.ids.size(), cfg.length_penalty_alpha);
  };
  auto better = [&](const Hyp& a, const Hyp& b) {
    double sa = score(a), sb = score(b);
    if (sa != sb) return sa > sb;
    if (a.ids != b.ids) return a.ids < b.ids;  // deterministic tie-break
    return a.finished && !b.finished;
  };

  std::vector<Hyp> beam{{{}, 0.0, false}};
  std::vector<Hyp> finished;

  for (int step = 0; step < cfg.max_len && !beam.empty(); ++step) {
    std::vector<Hyp> candidates;
    for (const auto& h : beam) {
      auto lp = decode_detail::next_log_probs(params, src_ids, h.ids);
      for (int c = 0; c < static_cast<int>(lp.size()); ++c) {
        if (c == Vocab::kPad) continue;
        Hyp nh{h.ids, h.logprob + lp[c], c == Vocab::kEos};
        if (c != Vocab::kEos) nh.ids.push_back(c);
        candidates.push_back(std::move(nh));
      }
    }
    size_t keep = std::min<size_t>(cfg.beam_size, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + keep, candidates.end(), better);
    candidates.resize(keep);
    beam.clear();
    for (auto& c : candidates)
      (c.finished ? finished : beam).push_back(std::move(c));
  }
  for (auto& h : beam) finished.push_back(std::move(h));
  require(!finished.empty(), "DECODE_ERROR", "beam search produced no hypotheses");
  return std::min_element(finished.begin(), finished.end(),
                          [&](const Hyp& a, const Hyp& b) { return better(a, b); })
      ->ids;
}

}  // namespace deskmt
