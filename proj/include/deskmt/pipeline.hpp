#pragma once

#include <string>
#include <vector>

#include "deskmt/decoding.hpp"
#include "deskmt/metrics.hpp"
#include "deskmt/training.hpp"

namespace deskmt {

// Translates one detokenized source line into one detokenized hypothesis.
inline std::string translate_line(const Params<float>& params, const Vocab& vocab,
                                  const std::string& line, const BeamConfig& cfg) {
  TokenSeq src = encode(vocab, line);
  src.push_back(Vocab::kEos);
  size_t limit = static_cast<size_t>(params.cfg.max_len);
  if (src.size() > limit) src.resize(limit);
  TokenSeq out = cfg.beam_size == 1 && cfg.length_penalty_alpha == 0
                     ? greedy_decode(params, src, cfg.max_len)
                     : beam_decode(params, src, cfg);
  return decode(vocab, out);
}

inline std::vector<std::string> translate_lines(const Params<float>& params, const Vocab& vocab,
                                                const std::vector<std::string>& lines,
                                                const BeamConfig& cfg) {
  std::vector<std::string> out;
  out.reserve(lines.size());
  for (const auto& line : lines) out.push_back(translate_line(params, vocab, line, cfg));
  return out;
}

// Decodes the test set and scores the hypotheses against the references.
inline EvalRow evaluate(const Params<float>& params, const Vocab& vocab,
                        const ParallelCorpus& test, const BeamConfig& cfg) {
  require(!test.pairs.empty(), "EMPTY_CORPUS", "evaluation requires a non-empty test set");
  std::vector<std::string> srcs, refs;
  for (const auto& p : test.pairs) {
    srcs.push_back(p.src);
    refs.push_back(p.tgt);
  }
  auto hyps = translate_lines(params, vocab, srcs, cfg);
  EvalRow row;
  row.pair = test.pair_code();
  row.bleu = bleu(hyps, refs);
  row.chrf_pp = chrf_pp(hyps, refs);
  row.n_sentences = test.pairs.size();
  return row;
}

// Scores already-decoded hypothesis lines against reference lines.
inline EvalRow score_lines(const std::string& pair_code, const std::vector<std::string>& hyps,
                           const std::vector<std::string>& refs) {
  EvalRow row;
  row.pair = pair_code;
  row.bleu = bleu(hyps, refs);
  row.chrf_pp = chrf_pp(hyps, refs);
  row.n_sentences = hyps.size();
  return row;
}

}  // namespace deskmt
