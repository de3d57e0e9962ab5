#pragma once

// Synthetic two-language toy task used by the bundled fixtures and the test
// suites: source sentences are drawn from a tiny Spanish-like word list and
// the "translation" maps each word to its reversed form, so a small model
// can learn the task quickly and exact references exist for every input.

#include <algorithm>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "deskmt/corpus.hpp"

namespace deskmt::toy {

inline const std::vector<std::string>& source_words() {
  static const std::vector<std::string> words = {
      "casa", "perro", "luna",  "sol",   "rio",  "monte", "flor",  "pan",
      "agua", "cielo", "verde", "piedra", "fuego", "nube",  "viento", "sal"};
  return words;
}

inline std::string map_word(const std::string& w) { return std::string(w.rbegin(), w.rend()); }

struct ToyTask {
  ParallelCorpus train, dev, test;
  std::vector<MonoCorpus> mono_all;         // both sides + Spanish source text
  std::vector<MonoCorpus> mono_indigenous;  // target side only
};

inline ToyTask make_toy_task(uint64_t seed, size_t n_train = 300, size_t n_dev = 40,
                             size_t n_test = 40) {
  std::mt19937_64 rng(seed);
  const auto& words = source_words();
  std::set<std::string> seen;
  auto sample_pair = [&]() {
    for (;;) {
      size_t len = 3 + rng() % 4;
      std::string src, tgt;
      for (size_t i = 0; i < len; ++i) {
        const std::string& w = words[rng() % words.size()];
        if (i) {
          src += ' ';
          tgt += ' ';
        }
        src += w;
        tgt += map_word(w);
      }
      if (seen.insert(src).second) return SentencePair{src, tgt};
    }
  };

  ToyTask task;
  LangCode es("es"), quy("quy");
  for (auto* pc : {&task.train, &task.dev, &task.test}) {
    pc->src_lang = es;
    pc->tgt_lang = quy;
  }
  for (size_t i = 0; i < n_train; ++i) task.train.pairs.push_back(sample_pair());
  for (size_t i = 0; i < n_dev; ++i) task.dev.pairs.push_back(sample_pair());
  for (size_t i = 0; i < n_test; ++i) task.test.pairs.push_back(sample_pair());

  MonoCorpus tgt_side, src_side;
  tgt_side.lang = quy;
  tgt_side.source_tag = "toy";
  src_side.lang = es;
  src_side.source_tag = "toy";
  for (const auto& p : task.train.pairs) {
    tgt_side.lines.push_back(p.tgt);
    src_side.lines.push_back(p.src);
  }
  tgt_side.recount();
  src_side.recount();
  task.mono_indigenous = {tgt_side};
  task.mono_all = {tgt_side, src_side};
  return task;
}

}  // namespace deskmt::toy
