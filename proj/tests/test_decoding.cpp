#include <catch2/catch_amalgamated.hpp>

#include "deskmt/decoding.hpp"
#include "deskmt/training.hpp"

using namespace deskmt;

namespace {

ModelConfig micro_model(int vocab_size) {
  ModelConfig cfg;
  cfg.n_layers_enc = 1;
  cfg.n_layers_dec = 1;
  cfg.n_heads = 2;
  cfg.d_model = 16;
  cfg.d_head = 8;
  cfg.d_ff = 32;
  cfg.vocab_size = vocab_size;
  cfg.max_len = 32;
  cfg.dropout = 0.0;
  cfg.rel_pos_buckets = 8;
  return cfg;
}

// Exhaustive search over every decodable sequence, mirroring the beam-search
// scoring rules: hypotheses may finish with EOS at any content length below
// max_len, or survive unfinished at exactly max_len.
struct BestHyp {
  TokenSeq ids;
  double score = 0;
  bool set = false;
};

void exhaustive(const Params<float>& params, const TokenSeq& src, const TokenSeq& prefix,
                double logprob, int max_len, double alpha, BestHyp& best) {
  if (static_cast<int>(prefix.size()) == max_len) {
    double s = logprob / length_penalty(prefix.size(), alpha);
    if (!best.set || s > best.score) best = {prefix, s, true};
    return;
  }
  auto lp = decode_detail::next_log_probs(params, src, prefix);
  double fin = (logprob + lp[Vocab::kEos]) / length_penalty(prefix.size(), alpha);
  if (!best.set || fin > best.score) best = {prefix, fin, true};
  for (int c = 0; c < static_cast<int>(lp.size()); ++c) {
    if (c == Vocab::kPad || c == Vocab::kEos) continue;
    TokenSeq next = prefix;
    next.push_back(c);
    exhaustive(params, src, next, logprob + lp[c], max_len, alpha, best);
  }
}

}  // namespace

TEST_CASE("length penalty") {
  CHECK(length_penalty(1, 0.6) == Catch::Approx(1.0));
  CHECK(length_penalty(1, 0.0) == Catch::Approx(1.0));
  CHECK(length_penalty(7, 0.6) == Catch::Approx(std::pow(2.0, 0.6)));
  CHECK(length_penalty(0, 1.0) == Catch::Approx(5.0 / 6.0));
  CHECK(length_penalty(13, 0.0) == Catch::Approx(1.0));
}

TEST_CASE("config validation") {
  BeamConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.beam_size = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = BeamConfig{};
  cfg.length_penalty_alpha = -0.1;
  CHECK_THROWS_AS(cfg.validate(), Error);
  CHECK_THROWS_AS(greedy_decode(init_model<float>(micro_model(20), 1), {4, 5}, 0), Error);
}

TEST_CASE("decoding respects max_len and is deterministic") {
  auto p = init_model<float>(micro_model(20), 21);
  TokenSeq src{4, 5, 6, 1};

  auto g1 = greedy_decode(p, src, 5);
  auto g2 = greedy_decode(p, src, 5);
  CHECK(g1 == g2);
  CHECK(g1.size() <= 5);

  BeamConfig cfg;
  cfg.max_len = 5;
  auto b1 = beam_decode(p, src, cfg);
  auto b2 = beam_decode(p, src, cfg);
  CHECK(b1 == b2);
  CHECK(b1.size() <= 5);

  cfg.max_len = 1;
  CHECK(beam_decode(p, src, cfg).size() <= 1);
  CHECK(greedy_decode(p, src, 1).size() <= 1);
}

TEST_CASE("unpruned beam search matches an exhaustive enumeration") {
  auto p = init_model<float>(micro_model(10), 33);
  for (double alpha : {0.0, 0.6, 1.2}) {
    for (uint64_t src_seed : {1u, 2u, 3u}) {
      TokenSeq src{static_cast<int>(3 + src_seed), static_cast<int>(4 + src_seed), 1};
      BeamConfig cfg;
      cfg.beam_size = 4096;  // wider than the full candidate tree: no pruning
      cfg.max_len = 3;
      cfg.length_penalty_alpha = alpha;
      auto beam = beam_decode(p, src, cfg);

      BestHyp best;
      exhaustive(p, src, {}, 0.0, cfg.max_len, alpha, best);
      CAPTURE(alpha, src_seed);
      CHECK(beam == best.ids);
    }
  }
}

TEST_CASE("beam_size=1 with alpha=0 reduces to greedy decoding") {
  auto p = init_model<float>(micro_model(24), 55);
  std::mt19937_64 rng(8);
  BeamConfig cfg;
  cfg.beam_size = 1;
  cfg.max_len = 8;
  cfg.length_penalty_alpha = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    size_t len = 2 + rng() % 5;
    TokenSeq src;
    for (size_t i = 0; i < len; ++i) src.push_back(3 + static_cast<int>(rng() % 21));
    src.push_back(Vocab::kEos);
    CAPTURE(trial, src);
    CHECK(beam_decode(p, src, cfg) == greedy_decode(p, src, cfg.max_len));
  }
}

TEST_CASE("on a memorized task greedy and beam agree with the references") {
  // eight single-word pairs; a micro model memorizes them quickly
  ParallelCorpus train;
  train.src_lang = LangCode("es");
  train.tgt_lang = LangCode("quy");
  for (const char* w : {"casa", "perro", "luna", "sol", "rio", "monte", "flor", "pan"}) {
    std::string s(w);
    train.pairs.push_back({s, std::string(s.rbegin(), s.rend())});
  }

  MonoCorpus side;
  side.lang = LangCode("quy");
  side.source_tag = "pairs";
  for (const auto& pr : train.pairs) {
    side.lines.push_back(pr.src);
    side.lines.push_back(pr.tgt);
  }
  side.recount();
  Vocab vocab = train_vocab({side}, 300, 4);

  auto mcfg = micro_model(vocab.size);
  mcfg.d_model = 32;
  mcfg.d_head = 16;
  mcfg.d_ff = 64;
  Checkpoint start;
  start.params = init_model<float>(mcfg, 7);
  start.opt.reset(start.params);
  start.stage = stage::kPretrain1;
  start.history = {stage::kInit};

  TrainConfig cfg;
  cfg.learning_rate = 3e-3;
  cfg.warmup_steps = 10;
  cfg.batch_size = 8;
  cfg.max_len = 24;
  cfg.steps_or_epochs = 1;
  cfg.seed = 7;
  auto trained = finetune_A(start, train, train, 2000, cfg, vocab);

  BeamConfig bc;
  bc.max_len = 24;
  int exact = 0;
  for (const auto& pr : train.pairs) {
    TokenSeq src = encode(vocab, pr.src);
    src.push_back(Vocab::kEos);
    auto g = greedy_decode(trained.params, src, 24);
    auto b = beam_decode(trained.params, src, bc);
    CHECK(g == b);
    if (decode(vocab, g) == pr.tgt) ++exact;
  }
  CHECK(exact == 8);
}
