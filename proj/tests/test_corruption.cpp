#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "deskmt/corruption.hpp"

using namespace deskmt;

namespace {

Vocab test_vocab(int size = 1000, int sentinels = 100) {
  MonoCorpus c;
  c.lang = LangCode("aym");
  c.source_tag = "test";
  c.lines = {"abc def"};
  c.recount();
  return train_vocab({c}, size, sentinels);
}

}  // namespace

TEST_CASE("rate zero is a no-op") {
  auto v = test_vocab();
  std::mt19937_64 rng(1);
  auto ex = corrupt({5, 6, 7}, 0.0, rng, v);
  CHECK(ex.input_ids == TokenSeq{5, 6, 7});
  CHECK(ex.target_ids == TokenSeq{Vocab::kEos});
  CHECK(ex.n_spans == 0);
  CHECK(ex.n_dropped == 0);
  CHECK(splice(ex, v) == TokenSeq{5, 6, 7});
}

TEST_CASE("hand-traced merged span") {
  auto v = test_vocab();
  TokenSeq ids = {10, 11, 12, 13, 14, 15, 16, 17, 18, 19};
  auto ex = corrupt_with_positions(ids, {3, 4}, v);
  int s0 = v.sentinel_id(0);
  CHECK(ex.input_ids == TokenSeq{10, 11, 12, s0, 15, 16, 17, 18, 19});
  CHECK(ex.target_ids == TokenSeq{s0, 13, 14, Vocab::kEos});
  CHECK(ex.n_spans == 1);
  CHECK(ex.n_dropped == 2);
  CHECK(splice(ex, v) == ids);
}

TEST_CASE("two separated spans keep sentinel order") {
  auto v = test_vocab();
  TokenSeq ids = {10, 11, 12, 13, 14, 15};
  auto ex = corrupt_with_positions(ids, {0, 3, 4}, v);
  int s0 = v.sentinel_id(0), s1 = v.sentinel_id(1);
  CHECK(ex.input_ids == TokenSeq{s0, 11, 12, s1, 15});
  CHECK(ex.target_ids == TokenSeq{s0, 10, s1, 13, 14, Vocab::kEos});
  CHECK(ex.n_spans == 2);
  CHECK(splice(ex, v) == ids);
}

TEST_CASE("drop count is exact and rounds half up") {
  CHECK(drop_count(0.15, 10) == 2);   // 1.5 rounds up
  CHECK(drop_count(0.15, 3) == 0);    // 0.45 rounds down
  CHECK(drop_count(0.2, 10) == 2);
  CHECK(drop_count(0.0, 100) == 0);
  auto v = test_vocab();
  std::mt19937_64 rng(3);
  for (int len : {1, 2, 5, 17, 100}) {
    TokenSeq ids(len, 5);
    auto ex = corrupt(ids, 0.15, rng, v);
    CHECK(ex.n_dropped == drop_count(0.15, len));
    CHECK(static_cast<int>(ex.input_ids.size()) + ex.n_dropped - ex.n_spans == len);
  }
}

TEST_CASE("corrupt is deterministic per seed") {
  auto v = test_vocab();
  TokenSeq ids(50, 7);
  std::mt19937_64 a(42), b(42), c(43);
  auto ea = corrupt(ids, 0.3, a, v);
  auto eb = corrupt(ids, 0.3, b, v);
  auto ec = corrupt(ids, 0.3, c, v);
  CHECK(ea.input_ids == eb.input_ids);
  CHECK(ea.target_ids == eb.target_ids);
  CHECK(ea.input_ids != ec.input_ids);
}

TEST_CASE("splice inverts corrupt (property)") {
  auto v = test_vocab();
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 500; ++trial) {
    size_t len = 1 + rng() % 60;
    TokenSeq ids(len);
    for (auto& t : ids) t = 3 + rng() % 250;
    double rate = (rng() % 90) / 100.0;
    auto ex = corrupt(ids, rate, rng, v);
    CHECK(splice(ex, v) == ids);
    CHECK(ex.n_dropped == drop_count(rate, len));
    // sentinels strictly increasing in k in both sequences
    int last_in = -1, last_tg = -1;
    for (int id : ex.input_ids)
      if (v.is_sentinel(id)) {
        CHECK(v.sentinel_index(id) == last_in + 1);
        last_in = v.sentinel_index(id);
      }
    for (int id : ex.target_ids)
      if (v.is_sentinel(id)) {
        CHECK(v.sentinel_index(id) == last_tg + 1);
        last_tg = v.sentinel_index(id);
      }
  }
}

TEST_CASE("invalid inputs") {
  auto v = test_vocab();
  std::mt19937_64 rng(1);
  CHECK_THROWS_AS(corrupt({}, 0.1, rng, v), Error);
  CHECK_THROWS_AS(corrupt({1, 2}, 1.0, rng, v), Error);
  CHECK_THROWS_AS(corrupt({1, 2}, -0.1, rng, v), Error);
}

TEST_CASE("splice detects sentinel mismatch") {
  auto v = test_vocab();
  DenoisingExample ex;
  ex.input_ids = {10, v.sentinel_id(0), 12};
  ex.target_ids = {v.sentinel_id(1), 11, Vocab::kEos};  // wrong sentinel
  CHECK_THROWS_AS(splice(ex, v), Error);
}

TEST_CASE("batch stream shapes and mix") {
  auto v = test_vocab();
  MonoCorpus c;
  c.lang = LangCode("aym");
  c.source_tag = "t";
  c.lines = {"aa bb", "cc dd", "ee ff", "gg hh", "ii jj"};
  c.recount();
  DenoisingStream stream({c}, v, 0.15, 16, 2, 11);
  auto b1 = stream.next();
  auto b2 = stream.next();
  auto b3 = stream.next();
  CHECK(b1.inputs.size() == 2);
  CHECK(b2.inputs.size() == 2);
  CHECK(b3.inputs.size() == 1);
  for (const auto& s : b1.inputs) CHECK(s.size() == b1.input_len);
  for (const auto& s : b1.targets) CHECK(s.size() == b1.target_len);

  // determinism per seed
  DenoisingStream s1({c}, v, 0.15, 16, 2, 11), s2({c}, v, 0.15, 16, 2, 11);
  CHECK(s1.next().inputs == s2.next().inputs);
}

TEST_CASE("batch stream truncates before corruption") {
  auto v = test_vocab();
  MonoCorpus c;
  c.lang = LangCode("aym");
  c.source_tag = "t";
  c.lines = {"aaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaa bbbbbbbbbb cccc"};
  c.recount();
  DenoisingStream stream({c}, v, 0.0, 8, 1, 1);
  auto b = stream.next();
  CHECK(b.inputs[0].size() <= 8);
}

TEST_CASE("debug dump format") {
  DenoisingExample ex;
  ex.input_ids = {1, 2, 3};
  ex.target_ids = {9, 1};
  CHECK(dump_example(ex) == "1 2 3|9 1");
}
