#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "deskmt/corpus.hpp"

using namespace deskmt;
namespace fs = std::filesystem;

namespace {

fs::path tmp_dir() {
  auto d = fs::temp_directory_path() / "deskmt_corpus_test";
  fs::create_directories(d);
  return d;
}

std::string write_tmp(const std::string& name, const std::string& bytes) {
  auto p = tmp_dir() / name;
  std::ofstream out(p, std::ios::binary);
  out << bytes;
  return p.string();
}

}  // namespace

TEST_CASE("language codes") {
  for (const char* c : {"aym", "cni", "bzd", "gn", "oto", "nah", "quy", "tar", "shp", "hch", "es"})
    CHECK_NOTHROW(LangCode(c));
  CHECK_THROWS_AS(LangCode("xx"), Error);
  CHECK_THROWS_AS(LangCode("ES"), Error);
  LangRegistry::instance().register_code("zzt");
  CHECK_NOTHROW(LangCode("zzt"));
  CHECK_THROWS_AS(LangRegistry::instance().register_code("Q1"), Error);
}

TEST_CASE("ingest normalizes lines") {
  auto path = write_tmp("norm.txt", "a\n\nb \n");
  auto c = ingest_monolingual(path, LangCode("aym"), "test");
  REQUIRE(c.lines == std::vector<std::string>{"a", "b"});
  CHECK(c.n_sentences == 2);
  CHECK(c.n_bytes == 4);  // "a\n" + "b\n"
}

TEST_CASE("ingest applies NFC") {
  // e + combining acute composes to precomposed e-acute
  auto path = write_tmp("nfc.txt", "e\xCC\x81\n");
  auto c = ingest_monolingual(path, LangCode("es"), "test");
  CHECK(c.lines[0] == "\xC3\xA9");
}

TEST_CASE("ingest rejects empty and non-UTF8") {
  auto empty = write_tmp("empty.txt", "");
  CHECK_THROWS_WITH(ingest_monolingual(empty, LangCode("es"), "t"),
                    Catch::Matchers::ContainsSubstring("no sentences"));
  auto blank = write_tmp("blank.txt", "\n  \n\t\n");
  CHECK_THROWS_AS(ingest_monolingual(blank, LangCode("es"), "t"), Error);

  auto bad = write_tmp("bad.txt", "ok\n\xFF\xFE\n");
  try {
    ingest_monolingual(bad, LangCode("es"), "t");
    FAIL("expected decode error");
  } catch (const Error& e) {
    CHECK(e.category() == "DECODE_ERROR");
    CHECK(std::string(e.what()).find("offset 3") != std::string::npos);
  }
}

TEST_CASE("mono corpus round-trips through disk") {
  auto path = write_tmp("rt_src.txt", "uno dos\n  tres\ncuatro\t\n");
  auto c = ingest_monolingual(path, LangCode("es"), "t");
  auto out = (tmp_dir() / "rt_out.txt").string();
  write_monolingual(c, out);
  auto c2 = ingest_monolingual(out, LangCode("es"), "t");
  CHECK(c.lines == c2.lines);
  CHECK(c.n_bytes == c2.n_bytes);
}

TEST_CASE("manifest totals and duplicates") {
  CHECK(build_manifest({}, {}).entries.empty());
  MonoCorpus a, b;
  a.lang = LangCode("aym");
  a.source_tag = "wikipedia";
  a.lines = {"x", "y", "z"};
  a.recount();
  b.lang = LangCode("quy");
  b.source_tag = "bible";
  b.lines = {"p", "q", "r", "s", "t"};
  b.recount();
  auto m = build_manifest({a, b}, {"a.txt", "b.txt"});
  CHECK(m.total_sentences == 8);
  CHECK(m.total_bytes == a.n_bytes + b.n_bytes);
  CHECK_THROWS_AS(build_manifest({a, a}, {"a.txt", "a2.txt"}), Error);
}

TEST_CASE("manifest file round-trips byte-exactly") {
  MonoCorpus a;
  a.lang = LangCode("gn");
  a.source_tag = "wikipedia";
  a.lines = {"mba'eichapa"};
  a.recount();
  auto m = build_manifest({a}, {"gn.txt"});
  auto p1 = (tmp_dir() / "m1.tsv").string();
  auto p2 = (tmp_dir() / "m2.tsv").string();
  save_manifest(m, p1);
  auto loaded = load_manifest(p1);
  save_manifest(loaded, p2);
  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  std::string s1((std::istreambuf_iterator<char>(f1)), {});
  std::string s2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(s1 == s2);
}

TEST_CASE("parallel loader") {
  auto path = write_tmp("par.tsv", "hola\tkamisaraki\nbuen dia\taski uru\n");
  auto pc = load_parallel(path, LangCode("es"), LangCode("aym"));
  REQUIRE(pc.pairs.size() == 2);
  CHECK(pc.pairs[0].src == "hola");
  CHECK(pc.pairs[0].tgt == "kamisaraki");
  CHECK(pc.pair_code() == "es-aym");

  auto empty = write_tmp("par_empty.tsv", "");
  CHECK_THROWS_AS(load_parallel(empty, LangCode("es"), LangCode("aym")), Error);

  auto bad = write_tmp("par_bad.tsv", "ok\tfine\nnotab\n");
  try {
    load_parallel(bad, LangCode("es"), LangCode("aym"));
    FAIL("expected format error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
}

namespace {
ParallelCorpus make_pairs(size_t n) {
  ParallelCorpus pc;
  pc.src_lang = LangCode("es");
  pc.tgt_lang = LangCode("quy");
  for (size_t i = 0; i < n; ++i)
    pc.pairs.push_back({"s" + std::to_string(i), "t" + std::to_string(i)});
  return pc;
}
}  // namespace

TEST_CASE("split_dev counting and determinism") {
  auto dev = make_pairs(10);
  auto s = split_dev(dev, 0.8, 7);
  CHECK(s.train_part.pairs.size() == 8);
  CHECK(s.val_part.pairs.size() == 2);
  auto s2 = split_dev(dev, 0.8, 7);
  CHECK(s.train_part.pairs == s2.train_part.pairs);
  CHECK(s.val_part.pairs == s2.val_part.pairs);
  auto s3 = split_dev(dev, 0.8, 8);
  CHECK(s.train_part.pairs != s3.train_part.pairs);  // different seed, different shuffle

  // floor rule at the Table-3 dev size
  auto big = make_pairs(996);
  auto sb = split_dev(big, 0.8, 1);
  CHECK(sb.train_part.pairs.size() == 796);
  CHECK(sb.val_part.pairs.size() == 200);

  CHECK_THROWS_AS(split_dev(dev, 0.0, 1), Error);
  CHECK_THROWS_AS(split_dev(dev, 1.0, 1), Error);
}

TEST_CASE("split_dev partition property") {
  std::mt19937_64 rng(123);
  for (int trial = 0; trial < 50; ++trial) {
    size_t n = 2 + rng() % 40;
    double fraction = 0.05 + 0.9 * (rng() % 1000) / 1000.0;
    auto dev = make_pairs(n);
    auto s = split_dev(dev, fraction, rng());
    CHECK(s.train_part.pairs.size() == static_cast<size_t>(fraction * n));
    CHECK(s.train_part.pairs.size() + s.val_part.pairs.size() == n);
    // union as multiset equals input
    std::vector<std::string> all;
    for (const auto& p : s.train_part.pairs) all.push_back(p.src);
    for (const auto& p : s.val_part.pairs) all.push_back(p.src);
    std::sort(all.begin(), all.end());
    std::vector<std::string> expect;
    for (const auto& p : dev.pairs) expect.push_back(p.src);
    std::sort(expect.begin(), expect.end());
    CHECK(all == expect);
  }
}
