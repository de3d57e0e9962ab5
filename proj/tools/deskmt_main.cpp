// Command-line front end for the translation pipeline. Every subcommand
// reads a JSON run-config (--config), writes its artifacts under --out, and
// logs the config hash and seed so runs stay distinguishable after the fact.
// Errors exit with status 1 and a single "CATEGORY: detail" line on stderr.

#include <fcntl.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "deskmt/pipeline.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace deskmt;

namespace {

struct RunContext {
  json cfg;
  std::string cfg_text;
  std::string cfg_hash;
  uint64_t seed = 0;
  fs::path out;

  fs::path artifact(const std::string& name) const { return out / name; }
};

// Exclusive lock on the output directory for the duration of one subcommand.
class DirLock {
 public:
  explicit DirLock(const fs::path& out) : path_(out / ".lock") {
    int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    require(fd >= 0, "LOCK_ERROR",
            "output directory is locked by another run (remove " + path_.string() +
                " if that run is dead)");
    ::close(fd);
  }
  ~DirLock() { ::unlink(path_.c_str()); }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  fs::path path_;
};

std::string hex64(uint64_t v) {
  std::ostringstream ss;
  ss << std::hex << v;
  return ss.str();
}

const json& need(const json& j, const std::string& key, const std::string& where) {
  require(j.contains(key), "CONFIG_ERROR", "missing config key '" + key + "' in " + where);
  return j.at(key);
}

RunContext make_context(const std::string& config_path, const std::string& out_dir,
                        long seed_override) {
  RunContext ctx;
  std::ifstream in(config_path, std::ios::binary);
  require(in.good(), "IO_ERROR", "cannot open config: " + config_path);
  ctx.cfg_text.assign(std::istreambuf_iterator<char>(in), {});
  try {
    ctx.cfg = json::parse(ctx.cfg_text);
  } catch (const json::exception& e) {
    fail("CONFIG_ERROR", "config is not valid JSON: " + std::string(e.what()));
  }
  ctx.cfg_hash = hex64(fnv1a(ctx.cfg_text.data(), ctx.cfg_text.size()));
  ctx.seed = seed_override >= 0 ? static_cast<uint64_t>(seed_override)
                                : need(ctx.cfg, "seed", "top level").get<uint64_t>();
  ctx.out = out_dir;
  fs::create_directories(ctx.out);
  return ctx;
}

void log_run(const RunContext& ctx, const std::string& cmd) {
  std::cout << "deskmt " << cmd << " config_hash=" << ctx.cfg_hash << " seed=" << ctx.seed
            << " out=" << ctx.out.string() << "\n";
}

std::vector<std::string> header_comments(const RunContext& ctx) {
  return {"config_hash " + ctx.cfg_hash, "seed " + std::to_string(ctx.seed)};
}

void register_extension_langs(const RunContext& ctx) {
  if (!ctx.cfg.contains("extra_langs")) return;
  for (const auto& code : ctx.cfg.at("extra_langs"))
    LangRegistry::instance().register_code(code.get<std::string>());
}

// ---- config section loaders ----

TrainConfig train_section(const RunContext& ctx, const std::string& name, bool counting_steps) {
  const json& t = need(need(ctx.cfg, "train", "top level"), name, "train");
  TrainConfig cfg;
  cfg.learning_rate = t.value("learning_rate", cfg.learning_rate);
  cfg.warmup_steps = t.value("warmup_steps", cfg.warmup_steps);
  cfg.batch_size = t.value("batch_size", cfg.batch_size);
  cfg.max_len = t.value("max_len", cfg.max_len);
  cfg.steps_or_epochs =
      counting_steps ? need(t, "steps", "train." + name).get<long>() : t.value("epochs", 1L);
  cfg.eval_every = t.value("eval_every", std::min<long>(cfg.steps_or_epochs, 50));
  cfg.optimizer = t.value("optimizer", cfg.optimizer);
  cfg.corruption_rate = t.value("corruption_rate", cfg.corruption_rate);
  cfg.dropout = t.value("dropout", cfg.dropout);
  cfg.seed = ctx.seed;
  cfg.validate(counting_steps);
  return cfg;
}

ModelConfig model_section(const RunContext& ctx, int vocab_size) {
  const json& m = need(ctx.cfg, "model", "top level");
  ModelConfig cfg;
  cfg.n_layers_enc = m.value("n_layers_enc", cfg.n_layers_enc);
  cfg.n_layers_dec = m.value("n_layers_dec", cfg.n_layers_dec);
  cfg.n_heads = m.value("n_heads", cfg.n_heads);
  cfg.d_model = m.value("d_model", cfg.d_model);
  cfg.d_head = m.value("d_head", cfg.d_head);
  cfg.d_ff = m.value("d_ff", cfg.d_ff);
  cfg.max_len = m.value("max_len", cfg.max_len);
  cfg.dropout = m.value("dropout", cfg.dropout);
  cfg.rel_pos_buckets = m.value("rel_pos_buckets", cfg.rel_pos_buckets);
  cfg.vocab_size = m.value("vocab_size", vocab_size);  // defaults to the trained tokenizer's size
  cfg.validate();
  return cfg;
}

BeamConfig decoding_section(const RunContext& ctx) {
  BeamConfig cfg;
  if (ctx.cfg.contains("decoding")) {
    const json& d = ctx.cfg.at("decoding");
    cfg.beam_size = d.value("beam_size", cfg.beam_size);
    cfg.max_len = d.value("max_len", cfg.max_len);
    cfg.length_penalty_alpha = d.value("alpha", cfg.length_penalty_alpha);
  }
  cfg.validate();
  return cfg;
}

ParallelCorpus load_parallel_section(const RunContext& ctx, const std::string& which) {
  const json& p = need(need(ctx.cfg, "corpus", "top level"), "parallel", "corpus");
  LangCode src(need(p, "src_lang", "corpus.parallel").get<std::string>());
  LangCode tgt(need(p, "tgt_lang", "corpus.parallel").get<std::string>());
  return load_parallel(need(p, which, "corpus.parallel").get<std::string>(), src, tgt);
}

std::vector<MonoCorpus> load_manifest_corpora(const RunContext& ctx) {
  Manifest m = load_manifest(ctx.artifact("manifest.tsv").string());
  std::vector<MonoCorpus> corpora;
  for (const auto& e : m.entries)
    corpora.push_back(ingest_monolingual(e.path, LangCode(e.lang), e.source_tag));
  return corpora;
}

LogFn stdout_logger() {
  return [](uint64_t step, const std::string& split, double loss) {
    std::cout << "step " << step << " " << split << " loss " << loss << "\n";
  };
}

std::string echo_header(const RunContext& ctx) {
  return "config_hash " + ctx.cfg_hash + "\n" + ctx.cfg_text;
}

std::vector<std::string> read_lines_file(const std::string& path) {
  std::string bytes = detail::read_file_checked(path);
  std::vector<std::string> out;
  for (auto& raw : detail::split_lines(bytes)) out.push_back(detail::strip_trailing_ws(raw));
  if (!out.empty() && out.back().empty()) out.pop_back();
  return out;
}

void write_lines_file(const std::vector<std::string>& lines, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "IO_ERROR", "cannot write file: " + path.string());
  for (const auto& l : lines) out << l << '\n';
}

// ---- subcommands ----

void cmd_corpus_build(const RunContext& ctx) {
  const json& entries = need(need(ctx.cfg, "corpus", "top level"), "monolingual", "corpus");
  fs::create_directories(ctx.artifact("corpus"));
  std::vector<MonoCorpus> corpora;
  std::vector<std::string> paths;
  for (const auto& e : entries) {
    LangCode lang(need(e, "lang", "corpus.monolingual[]").get<std::string>());
    std::string tag = need(e, "tag", "corpus.monolingual[]").get<std::string>();
    MonoCorpus c =
        ingest_monolingual(need(e, "path", "corpus.monolingual[]").get<std::string>(), lang, tag);
    fs::path norm = ctx.artifact("corpus") / (lang.code + "." + tag + ".txt");
    write_monolingual(c, norm.string());
    paths.push_back(norm.string());
    corpora.push_back(std::move(c));
  }
  Manifest m = build_manifest(corpora, paths);
  save_manifest(m, ctx.artifact("manifest.tsv").string(), header_comments(ctx));
  std::cout << "manifest: " << m.entries.size() << " corpora, " << m.total_sentences
            << " sentences, " << m.total_bytes << " bytes\n";
}

void cmd_tokenizer_train(const RunContext& ctx) {
  const json& t = need(ctx.cfg, "tokenizer", "top level");
  auto corpora = load_manifest_corpora(ctx);
  Vocab v = train_vocab(corpora, need(t, "vocab_size", "tokenizer").get<int>(),
                        need(t, "n_sentinels", "tokenizer").get<int>(), ctx.seed);
  save_vocab(v, ctx.artifact("vocab.tsv").string());
  std::cout << "vocab: " << v.size << " pieces (" << v.n_sentinels << " sentinels)\n";
}

void cmd_pretrain_stage1(const RunContext& ctx) {
  Vocab v = load_vocab(ctx.artifact("vocab.tsv").string());
  auto corpora = load_manifest_corpora(ctx);
  auto tcfg = train_section(ctx, "stage1", true);
  auto mcfg = model_section(ctx, v.size);
  Checkpoint ckpt = pretrain_stage1(mcfg, corpora, v, tcfg, stdout_logger());
  ckpt.config_echo = echo_header(ctx);
  save_checkpoint(ckpt, ctx.artifact("stage1.ckpt").string());
  std::cout << "saved stage1.ckpt at step " << ckpt.step << "\n";
}

void cmd_pretrain_stage2(const RunContext& ctx) {
  Vocab v = load_vocab(ctx.artifact("vocab.tsv").string());
  Checkpoint s1 = load_checkpoint(ctx.artifact("stage1.ckpt").string());
  const json& t = need(need(ctx.cfg, "train", "top level"), "stage2", "train");
  std::vector<std::string> langs;
  for (const auto& l : need(t, "langs", "train.stage2")) langs.push_back(l.get<std::string>());
  std::vector<MonoCorpus> corpora;
  for (auto& c : load_manifest_corpora(ctx))
    if (std::find(langs.begin(), langs.end(), c.lang.code) != langs.end())
      corpora.push_back(std::move(c));
  require(!corpora.empty(), "EMPTY_CORPUS", "train.stage2.langs matched no manifest entry");
  auto tcfg = train_section(ctx, "stage2", true);
  Checkpoint ckpt = pretrain_stage2(s1, corpora, v, tcfg, stdout_logger());
  ckpt.config_echo = echo_header(ctx);
  save_checkpoint(ckpt, ctx.artifact("stage2.ckpt").string());
  std::cout << "saved stage2.ckpt at step " << ckpt.step << "\n";
}

void cmd_finetune_a(const RunContext& ctx) {
  Vocab v = load_vocab(ctx.artifact("vocab.tsv").string());
  const json& t = need(need(ctx.cfg, "train", "top level"), "finetune_a", "train");
  Checkpoint from = load_checkpoint(ctx.artifact(t.value("from", "stage2.ckpt")).string());
  auto train = load_parallel_section(ctx, "train");
  auto dev = load_parallel_section(ctx, "dev");
  auto tcfg = train_section(ctx, "finetune_a", false);
  long epochs = need(t, "epochs", "train.finetune_a").get<long>();
  Checkpoint ckpt = finetune_A(from, train, dev, epochs, tcfg, v, stdout_logger());
  ckpt.config_echo = echo_header(ctx);
  save_checkpoint(ckpt, ctx.artifact("finetune_a.ckpt").string());
  std::cout << "saved finetune_a.ckpt (best step " << ckpt.step << ")\n";
}

void cmd_finetune_b(const RunContext& ctx) {
  Vocab v = load_vocab(ctx.artifact("vocab.tsv").string());
  const json& t = need(need(ctx.cfg, "train", "top level"), "finetune_b", "train");
  Checkpoint best_a = load_checkpoint(ctx.artifact("finetune_a.ckpt").string());
  auto train = load_parallel_section(ctx, "train");
  auto dev = load_parallel_section(ctx, "dev");
  double fraction = need(ctx.cfg, "corpus", "top level").value("dev_split_fraction", 0.8);
  DevSplit split = split_dev(dev, fraction, ctx.seed);
  auto tcfg = train_section(ctx, "finetune_b", false);
  long epochs = need(t, "epochs", "train.finetune_b").get<long>();
  Checkpoint ckpt = finetune_B(best_a, train, split, epochs, tcfg, v, stdout_logger());
  ckpt.config_echo = echo_header(ctx);
  save_checkpoint(ckpt, ctx.artifact("finetune_b.ckpt").string());
  std::cout << "saved finetune_b.ckpt (best step " << ckpt.step << ")\n";
}

void cmd_translate(const RunContext& ctx) {
  const json& t = need(ctx.cfg, "translate", "top level");
  Vocab v = load_vocab(ctx.artifact("vocab.tsv").string());
  Checkpoint ckpt = load_checkpoint(ctx.artifact(t.value("checkpoint", "finetune_b.ckpt")).string());
  auto lines = read_lines_file(need(t, "src", "translate").get<std::string>());
  auto hyps = translate_lines(ckpt.params, v, lines, decoding_section(ctx));
  write_lines_file(hyps, ctx.artifact(t.value("output", "hyps.txt")));
  std::cout << "translated " << hyps.size() << " lines\n";
}

EvalReport build_report(const RunContext& ctx, bool decode_fresh) {
  const json& entries = need(ctx.cfg, "evaluate", "top level");
  fs::create_directories(ctx.artifact("eval"));
  EvalReport report;
  for (const auto& e : entries) {
    std::string name = need(e, "name", "evaluate[]").get<std::string>();
    fs::path hyp_path = ctx.artifact("eval") / (name + ".hyp.txt");
    fs::path ref_path = ctx.artifact("eval") / (name + ".ref.txt");
    std::vector<std::string> hyps, refs;
    if (!decode_fresh) {
      hyps = read_lines_file(hyp_path.string());
      refs = read_lines_file(ref_path.string());
    } else if (e.contains("hyps")) {
      // score pre-decoded hypothesis/reference files directly
      hyps = read_lines_file(e.at("hyps").get<std::string>());
      refs = read_lines_file(need(e, "refs", "evaluate[]").get<std::string>());
    } else {
      Vocab v = load_vocab(ctx.artifact("vocab.tsv").string());
      Checkpoint ckpt =
          load_checkpoint(ctx.artifact(need(e, "checkpoint", "evaluate[]").get<std::string>()).string());
      LangCode src(need(e, "src_lang", "evaluate[]").get<std::string>());
      LangCode tgt(need(e, "tgt_lang", "evaluate[]").get<std::string>());
      auto test = load_parallel(need(e, "test", "evaluate[]").get<std::string>(), src, tgt);
      std::vector<std::string> srcs;
      for (const auto& p : test.pairs) {
        srcs.push_back(p.src);
        refs.push_back(p.tgt);
      }
      hyps = translate_lines(ckpt.params, v, srcs, decoding_section(ctx));
    }
    require(hyps.size() == refs.size(), "METRIC_ERROR",
            "hypothesis/reference line count mismatch for " + name);
    write_lines_file(hyps, hyp_path);
    write_lines_file(refs, ref_path);
    report.rows.push_back(score_lines(name, hyps, refs));
  }
  return report;
}

void write_report(const RunContext& ctx, const EvalReport& report) {
  std::string text = format_report(report, header_comments(ctx));
  std::ofstream out(ctx.artifact("report.tsv"), std::ios::binary);
  require(out.good(), "IO_ERROR", "cannot write report.tsv");
  out << text;
  std::cout << text;
}

void cmd_evaluate(const RunContext& ctx) { write_report(ctx, build_report(ctx, true)); }

// Regenerates report.tsv from the stored decode outputs without re-decoding.
void cmd_report(const RunContext& ctx) { write_report(ctx, build_report(ctx, false)); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale low-resource translation pipeline"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "out";
  long seed_override = -1;
  app.add_option("--config", config_path, "run config JSON file")->required();
  app.add_option("--seed", seed_override, "override the config seed");
  app.add_option("--out", out_dir, "output directory");

  std::vector<std::pair<std::string, void (*)(const RunContext&)>> dispatch;
  auto add = [&](CLI::App* parent, const std::string& name, void (*fn)(const RunContext&)) {
    parent->add_subcommand(name, "");
    dispatch.emplace_back((parent->get_name().empty() ? name : parent->get_name() + " " + name),
                          fn);
  };
  auto* corpus = app.add_subcommand("corpus", "corpus manifesting");
  corpus->require_subcommand(1);
  add(corpus, "build", cmd_corpus_build);
  auto* tokenizer = app.add_subcommand("tokenizer", "subword vocabulary");
  tokenizer->require_subcommand(1);
  add(tokenizer, "train", cmd_tokenizer_train);
  auto* pretrain = app.add_subcommand("pretrain", "denoising pretraining");
  pretrain->require_subcommand(1);
  add(pretrain, "stage1", cmd_pretrain_stage1);
  add(pretrain, "stage2", cmd_pretrain_stage2);
  auto* finetune = app.add_subcommand("finetune", "supervised fine-tuning");
  finetune->require_subcommand(1);
  add(finetune, "a", cmd_finetune_a);
  add(finetune, "b", cmd_finetune_b);
  app.add_subcommand("translate", "decode a source file");
  dispatch.emplace_back("translate", cmd_translate);
  app.add_subcommand("evaluate", "decode and score test sets");
  dispatch.emplace_back("evaluate", cmd_evaluate);
  app.add_subcommand("report", "regenerate report.tsv from stored outputs");
  dispatch.emplace_back("report", cmd_report);

  // allow --config/--seed/--out to appear after the subcommand
  std::function<void(CLI::App*)> enable_fallthrough = [&](CLI::App* a) {
    a->fallthrough();
    for (auto* s : a->get_subcommands({})) enable_fallthrough(s);
  };
  enable_fallthrough(&app);

  CLI11_PARSE(app, argc, argv);

  // resolve which (sub)subcommand ran
  std::string cmd;
  for (auto* sub : app.get_subcommands()) {
    cmd = sub->get_name();
    for (auto* inner : sub->get_subcommands()) cmd += " " + inner->get_name();
  }

  try {
    RunContext ctx = make_context(config_path, out_dir, seed_override);
    register_extension_langs(ctx);
    DirLock lock(ctx.out);
    log_run(ctx, cmd);
    for (const auto& [name, fn] : dispatch)
      if (name == cmd) {
        fn(ctx);
        return 0;
      }
    fail("CONFIG_ERROR", "unknown subcommand: " + cmd);
  } catch (const Error& e) {
    std::cerr << e.category() << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "INTERNAL_ERROR: " << e.what() << "\n";
    return 1;
  }
}
