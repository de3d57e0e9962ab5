#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "deskmt/corpus.hpp"
#include "deskmt/corruption.hpp"
#include "deskmt/error.hpp"
#include "deskmt/model.hpp"
#include "deskmt/tokenizer.hpp"

namespace deskmt {

struct TrainConfig {
  double learning_rate = 5e-4;  // peak rate for the warmup schedule
  int warmup_steps = 200;
  size_t batch_size = 16;
  size_t max_len = 128;
  long steps_or_epochs = 200;
  uint64_t seed = 1;
  long eval_every = 50;
  std::string optimizer = "adam";  // "adam" (warmup schedule) or "adam_constant"
  double corruption_rate = 0.15;
  double dropout = 0.0;

  void validate(bool counting_steps) const {
    require(learning_rate > 0 && batch_size > 0 && max_len > 0 && steps_or_epochs > 0 &&
                eval_every > 0,
            "CONFIG_ERROR", "train config values must be positive");
    require(!counting_steps || eval_every <= steps_or_epochs, "CONFIG_ERROR",
            "eval_every must not exceed the step budget");
    require(optimizer == "adam" || optimizer == "adam_constant", "CONFIG_ERROR",
            "unknown optimizer tag: " + optimizer);
  }
};

// Adam with beta1=0.9, beta2=0.98, eps=1e-9 and an inverse-square-root
// warmup schedule; moments are stored per parameter tensor.
struct AdamState {
  uint64_t t = 0;
  std::vector<std::vector<float>> m, v;

  void reset(const Params<float>& p) {
    t = 0;
    m.clear();
    v.clear();
    for (const auto& [_, tns] : p.tensors) {
      m.emplace_back(tns->data.size(), 0.0f);
      v.emplace_back(tns->data.size(), 0.0f);
    }
  }
};

inline double schedule_lr(const TrainConfig& cfg, uint64_t step) {
  if (cfg.optimizer == "adam_constant") return cfg.learning_rate;
  double s = static_cast<double>(step);
  double w = static_cast<double>(std::max(cfg.warmup_steps, 1));
  return cfg.learning_rate * std::min(s / w, std::sqrt(w / s));
}

inline void adam_step(Params<float>& p, AdamState& st, double lr) {
  constexpr double b1 = 0.9, b2 = 0.98, eps = 1e-9;
  st.t += 1;
  double bc1 = 1.0 - std::pow(b1, static_cast<double>(st.t));
  double bc2 = 1.0 - std::pow(b2, static_cast<double>(st.t));
  for (size_t i = 0; i < p.tensors.size(); ++i) {
    auto& t = p.tensors[i].second;
    if (t->grad.size() != t->data.size()) continue;
    auto& m = st.m[i];
    auto& v = st.v[i];
    for (size_t j = 0; j < t->data.size(); ++j) {
      double g = t->grad[j];
      m[j] = static_cast<float>(b1 * m[j] + (1 - b1) * g);
      v[j] = static_cast<float>(b2 * v[j] + (1 - b2) * g * g);
      double mh = m[j] / bc1, vh = v[j] / bc2;
      t->data[j] -= static_cast<float>(lr * mh / (std::sqrt(vh) + eps));
    }
  }
}

// Provenance stage tags, in curriculum order.
namespace stage {
inline const std::string kInit = "init";
inline const std::string kPretrain1 = "pretrain100k";
inline const std::string kPretrain2 = "pretrain140k";
inline const std::string kFinetuneA = "finetuneA";
inline const std::string kFinetuneB = "finetuneB";
}  // namespace stage

struct Checkpoint {
  Params<float> params;
  uint64_t step = 0;
  AdamState opt;
  std::string stage = stage::kInit;
  std::vector<std::string> history;  // ancestor stage tags, oldest first
  uint64_t seed = 0;
  uint64_t data_fingerprint = 0;
  std::string config_echo;  // run config text, embedded for traceability
};

inline uint64_t fnv1a(const void* data, size_t n, uint64_t h = 1469598103934665603ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

inline uint64_t fingerprint_corpora(const std::vector<MonoCorpus>& corpora) {
  uint64_t h = 1469598103934665603ULL;
  for (const auto& c : corpora) {
    h = fnv1a(c.lang.code.data(), c.lang.code.size(), h);
    for (const auto& l : c.lines) h = fnv1a(l.data(), l.size(), h);
  }
  return h;
}

inline uint64_t fingerprint_parallel(const ParallelCorpus& pc) {
  uint64_t h = fnv1a(pc.src_lang.code.data(), pc.src_lang.code.size());
  for (const auto& p : pc.pairs) {
    h = fnv1a(p.src.data(), p.src.size(), h);
    h = fnv1a(p.tgt.data(), p.tgt.size(), h);
  }
  return h;
}

// ---- checkpoint serialization (byte-exact round trip) ----

namespace ckpt_detail {
constexpr char kMagic[4] = {'D', 'M', 'T', 'C'};
constexpr uint32_t kVersion = 1;

inline void put_u32(std::ostream& o, uint32_t v) { o.write(reinterpret_cast<const char*>(&v), 4); }
inline void put_u64(std::ostream& o, uint64_t v) { o.write(reinterpret_cast<const char*>(&v), 8); }
inline void put_f64(std::ostream& o, double v) { o.write(reinterpret_cast<const char*>(&v), 8); }
inline void put_str(std::ostream& o, const std::string& s) {
  put_u32(o, static_cast<uint32_t>(s.size()));
  o.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline uint32_t get_u32(std::istream& i) {
  uint32_t v = 0;
  i.read(reinterpret_cast<char*>(&v), 4);
  require(i.good(), "CKPT_ERROR", "truncated checkpoint file");
  return v;
}
inline uint64_t get_u64(std::istream& i) {
  uint64_t v = 0;
  i.read(reinterpret_cast<char*>(&v), 8);
  require(i.good(), "CKPT_ERROR", "truncated checkpoint file");
  return v;
}
inline double get_f64(std::istream& i) {
  double v = 0;
  i.read(reinterpret_cast<char*>(&v), 8);
  require(i.good(), "CKPT_ERROR", "truncated checkpoint file");
  return v;
}
inline std::string get_str(std::istream& i) {
  uint32_t n = get_u32(i);
  std::string s(n, '\0');
  i.read(s.data(), n);
  require(i.good() || n == 0, "CKPT_ERROR", "truncated checkpoint file");
  return s;
}
}  // namespace ckpt_detail

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  using namespace ckpt_detail;
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "IO_ERROR", "cannot write checkpoint: " + path);
  out.write(kMagic, 4);
  put_u32(out, kVersion);
  const ModelConfig& c = ckpt.params.cfg;
  for (int v : {c.n_layers_enc, c.n_layers_dec, c.n_heads, c.d_model, c.d_ff, c.d_head,
                c.vocab_size, c.max_len, c.rel_pos_buckets})
    put_u32(out, static_cast<uint32_t>(v));
  put_f64(out, c.dropout);
  put_str(out, ckpt.stage);
  put_u32(out, static_cast<uint32_t>(ckpt.history.size()));
  for (const auto& h : ckpt.history) put_str(out, h);
  put_u64(out, ckpt.seed);
  put_u64(out, ckpt.data_fingerprint);
  put_u64(out, ckpt.step);
  put_str(out, ckpt.config_echo);

  put_u32(out, static_cast<uint32_t>(ckpt.params.tensors.size()));
  for (const auto& [name, t] : ckpt.params.tensors) {
    put_str(out, name);
    put_u32(out, static_cast<uint32_t>(t->shape.size()));
    for (long d : t->shape) put_u64(out, static_cast<uint64_t>(d));
    out.write(reinterpret_cast<const char*>(t->data.data()),
              static_cast<std::streamsize>(t->data.size() * sizeof(float)));
  }
  // optimizer-state section
  bool has_opt = !ckpt.opt.m.empty();
  put_u32(out, has_opt ? 1 : 0);
  if (has_opt) {
    put_u64(out, ckpt.opt.t);
    for (size_t i = 0; i < ckpt.params.tensors.size(); ++i) {
      out.write(reinterpret_cast<const char*>(ckpt.opt.m[i].data()),
                static_cast<std::streamsize>(ckpt.opt.m[i].size() * sizeof(float)));
      out.write(reinterpret_cast<const char*>(ckpt.opt.v[i].data()),
                static_cast<std::streamsize>(ckpt.opt.v[i].size() * sizeof(float)));
    }
  }
  require(out.good(), "IO_ERROR", "write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  using namespace ckpt_detail;
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "IO_ERROR", "cannot open checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  require(in.good() && std::equal(magic, magic + 4, kMagic), "CKPT_ERROR",
          "not a checkpoint file: " + path);
  uint32_t version = get_u32(in);
  require(version == kVersion, "CKPT_ERROR",
          "checkpoint version " + std::to_string(version) + " unsupported (expected " +
              std::to_string(kVersion) + ")");
  Checkpoint ckpt;
  ModelConfig c;
  c.n_layers_enc = static_cast<int>(get_u32(in));
  c.n_layers_dec = static_cast<int>(get_u32(in));
  c.n_heads = static_cast<int>(get_u32(in));
  c.d_model = static_cast<int>(get_u32(in));
  c.d_ff = static_cast<int>(get_u32(in));
  c.d_head = static_cast<int>(get_u32(in));
  c.vocab_size = static_cast<int>(get_u32(in));
  c.max_len = static_cast<int>(get_u32(in));
  c.rel_pos_buckets = static_cast<int>(get_u32(in));
  c.dropout = get_f64(in);
  ckpt.stage = get_str(in);
  uint32_t n_hist = get_u32(in);
  for (uint32_t i = 0; i < n_hist; ++i) ckpt.history.push_back(get_str(in));
  ckpt.seed = get_u64(in);
  ckpt.data_fingerprint = get_u64(in);
  ckpt.step = get_u64(in);
  ckpt.config_echo = get_str(in);

  ckpt.params.cfg = c;
  uint32_t n_tensors = get_u32(in);
  for (uint32_t i = 0; i < n_tensors; ++i) {
    std::string name = get_str(in);
    uint32_t rank = get_u32(in);
    std::vector<long> shape;
    for (uint32_t r = 0; r < rank; ++r) shape.push_back(static_cast<long>(get_u64(in)));
    auto t = ckpt.params.add(name, shape);
    in.read(reinterpret_cast<char*>(t->data.data()),
            static_cast<std::streamsize>(t->data.size() * sizeof(float)));
    require(in.good(), "CKPT_ERROR", "truncated tensor data in " + path);
  }
  if (get_u32(in) == 1) {
    ckpt.opt.t = get_u64(in);
    for (const auto& [_, t] : ckpt.params.tensors) {
      ckpt.opt.m.emplace_back(t->data.size());
      ckpt.opt.v.emplace_back(t->data.size());
      in.read(reinterpret_cast<char*>(ckpt.opt.m.back().data()),
              static_cast<std::streamsize>(t->data.size() * sizeof(float)));
      in.read(reinterpret_cast<char*>(ckpt.opt.v.back().data()),
              static_cast<std::streamsize>(t->data.size() * sizeof(float)));
      require(in.good(), "CKPT_ERROR", "truncated optimizer state in " + path);
    }
  }
  return ckpt;
}

inline Params<float> clone_params(const Params<float>& p) {
  Params<float> out;
  out.cfg = p.cfg;
  for (const auto& [name, t] : p.tensors) {
    auto nt = out.add(name, t->shape);
    nt->data = t->data;
  }
  return out;
}

// ---- training loops ----

using LogFn = std::function<void(uint64_t step, const std::string& split, double loss)>;

namespace train_detail {

inline void run_denoising_steps(Checkpoint& ckpt, DenoisingStream& stream, const TrainConfig& cfg,
                                const LogFn& log,
                                const std::function<void(const DenoisingBatch&)>& audit = nullptr) {
  std::mt19937_64 drop_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  for (long s = 1; s <= cfg.steps_or_epochs; ++s) {
    DenoisingBatch batch = stream.next();
    if (audit) audit(batch);
    std::vector<TokenSeq> dec_in(batch.targets.size());
    for (size_t i = 0; i < batch.targets.size(); ++i) {
      dec_in[i].push_back(Vocab::kPad);
      dec_in[i].insert(dec_in[i].end(), batch.targets[i].begin(), batch.targets[i].end() - 1);
    }
    Tape<float> tape;
    auto logits = forward(&tape, ckpt.params, batch.inputs, dec_in,
                          ckpt.params.cfg.dropout > 0 ? &drop_rng : nullptr);
    auto loss = seq_loss(&tape, logits, batch.targets);
    ckpt.params.zero_grad();
    tape.backward(loss);
    adam_step(ckpt.params, ckpt.opt, schedule_lr(cfg, ckpt.opt.t + 1));
    ckpt.step += 1;
    if (log && (s % cfg.eval_every == 0 || s == 1 || s == cfg.steps_or_epochs))
      log(ckpt.step, "train", loss->data[0]);
  }
}

struct Seq2SeqBatch {
  std::vector<TokenSeq> enc, dec_in, targets;
};

inline Seq2SeqBatch make_batch(const std::vector<std::pair<TokenSeq, TokenSeq>>& encoded,
                               const std::vector<size_t>& ix, size_t begin, size_t end) {
  Seq2SeqBatch b;
  size_t enc_len = 0, dec_len = 0;
  for (size_t i = begin; i < end; ++i) {
    enc_len = std::max(enc_len, encoded[ix[i]].first.size());
    dec_len = std::max(dec_len, encoded[ix[i]].second.size() + 1);
  }
  for (size_t i = begin; i < end; ++i) {
    const auto& [src, tgt] = encoded[ix[i]];
    TokenSeq e = src;
    e.resize(enc_len, Vocab::kPad);
    TokenSeq din, tout;
    din.push_back(Vocab::kPad);
    din.insert(din.end(), tgt.begin(), tgt.end());
    tout = tgt;
    tout.push_back(Vocab::kEos);
    din.resize(dec_len, Vocab::kPad);
    tout.resize(dec_len, Vocab::kPad);
    b.enc.push_back(std::move(e));
    b.dec_in.push_back(std::move(din));
    b.targets.push_back(std::move(tout));
  }
  return b;
}

inline std::vector<std::pair<TokenSeq, TokenSeq>> encode_pairs(const ParallelCorpus& pc,
                                                               const Vocab& vocab,
                                                               size_t max_len) {
  std::vector<std::pair<TokenSeq, TokenSeq>> out;
  for (const auto& p : pc.pairs) {
    TokenSeq src = encode(vocab, p.src);
    src.push_back(Vocab::kEos);
    if (src.size() > max_len) src.resize(max_len);
    TokenSeq tgt = encode(vocab, p.tgt);
    if (tgt.size() > max_len - 1) tgt.resize(max_len - 1);  // room for EOS/BOS
    out.emplace_back(std::move(src), std::move(tgt));
  }
  return out;
}

// Token-weighted mean cross entropy over a full encoded set.
inline double eval_loss(const Params<float>& params,
                        const std::vector<std::pair<TokenSeq, TokenSeq>>& encoded,
                        size_t batch_size) {
  std::vector<size_t> ix(encoded.size());
  for (size_t i = 0; i < ix.size(); ++i) ix[i] = i;
  double total = 0;
  long n_tokens = 0;
  for (size_t begin = 0; begin < ix.size(); begin += batch_size) {
    size_t end = std::min(begin + batch_size, ix.size());
    Seq2SeqBatch b = make_batch(encoded, ix, begin, end);
    auto logits = forward<float>(nullptr, params, b.enc, b.dec_in);
    Tape<float> tape;  // unused; loss without grad
    auto loss = seq_loss<float>(nullptr, logits, b.targets);
    long active = 0;
    for (const auto& t : b.targets)
      for (int id : t)
        if (id != Vocab::kPad) ++active;
    total += loss->data[0] * static_cast<double>(active);
    n_tokens += active;
  }
  return total / static_cast<double>(n_tokens);
}

// Epoch-based supervised training with best-epoch selection on val loss.
inline Checkpoint finetune_loop(const Checkpoint& start, const std::string& new_stage,
                                const ParallelCorpus& train, const ParallelCorpus& val,
                                long epochs, const TrainConfig& cfg, const Vocab& vocab,
                                const LogFn& log) {
  require(!train.pairs.empty(), "EMPTY_CORPUS", "fine-tuning requires non-empty training data");
  require(!val.pairs.empty(), "EMPTY_CORPUS", "fine-tuning requires non-empty validation data");
  Checkpoint ckpt;
  ckpt.params = clone_params(start.params);
  ckpt.opt.reset(ckpt.params);  // optimizer state resets at stage boundaries
  ckpt.stage = new_stage;
  ckpt.history = start.history;
  ckpt.history.push_back(start.stage);
  ckpt.seed = cfg.seed;
  ckpt.data_fingerprint = fingerprint_parallel(train);
  ckpt.config_echo = start.config_echo;

  auto encoded_train = encode_pairs(train, vocab, cfg.max_len);
  auto encoded_val = encode_pairs(val, vocab, cfg.max_len);
  std::mt19937_64 rng(cfg.seed);
  std::mt19937_64 drop_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);

  Params<float> best = clone_params(ckpt.params);
  double best_loss = 0;
  uint64_t best_step = 0;
  bool have_best = false;

  std::vector<size_t> ix(encoded_train.size());
  for (size_t i = 0; i < ix.size(); ++i) ix[i] = i;

  for (long epoch = 1; epoch <= epochs; ++epoch) {
    for (size_t i = ix.size() - 1; i > 0; --i) std::swap(ix[i], ix[rng() % (i + 1)]);
    for (size_t begin = 0; begin < ix.size(); begin += cfg.batch_size) {
      size_t end = std::min(begin + cfg.batch_size, ix.size());
      Seq2SeqBatch b = make_batch(encoded_train, ix, begin, end);
      Tape<float> tape;
      auto logits = forward(&tape, ckpt.params, b.enc, b.dec_in,
                            ckpt.params.cfg.dropout > 0 ? &drop_rng : nullptr);
      auto loss = seq_loss(&tape, logits, b.targets);
      ckpt.params.zero_grad();
      tape.backward(loss);
      adam_step(ckpt.params, ckpt.opt, schedule_lr(cfg, ckpt.opt.t + 1));
      ckpt.step += 1;
    }
    double train_loss = eval_loss(ckpt.params, encoded_train, cfg.batch_size);
    double val_loss = eval_loss(ckpt.params, encoded_val, cfg.batch_size);
    if (log) {
      log(ckpt.step, "train", train_loss);
      log(ckpt.step, "val", val_loss);
    }
    if (!have_best || val_loss < best_loss) {  // ties keep the earliest epoch
      have_best = true;
      best_loss = val_loss;
      best = clone_params(ckpt.params);
      best_step = ckpt.step;
    }
  }
  ckpt.params = std::move(best);
  ckpt.step = best_step;
  return ckpt;
}

}  // namespace train_detail

// Stage-1 pretraining over all configured languages (Spanish included).
inline Checkpoint pretrain_stage1(const ModelConfig& model_cfg,
                                  const std::vector<MonoCorpus>& corpora, const Vocab& vocab,
                                  const TrainConfig& cfg, const LogFn& log = nullptr) {
  cfg.validate(true);
  require(model_cfg.vocab_size == vocab.size, "VOCAB_MISMATCH",
          "model vocab_size " + std::to_string(model_cfg.vocab_size) +
              " != tokenizer vocab size " + std::to_string(vocab.size));
  Checkpoint ckpt;
  ckpt.params = init_model<float>(model_cfg, cfg.seed);
  ckpt.opt.reset(ckpt.params);
  ckpt.stage = stage::kPretrain1;
  ckpt.history = {stage::kInit};
  ckpt.seed = cfg.seed;
  ckpt.data_fingerprint = fingerprint_corpora(corpora);
  DenoisingStream stream(corpora, vocab, cfg.corruption_rate, cfg.max_len, cfg.batch_size,
                         cfg.seed);
  train_detail::run_denoising_steps(ckpt, stream, cfg, log);
  return ckpt;
}

// Stage-2 pretraining: continues from a stage-1 checkpoint on the Indigenous
// languages only. Any Spanish corpus entry is a hard error.
inline Checkpoint pretrain_stage2(const Checkpoint& stage1, const std::vector<MonoCorpus>& corpora,
                                  const Vocab& vocab, const TrainConfig& cfg,
                                  const LogFn& log = nullptr,
                                  const std::function<void(const DenoisingBatch&)>& audit = nullptr) {
  cfg.validate(true);
  require(stage1.stage == stage::kPretrain1, "PROVENANCE_ERROR",
          "stage-2 pretraining requires a stage-1 checkpoint, got '" + stage1.stage + "'");
  for (const auto& c : corpora)
    require(c.lang.code != "es", "SPANISH_IN_STAGE2",
            "stage-2 corpora must not contain Spanish (entry " + c.lang.code + "/" + c.source_tag +
                ")");
  require(stage1.params.cfg.vocab_size == vocab.size, "VOCAB_MISMATCH",
          "checkpoint vocab_size does not match tokenizer");
  Checkpoint ckpt;
  ckpt.params = clone_params(stage1.params);
  ckpt.opt.reset(ckpt.params);
  ckpt.stage = stage::kPretrain2;
  ckpt.history = stage1.history;
  ckpt.history.push_back(stage1.stage);
  ckpt.seed = cfg.seed;
  ckpt.data_fingerprint = fingerprint_corpora(corpora);
  ckpt.config_echo = stage1.config_echo;
  ckpt.step = stage1.step;
  DenoisingStream stream(corpora, vocab, cfg.corruption_rate, cfg.max_len, cfg.batch_size,
                         cfg.seed);
  train_detail::run_denoising_steps(ckpt, stream, cfg, log, audit);
  return ckpt;
}

// Setting A: train on Train, validate on 100% of Dev; returns the best epoch.
inline Checkpoint finetune_A(const Checkpoint& pretrained, const ParallelCorpus& train,
                             const ParallelCorpus& dev, long epochs, const TrainConfig& cfg,
                             const Vocab& vocab, const LogFn& log = nullptr) {
  cfg.validate(false);
  require(pretrained.stage == stage::kPretrain1 || pretrained.stage == stage::kPretrain2,
          "PROVENANCE_ERROR",
          "setting A requires a pretraining checkpoint, got '" + pretrained.stage + "'");
  return train_detail::finetune_loop(pretrained, stage::kFinetuneA, train, dev, epochs, cfg, vocab,
                                     log);
}

// Setting B: continue from A's best epoch, folding the dev-split train part
// into the training set and validating on the held-out dev remainder.
inline Checkpoint finetune_B(const Checkpoint& best_A, const ParallelCorpus& train,
                             const DevSplit& dev_split, long epochs, const TrainConfig& cfg,
                             const Vocab& vocab, const LogFn& log = nullptr) {
  cfg.validate(false);
  require(best_A.stage == stage::kFinetuneA, "PROVENANCE_ERROR",
          "setting B requires a setting-A checkpoint, got '" + best_A.stage + "'");
  std::set<std::pair<std::string, std::string>> train_set;
  for (const auto& p : train.pairs) train_set.insert({p.src, p.tgt});
  for (const auto& p : dev_split.train_part.pairs)
    require(!train_set.count({p.src, p.tgt}), "SPLIT_OVERLAP",
            "dev-split pair duplicates a training pair: " + p.src);
  ParallelCorpus merged = train;
  merged.pairs.insert(merged.pairs.end(), dev_split.train_part.pairs.begin(),
                      dev_split.train_part.pairs.end());
  return train_detail::finetune_loop(best_A, stage::kFinetuneB, merged, dev_split.val_part, epochs,
                                     cfg, vocab, log);
}

}  // namespace deskmt
