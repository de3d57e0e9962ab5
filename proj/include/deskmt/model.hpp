#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "deskmt/error.hpp"
#include "deskmt/tensor.hpp"
#include "deskmt/tokenizer.hpp"

namespace deskmt {

struct ModelConfig {
  int n_layers_enc = 2;
  int n_layers_dec = 2;
  int n_heads = 4;
  int d_model = 128;
  int d_ff = 512;
  int d_head = 32;
  int vocab_size = 4000;
  int max_len = 128;
  double dropout = 0.1;
  int rel_pos_buckets = 32;

  void validate() const {
    require(n_layers_enc > 0 && n_layers_dec > 0 && n_heads > 0 && d_model > 0 && d_ff > 0 &&
                d_head > 0 && vocab_size > 0 && max_len > 0 && rel_pos_buckets > 0,
            "CONFIG_ERROR", "all model dimensions must be positive");
    require(d_model == n_heads * d_head, "CONFIG_ERROR",
            "d_model must equal n_heads * d_head (" + std::to_string(d_model) +
                " != " + std::to_string(n_heads) + "*" + std::to_string(d_head) + ")");
  }

  bool operator==(const ModelConfig&) const = default;
};

// Full learnable parameter set, held as an ordered list of named tensors.
// The token embedding is shared between encoder input, decoder input and the
// output projection.
template <typename F>
struct Params {
  ModelConfig cfg;
  std::vector<std::pair<std::string, TensorPtr<F>>> tensors;
  std::map<std::string, size_t> index;

  TensorPtr<F> add(const std::string& name, std::vector<long> shape) {
    auto t = tensor<F>(std::move(shape), true);
    index[name] = tensors.size();
    tensors.emplace_back(name, t);
    return t;
  }

  TensorPtr<F> get(const std::string& name) const {
    auto it = index.find(name);
    require(it != index.end(), "PARAM_ERROR", "unknown parameter: " + name);
    return tensors[it->second].second;
  }

  long n_params() const {
    long n = 0;
    for (const auto& [_, t] : tensors) n += t->numel();
    return n;
  }

  void zero_grad() {
    for (auto& [_, t] : tensors) t->zero_grad();
  }
};

namespace model_detail {

template <typename F>
void fill_normal(TensorPtr<F>& t, std::mt19937_64& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& x : t->data) x = static_cast<F>(dist(rng));
}

// T5-style relative position bucketing. Bidirectional buckets split the
// table between negative and positive offsets; causal bucketing uses the
// whole table for non-positive offsets.
inline int rel_bucket(long rel, int n_buckets, bool bidirectional, int max_distance = 128) {
  int bucket = 0;
  int nb = n_buckets;
  if (bidirectional) {
    nb /= 2;
    if (rel > 0) bucket += nb;
    rel = std::abs(rel);
  } else {
    rel = std::min(rel, 0L);
    rel = -rel;
  }
  int max_exact = nb / 2;
  if (rel < max_exact) {
    bucket += static_cast<int>(rel);
  } else {
    double v = max_exact + std::log(static_cast<double>(rel) / max_exact) /
                               std::log(static_cast<double>(max_distance) / max_exact) *
                               (nb - max_exact);
    bucket += std::min(static_cast<int>(v), nb - 1);
  }
  return bucket;
}

inline std::vector<int> bucket_matrix(long q_len, long k_len, int n_buckets, bool bidirectional) {
  std::vector<int> ix(q_len * k_len);
  for (long q = 0; q < q_len; ++q)
    for (long k = 0; k < k_len; ++k)
      ix[q * k_len + k] = rel_bucket(k - q, n_buckets, bidirectional);
  return ix;
}

}  // namespace model_detail

// Deterministic scaled-normal initialization: projections at 1/sqrt(d_model),
// embeddings at 1/sqrt(d_model), layer-norm gains at 1, bias tables at 0.
template <typename F>
Params<F> init_model(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  Params<F> p;
  p.cfg = cfg;
  std::mt19937_64 rng(seed);
  double proj_std = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));

  auto proj = [&](const std::string& name, long rows, long cols) {
    auto t = p.add(name, {rows, cols});
    model_detail::fill_normal(t, rng, proj_std);
  };
  auto gain = [&](const std::string& name) {
    auto t = p.add(name, {cfg.d_model});
    for (auto& x : t->data) x = F(1);
  };

  auto emb = p.add("embedding", {cfg.vocab_size, cfg.d_model});
  model_detail::fill_normal(emb, rng, proj_std);

  p.add("enc.rel_bias", {cfg.rel_pos_buckets, cfg.n_heads});
  p.add("dec.rel_bias", {cfg.rel_pos_buckets, cfg.n_heads});

  for (int l = 0; l < cfg.n_layers_enc; ++l) {
    std::string pre = "enc." + std::to_string(l) + ".";
    gain(pre + "ln1");
    proj(pre + "wq", cfg.d_model, cfg.d_model);
    proj(pre + "wk", cfg.d_model, cfg.d_model);
    proj(pre + "wv", cfg.d_model, cfg.d_model);
    proj(pre + "wo", cfg.d_model, cfg.d_model);
    gain(pre + "ln2");
    proj(pre + "ff1", cfg.d_model, cfg.d_ff);
    proj(pre + "ff2", cfg.d_ff, cfg.d_model);
  }
  gain("enc.ln_final");
  for (int l = 0; l < cfg.n_layers_dec; ++l) {
    std::string pre = "dec." + std::to_string(l) + ".";
    gain(pre + "ln1");
    proj(pre + "wq", cfg.d_model, cfg.d_model);
    proj(pre + "wk", cfg.d_model, cfg.d_model);
    proj(pre + "wv", cfg.d_model, cfg.d_model);
    proj(pre + "wo", cfg.d_model, cfg.d_model);
    gain(pre + "ln2");
    proj(pre + "xq", cfg.d_model, cfg.d_model);
    proj(pre + "xk", cfg.d_model, cfg.d_model);
    proj(pre + "xv", cfg.d_model, cfg.d_model);
    proj(pre + "xo", cfg.d_model, cfg.d_model);
    gain(pre + "ln3");
    proj(pre + "ff1", cfg.d_model, cfg.d_ff);
    proj(pre + "ff2", cfg.d_ff, cfg.d_model);
  }
  gain("dec.ln_final");
  return p;
}

// Closed-form parameter count for a config (independent of init_model's
// tensor list; used as a cross-check).
inline long count_params(const ModelConfig& cfg) {
  long d = cfg.d_model, ff = cfg.d_ff;
  long per_enc = d + 4 * d * d + d + d * ff + ff * d;
  long per_dec = d + 4 * d * d + d + 4 * d * d + d + d * ff + ff * d;
  return static_cast<long>(cfg.vocab_size) * d + 2L * cfg.rel_pos_buckets * cfg.n_heads +
         cfg.n_layers_enc * per_enc + d + cfg.n_layers_dec * per_dec + d;
}

namespace model_detail {

constexpr double kLnEps = 1e-6;
constexpr float kMaskNegInf = -1e9f;

// Splits [B*T, d_model] into [B*H, T, d_head] head-major layout.
template <typename F>
TensorPtr<F> split_heads(Tape<F>* tape, const TensorPtr<F>& x, long B, long T, long H, long dh) {
  bool rg = ops::track(tape, {x});
  auto out = tensor<F>({B * H, T, dh}, rg);
  for (long b = 0; b < B; ++b)
    for (long t = 0; t < T; ++t)
      for (long h = 0; h < H; ++h)
        std::copy_n(x->data.data() + (b * T + t) * H * dh + h * dh, dh,
                    out->data.data() + ((b * H + h) * T + t) * dh);
  if (rg)
    tape->record([x, out, B, T, H, dh] {
      x->ensure_grad();
      for (long b = 0; b < B; ++b)
        for (long t = 0; t < T; ++t)
          for (long h = 0; h < H; ++h)
            for (long d = 0; d < dh; ++d)
              x->grad[(b * T + t) * H * dh + h * dh + d] +=
                  out->grad[((b * H + h) * T + t) * dh + d];
    });
  return out;
}

template <typename F>
TensorPtr<F> merge_heads(Tape<F>* tape, const TensorPtr<F>& x, long B, long T, long H, long dh) {
  bool rg = ops::track(tape, {x});
  auto out = tensor<F>({B * T, H * dh}, rg);
  for (long b = 0; b < B; ++b)
    for (long t = 0; t < T; ++t)
      for (long h = 0; h < H; ++h)
        std::copy_n(x->data.data() + ((b * H + h) * T + t) * dh, dh,
                    out->data.data() + (b * T + t) * H * dh + h * dh);
  if (rg)
    tape->record([x, out, B, T, H, dh] {
      x->ensure_grad();
      for (long b = 0; b < B; ++b)
        for (long t = 0; t < T; ++t)
          for (long h = 0; h < H; ++h)
            for (long d = 0; d < dh; ++d)
              x->grad[((b * H + h) * T + t) * dh + d] +=
                  out->grad[(b * T + t) * H * dh + h * dh + d];
    });
  return out;
}

// Additive attention mask [B*H, Tq, Tk]: 0 where attendable, -1e9 otherwise.
// keep_first treats position 0 as real even when it is PAD (the decoder
// start-of-sequence token is PAD).
template <typename F>
TensorPtr<F> build_mask(const std::vector<TokenSeq>& key_ids, long H, long Tq, bool causal,
                        bool keep_first = false) {
  long B = static_cast<long>(key_ids.size());
  long Tk = static_cast<long>(key_ids[0].size());
  auto mask = tensor<F>({B * H, Tq, Tk});
  for (long b = 0; b < B; ++b)
    for (long q = 0; q < Tq; ++q)
      for (long k = 0; k < Tk; ++k) {
        bool pad_key = key_ids[b][k] == Vocab::kPad && !(keep_first && k == 0);
        bool blocked = pad_key || (causal && k > q);
        F v = blocked ? F(kMaskNegInf) : F(0);
        for (long h = 0; h < H; ++h) mask->data[((b * H + h) * Tq + q) * Tk + k] = v;
      }
  return mask;
}

template <typename F>
struct AttnProj {
  TensorPtr<F> wq, wk, wv, wo;
};

// One multi-head attention application on pre-normalized inputs.
// q_in: [B*Tq, d], kv_in: [B*Tk, d]; bias (optional): [H, Tq, Tk];
// mask: [B*H, Tq, Tk] additive.
template <typename F>
TensorPtr<F> attention(Tape<F>* tape, const AttnProj<F>& w, const TensorPtr<F>& q_in,
                       const TensorPtr<F>& kv_in, const TensorPtr<F>& bias,
                       const TensorPtr<F>& mask, long B, long Tq, long Tk, long H, long dh) {
  auto q = split_heads(tape, ops::matmul(tape, q_in, w.wq), B, Tq, H, dh);
  auto k = split_heads(tape, ops::matmul(tape, kv_in, w.wk), B, Tk, H, dh);
  auto v = split_heads(tape, ops::matmul(tape, kv_in, w.wv), B, Tk, H, dh);
  auto scores = ops::scale(tape, ops::bmm_nt(tape, q, k), F(1.0 / std::sqrt(static_cast<double>(dh))));
  if (bias) scores = ops::add_cycle(tape, scores, bias);
  scores = ops::add(tape, scores, mask);
  auto probs = ops::softmax(tape, scores);
  auto ctx = merge_heads(tape, ops::bmm(tape, probs, v), B, Tq, H, dh);
  return ops::matmul(tape, ctx, w.wo);
}

template <typename F>
AttnProj<F> attn_proj(const Params<F>& p, const std::string& pre, const char* prefix) {
  return {p.get(pre + prefix + "q"), p.get(pre + prefix + "k"), p.get(pre + prefix + "v"),
          p.get(pre + prefix + "o")};
}

template <typename F>
std::vector<int> flatten_ids(const std::vector<TokenSeq>& batch) {
  std::vector<int> flat;
  for (const auto& s : batch) flat.insert(flat.end(), s.begin(), s.end());
  return flat;
}

}  // namespace model_detail

// Forward pass to logits [B, dec_len, vocab]. Every sub-block computes
// x + SubBlock(LayerNorm(x)); decoder self-attention is causal; PAD key
// positions are masked out everywhere.
// When dropout_rng is non-null, inverted dropout at cfg.dropout is applied to
// every sub-block output before its residual add (training mode).
template <typename F>
TensorPtr<F> forward(Tape<F>* tape, const Params<F>& p, const std::vector<TokenSeq>& enc_ids,
                     const std::vector<TokenSeq>& dec_ids, std::mt19937_64* dropout_rng = nullptr) {
  const ModelConfig& cfg = p.cfg;
  auto drop = [&](TensorPtr<F> t) {
    return dropout_rng && cfg.dropout > 0.0 ? ops::dropout(tape, t, cfg.dropout, *dropout_rng) : t;
  };
  require(!enc_ids.empty() && enc_ids.size() == dec_ids.size(), "SHAPE_ERROR",
          "forward: encoder/decoder batch sizes must match and be non-empty");
  long B = static_cast<long>(enc_ids.size());
  long Te = static_cast<long>(enc_ids[0].size());
  long Td = static_cast<long>(dec_ids[0].size());
  for (const auto& s : enc_ids)
    require(static_cast<long>(s.size()) == Te, "SHAPE_ERROR", "forward: ragged encoder batch");
  for (const auto& s : dec_ids)
    require(static_cast<long>(s.size()) == Td, "SHAPE_ERROR", "forward: ragged decoder batch");
  require(Te <= cfg.max_len && Td <= cfg.max_len, "SHAPE_ERROR",
          "forward: sequence exceeds max_len " + std::to_string(cfg.max_len));
  for (const auto& batch : {enc_ids, dec_ids})
    for (const auto& s : batch)
      for (int id : s)
        require(id >= 0 && id < cfg.vocab_size, "SHAPE_ERROR",
                "forward: token id out of vocabulary range");

  long H = cfg.n_heads, dh = cfg.d_head, d = cfg.d_model;
  auto emb = p.get("embedding");
  F eps = F(model_detail::kLnEps);

  // Encoder
  auto x = ops::embedding(tape, emb, model_detail::flatten_ids<F>(enc_ids));  // [B*Te, d]
  auto enc_mask = model_detail::build_mask<F>(enc_ids, H, Te, false);
  auto enc_bias = ops::gather_bias(
      tape, p.get("enc.rel_bias"),
      model_detail::bucket_matrix(Te, Te, cfg.rel_pos_buckets, true), Te, Te);
  for (int l = 0; l < cfg.n_layers_enc; ++l) {
    std::string pre = "enc." + std::to_string(l) + ".";
    auto h1 = ops::layer_norm(tape, x, p.get(pre + "ln1"), eps);
    auto attn = model_detail::attention(tape, model_detail::attn_proj(p, pre, "w"), h1, h1,
                                        enc_bias, enc_mask, B, Te, Te, H, dh);
    x = ops::add(tape, x, drop(attn));
    auto h2 = ops::layer_norm(tape, x, p.get(pre + "ln2"), eps);
    auto ff = ops::matmul(tape, ops::relu(tape, ops::matmul(tape, h2, p.get(pre + "ff1"))),
                          p.get(pre + "ff2"));
    x = ops::add(tape, x, drop(ff));
  }
  auto enc_out = ops::layer_norm(tape, x, p.get("enc.ln_final"), eps);  // [B*Te, d]

  // Decoder
  auto y = ops::embedding(tape, emb, model_detail::flatten_ids<F>(dec_ids));  // [B*Td, d]
  auto self_mask = model_detail::build_mask<F>(dec_ids, H, Td, true, true);
  auto cross_mask = model_detail::build_mask<F>(enc_ids, H, Td, false);
  auto dec_bias = ops::gather_bias(
      tape, p.get("dec.rel_bias"),
      model_detail::bucket_matrix(Td, Td, cfg.rel_pos_buckets, false), Td, Td);
  for (int l = 0; l < cfg.n_layers_dec; ++l) {
    std::string pre = "dec." + std::to_string(l) + ".";
    auto h1 = ops::layer_norm(tape, y, p.get(pre + "ln1"), eps);
    auto self_attn = model_detail::attention(tape, model_detail::attn_proj(p, pre, "w"), h1, h1,
                                             dec_bias, self_mask, B, Td, Td, H, dh);
    y = ops::add(tape, y, drop(self_attn));
    auto h2 = ops::layer_norm(tape, y, p.get(pre + "ln2"), eps);
    auto cross = model_detail::attention(tape, model_detail::attn_proj(p, pre, "x"), h2, enc_out,
                                         TensorPtr<F>(), cross_mask, B, Td, Te, H, dh);
    y = ops::add(tape, y, drop(cross));
    auto h3 = ops::layer_norm(tape, y, p.get(pre + "ln3"), eps);
    auto ff = ops::matmul(tape, ops::relu(tape, ops::matmul(tape, h3, p.get(pre + "ff1"))),
                          p.get(pre + "ff2"));
    y = ops::add(tape, y, drop(ff));
  }
  y = ops::layer_norm(tape, y, p.get("dec.ln_final"), eps);

  // Tied output projection, scaled by 1/sqrt(d_model).
  auto logits = ops::scale(tape, ops::matmul_nt(tape, y, emb),
                           F(1.0 / std::sqrt(static_cast<double>(d))));
  return ops::reshape(tape, logits, {B, Td, static_cast<long>(cfg.vocab_size)});
}

// Mean token cross entropy over non-PAD target positions.
template <typename F>
TensorPtr<F> seq_loss(Tape<F>* tape, const TensorPtr<F>& logits,
                      const std::vector<TokenSeq>& target_ids) {
  require(logits->shape.size() == 3, "SHAPE_ERROR", "seq_loss: logits must be [B,T,V]");
  long B = logits->shape[0], T = logits->shape[1], V = logits->shape[2];
  require(static_cast<long>(target_ids.size()) == B, "SHAPE_ERROR", "seq_loss: batch mismatch");
  std::vector<int> flat;
  for (const auto& s : target_ids) {
    require(static_cast<long>(s.size()) == T, "SHAPE_ERROR", "seq_loss: target length mismatch");
    flat.insert(flat.end(), s.begin(), s.end());
  }
  auto flat_logits = ops::reshape(tape, logits, {B * T, V});
  return ops::cross_entropy(tape, flat_logits, flat, Vocab::kPad);
}

}  // namespace deskmt
