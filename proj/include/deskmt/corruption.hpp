#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "deskmt/corpus.hpp"
#include "deskmt/error.hpp"
#include "deskmt/tokenizer.hpp"

namespace deskmt {

struct DenoisingExample {
  TokenSeq input_ids;   // kept tokens with one sentinel per dropped span
  TokenSeq target_ids;  // sentinel k, span k tokens, ..., EOS
  int n_dropped = 0;
  int n_spans = 0;
};

// Drop count rule: round-half-up of rate * length.
inline int drop_count(double rate, size_t len) {
  return static_cast<int>(std::floor(rate * static_cast<double>(len) + 0.5));
}

// Builds the example from an explicit sorted set of dropped positions.
// Exposed separately so tests can inject a selection.
inline DenoisingExample corrupt_with_positions(const TokenSeq& ids,
                                               const std::vector<size_t>& dropped_sorted,
                                               const Vocab& vocab) {
  DenoisingExample ex;
  ex.n_dropped = static_cast<int>(dropped_sorted.size());
  size_t next = 0;
  int span = -1;
  bool in_span = false;
  for (size_t i = 0; i < ids.size(); ++i) {
    bool drop = next < dropped_sorted.size() && dropped_sorted[next] == i;
    if (drop) {
      if (!in_span) {
        ++span;
        require(span < vocab.n_sentinels, "SENTINEL_EXHAUSTED",
                "corruption needs more sentinels than the vocab reserves");
        ex.input_ids.push_back(vocab.sentinel_id(span));
        ex.target_ids.push_back(vocab.sentinel_id(span));
        in_span = true;
      }
      ex.target_ids.push_back(ids[i]);
      ++next;
    } else {
      ex.input_ids.push_back(ids[i]);
      in_span = false;
    }
  }
  ex.target_ids.push_back(Vocab::kEos);
  ex.n_spans = span + 1;
  return ex;
}

// Selects exactly round(rate*len) positions uniformly without replacement,
// merges adjacent positions into spans, and emits input/target sequences.
inline DenoisingExample corrupt(const TokenSeq& ids, double rate, std::mt19937_64& rng,
                                const Vocab& vocab) {
  require(rate >= 0.0 && rate < 1.0, "RATE_ERROR", "corruption rate must lie in [0,1)");
  require(!ids.empty(), "EMPTY_SEQUENCE", "cannot corrupt an empty sequence");
  int n_drop = drop_count(rate, ids.size());

  // Partial Fisher-Yates over position indices.
  std::vector<size_t> pos(ids.size());
  for (size_t i = 0; i < pos.size(); ++i) pos[i] = i;
  for (int i = 0; i < n_drop; ++i) {
    size_t j = i + rng() % (pos.size() - i);
    std::swap(pos[i], pos[j]);
  }
  std::vector<size_t> dropped(pos.begin(), pos.begin() + n_drop);
  std::sort(dropped.begin(), dropped.end());
  return corrupt_with_positions(ids, dropped, vocab);
}

// Test oracle: reconstructs the original sequence from a denoising example.
inline TokenSeq splice(const DenoisingExample& ex, const Vocab& vocab) {
  // Index target spans by sentinel.
  std::vector<TokenSeq> spans;
  std::vector<int> span_sentinels;
  for (int id : ex.target_ids) {
    if (id == Vocab::kEos) break;
    if (vocab.is_sentinel(id)) {
      span_sentinels.push_back(id);
      spans.emplace_back();
    } else {
      require(!spans.empty(), "SPLICE_ERROR", "target tokens precede the first sentinel");
      spans.back().push_back(id);
    }
  }
  TokenSeq out;
  size_t next_span = 0;
  for (int id : ex.input_ids) {
    if (vocab.is_sentinel(id)) {
      require(next_span < span_sentinels.size() && span_sentinels[next_span] == id, "SPLICE_ERROR",
              "sentinel mismatch between input and target");
      for (int t : spans[next_span]) out.push_back(t);
      ++next_span;
    } else {
      out.push_back(id);
    }
  }
  require(next_span == span_sentinels.size(), "SPLICE_ERROR",
          "target has spans that never occur in the input");
  return out;
}

struct DenoisingBatch {
  std::vector<TokenSeq> inputs;   // padded to the batch max with PAD
  std::vector<TokenSeq> targets;  // padded to the batch max with PAD
  std::vector<std::string> langs;  // language tag per example, for audits
  size_t input_len = 0;
  size_t target_len = 0;
};

// Deterministic denoising batch stream: all corpus lines are pooled (so the
// language mix is proportional to corpus sizes), shuffled once per pass with
// the stream seed, encoded, truncated to max_len, corrupted and padded.
class DenoisingStream {
public:
  DenoisingStream(const std::vector<MonoCorpus>& corpora, const Vocab& vocab, double rate,
                  size_t max_len, size_t batch_size, uint64_t seed)
      : vocab_(vocab), rate_(rate), max_len_(max_len), batch_size_(batch_size), rng_(seed) {
    require(max_len >= 2, "CONFIG_ERROR", "max_len must be at least 2");
    require(batch_size >= 1, "CONFIG_ERROR", "batch_size must be at least 1");
    for (const auto& c : corpora)
      for (const auto& line : c.lines) pool_.push_back({c.lang.code, line});
    require(!pool_.empty(), "EMPTY_CORPUS", "denoising stream needs a non-empty corpus");
    reshuffle();
  }

  // Returns the next batch, starting a fresh shuffled pass when exhausted.
  DenoisingBatch next() {
    DenoisingBatch batch;
    for (size_t b = 0; b < batch_size_ && cursor_ < order_.size(); ++b) {
      const auto& [lang, line] = pool_[order_[cursor_++]];
      TokenSeq ids = encode(vocab_, line);
      if (ids.size() > max_len_) ids.resize(max_len_);
      if (ids.empty()) ids.push_back(Vocab::kEos);
      DenoisingExample ex = corrupt(ids, rate_, rng_, vocab_);
      batch.inputs.push_back(std::move(ex.input_ids));
      batch.targets.push_back(std::move(ex.target_ids));
      batch.langs.push_back(lang);
    }
    if (cursor_ >= order_.size()) reshuffle();
    for (const auto& s : batch.inputs) batch.input_len = std::max(batch.input_len, s.size());
    for (const auto& s : batch.targets) batch.target_len = std::max(batch.target_len, s.size());
    for (auto& s : batch.inputs) s.resize(batch.input_len, Vocab::kPad);
    for (auto& s : batch.targets) s.resize(batch.target_len, Vocab::kPad);
    return batch;
  }

private:
  void reshuffle() {
    order_.resize(pool_.size());
    for (size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    for (size_t i = order_.size() - 1; i > 0; --i) {
      size_t j = rng_() % (i + 1);
      std::swap(order_[i], order_[j]);
    }
    cursor_ = 0;
  }

  const Vocab& vocab_;
  double rate_;
  size_t max_len_;
  size_t batch_size_;
  std::mt19937_64 rng_;
  std::vector<std::pair<std::string, std::string>> pool_;
  std::vector<size_t> order_;
  size_t cursor_ = 0;
};

// Debug dump format: `input_ids|target_ids`, space-separated decimal ids.
inline std::string dump_example(const DenoisingExample& ex) {
  std::string out;
  for (size_t i = 0; i < ex.input_ids.size(); ++i)
    out += (i ? " " : "") + std::to_string(ex.input_ids[i]);
  out += "|";
  for (size_t i = 0; i < ex.target_ids.size(); ++i)
    out += (i ? " " : "") + std::to_string(ex.target_ids[i]);
  return out;
}

}  // namespace deskmt
