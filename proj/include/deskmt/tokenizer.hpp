#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "deskmt/corpus.hpp"
#include "deskmt/error.hpp"
#include "deskmt/unicode.hpp"

namespace deskmt {

// Internal symbol alphabet: 0..255 are raw bytes, 256 is the word-boundary
// meta symbol (every U+0020 maps to it 1:1), 257.. are learned merges.
// Vocabulary ids: PAD=0, EOS=1, UNK=2, then symbol s at id s+3, then filler
// up to the sentinel block which occupies the highest n_sentinels ids
// (sentinel k has id size-1-k).
using Surface = std::u16string;  // element = byte value or kBoundarySym

constexpr char16_t kBoundarySym = 256;

struct Vocab {
  int size = 0;
  int n_sentinels = 0;
  std::vector<Surface> syms;  // symbol index -> surface; 257.. are learned pieces
  std::map<Surface, int> lookup;

  static constexpr int kPad = 0;
  static constexpr int kEos = 1;
  static constexpr int kUnk = 2;

  int n_learned() const { return static_cast<int>(syms.size()) - 257; }
  int first_filler_id() const { return 260 + n_learned(); }
  int first_sentinel_id() const { return size - n_sentinels; }

  bool is_sentinel(int id) const { return n_sentinels > 0 && id >= first_sentinel_id() && id < size; }

  int sentinel_id(int k) const {
    require(k >= 0 && k < n_sentinels, "SENTINEL_ERROR",
            "sentinel index " + std::to_string(k) + " out of range [0," +
                std::to_string(n_sentinels) + ")");
    return size - 1 - k;
  }

  int sentinel_index(int id) const {
    require(is_sentinel(id), "SENTINEL_ERROR", "id is not a sentinel: " + std::to_string(id));
    return size - 1 - id;
  }
};

using TokenSeq = std::vector<int>;

namespace tok_detail {

// Splits NFC text into chunks of symbols; each space becomes a boundary
// symbol that starts a new chunk, so merges never cross spaces.
inline std::vector<Surface> chunk_symbols(const std::string& nfc_text) {
  std::vector<Surface> chunks;
  Surface cur;
  for (unsigned char b : nfc_text) {
    if (b == ' ') {
      if (!cur.empty()) chunks.push_back(std::move(cur));
      cur.clear();
      cur.push_back(kBoundarySym);
    } else {
      cur.push_back(static_cast<char16_t>(b));
    }
  }
  if (!cur.empty()) chunks.push_back(std::move(cur));
  return chunks;
}

inline void append_piece_text(std::string& out, const Surface& surface) {
  for (char16_t s : surface)
    out.push_back(s == kBoundarySym ? ' ' : static_cast<char>(static_cast<unsigned char>(s)));
}

// Display form used in the vocab file: boundary renders as the block glyph,
// printable ASCII (except '<') stays literal, everything else as <0xNN>.
inline std::string escape_surface(const Surface& surface) {
  static const char* hex = "0123456789ABCDEF";
  std::string out;
  for (char16_t s : surface) {
    if (s == kBoundarySym) {
      out += "\xE2\x96\x81";  // U+2581
    } else if (s >= 0x21 && s <= 0x7E && s != '<') {
      out.push_back(static_cast<char>(s));
    } else {
      out += "<0x";
      out.push_back(hex[(s >> 4) & 0xF]);
      out.push_back(hex[s & 0xF]);
      out.push_back('>');
    }
  }
  return out;
}

inline Surface unescape_surface(const std::string& text) {
  Surface out;
  size_t i = 0;
  while (i < text.size()) {
    if (text.compare(i, 3, "\xE2\x96\x81") == 0) {
      out.push_back(kBoundarySym);
      i += 3;
    } else if (text.compare(i, 3, "<0x") == 0 && i + 5 < text.size() && text[i + 5] == '>') {
      out.push_back(static_cast<char16_t>(std::stoi(text.substr(i + 3, 2), nullptr, 16)));
      i += 6;
    } else {
      out.push_back(static_cast<char16_t>(static_cast<unsigned char>(text[i])));
      i += 1;
    }
  }
  return out;
}

}  // namespace tok_detail

// Greedy deterministic pair-merge training. The seed is accepted for
// interface stability; the algorithm itself is deterministic.
inline Vocab train_vocab(const std::vector<MonoCorpus>& corpora, int vocab_size, int n_sentinels,
                         uint64_t seed = 0) {
  (void)seed;
  require(n_sentinels >= 0, "VOCAB_ERROR", "n_sentinels must be non-negative");
  require(vocab_size >= 260 + n_sentinels, "VOCAB_ERROR",
          "vocab_size " + std::to_string(vocab_size) + " too small for byte alphabet + specials (need >= " +
              std::to_string(260 + n_sentinels) + ")");
  require(!corpora.empty(), "EMPTY_CORPUS", "cannot train a vocabulary on an empty corpus list");

  Vocab v;
  v.size = vocab_size;
  v.n_sentinels = n_sentinels;
  v.syms.resize(257);
  for (int b = 0; b < 256; ++b) v.syms[b] = Surface(1, static_cast<char16_t>(b));
  v.syms[256] = Surface(1, kBoundarySym);

  // Word-type frequency table over symbol sequences.
  std::map<std::vector<char16_t>, long> words;
  bool any = false;
  for (const auto& c : corpora) {
    for (const auto& line : c.lines) {
      any = true;
      for (auto& chunk : tok_detail::chunk_symbols(unicode::nfc(line)))
        words[std::vector<char16_t>(chunk.begin(), chunk.end())] += 1;
    }
  }
  require(any, "EMPTY_CORPUS", "cannot train a vocabulary on an empty corpus");

  const int target_merges = vocab_size - 260 - n_sentinels;
  for (int m = 0; m < target_merges; ++m) {
    std::map<std::pair<char16_t, char16_t>, long> pair_freq;
    for (const auto& [w, f] : words)
      for (size_t i = 0; i + 1 < w.size(); ++i) pair_freq[{w[i], w[i + 1]}] += f;
    std::pair<char16_t, char16_t> best{};
    long best_f = 0;
    for (const auto& [p, f] : pair_freq)
      if (f > best_f) {
        best_f = f;
        best = p;
      }
    if (best_f < 2) break;  // remaining slots become filler pieces

    char16_t new_sym = static_cast<char16_t>(v.syms.size());
    v.syms.push_back(v.syms[best.first] + v.syms[best.second]);

    std::map<std::vector<char16_t>, long> next;
    for (const auto& [w, f] : words) {
      std::vector<char16_t> nw;
      nw.reserve(w.size());
      for (size_t i = 0; i < w.size(); ++i) {
        if (i + 1 < w.size() && w[i] == best.first && w[i + 1] == best.second) {
          nw.push_back(new_sym);
          ++i;
        } else {
          nw.push_back(w[i]);
        }
      }
      next[nw] += f;
    }
    words = std::move(next);
  }

  for (size_t s = 0; s < v.syms.size(); ++s) v.lookup[v.syms[s]] = static_cast<int>(s);
  return v;
}

// Total function: any text encodes via byte fallback; never emits UNK.
inline TokenSeq encode(const Vocab& v, const std::string& text) {
  TokenSeq ids;
  for (auto& chunk : tok_detail::chunk_symbols(unicode::nfc(text))) {
    std::vector<int> syms(chunk.begin(), chunk.end());
    // Repeatedly merge the adjacent pair whose concatenated surface is the
    // lowest-ranked known piece (rank = symbol index, leftmost on ties).
    for (;;) {
      int best_pos = -1, best_sym = -1;
      for (size_t i = 0; i + 1 < syms.size(); ++i) {
        auto it = v.lookup.find(v.syms[syms[i]] + v.syms[syms[i + 1]]);
        if (it != v.lookup.end() && (best_sym < 0 || it->second < best_sym)) {
          best_sym = it->second;
          best_pos = static_cast<int>(i);
        }
      }
      if (best_pos < 0) break;
      syms[best_pos] = best_sym;
      syms.erase(syms.begin() + best_pos + 1);
    }
    for (int s : syms) ids.push_back(s + 3);
  }
  return ids;
}

// Inverse of encode on its image; sentinels render as <extra_id_k>.
inline std::string decode(const Vocab& v, const TokenSeq& ids) {
  std::string out;
  for (int id : ids) {
    require(id >= 0 && id < v.size, "TOKEN_ERROR",
            "token id " + std::to_string(id) + " out of range for vocab of size " +
                std::to_string(v.size));
    if (id == Vocab::kPad || id == Vocab::kEos) continue;
    if (id == Vocab::kUnk) {
      out += "<unk>";
    } else if (v.is_sentinel(id)) {
      out += "<extra_id_" + std::to_string(v.sentinel_index(id)) + ">";
    } else if (id - 3 < static_cast<int>(v.syms.size())) {
      tok_detail::append_piece_text(out, v.syms[id - 3]);
    }
    // filler ids decode to nothing
  }
  return out;
}

inline int sentinel_id(const Vocab& v, int k) { return v.sentinel_id(k); }

inline void save_vocab(const Vocab& v, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "IO_ERROR", "cannot write vocab file: " + path);
  out << "#vocab\tv1\t" << v.size << '\t' << v.n_sentinels << '\n';
  for (int id = 0; id < v.size; ++id) {
    std::string surface;
    if (id == Vocab::kPad)
      surface = "<pad>";
    else if (id == Vocab::kEos)
      surface = "</s>";
    else if (id == Vocab::kUnk)
      surface = "<unk>";
    else if (v.is_sentinel(id))
      surface = "<extra_id_" + std::to_string(v.sentinel_index(id)) + ">";
    else if (id - 3 < static_cast<int>(v.syms.size()))
      surface = tok_detail::escape_surface(v.syms[id - 3]);
    else
      surface = "<unused_" + std::to_string(id - v.first_filler_id()) + ">";
    out << surface << '\t' << id << '\n';
  }
}

inline Vocab load_vocab(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "IO_ERROR", "cannot open vocab file: " + path);
  std::string header;
  std::getline(in, header);
  std::istringstream hs(header);
  std::string magic, version;
  std::getline(hs, magic, '\t');
  std::getline(hs, version, '\t');
  require(magic == "#vocab" && version == "v1", "FORMAT_ERROR", "not a vocab file: " + path);
  Vocab v;
  hs >> v.size >> v.n_sentinels;
  require(v.size >= 260 + v.n_sentinels, "FORMAT_ERROR", "vocab header sizes inconsistent: " + path);
  v.syms.resize(257);
  for (int b = 0; b < 256; ++b) v.syms[b] = Surface(1, static_cast<char16_t>(b));
  v.syms[256] = Surface(1, kBoundarySym);

  std::string line;
  int expect = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    size_t tab = line.rfind('\t');
    require(tab != std::string::npos, "FORMAT_ERROR", "bad vocab line in " + path);
    std::string surface = line.substr(0, tab);
    int id = std::stoi(line.substr(tab + 1));
    require(id == expect, "FORMAT_ERROR", "vocab ids not dense in " + path);
    ++expect;
    if (id >= 260 && surface.rfind("<unused_", 0) != 0 && surface.rfind("<extra_id_", 0) != 0)
      v.syms.push_back(tok_detail::unescape_surface(surface));
  }
  require(expect == v.size, "FORMAT_ERROR",
          "vocab file lists " + std::to_string(expect) + " pieces, header says " +
              std::to_string(v.size));
  for (size_t s = 0; s < v.syms.size(); ++s) v.lookup[v.syms[s]] = static_cast<int>(s);
  return v;
}

}  // namespace deskmt
