#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "sslab/corpus.hpp"
#include "sslab/error.hpp"
#include "sslab/json_writer.hpp"
#include "sslab/unicode.hpp"

namespace sslab {

using TokenId = std::int32_t;

enum class InputLayout : std::uint8_t {
  anchor_target_context = 0,  // [CLS] anchor [SEP] target [SEP] context [SEP]
  anchor_context = 1,         // [CLS] anchor [SEP] context [SEP]
};

inline std::string_view to_string(InputLayout layout) {
  return layout == InputLayout::anchor_context ? "anchor_context" : "anchor_target_context";
}

inline InputLayout parse_layout(std::string_view name) {
  if (name == "anchor_target_context") return InputLayout::anchor_target_context;
  if (name == "anchor_context") return InputLayout::anchor_context;
  throw Error(ErrorKind::InvalidConfig, "unknown input layout: " + std::string(name));
}

/// Token <-> id bijection. Ids 0..3 are PAD, UNK, CLS, SEP; corpus tokens
/// follow in id order. Corpus tokens are lowercased, so the uppercase special
/// spellings can never collide with them.
class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kUnk = 1;
  static constexpr TokenId kCls = 2;
  static constexpr TokenId kSep = 3;
  static constexpr std::size_t kSpecialCount = 4;

  Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

  /// `corpus_tokens` receive ids 4, 5, ... in the given order.
  explicit Vocabulary(std::vector<std::string> corpus_tokens) {
    id_to_token_ = {"[PAD]", "[UNK]", "[CLS]", "[SEP]"};
    for (std::size_t i = 0; i < id_to_token_.size(); ++i) {
      token_to_id_.emplace(id_to_token_[i], static_cast<TokenId>(i));
    }
    for (auto& t : corpus_tokens) {
      if (t.empty()) throw Error(ErrorKind::InvalidConfig, "empty vocabulary token");
      const auto id = static_cast<TokenId>(id_to_token_.size());
      if (!token_to_id_.emplace(t, id).second) {
        throw Error(ErrorKind::InvalidConfig, "duplicate vocabulary token: " + t);
      }
      id_to_token_.push_back(std::move(t));
    }
  }

  std::size_t size() const noexcept { return id_to_token_.size(); }

  TokenId id_of(std::string_view token) const {
    auto it = token_to_id_.find(std::string(token));
    return it == token_to_id_.end() ? kUnk : it->second;
  }

  const std::string& token_of(TokenId id) const { return id_to_token_.at(static_cast<std::size_t>(id)); }

  std::span<const std::string> tokens() const noexcept { return id_to_token_; }

  /// One token per line in id order, specials first.
  std::string serialize() const {
    std::string out;
    for (const auto& t : id_to_token_) {
      out += t;
      out += '\n';
    }
    return out;
  }

  static Vocabulary deserialize(std::string_view text) {
    std::vector<std::string> lines;
    std::size_t start = 0;
    while (start < text.size()) {
      std::size_t end = text.find('\n', start);
      if (end == std::string_view::npos) end = text.size();
      lines.emplace_back(text.substr(start, end - start));
      start = end + 1;
    }
    static constexpr std::string_view kSpecials[] = {"[PAD]", "[UNK]", "[CLS]", "[SEP]"};
    if (lines.size() < kSpecialCount ||
        !std::equal(std::begin(kSpecials), std::end(kSpecials), lines.begin())) {
      throw Error(ErrorKind::InvalidConfig, "vocabulary file does not start with the special tokens");
    }
    return Vocabulary(std::vector<std::string>(lines.begin() + kSpecialCount, lines.end()));
  }

  void save(const std::filesystem::path& path) const { io::write_text(path, serialize()); }
  static Vocabulary load(const std::filesystem::path& path) { return deserialize(io::read_text(path)); }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.id_to_token_ == b.id_to_token_;
  }

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, TokenId> token_to_id_;
};

/// Token frequencies over anchor, target and context of the selected records.
inline std::map<std::string, std::size_t> count_tokens(const Dataset& d,
                                                       std::span<const std::size_t> indices) {
  std::map<std::string, std::size_t> counts;
  auto add = [&](const std::string& text) {
    for (auto& t : unicode::tokenize(text)) ++counts[t];
  };
  for (auto i : indices) {
    const auto& r = d.records.at(i);
    add(r.anchor);
    add(r.target);
    add(r.context);
  }
  return counts;
}

/// Keeps the `max_size` most frequent tokens with frequency >= min_freq;
/// frequency ties are broken lexicographically.
inline Vocabulary build_vocab(const Dataset& d, std::span<const std::size_t> indices,
                              std::size_t min_freq = 1, std::size_t max_size = 30000) {
  if (indices.empty()) throw Error(ErrorKind::EmptyDataset, "cannot build a vocabulary from no records");
  if (min_freq == 0 || max_size == 0) {
    throw Error(ErrorKind::InvalidConfig, "min_freq and max_size must be >= 1");
  }
  const auto counts = count_tokens(d, indices);
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (const auto& [tok, c] : counts) {
    if (c >= min_freq) kept.emplace_back(tok, c);
  }
  // std::map iteration is already lexicographic, so a stable sort on count keeps ties ordered
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  if (kept.size() > max_size) kept.resize(max_size);
  std::vector<std::string> tokens;
  tokens.reserve(kept.size());
  for (auto& [tok, c] : kept) tokens.push_back(std::move(tok));
  return Vocabulary(std::move(tokens));
}

inline Vocabulary build_vocab(const Dataset& d, std::size_t min_freq = 1, std::size_t max_size = 30000) {
  std::vector<std::size_t> all(d.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return build_vocab(d, all, min_freq, max_size);
}

struct TokenSequence {
  std::vector<TokenId> ids;
  std::vector<std::uint8_t> attention_mask;  // 1 on real tokens, 0 on padding

  std::size_t size() const noexcept { return ids.size(); }
  /// Number of leading unmasked positions.
  std::size_t real_length() const {
    return static_cast<std::size_t>(std::count(attention_mask.begin(), attention_mask.end(), 1));
  }

  friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

inline std::size_t segment_count(InputLayout layout) {
  return layout == InputLayout::anchor_context ? 2 : 3;
}

/// Smallest max_len that fits CLS, one SEP per segment, and one token per segment.
inline std::size_t min_max_len(InputLayout layout) { return 1 + 2 * segment_count(layout); }

/// Cuts the segments to fit `budget` tokens, always removing the trailing
/// token of the currently longest segment (the earliest one on ties).
inline void truncate_longest_first(std::vector<std::vector<TokenId>>& segments, std::size_t budget) {
  auto total = [&] {
    std::size_t t = 0;
    for (const auto& s : segments) t += s.size();
    return t;
  };
  while (total() > budget) {
    auto longest = std::max_element(segments.begin(), segments.end(),
                                    [](const auto& a, const auto& b) { return a.size() < b.size(); });
    longest->pop_back();
  }
}

inline TokenSequence encode(std::string_view anchor, std::string_view target, std::string_view context,
                            const Vocabulary& v, std::size_t max_len,
                            InputLayout layout = InputLayout::anchor_target_context) {
  if (max_len < min_max_len(layout)) {
    throw Error(ErrorKind::MaxLenTooSmall, "max_len " + std::to_string(max_len) + " < " +
                                               std::to_string(min_max_len(layout)));
  }
  auto ids_of = [&](std::string_view text) {
    std::vector<TokenId> out;
    for (const auto& t : unicode::tokenize(text)) out.push_back(v.id_of(t));
    return out;
  };
  std::vector<std::vector<TokenId>> segments;
  segments.push_back(ids_of(anchor));
  if (layout == InputLayout::anchor_target_context) segments.push_back(ids_of(target));
  segments.push_back(ids_of(context));
  truncate_longest_first(segments, max_len - 1 - segments.size());

  TokenSequence seq;
  seq.ids.reserve(max_len);
  seq.ids.push_back(Vocabulary::kCls);
  for (const auto& s : segments) {
    seq.ids.insert(seq.ids.end(), s.begin(), s.end());
    seq.ids.push_back(Vocabulary::kSep);
  }
  seq.attention_mask.assign(seq.ids.size(), 1);
  seq.ids.resize(max_len, Vocabulary::kPad);
  seq.attention_mask.resize(max_len, 0);
  return seq;
}

inline TokenSequence encode(const PhraseRecord& r, const Vocabulary& v, std::size_t max_len,
                            InputLayout layout = InputLayout::anchor_target_context) {
  return encode(r.anchor, r.target, r.context, v, max_len, layout);
}

/// Token strings of the unmasked region, specials included.
inline std::vector<std::string> decode(const TokenSequence& seq, const Vocabulary& v) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < seq.ids.size(); ++i) {
    if (seq.attention_mask[i]) out.push_back(v.token_of(seq.ids[i]));
  }
  return out;
}

}  // namespace sslab
