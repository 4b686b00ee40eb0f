#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "capt/rng.hpp"

namespace capt {

inline constexpr std::int32_t kPadId = 0;
inline constexpr std::int32_t kUnkId = 1;
inline constexpr std::int32_t kClsId = 2;
inline constexpr std::int32_t kSepId = 3;
inline constexpr std::int32_t kMaskId = 4;
inline constexpr std::int32_t kNumSpecials = 5;

inline bool is_special(std::int32_t id) { return id >= 0 && id < kNumSpecials; }

/// Token <-> id mapping. Ids 0-4 are [PAD] [UNK] [CLS] [SEP] [MASK]; the rest
/// follow descending corpus frequency with lexicographic tie-breaks.
class Vocabulary {
 public:
  static Vocabulary build(const std::filesystem::path& corpus, std::size_t max_size);
  static Vocabulary build_from_lines(std::span<const std::string> lines, std::size_t max_size);
  static Vocabulary load(const std::filesystem::path& path);
  static Vocabulary from_tokens(std::vector<std::string> tokens);

  void save(const std::filesystem::path& path) const;

  std::int32_t id(std::string_view token) const;  // [UNK] when absent
  bool contains(std::string_view token) const;
  const std::string& token(std::int32_t id) const;
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  // FNV-1a over the token list; identifies a vocabulary inside checkpoints.
  std::uint64_t fingerprint() const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t> ids_;
};

/// Fixed-length encoded sequence: [CLS] tokens... [SEP] [PAD]...
struct TokenSequence {
  std::vector<std::int32_t> ids;
  std::size_t attention_len = 0;

  std::size_t length() const { return ids.size(); }
  friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

// Whitespace split, ASCII lowercase.
std::vector<std::string> tokenize(std::string_view text);

TokenSequence encode(const Vocabulary& vocab, std::string_view text, std::size_t max_len);
std::string decode(const Vocabulary& vocab, const TokenSequence& seq);

std::vector<std::string> read_lines(const std::filesystem::path& path);
void write_lines(const std::filesystem::path& path, std::span<const std::string> lines);

/// Infinite stream of n-sequence batches, lines drawn uniformly with replacement.
class BatchIterator {
 public:
  BatchIterator(std::span<const std::string> lines, const Vocabulary& vocab, std::size_t batch_size,
                std::size_t max_len, std::uint64_t seed);

  std::vector<TokenSequence> next();

  std::size_t batch_size() const { return batch_size_; }
  std::size_t document_count() const { return docs_->size(); }

  std::string state() const { return rng_state(rng_); }
  void restore(const std::string& state) { rng_ = rng_from_state(state); }

 private:
  std::shared_ptr<const std::vector<TokenSequence>> docs_;
  std::size_t batch_size_;
  Rng rng_;
};

}  // namespace capt
