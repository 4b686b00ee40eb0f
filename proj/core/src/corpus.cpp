#include "capt/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

#include "capt/error.hpp"

namespace capt {

namespace {

const std::vector<std::string>& special_tokens() {
  static const std::vector<std::string> specials = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
  return specials;
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read '" + path.string() + "'");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  if (in.bad()) throw IoError("error while reading '" + path.string() + "'");
  return lines;
}

void write_lines(const std::filesystem::path& path, std::span<const std::string> lines) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  for (const auto& l : lines) out << l << '\n';
  if (!out) throw IoError("error while writing '" + path.string() + "'");
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  const auto& specials = special_tokens();
  if (tokens.size() < specials.size() || !std::equal(specials.begin(), specials.end(), tokens.begin())) {
    throw ConfigError("vocabulary must start with [PAD] [UNK] [CLS] [SEP] [MASK]");
  }
  Vocabulary v;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (!v.ids_.emplace(tokens[i], static_cast<std::int32_t>(i)).second) {
      throw ConfigError("duplicate vocabulary token '" + tokens[i] + "'");
    }
  }
  v.tokens_ = std::move(tokens);
  return v;
}

Vocabulary Vocabulary::build_from_lines(std::span<const std::string> lines, std::size_t max_size) {
  if (max_size < 6) throw ConfigError("vocabulary max_size must be at least 6");
  std::map<std::string, std::size_t> counts;
  for (const auto& line : lines) {
    for (auto& tok : tokenize(line)) ++counts[tok];
  }
  if (counts.empty()) throw EmptyCorpusError("corpus contains no tokens");
  for (const auto& s : special_tokens()) counts.erase(s);

  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  const std::size_t keep = std::min(ranked.size(), max_size - special_tokens().size());

  std::vector<std::string> tokens = special_tokens();
  for (std::size_t i = 0; i < keep; ++i) tokens.push_back(ranked[i].first);
  return from_tokens(std::move(tokens));
}

Vocabulary Vocabulary::build(const std::filesystem::path& corpus, std::size_t max_size) {
  const auto lines = read_lines(corpus);
  return build_from_lines(lines, max_size);
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) { return from_tokens(read_lines(path)); }

void Vocabulary::save(const std::filesystem::path& path) const { write_lines(path, tokens_); }

std::int32_t Vocabulary::id(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? kUnkId : it->second;
}

bool Vocabulary::contains(std::string_view token) const { return ids_.count(std::string(token)) != 0; }

const std::string& Vocabulary::token(std::int32_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw IndexError("token id " + std::to_string(id) + " outside vocabulary of size " + std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::uint64_t Vocabulary::fingerprint() const {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](unsigned char c) {
    h ^= c;
    h *= 1099511628211ULL;
  };
  for (const auto& t : tokens_) {
    for (char c : t) mix(static_cast<unsigned char>(c));
    mix('\n');
  }
  return h;
}

TokenSequence encode(const Vocabulary& vocab, std::string_view text, std::size_t max_len) {
  if (max_len < 3) throw ConfigError("sequence length must be at least 3");
  const auto words = tokenize(text);
  TokenSequence seq;
  seq.ids.assign(max_len, kPadId);
  seq.ids[0] = kClsId;
  const std::size_t n = std::min(words.size(), max_len - 2);
  for (std::size_t i = 0; i < n; ++i) seq.ids[i + 1] = vocab.id(words[i]);
  seq.ids[n + 1] = kSepId;
  seq.attention_len = n + 2;
  return seq;
}

std::string decode(const Vocabulary& vocab, const TokenSequence& seq) {
  std::string out;
  for (std::size_t i = 1; i + 1 < seq.attention_len; ++i) {
    if (!out.empty()) out.push_back(' ');
    out += vocab.token(seq.ids[i]);
  }
  return out;
}

BatchIterator::BatchIterator(std::span<const std::string> lines, const Vocabulary& vocab, std::size_t batch_size,
                             std::size_t max_len, std::uint64_t seed)
    : batch_size_(batch_size), rng_(derive_rng(seed, 0x6261746368ULL)) {
  if (lines.empty()) throw EmptyCorpusError("corpus has no documents");
  if (batch_size == 0) throw ConfigError("batch size must be at least 1");
  auto docs = std::make_shared<std::vector<TokenSequence>>();
  docs->reserve(lines.size());
  for (const auto& l : lines) docs->push_back(encode(vocab, l, max_len));
  docs_ = std::move(docs);
}

std::vector<TokenSequence> BatchIterator::next() {
  std::vector<TokenSequence> batch;
  batch.reserve(batch_size_);
  for (std::size_t i = 0; i < batch_size_; ++i) batch.push_back((*docs_)[uniform_index(rng_, docs_->size())]);
  return batch;
}

}  // namespace capt
