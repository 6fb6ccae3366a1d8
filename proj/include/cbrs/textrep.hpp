#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cbrs/corpus.hpp"

namespace cbrs {

struct TokenizedMessage {
  std::vector<std::string> words;

  size_t size() const { return words.size(); }
  bool empty() const { return words.empty(); }
};

// Splits on Unicode whitespace and detaches punctuation into separate tokens.
// '-' and '+' stay attached to an adjacent letter or digit ("O-", "AB+",
// "-ve"); punctuation between two digits stays inside the token so dates and
// phone numbers ("14-06-21", "19:00", "01711.234") survive as one unit.
TokenizedMessage tokenize(std::string_view text);

// Classifier-side view of a message: NFC + casefold, then every maximal run
// of decimal digits inside a token is replaced by a single '#'.
TokenizedMessage classifier_tokens(std::string_view text);

// Character n-grams (by code point) of "<word>" for lengths minn..maxn,
// followed by "<word>" itself; duplicates removed keeping first occurrence.
std::vector<std::string> subword_units(std::string_view word, int minn, int maxn);

inline constexpr std::string_view kNgramSeparator = "\x1f";

// Contiguous word n-grams of orders 2..n, all bigrams first, then trigrams, ...
std::vector<std::string> word_ngrams(const std::vector<std::string>& words, int n);

struct FeatureIndices {
  std::vector<uint32_t> indices;
};

// Stable across runs and platforms: FNV-1a 64 over the UTF-8 bytes, then a
// 64-bit finalizer, modulo buckets.
uint32_t hash_unit(std::string_view unit, uint32_t buckets);
FeatureIndices hash_features(const std::vector<std::string>& units, uint32_t buckets);

struct SubwordConfig {
  int minn = 3;
  int maxn = 6;
  int word_ngrams = 3;
  uint32_t buckets = 1u << 21;
};

// Hashed bag for one message: subword rows per word plus word-n-gram rows.
struct MessageFeatures {
  std::vector<std::vector<uint32_t>> words;
  std::vector<uint32_t> ngrams;

  bool empty() const { return words.empty() && ngrams.empty(); }
};

MessageFeatures extract_features(const TokenizedMessage& msg, const SubwordConfig& cfg);

// Row-major bucket_count x dim table.
template <class Real>
struct EmbeddingTable {
  size_t rows = 0;
  size_t dim = 0;
  std::vector<Real> data;

  EmbeddingTable() = default;
  EmbeddingTable(size_t r, size_t d) : rows(r), dim(d), data(r * d, Real(0)) {}

  std::span<Real> row(size_t i) { return {data.data() + i * dim, dim}; }
  std::span<const Real> row(size_t i) const { return {data.data() + i * dim, dim}; }
};

// Word vector = mean of its subword rows; message vector = mean over word
// vectors and word-n-gram rows. Empty message gives the zero vector.
template <class Real>
std::vector<Real> embed_message(const MessageFeatures& features, const EmbeddingTable<Real>& table) {
  std::vector<Real> out(table.dim, Real(0));
  const size_t parts = features.words.size() + features.ngrams.size();
  if (parts == 0) return out;
  for (const auto& word : features.words) {
    if (word.empty()) continue;
    const Real scale = Real(1) / static_cast<Real>(word.size());
    for (uint32_t idx : word) {
      const auto r = table.row(idx);
      for (size_t k = 0; k < table.dim; ++k) out[k] += scale * r[k];
    }
  }
  for (uint32_t idx : features.ngrams) {
    const auto r = table.row(idx);
    for (size_t k = 0; k < table.dim; ++k) out[k] += r[k];
  }
  const Real inv = Real(1) / static_cast<Real>(parts);
  for (auto& v : out) v *= inv;
  return out;
}

template <class Real>
std::vector<Real> embed_message(const TokenizedMessage& msg, const EmbeddingTable<Real>& table,
                                const SubwordConfig& cfg) {
  return embed_message(extract_features(msg, cfg), table);
}

using SparseVector = std::vector<std::pair<uint32_t, double>>;

// Unigram + bigram TF-IDF over classifier tokens with smoothed idf
// ln((1+N)/(1+df)) + 1 and L2-normalized rows.
class TfidfVocabulary {
 public:
  static TfidfVocabulary fit(const Corpus& corpus);
  static TfidfVocabulary fit(const std::vector<std::string>& documents);

  SparseVector transform(std::string_view text) const;

  bool fitted() const { return fitted_; }
  size_t size() const { return idf_.size(); }
  // Throws if the term is not in the vocabulary.
  double idf(std::string_view term) const;
  const std::unordered_map<std::string, uint32_t>& terms() const { return index_; }

  static std::vector<std::string> terms_of(std::string_view text);

 private:
  bool fitted_ = false;
  std::unordered_map<std::string, uint32_t> index_;
  std::vector<double> idf_;
};

}  // namespace cbrs
