#include "cbrs/textrep.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <unordered_set>

#include "cbrs/error.hpp"
#include "cbrs/random.hpp"
#include "cbrs/unicode.hpp"

namespace cbrs {

namespace {

bool is_joiner(char32_t cp) { return cp == U'-' || cp == U'+'; }
bool is_apostrophe(char32_t cp) { return cp == U'\'' || cp == U'’'; }

void tokenize_chunk(const std::u32string& chunk, std::vector<std::string>& out) {
  std::u32string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(unicode::encode(cur));
    cur.clear();
  };
  for (size_t i = 0; i < chunk.size(); ++i) {
    const char32_t cp = chunk[i];
    const bool has_prev = i > 0;
    const bool has_next = i + 1 < chunk.size();
    const char32_t prev = has_prev ? chunk[i - 1] : 0;
    const char32_t next = has_next ? chunk[i + 1] : 0;

    if (unicode::is_word_char(cp)) {
      cur.push_back(cp);
      continue;
    }
    if (is_joiner(cp) && ((has_prev && unicode::is_word_char(prev) && !cur.empty()) ||
                          (has_next && unicode::is_word_char(next)))) {
      cur.push_back(cp);
      continue;
    }
    const bool digit_inside = has_prev && has_next && !cur.empty() && unicode::is_digit(prev) &&
                              unicode::is_digit(next);
    const bool apostrophe_inside = is_apostrophe(cp) && has_prev && has_next && !cur.empty() &&
                                   unicode::is_alpha(prev) && unicode::is_alpha(next);
    if (digit_inside || apostrophe_inside) {
      cur.push_back(cp);
      continue;
    }
    flush();
    out.push_back(unicode::encode(cp));
  }
  flush();
}

std::string mask_digit_runs(std::string_view token) {
  std::u32string out;
  bool in_run = false;
  for (char32_t cp : unicode::decode(token)) {
    if (unicode::is_digit(cp)) {
      if (!in_run) out.push_back(U'#');
      in_run = true;
    } else {
      out.push_back(cp);
      in_run = false;
    }
  }
  return unicode::encode(out);
}

uint64_t fmix64(uint64_t k) {
  k ^= k >> 33;
  k *= 0xff51afd7ed558ccdULL;
  k ^= k >> 33;
  k *= 0xc4ceb9fe1a85ec53ULL;
  k ^= k >> 33;
  return k;
}

}  // namespace

TokenizedMessage tokenize(std::string_view text) {
  TokenizedMessage msg;
  std::u32string chunk;
  for (char32_t cp : unicode::decode(text)) {
    if (unicode::is_space(cp)) {
      if (!chunk.empty()) tokenize_chunk(chunk, msg.words);
      chunk.clear();
    } else {
      chunk.push_back(cp);
    }
  }
  if (!chunk.empty()) tokenize_chunk(chunk, msg.words);
  return msg;
}

TokenizedMessage classifier_tokens(std::string_view text) {
  auto msg = tokenize(unicode::casefold(unicode::nfc(text)));
  for (auto& w : msg.words) w = mask_digit_runs(w);
  return msg;
}

std::vector<std::string> subword_units(std::string_view word, int minn, int maxn) {
  std::vector<std::string> out;
  if (minn < 1 || maxn < minn) return out;
  std::u32string marked = U"<" + unicode::decode(word) + U">";
  std::unordered_set<std::string> seen;
  auto push = [&](std::string unit) {
    if (seen.insert(unit).second) out.push_back(std::move(unit));
  };
  for (int n = minn; n <= maxn; ++n) {
    const auto len = static_cast<size_t>(n);
    if (len > marked.size()) break;
    for (size_t i = 0; i + len <= marked.size(); ++i) push(unicode::encode(std::u32string_view(marked).substr(i, len)));
  }
  push(unicode::encode(marked));
  return out;
}

std::vector<std::string> word_ngrams(const std::vector<std::string>& words, int n) {
  std::vector<std::string> out;
  for (int order = 2; order <= n; ++order) {
    const auto len = static_cast<size_t>(order);
    for (size_t i = 0; i + len <= words.size(); ++i) {
      std::string gram = words[i];
      for (size_t k = 1; k < len; ++k) {
        gram += kNgramSeparator;
        gram += words[i + k];
      }
      out.push_back(std::move(gram));
    }
  }
  return out;
}

uint32_t hash_unit(std::string_view unit, uint32_t buckets) {
  return static_cast<uint32_t>(fmix64(fnv1a64(unit)) % buckets);
}

FeatureIndices hash_features(const std::vector<std::string>& units, uint32_t buckets) {
  if (buckets == 0) throw Error("bucket count must be positive");
  FeatureIndices out;
  out.indices.reserve(units.size());
  for (const auto& u : units) out.indices.push_back(hash_unit(u, buckets));
  return out;
}

MessageFeatures extract_features(const TokenizedMessage& msg, const SubwordConfig& cfg) {
  MessageFeatures f;
  f.words.reserve(msg.size());
  for (const auto& w : msg.words) f.words.push_back(hash_features(subword_units(w, cfg.minn, cfg.maxn), cfg.buckets).indices);
  f.ngrams = hash_features(word_ngrams(msg.words, cfg.word_ngrams), cfg.buckets).indices;
  return f;
}

std::vector<std::string> TfidfVocabulary::terms_of(std::string_view text) {
  const auto words = classifier_tokens(text).words;
  std::vector<std::string> terms = words;
  for (auto& g : word_ngrams(words, 2)) terms.push_back(std::move(g));
  return terms;
}

TfidfVocabulary TfidfVocabulary::fit(const Corpus& corpus) {
  std::vector<std::string> docs;
  docs.reserve(corpus.size());
  for (const auto& s : corpus.samples) docs.push_back(s.text);
  return fit(docs);
}

TfidfVocabulary TfidfVocabulary::fit(const std::vector<std::string>& documents) {
  if (documents.empty()) throw Error("cannot fit TF-IDF on an empty corpus");
  std::map<std::string, size_t> df;
  for (const auto& doc : documents) {
    auto terms = terms_of(doc);
    std::set<std::string> uniq(terms.begin(), terms.end());
    for (const auto& t : uniq) ++df[t];
  }
  TfidfVocabulary v;
  const double n = static_cast<double>(documents.size());
  v.idf_.reserve(df.size());
  for (const auto& [term, count] : df) {
    v.index_.emplace(term, static_cast<uint32_t>(v.idf_.size()));
    v.idf_.push_back(std::log((1.0 + n) / (1.0 + static_cast<double>(count))) + 1.0);
  }
  v.fitted_ = true;
  return v;
}

double TfidfVocabulary::idf(std::string_view term) const {
  const auto it = index_.find(std::string(term));
  if (it == index_.end()) throw Error("term not in vocabulary");
  return idf_[it->second];
}

SparseVector TfidfVocabulary::transform(std::string_view text) const {
  if (!fitted_) throw Error("TF-IDF vocabulary used before fit");
  std::map<uint32_t, double> counts;
  for (const auto& t : terms_of(text)) {
    const auto it = index_.find(t);
    if (it != index_.end()) counts[it->second] += 1.0;
  }
  SparseVector out;
  double norm2 = 0.0;
  for (const auto& [idx, tf] : counts) {
    const double w = tf * idf_[idx];
    out.emplace_back(idx, w);
    norm2 += w * w;
  }
  if (norm2 > 0.0) {
    const double inv = 1.0 / std::sqrt(norm2);
    for (auto& [idx, w] : out) w *= inv;
  }
  return out;
}

}  // namespace cbrs
