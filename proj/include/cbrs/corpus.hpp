#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace cbrs {

enum class Language { bn, en, tbn, unknown };

std::string_view to_string(Language lang);
std::optional<Language> parse_language(std::string_view s);

struct LabeledSample {
  std::string text;
  int label = 0;  // 1 = blood-donation request
  Language language = Language::unknown;
  std::string source;

  friend bool operator==(const LabeledSample&, const LabeledSample&) = default;
};

struct Corpus {
  std::vector<LabeledSample> samples;
  std::filesystem::path provenance;

  size_t size() const { return samples.size(); }
  size_t count_label(int label) const;
};

struct SkippedLine {
  size_t line_number;
  std::string reason;
};

struct LoadedCorpus {
  Corpus corpus;
  std::vector<SkippedLine> skipped;
};

// Line-delimited JSON: {"text": ..., "label": 0|1, "language"?: ..., "source"?: ...}.
// Throws DataError when the file cannot be opened; bad lines are skipped and
// reported. A missing "language" key is filled by tag_language().
LoadedCorpus load_corpus(const std::filesystem::path& path);
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);

// NFC, casefold, collapse whitespace, then FNV-1a 64.
uint64_t normalized_text_hash(std::string_view text);

// Keeps the first sample for each normalized-text hash.
Corpus deduplicate(const Corpus& corpus);

Language tag_language(std::string_view text);

struct Split {
  Corpus train, val, test;
};

// Label-stratified, seeded partition. Ratios must sum to 1 (within 1e-9).
Split split(const Corpus& corpus, const std::array<double, 3>& ratios, uint64_t seed);

}  // namespace cbrs
