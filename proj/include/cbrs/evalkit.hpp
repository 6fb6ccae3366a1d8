#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cbrs/baseline.hpp"
#include "cbrs/classifier.hpp"
#include "cbrs/corpus.hpp"
#include "cbrs/layer2.hpp"
#include "cbrs/schema.hpp"
#include "cbrs/tree.hpp"

namespace cbrs {

// Zhang-Shasha with unit costs for insert, delete and relabel.
size_t tree_edit_distance(const LabeledTree& a, const LabeledTree& b);

// ted / max(|a|, |b|).
double ted_normalized(const LabeledTree& a, const LabeledTree& b);

// Scalar leaf paths of a request, lists expanded by index
// ("location_markers[0]", "contacts[1].contact_numbers[0]", ...).
std::map<std::string, std::string> flatten_leaves(const ParsedRequest& r);

double field_accuracy(const ParseOutcome& gold, const ParseOutcome& pred);

inline constexpr double kFieldWeight = 0.8;
inline constexpr double kTreeWeight = 0.2;

struct ParsingScore {
  double field_accuracy = 0.0;
  size_t ted = 0;
  double ted_normalized = 0.0;
  double weighted = 0.0;
};

// Both sides are canonicalized before scoring.
ParsingScore parsing_score(const ParseOutcome& gold, const ParseOutcome& pred);

struct GoldItem {
  std::string text;
  Language language = Language::unknown;
  ParseOutcome gold;
};

// {"text": ..., "language": "bn"|"en"|"tbn", "gold": <outcome JSON>} per line.
std::vector<GoldItem> load_goldset(const std::filesystem::path& path);

struct LanguageSummary {
  size_t count = 0;
  size_t errors = 0;
  double mean_weighted = 0.0;
  double mean_field_accuracy = 0.0;
  double mean_ted_normalized = 0.0;
  double mean_input_tokens = 0.0;
  double mean_output_tokens = 0.0;
  double mean_latency_seconds = 0.0;
};

struct ParserEvalReport {
  std::string backend;
  std::map<Language, LanguageSummary> per_language;
  LanguageSummary overall;
  std::vector<ParsingScore> item_scores;
};

// Items whose backend call fails score 0 and count as errors. Calls fan out
// up to backend.in_flight_limit(); aggregation is by item index.
ParserEvalReport evaluate_parser(ParserBackend& backend, const std::vector<GoldItem>& goldset);

nlohmann::ordered_json to_json(const ParserEvalReport& report);
std::string render_table(const ParserEvalReport& report);

// Exact decimal money in micro-dollars.
using Micros = int64_t;
Micros parse_money(std::string_view decimal);
std::string format_money(Micros amount);

struct CostReport {
  uint64_t daily_volume = 0;
  uint64_t blood_message_count = 0;
  Micros unit_price = 0;
  Micros single_layer_cost = 0;
  Micros dual_layer_cost = 0;

  // dual / single, 0 when single is 0.
  double ratio() const;
};

// Layer 1 costs nothing; Layer 2 is paid only for the messages Layer 1 passes.
CostReport cost_report(uint64_t daily_volume, uint64_t blood_count, Micros unit_price);

nlohmann::ordered_json to_json(const CostReport& report);

enum class ClassifierKind { dlf, tfidf_logreg };

std::string_view to_string(ClassifierKind kind);

struct ComparisonRow {
  ClassifierKind kind;
  ClassReport report;
};

struct ComparisonOptions {
  Hyperparams dlf;
  LogRegConfig logreg;
  std::array<double, 3> ratios{0.8, 0.1, 0.1};
  uint64_t split_seed = 7;
  size_t timed_calls = 1000;
};

// Trains each configuration on the same split and reports on its test part.
std::vector<ComparisonRow> compare_classifiers(const Corpus& corpus, const std::vector<ClassifierKind>& kinds,
                                               const ComparisonOptions& options);

nlohmann::ordered_json to_json(const ClassReport& report);
std::string render_table(const std::vector<ComparisonRow>& rows);

}  // namespace cbrs
