#include <gtest/gtest.h>

#include <cstdlib>
#include <set>
#include <tuple>

#include "cbrs/error.hpp"
#include "cbrs/evalkit.hpp"
#include "cbrs/synth.hpp"
#include "ted_oracle.hpp"
#include "test_support.hpp"

using namespace cbrs;
using cbrs::testing::random_outcome;
using cbrs::testing::random_tree;

namespace {

LabeledTree leaf(const std::string& l) { return {l, {}}; }

ParseOutcome table2_gold() {
  ParsedRequest r;
  r.blood_group = "AB-";
  r.bags_needed = "2";
  r.location = "AIIMS Hospital";
  r.hospital_name = "AIIMS Hospital";
  r.location_markers = {"Delhi"};
  r.probable_day = "21/06";
  r.contacts = {{"", {"981XXXXXXX", "724XXXXXXX"}, ""}};
  return ParseOutcome::positive(r);
}

ParseOutcome table2_pred() {
  auto p = table2_gold();
  p.request->location_markers = {"AIIMS Hospital"};
  p.request->probable_day = "Jun_21";
  p.request->probable_time = "before 24:00";
  return p;
}

class NegativeBackend : public ParserBackend {
 public:
  ParseRecord parse(std::string_view) override { return {}; }
  std::string id() const override { return "negative"; }
};

}  // namespace

TEST(Ted, Examples) {
  const LabeledTree t{"a", {leaf("b"), {"c", {leaf("d")}}}};
  EXPECT_EQ(tree_edit_distance(t, t), 0u);
  EXPECT_EQ(tree_edit_distance(leaf("x"), leaf("y")), 1u);
  EXPECT_EQ(tree_edit_distance(leaf("x"), t), 4u);
  // Classic pair: f(d(a c(b)) e) vs f(c(d(a b)) e) has distance 2.
  const LabeledTree t1{"f", {{"d", {leaf("a"), {"c", {leaf("b")}}}}, leaf("e")}};
  const LabeledTree t2{"f", {{"c", {{"d", {leaf("a"), leaf("b")}}}}, leaf("e")}};
  EXPECT_EQ(tree_edit_distance(t1, t2), 2u);
}

TEST(Ted, MatchesBruteForceOnSmallTrees) {
  Rng rng(41);
  for (int i = 0; i < 40; ++i) {
    const auto a = random_tree(rng, 1 + rng.below(5));
    const auto b = random_tree(rng, 1 + rng.below(5));
    EXPECT_EQ(tree_edit_distance(a, b), cbrs::testing::brute_force_ted(a, b)) << to_bracket(a) << " " << to_bracket(b);
  }
}

TEST(Ted, MetricAxioms) {
  Rng rng(42);
  for (int i = 0; i < 100; ++i) {
    const auto a = random_tree(rng, 1 + rng.below(9));
    const auto b = random_tree(rng, 1 + rng.below(9));
    const auto c = random_tree(rng, 1 + rng.below(9));
    EXPECT_EQ(tree_edit_distance(a, a), 0u);
    EXPECT_EQ(tree_edit_distance(a, b), tree_edit_distance(b, a));
    EXPECT_LE(tree_edit_distance(a, c), tree_edit_distance(a, b) + tree_edit_distance(b, c));
    if (!(a == b)) EXPECT_GT(tree_edit_distance(a, b), 0u);
  }
}

TEST(TedNormalized, Examples) {
  const LabeledTree t{"a", {leaf("b")}};
  EXPECT_DOUBLE_EQ(ted_normalized(t, t), 0.0);
  EXPECT_DOUBLE_EQ(ted_normalized(leaf("x"), leaf("y")), 1.0);
  const auto gold = to_tree(table2_gold());
  const auto neg = to_tree(ParseOutcome::negative());
  const double direct = static_cast<double>(tree_edit_distance(gold, neg)) / static_cast<double>(gold.size());
  EXPECT_DOUBLE_EQ(ted_normalized(gold, neg), direct);
  EXPECT_DOUBLE_EQ(direct, static_cast<double>(gold.size() - 1 + 1) / static_cast<double>(gold.size()));
}

TEST(FieldAccuracy, Examples) {
  EXPECT_DOUBLE_EQ(field_accuracy(table2_gold(), table2_gold()), 1.0);
  EXPECT_DOUBLE_EQ(field_accuracy(table2_gold(), ParseOutcome::negative()), 0.0);
  EXPECT_DOUBLE_EQ(field_accuracy(ParseOutcome::negative(), table2_gold()), 0.0);
  EXPECT_DOUBLE_EQ(field_accuracy(ParseOutcome::negative(), ParseOutcome::negative()), 1.0);
}

TEST(FieldAccuracy, WorkedExampleHasThreeMismatches) {
  const auto g = flatten_leaves(*table2_gold().request);
  const auto p = flatten_leaves(*table2_pred().request);
  std::set<std::string> keys;
  for (const auto& [k, v] : g) keys.insert(k);
  for (const auto& [k, v] : p) keys.insert(k);
  size_t mismatches = 0;
  for (const auto& k : keys) {
    const auto gi = g.find(k);
    const auto pi = p.find(k);
    if ((gi == g.end() ? "" : gi->second) != (pi == p.end() ? "" : pi->second)) ++mismatches;
  }
  EXPECT_EQ(mismatches, 3u);
  EXPECT_DOUBLE_EQ(field_accuracy(table2_gold(), table2_pred()),
                   static_cast<double>(keys.size() - 3) / static_cast<double>(keys.size()));
}

TEST(FieldAccuracy, HallucinatedListEntriesArePenalized) {
  auto pred = table2_gold();
  pred.request->location_markers.push_back("Extra");
  EXPECT_LT(field_accuracy(table2_gold(), pred), 1.0);
}

TEST(FieldAccuracy, Reflexive) {
  Rng rng(43);
  for (int i = 0; i < 200; ++i) {
    const auto g = random_outcome(rng);
    EXPECT_DOUBLE_EQ(field_accuracy(g, g), 1.0);
  }
}

TEST(ParsingScore, Examples) {
  const auto perfect = parsing_score(table2_gold(), table2_gold());
  EXPECT_DOUBLE_EQ(perfect.weighted, 1.0);
  const auto worst = parsing_score(table2_gold(), ParseOutcome::negative());
  EXPECT_DOUBLE_EQ(worst.field_accuracy, 0.0);
  EXPECT_DOUBLE_EQ(worst.ted_normalized, 1.0);
  EXPECT_DOUBLE_EQ(worst.weighted, 0.0);
  EXPECT_NEAR(kFieldWeight * 0.9 + kTreeWeight * (1.0 - 0.1), 0.90, 1e-15);
}

TEST(ParsingScore, WeightedInUnitIntervalAndOneIffEqual) {
  Rng rng(44);
  for (int i = 0; i < 500; ++i) {
    const auto g = random_outcome(rng);
    const auto p = rng.below(4) == 0 ? g : random_outcome(rng);
    const auto s = parsing_score(g, p);
    EXPECT_GE(s.weighted, 0.0);
    EXPECT_LE(s.weighted, 1.0);
    EXPECT_NEAR(s.weighted, 0.8 * s.field_accuracy + 0.2 * (1.0 - s.ted_normalized), 1e-12);
    const bool equal = canonicalize(g) == canonicalize(p);
    EXPECT_EQ(s.weighted == 1.0, equal);
  }
}

TEST(Goldset, BundledFileLoads) {
  const auto gold = load_goldset(cbrs::testing::data_dir() / "goldset.jsonl");
  EXPECT_EQ(gold.size(), 24u);
  std::map<Language, size_t> per;
  for (const auto& g : gold) ++per[g.language];
  EXPECT_EQ(per[Language::bn], 8u);
  EXPECT_EQ(per[Language::en], 8u);
  EXPECT_EQ(per[Language::tbn], 8u);
}

TEST(Goldset, BadLineNamesTheLine) {
  cbrs::testing::TempDir dir("gold");
  cbrs::testing::write_file(dir / "g.jsonl",
                            "{\"text\": \"x\", \"language\": \"en\", \"gold\": {\"is_blood_donation_request\": false}}\n"
                            "{\"text\": \"y\", \"language\": \"en\", \"gold\": {\"blood_group\": \"C+\"}}\n");
  try {
    load_goldset(dir / "g.jsonl");
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find(":2"), std::string::npos) << e.what();
  }
}

TEST(EvaluateParser, EchoBackendScoresOne) {
  const auto gold = load_goldset(cbrs::testing::data_dir() / "goldset.jsonl");
  cbrs::testing::EchoBackend echo;
  for (const auto& g : gold) echo.add(g.text, g.gold);
  const auto report = evaluate_parser(echo, gold);
  EXPECT_DOUBLE_EQ(report.overall.mean_weighted, 1.0);
  EXPECT_DOUBLE_EQ(report.overall.mean_field_accuracy, 1.0);
  EXPECT_EQ(report.overall.count, gold.size());
  for (const auto& [lang, s] : report.per_language) EXPECT_DOUBLE_EQ(s.mean_weighted, 1.0);
}

TEST(EvaluateParser, AlwaysNegativeOnPositives) {
  auto gold = load_goldset(cbrs::testing::data_dir() / "goldset.jsonl");
  std::erase_if(gold, [](const GoldItem& g) { return !g.gold.is_request(); });
  ASSERT_FALSE(gold.empty());
  NegativeBackend neg;
  const auto report = evaluate_parser(neg, gold);
  EXPECT_DOUBLE_EQ(report.overall.mean_field_accuracy, 0.0);
}

TEST(EvaluateParser, FailuresScoreZeroAndCount) {
  const auto gold = load_goldset(cbrs::testing::data_dir() / "goldset.jsonl");
  cbrs::testing::FailingBackend failing;
  const auto report = evaluate_parser(failing, gold);
  EXPECT_EQ(report.overall.errors, gold.size());
  EXPECT_DOUBLE_EQ(report.overall.mean_weighted, 0.0);
}

TEST(EvaluateParser, OverallIsSampleWeightedMean) {
  const auto gold = load_goldset(cbrs::testing::data_dir() / "goldset.jsonl");
  RulesBackend rules;
  const auto report = evaluate_parser(rules, gold);
  double sum = 0;
  size_t n = 0;
  for (const auto& [lang, s] : report.per_language) {
    sum += s.mean_weighted * static_cast<double>(s.count);
    n += s.count;
  }
  EXPECT_EQ(n, gold.size());
  EXPECT_NEAR(report.overall.mean_weighted, sum / static_cast<double>(n), 1e-12);
  EXPECT_GT(report.overall.mean_weighted, 0.8);
}

TEST(Money, ParseAndFormat) {
  EXPECT_EQ(parse_money("0.0003"), 300);
  EXPECT_EQ(parse_money("$1.5"), 1'500'000);
  EXPECT_EQ(format_money(300), "$0.0003");
  EXPECT_EQ(format_money(4500), "$0.0045");
  EXPECT_EQ(format_money(1'234'567), "$1.234567");
  EXPECT_EQ(format_money(2'000'000), "$2.0000");
  EXPECT_THROW(parse_money("abc"), DataError);
  EXPECT_THROW(parse_money("0.0000001"), DataError);
}

TEST(Cost, TableFigures) {
  const auto price = parse_money("0.0003");
  const std::vector<std::tuple<int, int, std::string, std::string>> rows = {
      {15, 1, "$0.0045", "$0.0003"}, {55, 3, "$0.0165", "$0.0009"}, {95, 5, "$0.0285", "$0.0015"}};
  for (const auto& [v, b, single, dual] : rows) {
    const auto r = cost_report(v, b, price);
    EXPECT_EQ(format_money(r.single_layer_cost), single);
    EXPECT_EQ(format_money(r.dual_layer_cost), dual);
    EXPECT_DOUBLE_EQ(r.ratio(), static_cast<double>(b) / v);
  }
  EXPECT_THROW(cost_report(5, 6, price), DataError);
  EXPECT_EQ(cost_report(0, 0, price).ratio(), 0.0);
}

TEST(Compare, DeterministicTable) {
  const auto corpus = synth::separable(300, 0.4, 21);
  ComparisonOptions opt;
  opt.dlf.dim = 16;
  opt.dlf.buckets = 1u << 14;
  opt.dlf.epochs = 3;
  opt.dlf.lr = 0.2;
  opt.timed_calls = 10;
  const auto a = compare_classifiers(corpus, {ClassifierKind::dlf, ClassifierKind::tfidf_logreg}, opt);
  const auto b = compare_classifiers(corpus, {ClassifierKind::dlf, ClassifierKind::tfidf_logreg}, opt);
  ASSERT_EQ(a.size(), 2u);
  for (size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(a[i].report.confusion, b[i].report.confusion);
    EXPECT_EQ(a[i].report.accuracy, b[i].report.accuracy);
  }
  EXPECT_NE(render_table(a).find("TFIDF+LogReg"), std::string::npos);
}

// Runs only when CBRS_RELEASED_DATASET points at the public labeled corpus.
TEST(ReleasedDataset, DlfAccuracyNearReported) {
  const char* path = std::getenv("CBRS_RELEASED_DATASET");
  if (!path || !*path) GTEST_SKIP() << "CBRS_RELEASED_DATASET not set";
  const auto corpus = load_corpus(path).corpus;
  ComparisonOptions opt;
  opt.dlf.dim = 100;
  opt.dlf.buckets = 1u << 18;
  opt.dlf.epochs = 25;
  opt.dlf.lr = 0.5;
  opt.timed_calls = 100;
  const auto row = compare_classifiers(corpus, {ClassifierKind::dlf}, opt).front();
  EXPECT_NEAR(row.report.accuracy, 0.99, 0.02);
}
