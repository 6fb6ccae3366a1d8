#include "cbrs/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <future>
#include <iomanip>
#include <sstream>

#include "cbrs/error.hpp"

namespace cbrs {

namespace {

struct PostorderTree {
  std::vector<const std::string*> labels;
  std::vector<size_t> leftmost;  // postorder index of each node's leftmost leaf
  std::vector<size_t> keyroots;

  explicit PostorderTree(const LabeledTree& root) {
    visit(root);
    std::vector<bool> seen(labels.size(), false);
    for (size_t i = labels.size(); i-- > 0;) {
      if (!seen[leftmost[i]]) {
        seen[leftmost[i]] = true;
        keyroots.push_back(i);
      }
    }
    std::sort(keyroots.begin(), keyroots.end());
  }

  size_t visit(const LabeledTree& t) {
    size_t first_leaf = SIZE_MAX;
    for (const auto& c : t.children) {
      const size_t leaf = visit(c);
      if (first_leaf == SIZE_MAX) first_leaf = leaf;
    }
    labels.push_back(&t.label);
    const size_t self = labels.size() - 1;
    leftmost.push_back(first_leaf == SIZE_MAX ? self : first_leaf);
    return leftmost.back();
  }

  size_t size() const { return labels.size(); }
};

}  // namespace

size_t tree_edit_distance(const LabeledTree& a, const LabeledTree& b) {
  const PostorderTree ta(a), tb(b);
  const size_t n = ta.size(), m = tb.size();
  std::vector<size_t> treedist(n * m, 0);
  std::vector<size_t> fd;

  for (size_t i : ta.keyroots) {
    for (size_t j : tb.keyroots) {
      const size_t li = ta.leftmost[i], lj = tb.leftmost[j];
      const size_t rows = i - li + 2, cols = j - lj + 2;
      fd.assign(rows * cols, 0);
      auto at = [&](size_t x, size_t y) -> size_t& { return fd[x * cols + y]; };
      for (size_t x = 1; x < rows; ++x) at(x, 0) = at(x - 1, 0) + 1;
      for (size_t y = 1; y < cols; ++y) at(0, y) = at(0, y - 1) + 1;
      for (size_t x = li; x <= i; ++x) {
        for (size_t y = lj; y <= j; ++y) {
          const size_t xi = x - li + 1, yj = y - lj + 1;
          const size_t del = at(xi - 1, yj) + 1;
          const size_t ins = at(xi, yj - 1) + 1;
          if (ta.leftmost[x] == li && tb.leftmost[y] == lj) {
            const size_t rel = at(xi - 1, yj - 1) + (*ta.labels[x] == *tb.labels[y] ? 0 : 1);
            at(xi, yj) = std::min({del, ins, rel});
            treedist[x * m + y] = at(xi, yj);
          } else {
            const size_t sub = at(ta.leftmost[x] - li, tb.leftmost[y] - lj) + treedist[x * m + y];
            at(xi, yj) = std::min({del, ins, sub});
          }
        }
      }
    }
  }
  return treedist[(n - 1) * m + (m - 1)];
}

double ted_normalized(const LabeledTree& a, const LabeledTree& b) {
  const size_t denom = std::max(a.size(), b.size());
  if (denom == 0) return 0.0;
  return static_cast<double>(tree_edit_distance(a, b)) / static_cast<double>(denom);
}

std::map<std::string, std::string> flatten_leaves(const ParsedRequest& r) {
  std::map<std::string, std::string> out;
  out["blood_group"] = r.blood_group;
  out["bags_needed"] = r.bags_needed;
  out["patient.name"] = r.patient.name;
  out["patient.gender"] = r.patient.gender;
  out["patient.age_group"] = r.patient.age_group;
  out["condition"] = r.condition;
  out["location"] = r.location;
  out["hospital_name"] = r.hospital_name;
  for (size_t i = 0; i < r.location_markers.size(); ++i)
    out["location_markers[" + std::to_string(i) + "]"] = r.location_markers[i];
  out["probable_day"] = r.probable_day;
  out["probable_time"] = r.probable_time;
  for (size_t i = 0; i < r.contacts.size(); ++i) {
    const auto base = "contacts[" + std::to_string(i) + "]";
    const auto& c = r.contacts[i];
    out[base + ".name"] = c.name;
    for (size_t j = 0; j < c.contact_numbers.size(); ++j)
      out[base + ".contact_numbers[" + std::to_string(j) + "]"] = c.contact_numbers[j];
    out[base + ".relation_with_patient"] = c.relation_with_patient;
  }
  out["compensation.transportation"] = r.compensation.transportation;
  out["compensation.allowance"] = r.compensation.allowance;
  return out;
}

double field_accuracy(const ParseOutcome& gold, const ParseOutcome& pred) {
  if (gold.is_request() != pred.is_request()) return 0.0;
  if (!gold.is_request()) return 1.0;
  const auto g = flatten_leaves(*gold.request);
  const auto p = flatten_leaves(*pred.request);
  size_t total = 0, correct = 0;
  auto value_in = [](const std::map<std::string, std::string>& m, const std::string& key) {
    const auto it = m.find(key);
    return it == m.end() ? std::string{} : it->second;
  };
  auto tally = [&](const std::string& key) {
    ++total;
    if (value_in(g, key) == value_in(p, key)) ++correct;
  };
  for (const auto& [key, _] : g) tally(key);
  for (const auto& [key, _] : p)
    if (!g.count(key)) tally(key);
  return total == 0 ? 1.0 : static_cast<double>(correct) / static_cast<double>(total);
}

ParsingScore parsing_score(const ParseOutcome& gold, const ParseOutcome& pred) {
  const auto g = canonicalize(gold);
  const auto p = canonicalize(pred);
  const auto tg = to_tree(g);
  const auto tp = to_tree(p);
  ParsingScore s;
  s.field_accuracy = field_accuracy(g, p);
  s.ted = tree_edit_distance(tg, tp);
  s.ted_normalized = static_cast<double>(s.ted) / static_cast<double>(std::max(tg.size(), tp.size()));
  s.weighted = kFieldWeight * s.field_accuracy + kTreeWeight * (1.0 - s.ted_normalized);
  return s;
}

std::vector<GoldItem> load_goldset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open gold set: " + path.string());
  std::vector<GoldItem> items;
  std::string line;
  size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto where = path.string() + ":" + std::to_string(line_number);
    auto obj = nlohmann::json::parse(line, nullptr, false);
    if (obj.is_discarded() || !obj.is_object() || !obj.contains("text") || !obj.contains("gold"))
      throw DataError(where + ": expected {text, language, gold}");
    GoldItem item;
    item.text = obj["text"].get<std::string>();
    const auto lang = parse_language(obj.value("language", std::string("unknown")));
    if (!lang || *lang == Language::unknown) throw DataError(where + ": language must be bn, en or tbn");
    item.language = *lang;
    auto checked = validate(obj["gold"]);
    if (!checked.ok()) throw DataError(where + ": gold does not match the schema at " + checked.errors.front().path);
    item.gold = *checked.outcome;
    items.push_back(std::move(item));
  }
  return items;
}

namespace {

struct Accumulator {
  LanguageSummary sum;
  void add(const ParsingScore& s, const ParseRecord& r) {
    ++sum.count;
    if (r.failed) ++sum.errors;
    sum.mean_weighted += s.weighted;
    sum.mean_field_accuracy += s.field_accuracy;
    sum.mean_ted_normalized += s.ted_normalized;
    sum.mean_input_tokens += static_cast<double>(r.input_tokens);
    sum.mean_output_tokens += static_cast<double>(r.output_tokens);
    sum.mean_latency_seconds += r.latency_seconds;
  }
  LanguageSummary mean() const {
    LanguageSummary m = sum;
    if (m.count == 0) return m;
    const double n = static_cast<double>(m.count);
    m.mean_weighted /= n;
    m.mean_field_accuracy /= n;
    m.mean_ted_normalized /= n;
    m.mean_input_tokens /= n;
    m.mean_output_tokens /= n;
    m.mean_latency_seconds /= n;
    return m;
  }
};

ParseRecord call_backend(ParserBackend& backend, const std::string& text) {
  try {
    return backend.parse(text);
  } catch (const std::exception& e) {
    ParseRecord r;
    r.failed = true;
    r.error = e.what();
    return r;
  }
}

}  // namespace

ParserEvalReport evaluate_parser(ParserBackend& backend, const std::vector<GoldItem>& goldset) {
  ParserEvalReport report;
  report.backend = backend.id();
  std::vector<ParseRecord> records(goldset.size());
  const size_t limit = std::max<size_t>(1, backend.in_flight_limit());
  for (size_t begin = 0; begin < goldset.size(); begin += limit) {
    const size_t end = std::min(goldset.size(), begin + limit);
    if (limit == 1) {
      records[begin] = call_backend(backend, goldset[begin].text);
      continue;
    }
    std::vector<std::future<ParseRecord>> futures;
    for (size_t i = begin; i < end; ++i)
      futures.push_back(std::async(std::launch::async, call_backend, std::ref(backend), std::cref(goldset[i].text)));
    for (size_t i = begin; i < end; ++i) records[i] = futures[i - begin].get();
  }

  std::map<Language, Accumulator> per_language;
  Accumulator overall;
  for (size_t i = 0; i < goldset.size(); ++i) {
    const auto& item = goldset[i];
    const auto& rec = records[i];
    ParsingScore s;
    if (!rec.failed) s = parsing_score(item.gold, rec.outcome);
    report.item_scores.push_back(s);
    per_language[item.language].add(s, rec);
    overall.add(s, rec);
  }
  for (const auto& [lang, acc] : per_language) report.per_language[lang] = acc.mean();
  report.overall = overall.mean();
  return report;
}

namespace {

nlohmann::ordered_json summary_json(const LanguageSummary& s) {
  nlohmann::ordered_json j;
  j["count"] = s.count;
  j["errors"] = s.errors;
  j["mean_weighted"] = s.mean_weighted;
  j["mean_field_accuracy"] = s.mean_field_accuracy;
  j["mean_ted_normalized"] = s.mean_ted_normalized;
  j["mean_input_tokens"] = s.mean_input_tokens;
  j["mean_output_tokens"] = s.mean_output_tokens;
  j["mean_latency_seconds"] = s.mean_latency_seconds;
  return j;
}

}  // namespace

nlohmann::ordered_json to_json(const ParserEvalReport& report) {
  nlohmann::ordered_json j;
  j["backend"] = report.backend;
  j["per_language"] = nlohmann::ordered_json::object();
  for (const auto& [lang, s] : report.per_language) j["per_language"][std::string(to_string(lang))] = summary_json(s);
  j["overall"] = summary_json(report.overall);
  return j;
}

std::string render_table(const ParserEvalReport& report) {
  std::ostringstream os;
  os << "backend: " << report.backend << "\n";
  os << std::left << std::setw(9) << "language" << std::right << std::setw(7) << "n" << std::setw(8) << "errors"
     << std::setw(10) << "weighted" << std::setw(10) << "field" << std::setw(10) << "ted_norm" << std::setw(10)
     << "in_tok" << std::setw(10) << "out_tok" << std::setw(12) << "latency_s" << "\n";
  auto row = [&](std::string_view name, const LanguageSummary& s) {
    os << std::left << std::setw(9) << name << std::right << std::setw(7) << s.count << std::setw(8) << s.errors
       << std::fixed << std::setprecision(4) << std::setw(10) << s.mean_weighted << std::setw(10)
       << s.mean_field_accuracy << std::setw(10) << s.mean_ted_normalized << std::setprecision(1) << std::setw(10)
       << s.mean_input_tokens << std::setw(10) << s.mean_output_tokens << std::setprecision(6) << std::setw(12)
       << s.mean_latency_seconds << "\n";
  };
  for (const auto& [lang, s] : report.per_language) row(to_string(lang), s);
  row("overall", report.overall);
  return os.str();
}

Micros parse_money(std::string_view decimal) {
  std::string s(decimal);
  if (!s.empty() && s.front() == '$') s.erase(0, 1);
  const auto dot = s.find('.');
  const std::string whole = s.substr(0, dot);
  std::string frac = dot == std::string::npos ? "" : s.substr(dot + 1);
  auto digits_only = [](const std::string& v) {
    return std::all_of(v.begin(), v.end(), [](char c) { return c >= '0' && c <= '9'; });
  };
  if ((whole.empty() && frac.empty()) || !digits_only(whole) || !digits_only(frac))
    throw DataError("not a non-negative decimal amount: " + std::string(decimal));
  if (frac.size() > 6) {
    if (frac.find_first_not_of('0', 6) != std::string::npos)
      throw DataError("amount has more than 6 decimal places: " + std::string(decimal));
    frac.resize(6);
  }
  frac.append(6 - frac.size(), '0');
  return (whole.empty() ? 0 : std::stoll(whole)) * 1'000'000 + std::stoll(frac);
}

std::string format_money(Micros amount) {
  const bool negative = amount < 0;
  const auto abs = static_cast<uint64_t>(negative ? -amount : amount);
  std::string frac = std::to_string(abs % 1'000'000);
  frac.insert(0, 6 - frac.size(), '0');
  while (frac.size() > 4 && frac.back() == '0') frac.pop_back();
  return std::string(negative ? "-$" : "$") + std::to_string(abs / 1'000'000) + "." + frac;
}

double CostReport::ratio() const {
  return single_layer_cost == 0 ? 0.0 : static_cast<double>(dual_layer_cost) / static_cast<double>(single_layer_cost);
}

CostReport cost_report(uint64_t daily_volume, uint64_t blood_count, Micros unit_price) {
  if (blood_count > daily_volume) throw DataError("blood message count exceeds daily volume");
  if (unit_price < 0) throw DataError("unit price must be non-negative");
  CostReport r;
  r.daily_volume = daily_volume;
  r.blood_message_count = blood_count;
  r.unit_price = unit_price;
  r.single_layer_cost = static_cast<Micros>(daily_volume) * unit_price;
  r.dual_layer_cost = static_cast<Micros>(blood_count) * unit_price;
  return r;
}

nlohmann::ordered_json to_json(const CostReport& r) {
  nlohmann::ordered_json j;
  j["daily_volume"] = r.daily_volume;
  j["blood_message_count"] = r.blood_message_count;
  j["unit_price"] = format_money(r.unit_price);
  j["single_layer_cost"] = format_money(r.single_layer_cost);
  j["dual_layer_cost"] = format_money(r.dual_layer_cost);
  j["dual_to_single_ratio"] = r.ratio();
  return j;
}

std::string_view to_string(ClassifierKind kind) {
  return kind == ClassifierKind::dlf ? "DLF" : "TFIDF+LogReg";
}

std::vector<ComparisonRow> compare_classifiers(const Corpus& corpus, const std::vector<ClassifierKind>& kinds,
                                               const ComparisonOptions& options) {
  const auto parts = split(corpus, options.ratios, options.split_seed);
  std::vector<ComparisonRow> rows;
  for (auto kind : kinds) {
    if (kind == ClassifierKind::dlf) {
      const auto model = train(parts.train, options.dlf);
      rows.push_back({kind, classification_report(model, parts.test, options.timed_calls)});
    } else {
      const auto model = TfidfLogReg::train(parts.train, options.logreg);
      rows.push_back({kind, classification_report([&](std::string_view t) { return model.predict(t); }, parts.test,
                                                   options.timed_calls)});
    }
  }
  return rows;
}

nlohmann::ordered_json to_json(const ClassReport& r) {
  auto metrics = [](const ClassMetrics& m) {
    nlohmann::ordered_json j;
    j["precision"] = m.precision;
    j["recall"] = m.recall;
    j["f1"] = m.f1;
    j["support"] = m.support;
    return j;
  };
  nlohmann::ordered_json j;
  j["accuracy"] = r.accuracy;
  j["class_0"] = metrics(r.per_class[0]);
  j["class_1"] = metrics(r.per_class[1]);
  j["macro"] = metrics(r.macro);
  j["weighted"] = metrics(r.weighted);
  j["confusion"] = {{r.confusion[0][0], r.confusion[0][1]}, {r.confusion[1][0], r.confusion[1][1]}};
  j["median_seconds"] = r.median_seconds;
  j["mean_seconds"] = r.mean_seconds;
  return j;
}

std::string render_table(const std::vector<ComparisonRow>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(14) << "method" << std::right << std::setw(10) << "accuracy" << std::setw(11)
     << "precision" << std::setw(8) << "recall" << std::setw(8) << "f1" << std::setw(14) << "median_s" << "\n";
  for (const auto& row : rows) {
    const auto& r = row.report;
    os << std::left << std::setw(14) << to_string(row.kind) << std::right << std::fixed << std::setprecision(4)
       << std::setw(10) << r.accuracy << std::setw(11) << r.per_class[1].precision << std::setw(8)
       << r.per_class[1].recall << std::setw(8) << r.per_class[1].f1 << std::scientific << std::setprecision(3)
       << std::setw(14) << r.median_seconds << std::defaultfloat << "\n";
  }
  return os.str();
}

}  // namespace cbrs
