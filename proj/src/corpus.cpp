#include "cbrs/corpus.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <unordered_set>

#include "cbrs/error.hpp"
#include "cbrs/random.hpp"
#include "cbrs/unicode.hpp"

namespace cbrs {

namespace {

// Common romanized-Bengali words, skipping English homographs like "bag".
const std::unordered_set<std::string>& romanized_bengali_lexicon() {
  static const std::unordered_set<std::string> words = {
      "rokto",    "rokter",   "roktor",   "dorkar",   "dorkaar",  "proyojon", "proyojan", "lagbe",
      "lagbey",   "jogajog",  "jogajogh", "korun",    "korben",   "koren",    "kori",     "korte",
      "rogi",     "rogir",    "rugi",     "rugir",    "ekjon",    "jonno",    "jonne",    "ache",
      "achhe",    "hobe",     "hoye",     "hoyeche",  "geche",    "amar",     "amader",   "apnar",
      "apni",     "tumi",     "tomar",    "kothay",   "keu",      "keo",      "kichu",    "ajke",
      "ajkei",    "agamikal", "shokal",   "sokal",    "bikal",    "bikel",    "raat",     "ratre",
      "shondha",  "sondha",   "dupur",    "moddhe",   "modhe",    "vai",      "bhai",     "apu",
      "bhaiya",   "doya",     "kore",     "daan",     "diben",    "dite",     "parben",
      "parba",    "parbe",    "ichchhuk", "icchuk",   "druto",    "shombhob", "sthan",    "tarikh",
      "poriman",  "shomossha", "somossa", "vorti",    "vorthi",   "bhorti",   "onek",     "khub",
      "khubi",    "ebong",    "kintu",    "naki",     "hoy",      "thik",     "bhalo",    "valo",
      "kemon",    "accha",    "acha",     "ki",       "keno",     "jabe",     "jacche",   "asche",
      "ashchi",   "dekhen",   "bolen",    "shobai",   "sobai",    "dhonnobad", "thakben", "thakle",
      "operation-er", "hashpatal", "haspatal", "attio", "attiyo"};
  return words;
}

bool valid_label(const nlohmann::json& v) {
  return v.is_number_integer() && (v.get<int64_t>() == 0 || v.get<int64_t>() == 1);
}

}  // namespace

std::string_view to_string(Language lang) {
  switch (lang) {
    case Language::bn: return "bn";
    case Language::en: return "en";
    case Language::tbn: return "tbn";
    case Language::unknown: return "unknown";
  }
  return "unknown";
}

std::optional<Language> parse_language(std::string_view s) {
  if (s == "bn") return Language::bn;
  if (s == "en") return Language::en;
  if (s == "tbn") return Language::tbn;
  if (s == "unknown") return Language::unknown;
  return std::nullopt;
}

size_t Corpus::count_label(int label) const {
  return static_cast<size_t>(std::count_if(samples.begin(), samples.end(),
                                           [&](const LabeledSample& s) { return s.label == label; }));
}

LoadedCorpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus file: " + path.string());

  LoadedCorpus out;
  out.corpus.provenance = path;
  std::string line;
  size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (unicode::trim(line).empty()) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      out.skipped.push_back({line_number, std::string("malformed JSON: ") + e.what()});
      continue;
    }
    if (!obj.is_object() || !obj.contains("text") || !obj["text"].is_string()) {
      out.skipped.push_back({line_number, "missing string field \"text\""});
      continue;
    }
    if (!obj.contains("label") || !valid_label(obj["label"])) {
      out.skipped.push_back({line_number, "label must be 0 or 1"});
      continue;
    }
    LabeledSample s;
    s.text = obj["text"].get<std::string>();
    if (unicode::trim(s.text).empty()) {
      out.skipped.push_back({line_number, "empty text"});
      continue;
    }
    s.label = obj["label"].get<int>();
    if (obj.contains("language")) {
      const auto lang = obj["language"].is_string() ? parse_language(obj["language"].get<std::string>())
                                                    : std::nullopt;
      if (!lang) {
        out.skipped.push_back({line_number, "language must be one of bn, en, tbn, unknown"});
        continue;
      }
      s.language = *lang;
    } else {
      s.language = tag_language(s.text);
    }
    if (obj.contains("source") && obj["source"].is_string()) s.source = obj["source"].get<std::string>();
    out.corpus.samples.push_back(std::move(s));
  }
  return out;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write corpus file: " + path.string());
  for (const auto& s : corpus.samples) {
    nlohmann::ordered_json obj;
    obj["text"] = s.text;
    obj["label"] = s.label;
    obj["language"] = to_string(s.language);
    if (!s.source.empty()) obj["source"] = s.source;
    out << obj.dump() << '\n';
  }
}

uint64_t normalized_text_hash(std::string_view text) {
  return fnv1a64(unicode::collapse_whitespace(unicode::casefold(unicode::nfc(text))));
}

Corpus deduplicate(const Corpus& corpus) {
  Corpus out;
  out.provenance = corpus.provenance;
  std::unordered_set<uint64_t> seen;
  for (const auto& s : corpus.samples) {
    if (seen.insert(normalized_text_hash(s.text)).second) out.samples.push_back(s);
  }
  return out;
}

Language tag_language(std::string_view text) {
  size_t alphabetic = 0, bengali = 0;
  for (char32_t cp : unicode::decode(text)) {
    if (!unicode::is_alpha(cp)) continue;
    ++alphabetic;
    if (unicode::is_bengali(cp)) ++bengali;
  }
  if (alphabetic == 0) return Language::unknown;
  if (10 * bengali >= 3 * alphabetic) return Language::bn;

  const auto& lexicon = romanized_bengali_lexicon();
  std::unordered_set<std::string> hits;
  for (const auto& raw : unicode::split_whitespace(unicode::casefold(text))) {
    // Strip surrounding punctuation so "korun." and "(rogir" still match.
    auto cps = unicode::decode(raw);
    size_t b = 0, e = cps.size();
    while (b < e && !unicode::is_word_char(cps[b])) ++b;
    while (e > b && !unicode::is_word_char(cps[e - 1])) --e;
    auto word = unicode::encode(std::u32string_view(cps).substr(b, e - b));
    if (lexicon.count(word)) hits.insert(std::move(word));
    if (hits.size() >= 2) return Language::tbn;
  }
  return Language::en;
}

Split split(const Corpus& corpus, const std::array<double, 3>& ratios, uint64_t seed) {
  for (double r : ratios)
    if (!(r >= 0.0)) throw Error("split ratios must be non-negative");
  if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9)
    throw Error("split ratios must sum to 1");

  // Each class is shuffled, then every sample gets its fractional rank within
  // its class. Sorting by that rank interleaves the classes proportionally, so
  // cutting the sequence at the global boundaries stratifies by label.
  struct Keyed {
    double key;
    int label;
    size_t index;
  };
  std::vector<Keyed> order;
  order.reserve(corpus.size());
  Rng rng(seed);
  for (int label : {0, 1}) {
    std::vector<size_t> members;
    for (size_t i = 0; i < corpus.size(); ++i)
      if (corpus.samples[i].label == label) members.push_back(i);
    rng.shuffle(members);
    for (size_t r = 0; r < members.size(); ++r)
      order.push_back({(static_cast<double>(r) + 0.5) / static_cast<double>(members.size()), label, members[r]});
  }
  std::sort(order.begin(), order.end(), [](const Keyed& a, const Keyed& b) {
    if (a.key != b.key) return a.key < b.key;
    if (a.label != b.label) return a.label < b.label;
    return a.index < b.index;
  });

  const auto n = static_cast<double>(corpus.size());
  const auto train_end = static_cast<size_t>(std::llround(ratios[0] * n));
  const auto val_end = std::max(train_end, static_cast<size_t>(std::llround((ratios[0] + ratios[1]) * n)));

  Split out;
  out.train.provenance = out.val.provenance = out.test.provenance = corpus.provenance;
  for (size_t i = 0; i < order.size(); ++i) {
    Corpus& dst = i < train_end ? out.train : (i < val_end ? out.val : out.test);
    dst.samples.push_back(corpus.samples[order[i].index]);
  }
  return out;
}

}  // namespace cbrs
