#include <algorithm>
#include <chrono>
#include <cstdio>
#include <optional>
#include <regex>
#include <set>
#include <unordered_set>

#include "cbrs/layer2.hpp"
#include "cbrs/textrep.hpp"
#include "cbrs/unicode.hpp"

namespace cbrs {

namespace {

using Words = std::unordered_set<std::string>;

struct Token {
  std::string raw;    // as written, Bengali digits mapped to ASCII
  std::string lower;  // casefolded
};

std::vector<Token> lex(std::string_view text) {
  std::vector<Token> out;
  for (auto& w : tokenize(unicode::nfc(text)).words) {
    auto raw = unicode::ascii_digits(w);
    out.push_back({raw, unicode::casefold(raw)});
  }
  return out;
}

bool has_any(const std::vector<Token>& toks, const Words& words) {
  return std::any_of(toks.begin(), toks.end(), [&](const Token& t) { return words.count(t.lower) > 0; });
}

const Words kBloodWords = {"blood", "rokto", "rokter", "roktor", "রক্ত", "রক্তের", "রক্তদাতা", "plasma",
                           "platelet", "platelets", "প্লাটিলেট", "প্লাজমা", "donor", "donors"};
const Words kNeedWords = {"need",  "needed",  "needs",  "required", "require", "urgent",   "urgently", "emergency",
                          "lagbe", "dorkar",  "proyojon", "proyojan", "প্রয়োজন", "লাগবে", "দরকার",    "জরুরি",
                          "জরুরী", "chai",   "চাই",     "seeking",  "wanted"};
const Words kSoftNegativeWords = {"thanks",  "thank", "grateful", "gratitude", "dhonnobad", "ধন্যবাদ",
                                  "কৃতজ্ঞ", "congratulations", "willing", "raji", "donated"};

// Sign words after a group letter: "O negative", "B -ve", "A পজিটিভ".
std::optional<char> sign_word(std::string_view w) {
  static const std::set<std::string_view> plus = {"+", "+ve", "positive", "pos", "পজিটিভ", "পজেটিভ", "পজিটিব"};
  static const std::set<std::string_view> minus = {"-", "-ve", "negative", "neg", "নেগেটিভ", "নেগেটিব"};
  if (plus.count(w)) return '+';
  if (minus.count(w)) return '-';
  return std::nullopt;
}

std::optional<std::string> group_letter(std::string_view w) {
  if (w == "a" || w == "এ") return "A";
  if (w == "b" || w == "বি") return "B";
  if (w == "o" || w == "ও") return "O";
  if (w == "ab" || w == "এবি") return "AB";
  return std::nullopt;
}

std::string find_blood_group(const std::vector<Token>& toks) {
  static const std::regex joined(R"(^(ab|a|b|o)(\+|-)(ve)?$)");
  for (size_t i = 0; i < toks.size(); ++i) {
    const auto& w = toks[i].lower;
    std::smatch m;
    if (std::regex_match(w, m, joined)) return canonical_blood_group(m[1].str() + m[2].str());
    // Bengali letter with an attached sign, e.g. "ও+" or "এবি-".
    if (!w.empty() && (w.back() == '+' || w.back() == '-'))
      if (auto g = group_letter(std::string_view(w).substr(0, w.size() - 1))) return *g + w.back();
    if (auto g = group_letter(w); g && i + 1 < toks.size())
      if (auto s = sign_word(toks[i + 1].lower)) return *g + *s;
  }
  return {};
}

bool is_number(std::string_view w) {
  static const std::regex re(R"(^[0-9]{1,2}(-[0-9]{1,2})?$)");
  return std::regex_match(w.begin(), w.end(), re);
}

std::string find_bags(const std::vector<Token>& toks) {
  static const std::vector<std::string_view> units = {"bag", "unit", "bottle", "ব্যাগ", "ইউনিট"};
  for (size_t i = 0; i + 1 < toks.size(); ++i) {
    if (!is_number(toks[i].lower)) continue;
    const auto& next = toks[i + 1].lower;
    for (auto u : units)
      if (next.starts_with(u)) return toks[i].raw;
  }
  return {};
}

std::vector<std::string> find_phones(const std::vector<Token>& toks) {
  std::vector<std::string> out;
  for (const auto& t : toks) {
    size_t digits = 0, masked = 0;
    bool ok = true;
    for (char c : t.raw) {
      if (c >= '0' && c <= '9')
        ++digits;
      else if (c == 'X' || c == 'x')
        ++masked;
      else if (c != '+' && c != '-')
        ok = false;
    }
    if (ok && digits >= 3 && digits + masked >= 10 && std::find(out.begin(), out.end(), t.raw) == out.end())
      out.push_back(t.raw);
  }
  return out;
}

std::string two(int v) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "%02d", v);
  return buf;
}

std::string find_day(const std::vector<Token>& toks) {
  static const std::regex date(R"(^([0-9]{1,2})[-/.]([0-9]{1,2})(?:[-/.]([0-9]{2}|[0-9]{4}))?$)");
  for (const auto& t : toks) {
    std::smatch m;
    if (!std::regex_match(t.lower, m, date)) continue;
    const int day = std::stoi(m[1].str());
    const int month = std::stoi(m[2].str());
    if (day < 1 || day > 31 || month < 1 || month > 12) continue;
    std::string out = two(day) + "/" + two(month);
    if (m[3].matched) out += "/" + (m[3].length() == 2 ? "20" + m[3].str() : m[3].str());
    return out;
  }
  for (size_t i = 0; i + 1 < toks.size(); ++i) {
    // "in 3 days" / "3 days later"
    const bool days_next = toks[i + 1].lower == "days" || toks[i + 1].lower == "day";
    if (days_next && std::regex_match(toks[i].lower, std::regex("^[0-9]+$")) &&
        ((i > 0 && toks[i - 1].lower == "in") || (i + 2 < toks.size() && toks[i + 2].lower == "later")))
      return toks[i].lower + " days later";
  }
  static const Words today = {"today", "tonight", "aj", "ajke", "ajkei", "আজ", "আজকে", "আজই", "আজকেই"};
  static const Words tomorrow = {"tomorrow", "agamikal", "আগামীকাল", "আগামীকালকে"};
  for (const auto& t : toks) {
    if (today.count(t.lower)) return "today";
    if (tomorrow.count(t.lower)) return "tomorrow";
  }
  return {};
}

std::optional<std::string> clock_at(const std::vector<Token>& toks, size_t i) {
  static const std::regex hhmm(R"(^([0-9]{1,2})[:.]([0-9]{2})(am|pm)?$)");
  static const std::regex h_ampm(R"(^([0-9]{1,2})(am|pm)$)");
  std::smatch m;
  int hour = -1, minute = 0;
  std::string suffix;
  if (std::regex_match(toks[i].lower, m, hhmm)) {
    hour = std::stoi(m[1].str());
    minute = std::stoi(m[2].str());
    suffix = m[3].str();
  } else if (std::regex_match(toks[i].lower, m, h_ampm)) {
    hour = std::stoi(m[1].str());
    suffix = m[2].str();
  } else if (std::regex_match(toks[i].lower, std::regex("^[0-9]{1,2}$")) && i + 1 < toks.size() &&
             (toks[i + 1].lower == "am" || toks[i + 1].lower == "pm")) {
    hour = std::stoi(toks[i].lower);
    suffix = toks[i + 1].lower;
  } else {
    return std::nullopt;
  }
  if (suffix == "pm" && hour < 12) hour += 12;
  if (suffix == "am" && hour == 12) hour = 0;
  if (hour < 0 || hour > 23 || minute > 59) return std::nullopt;
  return two(hour) + ":" + two(minute);
}

std::string find_time(const std::vector<Token>& toks) {
  for (size_t i = 0; i + 2 < toks.size(); ++i) {
    if (toks[i].lower == "in" && std::regex_match(toks[i + 1].lower, std::regex("^[0-9]+$")) &&
        (toks[i + 2].lower.starts_with("hour") || toks[i + 2].lower == "hrs"))
      return "in " + toks[i + 1].lower + " hours";
  }
  for (size_t i = 0; i < toks.size(); ++i) {
    auto t = clock_at(toks, i);
    if (!t) continue;
    const std::string prev = i > 0 ? toks[i - 1].lower : "";
    if (prev == "before" || prev == "by" || prev == "within") return "before " + *t;
    if (prev == "after") return "after " + *t;
    return *t;
  }
  return {};
}

bool name_like(const Token& t) {
  static const Words stop = {"at", "in", "on", "to", "from", "the", "call", "need", "needed", "contact", "please",
                             "pls", "urgent", "blood", "for", "and", "or", "of"};
  if (stop.count(t.lower)) return false;
  const auto cps = unicode::decode(t.raw);
  if (cps.empty() || !unicode::is_alpha(cps[0])) return false;
  return t.raw != t.lower || unicode::is_bengali(cps[0]);
}

std::string find_hospital(const std::vector<Token>& toks) {
  static const Words suffix = {"hospital", "hospitals", "clinic", "institute", "হাসপাতাল", "হাসপাতালে",
                               "ক্লিনিক", "hashpatal", "haspatal"};
  for (size_t i = 0; i < toks.size(); ++i) {
    size_t begin = i, end = i + 1;
    if (toks[i].lower == "medical" && i + 1 < toks.size() && toks[i + 1].lower == "college") {
      end = i + 2;
      if (end < toks.size() && (toks[end].lower == "hospital" || toks[end].lower == "হাসপাতাল")) ++end;
    } else if (toks[i].lower == "মেডিকেল" && i + 1 < toks.size() && toks[i + 1].lower == "কলেজ") {
      end = i + 2;
    } else if (!suffix.count(toks[i].lower)) {
      continue;
    }
    while (begin > 0 && i - begin < 4 && name_like(toks[begin - 1])) --begin;
    if (begin == i) continue;  // a bare "hospital" names nothing
    std::string out;
    for (size_t k = begin; k < end; ++k) {
      if (!out.empty()) out += ' ';
      out += toks[k].raw;
    }
    return out;
  }
  return {};
}

std::vector<std::string> find_markers(const std::vector<Token>& toks) {
  static const Words cities = {
      "dhaka",   "chittagong", "chattogram", "rajshahi", "khulna",  "sylhet",    "barishal", "barisal", "rangpur",
      "mymensingh", "comilla", "cumilla",  "gazipur",  "narayanganj", "bogura",  "bogra",    "jessore", "jashore",
      "savar",   "mirpur",     "uttara",   "dhanmondi", "shahbag", "mohammadpur", "delhi",  "mumbai",  "kolkata",
      "chennai", "bangalore",  "hyderabad", "pune",    "ঢাকা",    "চট্টগ্রাম", "রাজশাহী", "খুলনা",   "সিলেট",
      "বরিশাল",  "রংপুর",      "ময়মনসিংহ", "কুমিল্লা", "গাজীপুর", "মিরপুর",   "উত্তরা",   "শাহবাগ"};
  std::vector<std::string> out;
  for (const auto& t : toks) {
    // "Dhaka-r" (genitive) still names Dhaka.
    const auto dash = t.raw.find('-');
    const std::string raw = dash == std::string::npos ? t.raw : t.raw.substr(0, dash);
    if (raw.empty() || !cities.count(unicode::casefold(raw))) continue;
    if (std::find(out.begin(), out.end(), raw) == out.end()) out.push_back(raw);
  }
  return out;
}

bool offers_to_donate(const std::vector<Token>& toks) {
  for (size_t i = 0; i + 1 < toks.size(); ++i) {
    if ((toks[i].lower == "can" || toks[i].lower == "could") && toks[i + 1].lower.starts_with("donat")) return true;
  }
  return false;
}

}  // namespace

ParseRecord parse_rules(std::string_view text) {
  const auto start = std::chrono::steady_clock::now();
  ParseRecord rec;
  rec.backend = "rules";
  rec.input_tokens = estimate_tokens(text);

  const auto toks = lex(text);
  const auto group = find_blood_group(toks);
  const bool blood_word = has_any(toks, kBloodWords);
  const bool need_word = has_any(toks, kNeedWords);
  const bool soft_negative = has_any(toks, kSoftNegativeWords) || offers_to_donate(toks);
  const bool request = (!group.empty() || blood_word) && !(soft_negative && !need_word);

  if (request) {
    ParsedRequest r;
    r.blood_group = group;
    r.bags_needed = find_bags(toks);
    r.hospital_name = find_hospital(toks);
    r.location = r.hospital_name;
    r.location_markers = find_markers(toks);
    r.probable_day = find_day(toks);
    r.probable_time = find_time(toks);
    if (auto phones = find_phones(toks); !phones.empty()) r.contacts.push_back({"", std::move(phones), ""});
    rec.outcome = ParseOutcome::positive(canonicalize(r));
  } else {
    rec.outcome = ParseOutcome::negative();
  }
  rec.output_tokens = estimate_tokens(serialize(rec.outcome));
  rec.latency_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rec;
}

}  // namespace cbrs
