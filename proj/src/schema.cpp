#include "cbrs/schema.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <functional>
#include <regex>

#include "cbrs/unicode.hpp"

namespace cbrs {

namespace {

using json = nlohmann::json;
using Check = std::function<bool(std::string_view)>;

constexpr std::array<std::string_view, 8> kBloodGroups = {"A+", "A-", "B+", "B-", "O+", "O-", "AB+", "AB-"};
constexpr std::string_view kNegativeKey = "is_blood_donation_request";

bool one_of(std::string_view v, std::initializer_list<std::string_view> options) {
  return std::find(options.begin(), options.end(), v) != options.end();
}

std::string normalized(std::string_view v) { return unicode::collapse_whitespace(v); }

bool check_gender(std::string_view v) { return one_of(normalized(v), {"", "M", "F"}); }
bool check_age_group(std::string_view v) {
  return one_of(normalized(v), {"", "child", "teenager", "young", "adult"});
}
bool check_yes_no(std::string_view v) { return one_of(normalized(v), {"", "Y", "N"}); }
bool check_blood_group(std::string_view v) {
  const auto c = canonical_blood_group(v);
  return c.empty() || is_blood_group(c);
}

bool valid_hhmm(std::string_view s) {
  static const std::regex re(R"(^([01][0-9]|2[0-3]):[0-5][0-9]$)");
  return std::regex_match(s.begin(), s.end(), re);
}

std::string join_path(const std::string& base, std::string_view key) {
  return base.empty() ? std::string(key) : base + "." + std::string(key);
}

class Walker {
 public:
  std::vector<SchemaError> errors;

  void fail(std::string path, std::string reason, std::string detail = {}) {
    errors.push_back({std::move(path), std::move(reason), std::move(detail)});
  }

  std::string scalar(const json& obj, std::string_view key, const std::string& path, const Check& check,
                     std::string_view violation) {
    const std::string key_s(key);
    if (!obj.contains(key_s)) {
      fail(path, "missing-key");
      return {};
    }
    return value(obj.at(key_s), path, check, violation);
  }

  std::string value(const json& v, const std::string& path, const Check& check, std::string_view violation) {
    if (v.is_string()) {
      auto s = v.get<std::string>();
      if (check && !check(s)) {
        fail(path, std::string(violation), s);
        return {};
      }
      return s;
    }
    fail(path, "type", "expected string");
    if (v.is_number()) {
      auto s = v.dump();
      return (!check || check(s)) ? s : std::string{};
    }
    return {};
  }

  std::vector<std::string> string_list(const json& obj, std::string_view key, const std::string& path) {
    const std::string key_s(key);
    std::vector<std::string> out;
    if (!obj.contains(key_s)) {
      fail(path, "missing-key");
      return out;
    }
    const auto& v = obj.at(key_s);
    if (v.is_string()) {
      fail(path, "type", "expected list of strings");
      if (!unicode::trim(v.get<std::string>()).empty()) out.push_back(v.get<std::string>());
      return out;
    }
    if (!v.is_array()) {
      fail(path, "type", "expected list of strings");
      return out;
    }
    for (size_t i = 0; i < v.size(); ++i) {
      const auto item_path = path + "[" + std::to_string(i) + "]";
      if (v[i].is_string()) {
        out.push_back(v[i].get<std::string>());
      } else {
        fail(item_path, "type", "expected string");
        if (v[i].is_number()) out.push_back(v[i].dump());
      }
    }
    return out;
  }

  const json* object(const json& obj, std::string_view key, const std::string& path) {
    const std::string key_s(key);
    if (!obj.contains(key_s)) {
      fail(path, "missing-key");
      return nullptr;
    }
    const auto& v = obj.at(key_s);
    if (!v.is_object()) {
      fail(path, "type", "expected object");
      return nullptr;
    }
    return &v;
  }

  void unknown_keys(const json& obj, std::initializer_list<std::string_view> known, const std::string& path) {
    for (const auto& [k, _] : obj.items()) {
      if (std::find(known.begin(), known.end(), k) == known.end()) fail(join_path(path, k), "unknown-key");
    }
  }

  Patient patient(const json& root) {
    Patient p;
    const json* o = object(root, "patient", "patient");
    if (!o) return p;
    unknown_keys(*o, {"name", "gender", "age_group"}, "patient");
    p.name = scalar(*o, "name", "patient.name", {}, "");
    p.gender = scalar(*o, "gender", "patient.gender", check_gender, "enum-violation");
    p.age_group = scalar(*o, "age_group", "patient.age_group", check_age_group, "enum-violation");
    return p;
  }

  Compensation compensation(const json& root) {
    Compensation c;
    const json* o = object(root, "compensation", "compensation");
    if (!o) return c;
    unknown_keys(*o, {"transportation", "allowance"}, "compensation");
    c.transportation = scalar(*o, "transportation", "compensation.transportation", check_yes_no, "enum-violation");
    c.allowance = scalar(*o, "allowance", "compensation.allowance", check_yes_no, "enum-violation");
    return c;
  }

  std::vector<Contact> contacts(const json& root) {
    std::vector<Contact> out;
    if (!root.contains("contacts")) {
      fail("contacts", "missing-key");
      return out;
    }
    const auto& v = root.at("contacts");
    if (!v.is_array()) {
      fail("contacts", "type", "expected list of contacts");
      return out;
    }
    for (size_t i = 0; i < v.size(); ++i) {
      const auto path = "contacts[" + std::to_string(i) + "]";
      if (!v[i].is_object()) {
        fail(path, "type", "expected object");
        continue;
      }
      const auto& o = v[i];
      unknown_keys(o, {"name", "contact_numbers", "relation_with_patient"}, path);
      Contact c;
      c.name = scalar(o, "name", path + ".name", {}, "");
      c.contact_numbers = string_list(o, "contact_numbers", path + ".contact_numbers");
      c.relation_with_patient = scalar(o, "relation_with_patient", path + ".relation_with_patient", {}, "");
      out.push_back(std::move(c));
    }
    return out;
  }

  ParseOutcome walk(const json& doc) {
    if (!doc.is_object()) {
      fail("", "type", "expected a JSON object");
      return ParseOutcome::negative();
    }
    if (doc.contains(kNegativeKey)) {
      const auto& flag = doc.at(std::string(kNegativeKey));
      if (flag.is_boolean() && !flag.get<bool>()) return ParseOutcome::negative();
      if (!flag.is_boolean()) fail(std::string(kNegativeKey), "type", "expected boolean");
    }
    unknown_keys(doc,
                 {kNegativeKey, "blood_group", "bags_needed", "patient", "condition", "location", "hospital_name",
                  "location_markers", "probable_day", "probable_time", "contacts", "compensation"},
                 "");
    ParsedRequest r;
    r.blood_group = scalar(doc, "blood_group", "blood_group", check_blood_group, "enum-violation");
    r.bags_needed = scalar(doc, "bags_needed", "bags_needed", {}, "");
    r.patient = patient(doc);
    r.condition = scalar(doc, "condition", "condition", {}, "");
    r.location = scalar(doc, "location", "location", {}, "");
    r.hospital_name = scalar(doc, "hospital_name", "hospital_name", {}, "");
    r.location_markers = string_list(doc, "location_markers", "location_markers");
    r.probable_day = scalar(doc, "probable_day", "probable_day", is_probable_day, "pattern-violation");
    r.probable_time = scalar(doc, "probable_time", "probable_time", is_probable_time, "pattern-violation");
    r.contacts = contacts(doc);
    r.compensation = compensation(doc);
    return ParseOutcome::positive(std::move(r));
  }
};

}  // namespace

std::string canonical_blood_group(std::string_view raw) {
  std::string out;
  for (char c : unicode::collapse_whitespace(raw)) {
    if (c == ' ') continue;
    out.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  }
  return out;
}

bool is_blood_group(std::string_view v) {
  return std::find(kBloodGroups.begin(), kBloodGroups.end(), v) != kBloodGroups.end();
}

bool is_probable_day(std::string_view raw) {
  const auto v = normalized(raw);
  if (v.empty() || v == "today" || v == "tomorrow") return true;
  static const std::regex later(R"(^[0-9]+ days? later$)");
  static const std::regex date(R"(^(0[1-9]|[12][0-9]|3[01])/(0[1-9]|1[0-2])(/[0-9]{4})?$)");
  return std::regex_match(v, later) || std::regex_match(v, date);
}

bool is_probable_time(std::string_view raw) {
  const auto v = normalized(raw);
  if (v.empty()) return true;
  if (valid_hhmm(v)) return true;
  for (std::string_view prefix : {"before ", "after "}) {
    if (v.rfind(prefix, 0) == 0) return valid_hhmm(std::string_view(v).substr(prefix.size()));
  }
  const auto dash = v.find('-');
  if (dash != std::string::npos)
    return valid_hhmm(std::string_view(v).substr(0, dash)) && valid_hhmm(std::string_view(v).substr(dash + 1));
  static const std::regex hours(R"(^in [0-9]+ hours?$)");
  return std::regex_match(v, hours);
}

ValidationResult validate(const nlohmann::json& doc) {
  Walker w;
  auto outcome = w.walk(doc);
  ValidationResult result;
  result.errors = std::move(w.errors);
  if (result.errors.empty()) result.outcome = std::move(outcome);
  return result;
}

ValidationResult validate(std::string_view raw_json) {
  json doc;
  try {
    doc = json::parse(raw_json);
  } catch (const json::exception& e) {
    ValidationResult result;
    result.syntax_ok = false;
    result.errors.push_back({"", "syntax", e.what()});
    return result;
  }
  return validate(doc);
}

RepairResult repair(const nlohmann::json& doc) {
  Walker w;
  RepairResult out;
  out.outcome = w.walk(doc);
  out.repaired = std::move(w.errors);
  return out;
}

ParsedRequest canonicalize(const ParsedRequest& r) {
  auto c = [](const std::string& s) { return unicode::collapse_whitespace(s); };
  ParsedRequest out;
  out.blood_group = canonical_blood_group(r.blood_group);
  out.bags_needed = c(r.bags_needed);
  out.patient = {c(r.patient.name), c(r.patient.gender), c(r.patient.age_group)};
  out.condition = c(r.condition);
  out.location = c(r.location);
  out.hospital_name = c(r.hospital_name);
  for (const auto& m : r.location_markers) out.location_markers.push_back(c(m));
  out.probable_day = c(r.probable_day);
  out.probable_time = c(r.probable_time);
  for (const auto& k : r.contacts) {
    Contact cc{c(k.name), {}, c(k.relation_with_patient)};
    for (const auto& n : k.contact_numbers) cc.contact_numbers.push_back(c(n));
    out.contacts.push_back(std::move(cc));
  }
  out.compensation = {c(r.compensation.transportation), c(r.compensation.allowance)};
  return out;
}

ParseOutcome canonicalize(const ParseOutcome& o) {
  if (!o.request) return ParseOutcome::negative();
  return ParseOutcome::positive(canonicalize(*o.request));
}

nlohmann::ordered_json to_json(const ParsedRequest& r) {
  nlohmann::ordered_json j;
  j["blood_group"] = r.blood_group;
  j["bags_needed"] = r.bags_needed;
  j["patient"] = {{"name", r.patient.name}, {"gender", r.patient.gender}, {"age_group", r.patient.age_group}};
  j["condition"] = r.condition;
  j["location"] = r.location;
  j["hospital_name"] = r.hospital_name;
  j["location_markers"] = r.location_markers;
  j["probable_day"] = r.probable_day;
  j["probable_time"] = r.probable_time;
  auto contacts = nlohmann::ordered_json::array();
  for (const auto& c : r.contacts) {
    nlohmann::ordered_json cj;
    cj["name"] = c.name;
    cj["contact_numbers"] = c.contact_numbers;
    cj["relation_with_patient"] = c.relation_with_patient;
    contacts.push_back(std::move(cj));
  }
  j["contacts"] = std::move(contacts);
  j["compensation"] = {{"transportation", r.compensation.transportation}, {"allowance", r.compensation.allowance}};
  return j;
}

nlohmann::ordered_json to_json(const ParseOutcome& o) {
  if (!o.request) return {{std::string(kNegativeKey), false}};
  return to_json(*o.request);
}

std::string serialize(const ParseOutcome& o) { return to_json(o).dump(); }

namespace {

LabeledTree leaf(std::string_view key, const std::string& value) { return {std::string(key) + "=" + value, {}}; }

LabeledTree string_list_node(std::string_view key, const std::vector<std::string>& items) {
  LabeledTree node{std::string(key), {}};
  for (size_t i = 0; i < items.size(); ++i) node.children.push_back(leaf(std::to_string(i), items[i]));
  return node;
}

}  // namespace

LabeledTree to_tree(const ParseOutcome& o) {
  if (!o.request) return {"negative", {}};
  const auto& r = *o.request;
  LabeledTree root{"request", {}};
  auto& ch = root.children;
  ch.push_back(leaf("blood_group", r.blood_group));
  ch.push_back(leaf("bags_needed", r.bags_needed));
  ch.push_back({"patient",
                {leaf("name", r.patient.name), leaf("gender", r.patient.gender),
                 leaf("age_group", r.patient.age_group)}});
  ch.push_back(leaf("condition", r.condition));
  ch.push_back(leaf("location", r.location));
  ch.push_back(leaf("hospital_name", r.hospital_name));
  ch.push_back(string_list_node("location_markers", r.location_markers));
  ch.push_back(leaf("probable_day", r.probable_day));
  ch.push_back(leaf("probable_time", r.probable_time));
  LabeledTree contacts{"contacts", {}};
  for (size_t i = 0; i < r.contacts.size(); ++i) {
    const auto& c = r.contacts[i];
    contacts.children.push_back({std::to_string(i),
                                 {leaf("name", c.name), string_list_node("contact_numbers", c.contact_numbers),
                                  leaf("relation_with_patient", c.relation_with_patient)}});
  }
  ch.push_back(std::move(contacts));
  ch.push_back({"compensation",
                {leaf("transportation", r.compensation.transportation), leaf("allowance", r.compensation.allowance)}});
  return root;
}

}  // namespace cbrs
