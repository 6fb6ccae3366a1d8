#pragma once

#include <nlohmann/json.hpp>

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cbrs/tree.hpp"

// The fixed blood-request schema: validation, one-pass repair, canonical
// form, JSON serialization and the ordered tree used for scoring.
namespace cbrs {

struct Patient {
  std::string name;
  std::string gender;     // M, F or ""
  std::string age_group;  // child, teenager, young, adult or ""
  friend bool operator==(const Patient&, const Patient&) = default;
};

struct Contact {
  std::string name;
  std::vector<std::string> contact_numbers;
  std::string relation_with_patient;
  friend bool operator==(const Contact&, const Contact&) = default;
};

struct Compensation {
  std::string transportation;  // Y, N or ""
  std::string allowance;       // Y, N or ""
  friend bool operator==(const Compensation&, const Compensation&) = default;
};

struct ParsedRequest {
  std::string blood_group;
  std::string bags_needed;
  Patient patient;
  std::string condition;
  std::string location;
  std::string hospital_name;
  std::vector<std::string> location_markers;
  std::string probable_day;
  std::string probable_time;
  std::vector<Contact> contacts;
  Compensation compensation;
  friend bool operator==(const ParsedRequest&, const ParsedRequest&) = default;
};

// Either a parsed request or the negative flag ({"is_blood_donation_request": false}).
struct ParseOutcome {
  std::optional<ParsedRequest> request;

  static ParseOutcome negative() { return {}; }
  static ParseOutcome positive(ParsedRequest r) { return {std::move(r)}; }
  bool is_request() const { return request.has_value(); }
  friend bool operator==(const ParseOutcome&, const ParseOutcome&) = default;
};

struct SchemaError {
  std::string path;    // e.g. "patient.gender", "contacts[0].name"
  std::string reason;  // syntax, type, missing-key, unknown-key, enum-violation, pattern-violation
  std::string detail;
  friend bool operator==(const SchemaError&, const SchemaError&) = default;
};

struct ValidationResult {
  std::optional<ParseOutcome> outcome;  // set iff errors is empty
  std::vector<SchemaError> errors;
  bool syntax_ok = true;

  bool ok() const { return outcome.has_value(); }
};

ValidationResult validate(std::string_view raw_json);
ValidationResult validate(const nlohmann::json& doc);
inline ValidationResult validate(const std::string& raw_json) { return validate(std::string_view(raw_json)); }
inline ValidationResult validate(const char* raw_json) { return validate(std::string_view(raw_json)); }
inline ValidationResult validate(const nlohmann::ordered_json& doc) { return validate(nlohmann::json::parse(doc.dump())); }

struct RepairResult {
  ParseOutcome outcome;
  std::vector<SchemaError> repaired;  // every problem the pass fixed
};

// Single repair pass over a syntactically valid document: unknown keys are
// dropped, missing keys filled with empty values, and values that break an
// enum or pattern are blanked. Numbers in string slots become strings.
RepairResult repair(const nlohmann::json& doc);

// Field-level checks shared with the rule parser.
bool is_blood_group(std::string_view canonical_value);
bool is_probable_day(std::string_view value);
bool is_probable_time(std::string_view value);
std::string canonical_blood_group(std::string_view raw);

ParsedRequest canonicalize(const ParsedRequest& r);
ParseOutcome canonicalize(const ParseOutcome& o);

// Fields always emitted, in schema order.
nlohmann::ordered_json to_json(const ParseOutcome& o);
nlohmann::ordered_json to_json(const ParsedRequest& r);
std::string serialize(const ParseOutcome& o);

// Root "request", one child per schema field in order; objects become
// subtrees, list items children labeled by index, scalars "key=value".
// The negative flag is the single node "negative".
LabeledTree to_tree(const ParseOutcome& o);

}  // namespace cbrs
