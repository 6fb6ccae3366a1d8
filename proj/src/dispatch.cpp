#include "cbrs/dispatch.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <regex>
#include <sstream>

#include "cbrs/unicode.hpp"

namespace cbrs {

namespace {

constexpr int64_t kDay = 86400;
constexpr int kSnapshotVersion = 1;

int64_t floor_div(int64_t a, int64_t b) { return a / b - ((a % b != 0) && ((a < 0) != (b < 0))); }

int64_t day_of(Timestamp t) { return floor_div(t, kDay); }

std::string join(const std::vector<std::string>& items, std::string_view sep) {
  std::string out;
  for (size_t i = 0; i < items.size(); ++i) {
    if (i) out += sep;
    out += items[i];
  }
  return out;
}

}  // namespace

Timestamp SystemClock::now() const {
  return std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch()).count();
}

std::optional<int64_t> parse_date(std::string_view iso) {
  int y = 0;
  unsigned m = 0, d = 0;
  char tail = 0;
  const std::string s(iso);
  if (std::sscanf(s.c_str(), "%4d-%2u-%2u%c", &y, &m, &d, &tail) != 3 || s.size() != 10) return std::nullopt;
  const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
  if (!ymd.ok()) return std::nullopt;
  return std::chrono::sys_days(ymd).time_since_epoch().count();
}

std::string format_date(int64_t days) {
  const std::chrono::year_month_day ymd{std::chrono::sys_days{std::chrono::days{days}}};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                static_cast<unsigned>(ymd.day()));
  return buf;
}

std::optional<Timestamp> parse_timestamp(std::string_view iso) {
  const std::string s = unicode::trim(iso);
  if (!s.empty() && std::all_of(s.begin() + (s[0] == '-' ? 1 : 0), s.end(), [](char c) { return c >= '0' && c <= '9'; }) &&
      s != "-") {
    try {
      return std::stoll(s);
    } catch (const std::out_of_range&) {
      return std::nullopt;
    }
  }
  if (s.size() != 20 || s[10] != 'T' || s[19] != 'Z') return std::nullopt;
  const auto days = parse_date(s.substr(0, 10));
  unsigned hh = 0, mm = 0, ss = 0;
  if (!days || std::sscanf(s.c_str() + 11, "%2u:%2u:%2u", &hh, &mm, &ss) != 3 || hh > 23 || mm > 59 || ss > 59)
    return std::nullopt;
  return *days * kDay + hh * 3600 + mm * 60 + ss;
}

std::string format_timestamp(Timestamp t) {
  const int64_t secs = t - day_of(t) * kDay;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%sT%02d:%02d:%02dZ", format_date(day_of(t)).c_str(), static_cast<int>(secs / 3600),
                static_cast<int>(secs / 60 % 60), static_cast<int>(secs % 60));
  return buf;
}

double haversine_km(GeoPoint a, GeoPoint b) {
  constexpr double rad = M_PI / 180.0;
  const double dlat = (b.lat - a.lat) * rad;
  const double dlon = (b.lon - a.lon) * rad;
  const double s = std::sin(dlat / 2) * std::sin(dlat / 2) +
                   std::cos(a.lat * rad) * std::cos(b.lat * rad) * std::sin(dlon / 2) * std::sin(dlon / 2);
  return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(s)));
}

bool valid_coordinates(GeoPoint p) {
  return std::isfinite(p.lat) && std::isfinite(p.lon) && std::abs(p.lat) <= 90.0 && std::abs(p.lon) <= 180.0;
}

ValidationError::ValidationError(std::vector<FieldIssue> issues)
    : Error([&] {
        std::string msg = "invalid donor record:";
        for (const auto& i : issues) msg += " " + i.field + " (" + i.reason + ")";
        return msg;
      }()),
      issues_(std::move(issues)) {}

Gazetteer Gazetteer::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open gazetteer: " + path.string());
  Gazetteer g;
  std::string line;
  size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (unicode::trim(line).empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    std::string marker, lat, lon;
    if (!std::getline(fields, marker, '\t') || !std::getline(fields, lat, '\t') || !std::getline(fields, lon, '\t'))
      throw DataError(path.string() + ":" + std::to_string(n) + ": expected marker<TAB>lat<TAB>lon");
    GeoPoint p;
    try {
      p = {std::stod(lat), std::stod(lon)};
    } catch (const std::exception&) {
      throw DataError(path.string() + ":" + std::to_string(n) + ": bad coordinate");
    }
    if (!valid_coordinates(p)) throw DataError(path.string() + ":" + std::to_string(n) + ": coordinate out of range");
    g.add(marker, p);
  }
  return g;
}

void Gazetteer::add(std::string_view marker, GeoPoint p) { entries_[unicode::collapse_whitespace(unicode::casefold(marker))] = p; }

std::optional<GeoPoint> Gazetteer::lookup(std::string_view marker) const {
  const auto it = entries_.find(unicode::collapse_whitespace(unicode::casefold(marker)));
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

std::optional<GeoPoint> Gazetteer::anchor(const ParsedRequest& r) const {
  for (const auto& m : r.location_markers)
    if (auto p = lookup(m)) return p;
  if (auto p = lookup(r.location)) return p;
  return lookup(r.hospital_name);
}

std::string_view to_string(CaseStatus s) {
  switch (s) {
    case CaseStatus::open: return "open";
    case CaseStatus::fulfilled: return "fulfilled";
    case CaseStatus::resolved_externally: return "resolved_externally";
    case CaseStatus::expired: return "expired";
  }
  return "open";
}

std::optional<CaseStatus> parse_case_status(std::string_view s) {
  for (auto c : {CaseStatus::open, CaseStatus::fulfilled, CaseStatus::resolved_externally, CaseStatus::expired})
    if (to_string(c) == s) return c;
  return std::nullopt;
}

bool is_terminal(CaseStatus s) { return s != CaseStatus::open; }

std::string_view to_string(DonorResponse r) {
  switch (r) {
    case DonorResponse::none: return "none";
    case DonorResponse::affirmative: return "affirmative";
    case DonorResponse::negative: return "negative";
  }
  return "none";
}

std::string_view to_string(EventKind k) {
  switch (k) {
    case EventKind::donor_alert: return "donor_alert";
    case EventKind::seeker_update: return "seeker_update";
    case EventKind::resolution_notice: return "resolution_notice";
    case EventKind::operator_attention: return "operator_attention";
  }
  return "donor_alert";
}

std::string_view to_string(EditStatus s) {
  switch (s) {
    case EditStatus::unknown_message: return "unknown_message";
    case EditStatus::resolved_externally: return "resolved_externally";
    case EditStatus::already_resolved: return "already_resolved";
    case EditStatus::updated: return "updated";
    case EditStatus::unchanged: return "unchanged";
    case EditStatus::not_a_request: return "not_a_request";
    case EditStatus::case_created: return "case_created";
  }
  return "unchanged";
}

// ---- JSON ----

nlohmann::ordered_json to_json(const DonorRecord& d) {
  nlohmann::ordered_json j;
  j["donor_id"] = d.donor_id;
  j["platform_id"] = d.platform_id;
  j["blood_group"] = d.blood_group;
  j["latitude"] = d.latitude;
  j["longitude"] = d.longitude;
  j["last_donation_date"] = d.last_donation_date;
  j["registered_at"] = d.registered_at;
  return j;
}

nlohmann::ordered_json to_json(const RequestCase& c) {
  nlohmann::ordered_json j;
  j["request_id"] = c.request_id;
  j["message_id"] = c.message_id;
  j["group_id"] = c.group_id;
  j["seeker_id"] = c.seeker_id;
  j["request"] = to_json(c.request);
  j["deadline"] = c.deadline ? nlohmann::ordered_json(*c.deadline) : nlohmann::ordered_json(nullptr);
  j["status"] = to_string(c.status);
  j["created_at"] = c.created_at;
  j["anchor"] = c.anchor ? nlohmann::ordered_json{{"lat", c.anchor->lat}, {"lon", c.anchor->lon}}
                         : nlohmann::ordered_json(nullptr);
  j["depth"] = c.depth;
  j["stages_fired"] = c.stages_fired;
  j["stage_started_at"] = c.stage_started_at;
  j["donors_exhausted"] = c.donors_exhausted;
  j["operator_attention"] = c.operator_attention;
  j["attention_reason"] = c.attention_reason;
  return j;
}

nlohmann::ordered_json to_json(const LedgerEntry& e) {
  nlohmann::ordered_json j;
  j["request_id"] = e.request_id;
  j["donor_id"] = e.donor_id;
  j["stage"] = e.stage;
  j["notified_at"] = e.notified_at;
  j["response"] = to_string(e.response);
  j["responded_at"] = e.responded_at ? nlohmann::ordered_json(*e.responded_at) : nlohmann::ordered_json(nullptr);
  j["resolution_notified"] = e.resolution_notified;
  return j;
}

nlohmann::ordered_json to_json(const OutboundEvent& e) {
  nlohmann::ordered_json j;
  j["kind"] = to_string(e.kind);
  j["request_id"] = e.request_id;
  if (e.donor_id) j["donor_id"] = *e.donor_id;
  j["recipient"] = e.recipient;
  if (e.stage) j["stage"] = e.stage;
  j["at"] = e.at;
  j["text"] = e.text;
  return j;
}

DonorRecord donor_from_json(const nlohmann::json& j) {
  DonorRecord d;
  d.donor_id = j.at("donor_id").get<uint64_t>();
  d.platform_id = j.at("platform_id").get<std::string>();
  d.blood_group = j.at("blood_group").get<std::string>();
  d.latitude = j.at("latitude").get<double>();
  d.longitude = j.at("longitude").get<double>();
  d.last_donation_date = j.at("last_donation_date").get<std::string>();
  d.registered_at = j.at("registered_at").get<Timestamp>();
  return d;
}

namespace {

RequestCase case_from_json(const nlohmann::json& j) {
  RequestCase c;
  c.request_id = j.at("request_id").get<uint64_t>();
  c.message_id = j.at("message_id").get<std::string>();
  c.group_id = j.at("group_id").get<std::string>();
  c.seeker_id = j.at("seeker_id").get<std::string>();
  auto checked = validate(j.at("request"));
  if (!checked.ok() || !checked.outcome->is_request()) throw DataError("case request does not match the schema");
  c.request = *checked.outcome->request;
  if (!j.at("deadline").is_null()) c.deadline = j.at("deadline").get<Timestamp>();
  const auto status = parse_case_status(j.at("status").get<std::string>());
  if (!status) throw DataError("unknown case status");
  c.status = *status;
  c.created_at = j.at("created_at").get<Timestamp>();
  if (!j.at("anchor").is_null()) c.anchor = GeoPoint{j.at("anchor").at("lat").get<double>(), j.at("anchor").at("lon").get<double>()};
  c.depth = j.at("depth").get<int>();
  c.stages_fired = j.at("stages_fired").get<int>();
  c.stage_started_at = j.at("stage_started_at").get<Timestamp>();
  c.donors_exhausted = j.at("donors_exhausted").get<bool>();
  c.operator_attention = j.at("operator_attention").get<bool>();
  c.attention_reason = j.at("attention_reason").get<std::string>();
  return c;
}

LedgerEntry entry_from_json(const nlohmann::json& j) {
  LedgerEntry e;
  e.request_id = j.at("request_id").get<uint64_t>();
  e.donor_id = j.at("donor_id").get<uint64_t>();
  e.stage = j.at("stage").get<int>();
  e.notified_at = j.at("notified_at").get<Timestamp>();
  const auto r = j.at("response").get<std::string>();
  if (r == "none") e.response = DonorResponse::none;
  else if (r == "affirmative") e.response = DonorResponse::affirmative;
  else if (r == "negative") e.response = DonorResponse::negative;
  else throw DataError("unknown ledger response: " + r);
  if (!j.at("responded_at").is_null()) e.responded_at = j.at("responded_at").get<Timestamp>();
  e.resolution_notified = j.at("resolution_notified").get<bool>();
  return e;
}

}  // namespace

// ---- snapshots ----

std::string serialize_snapshot(const DispatchState& s) {
  std::ostringstream os;
  nlohmann::ordered_json header;
  header["format"] = "cbrs-snapshot";
  header["version"] = kSnapshotVersion;
  header["next_donor_id"] = s.next_donor_id;
  header["next_request_id"] = s.next_request_id;
  os << header.dump() << "\n";
  auto section = [&](std::string_view name, const auto& items) {
    os << nlohmann::ordered_json{{"section", name}, {"count", items.size()}}.dump() << "\n";
    for (const auto& item : items) os << to_json(item).dump() << "\n";
  };
  section("donors", s.donors);
  section("cases", s.cases);
  section("ledger", s.ledger);
  os << nlohmann::ordered_json{{"end", true}}.dump() << "\n";
  return os.str();
}

DispatchState parse_snapshot(std::string_view text) {
  std::vector<std::string> lines;
  std::string cur;
  for (char c : text) {
    if (c == '\n') {
      lines.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) throw DataError("snapshot: truncated final line");
  size_t pos = 0;
  auto next = [&](std::string_view what) {
    if (pos >= lines.size()) throw DataError("snapshot: missing " + std::string(what));
    auto j = nlohmann::json::parse(lines[pos], nullptr, false);
    if (j.is_discarded() || !j.is_object())
      throw DataError("snapshot line " + std::to_string(pos + 1) + ": malformed JSON");
    ++pos;
    return j;
  };
  DispatchState s;
  try {
    const auto header = next("header");
    if (header.value("format", "") != "cbrs-snapshot") throw DataError("snapshot: not a snapshot file");
    if (header.value("version", 0) != kSnapshotVersion)
      throw DataError("snapshot: unsupported version " + header.value("version", nlohmann::json()).dump());
    s.next_donor_id = header.at("next_donor_id").get<uint64_t>();
    s.next_request_id = header.at("next_request_id").get<uint64_t>();
    auto section = [&](std::string_view name, auto& out, auto parse) {
      const auto h = next(name);
      if (h.value("section", "") != name) throw DataError("snapshot: expected section " + std::string(name));
      const auto count = h.at("count").get<size_t>();
      for (size_t i = 0; i < count; ++i) out.push_back(parse(next(name)));
    };
    section("donors", s.donors, [](const nlohmann::json& j) {
      auto d = donor_from_json(j);
      if (!is_blood_group(d.blood_group)) throw DataError("snapshot: invalid blood group " + d.blood_group);
      return d;
    });
    section("cases", s.cases, case_from_json);
    section("ledger", s.ledger, entry_from_json);
    if (!next("end marker").value("end", false)) throw DataError("snapshot: missing end marker");
    if (pos != lines.size()) throw DataError("snapshot: trailing data after end marker");
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("snapshot line ") + std::to_string(pos) + ": " + e.what());
  }
  return s;
}

void persist(const DispatchState& state, const std::filesystem::path& path, const std::function<void()>& before_rename) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write snapshot: " + tmp.string());
    out << serialize_snapshot(state);
    out.flush();
    if (!out) throw Error("short write to snapshot: " + tmp.string());
  }
  if (before_rename) before_rename();
  std::filesystem::rename(tmp, path);
}

DispatchState restore(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open snapshot: " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_snapshot(buf.str());
}

// ---- urgency ----

namespace {

struct DaySpec {
  std::optional<int64_t> day;  // days since epoch
  bool today = false;
};

DaySpec parse_day(std::string_view value, Timestamp created_at) {
  static const std::regex dated(R"(^(\d{1,2})/(\d{1,2})(?:/(\d{4}))?$)");
  static const std::regex later(R"(^(\d+) days? later$)");
  const std::string v = unicode::collapse_whitespace(unicode::casefold(value));
  const int64_t d0 = day_of(created_at);
  std::smatch m;
  if (v == "today") return {d0, true};
  if (v == "tomorrow") return {d0 + 1, false};
  if (std::regex_match(v, m, later)) {
    const int64_t n = std::stoll(m[1]);
    return {d0 + n, n == 0};
  }
  if (std::regex_match(v, m, dated)) {
    const std::chrono::year_month_day now{std::chrono::sys_days{std::chrono::days{d0}}};
    const int year = m[3].matched ? std::stoi(m[3]) : static_cast<int>(now.year());
    const std::chrono::year_month_day ymd{std::chrono::year{year}, std::chrono::month{static_cast<unsigned>(std::stoi(m[2]))},
                                          std::chrono::day{static_cast<unsigned>(std::stoi(m[1]))}};
    if (ymd.ok()) return {std::chrono::sys_days(ymd).time_since_epoch().count(), false};
  }
  return {};
}

}  // namespace

std::optional<Timestamp> resolve_deadline(const ParsedRequest& r, Timestamp created_at) {
  static const std::regex in_hours(R"(^in (\d+) hours?$)");
  static const std::regex clock(R"(^(?:(before|after) )?(\d{2}):(\d{2})$)");
  static const std::regex range(R"(^\d{2}:\d{2}-(\d{2}):(\d{2})$)");
  const std::string t = unicode::collapse_whitespace(unicode::casefold(r.probable_time));
  const auto day = parse_day(r.probable_day, created_at);
  std::smatch m;
  if (std::regex_match(t, m, in_hours)) return created_at + std::stoll(m[1]) * 3600;

  std::optional<int64_t> minutes;
  bool end_of_day = false;
  if (std::regex_match(t, m, clock)) {
    if (m[1] == "after") end_of_day = true;
    else minutes = std::stoll(m[2]) * 60 + std::stoll(m[3]);
  } else if (std::regex_match(t, m, range)) {
    minutes = std::stoll(m[1]) * 60 + std::stoll(m[2]);
  }

  if (day.day) {
    const Timestamp start = *day.day * kDay;
    return minutes ? start + *minutes * 60 : start + kDay;
  }
  const Timestamp today = day_of(created_at) * kDay;
  if (minutes) {
    Timestamp at = today + *minutes * 60;
    if (at <= created_at) at += kDay;
    return at;
  }
  if (end_of_day) return today + kDay;
  return std::nullopt;
}

int urgency_depth(const RequestCase& c) {
  const std::string t = unicode::collapse_whitespace(unicode::casefold(c.request.probable_time));
  const auto day = parse_day(c.request.probable_day, c.created_at);
  if (day.today || t.rfind("before ", 0) == 0) return 3;
  if (c.request.probable_day.empty() && c.request.probable_time.empty()) return 1;
  const auto deadline = resolve_deadline(c.request, c.created_at);
  if (deadline && *deadline <= c.created_at + 2 * kDay) return 2;
  return 1;
}

// ---- eligibility ----

bool donor_eligible(const DonorRecord& d, std::string_view blood_group, Timestamp now, int eligibility_days) {
  if (blood_group.empty() || d.blood_group != blood_group) return false;
  if (d.last_donation_date.empty()) return true;
  const auto last = parse_date(d.last_donation_date);
  if (!last) return false;
  return day_of(now) - *last >= eligibility_days;
}

std::vector<DonorRecord> eligible_donors(const RequestCase& c, const std::vector<DonorRecord>& registry, Timestamp now,
                                         int eligibility_days) {
  std::vector<DonorRecord> out;
  const auto group = canonical_blood_group(c.request.blood_group);
  if (group.empty()) return out;
  for (const auto& d : registry)
    if (donor_eligible(d, group, now, eligibility_days)) out.push_back(d);
  if (c.anchor) {
    std::vector<std::pair<double, const DonorRecord*>> keyed;
    for (const auto& d : out) keyed.emplace_back(haversine_km(*c.anchor, {d.latitude, d.longitude}), &d);
    std::sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first < b.first;
      if (a.second->registered_at != b.second->registered_at) return a.second->registered_at < b.second->registered_at;
      return a.second->donor_id < b.second->donor_id;
    });
    std::vector<DonorRecord> ranked;
    for (const auto& [_, d] : keyed) ranked.push_back(*d);
    return ranked;
  }
  std::sort(out.begin(), out.end(), [](const DonorRecord& a, const DonorRecord& b) {
    if (a.registered_at != b.registered_at) return a.registered_at > b.registered_at;
    return a.donor_id < b.donor_id;
  });
  return out;
}

bool has_managed_marker(std::string_view text) {
  static const std::vector<std::string> markers = {
      "managed",  "collected",  "arranged",     "fulfilled",   "resolved",     "no longer needed",
      "manage hoye", "manage hoise", "manage hoyeche", "peye gechi", "paoa gese", "ম্যানেজ",
      "সংগ্রহ হয়েছে", "পেয়ে গেছি", "পাওয়া গেছে", "ব্যবস্থা হয়েছে", "লাগবে না"};
  const std::string folded = unicode::collapse_whitespace(unicode::casefold(unicode::nfc(text)));
  for (const auto& m : markers)
    if (folded.find(m) != std::string::npos) return true;
  return false;
}

// ---- dispatcher ----

Dispatcher::Dispatcher(DispatchConfig cfg, Gazetteer gazetteer, const Clock& clock)
    : cfg_(cfg), gazetteer_(std::move(gazetteer)), clock_(clock) {
  if (cfg_.stage_size == 0) throw Error("stage_size must be positive");
  if (cfg_.stage_timeout_seconds <= 0) throw Error("stage timeout must be positive");
}

namespace {

std::vector<FieldIssue> check_donor(const DonorRecord& d) {
  std::vector<FieldIssue> issues;
  if (unicode::trim(d.platform_id).empty()) issues.push_back({"platform_id", "must be non-empty"});
  if (!is_blood_group(d.blood_group)) issues.push_back({"blood_group", "must be one of A+ A- B+ B- AB+ AB- O+ O-"});
  if (!std::isfinite(d.latitude) || std::abs(d.latitude) > 90.0) issues.push_back({"latitude", "must be within [-90, 90]"});
  if (!std::isfinite(d.longitude) || std::abs(d.longitude) > 180.0)
    issues.push_back({"longitude", "must be within [-180, 180]"});
  if (!d.last_donation_date.empty() && !parse_date(d.last_donation_date))
    issues.push_back({"last_donation_date", "must be YYYY-MM-DD"});
  return issues;
}

}  // namespace

uint64_t Dispatcher::register_donor(DonorRecord d) {
  d.blood_group = canonical_blood_group(d.blood_group);
  if (auto issues = check_donor(d); !issues.empty()) throw ValidationError(std::move(issues));
  std::unique_lock lock(mu_);
  if (auto it = by_platform_.find(d.platform_id); it != by_platform_.end()) {
    auto& existing = *std::find_if(state_.donors.begin(), state_.donors.end(),
                                   [&](const DonorRecord& x) { return x.donor_id == it->second; });
    d.donor_id = existing.donor_id;
    d.registered_at = existing.registered_at;
    existing = d;
    return d.donor_id;
  }
  d.donor_id = state_.next_donor_id++;
  d.registered_at = clock_.now();
  by_platform_[d.platform_id] = d.donor_id;
  state_.donors.push_back(d);
  return d.donor_id;
}

DonorRecord Dispatcher::update_donor(uint64_t donor_id, const DonorPatch& patch) {
  std::unique_lock lock(mu_);
  auto it = std::find_if(state_.donors.begin(), state_.donors.end(),
                         [&](const DonorRecord& x) { return x.donor_id == donor_id; });
  if (it == state_.donors.end()) throw Error("unknown donor " + std::to_string(donor_id));
  DonorRecord d = *it;
  if (patch.blood_group) d.blood_group = canonical_blood_group(*patch.blood_group);
  if (patch.latitude) d.latitude = *patch.latitude;
  if (patch.longitude) d.longitude = *patch.longitude;
  if (patch.last_donation_date) d.last_donation_date = *patch.last_donation_date;
  if (auto issues = check_donor(d); !issues.empty()) throw ValidationError(std::move(issues));
  *it = d;
  return d;
}

std::optional<DonorRecord> Dispatcher::donor(uint64_t donor_id) const {
  std::shared_lock lock(mu_);
  for (const auto& d : state_.donors)
    if (d.donor_id == donor_id) return d;
  return std::nullopt;
}

std::optional<DonorRecord> Dispatcher::donor_by_platform(std::string_view platform_id) const {
  std::shared_lock lock(mu_);
  const auto it = by_platform_.find(platform_id);
  if (it == by_platform_.end()) return std::nullopt;
  for (const auto& d : state_.donors)
    if (d.donor_id == it->second) return d;
  return std::nullopt;
}

RequestCase* Dispatcher::case_ptr(uint64_t request_id) {
  auto it = std::lower_bound(state_.cases.begin(), state_.cases.end(), request_id,
                             [](const RequestCase& c, uint64_t id) { return c.request_id < id; });
  return it != state_.cases.end() && it->request_id == request_id ? &*it : nullptr;
}

uint64_t Dispatcher::open_case(const std::string& message_id, const std::string& group_id, const std::string& seeker_id,
                               const ParsedRequest& request, bool fire_first_stage) {
  std::unique_lock lock(mu_);
  RequestCase c;
  c.request_id = state_.next_request_id++;
  c.message_id = message_id;
  c.group_id = group_id;
  c.seeker_id = seeker_id;
  c.request = canonicalize(request);
  c.created_at = clock_.now();
  c.deadline = resolve_deadline(c.request, c.created_at);
  c.depth = urgency_depth(c);
  c.anchor = gazetteer_.anchor(c.request);
  if (!c.anchor) {
    c.operator_attention = true;
    c.attention_reason = "location not in gazetteer";
  }
  state_.cases.push_back(c);
  by_message_[message_id] = c.request_id;
  auto& stored = state_.cases.back();
  if (stored.attention_reason.size())
    emit({EventKind::operator_attention, stored.request_id, std::nullopt, "operator", 0, stored.created_at,
          "request #" + std::to_string(stored.request_id) + ": " + stored.attention_reason});
  if (fire_first_stage) notify_stage_locked(stored);
  return stored.request_id;
}

std::optional<uint64_t> Dispatcher::case_for_message(std::string_view message_id) const {
  std::shared_lock lock(mu_);
  const auto it = by_message_.find(message_id);
  if (it == by_message_.end()) return std::nullopt;
  return it->second;
}

std::optional<RequestCase> Dispatcher::find_case(uint64_t request_id) const {
  std::shared_lock lock(mu_);
  auto* c = const_cast<Dispatcher*>(this)->case_ptr(request_id);
  if (!c) return std::nullopt;
  return *c;
}

std::vector<LedgerEntry> Dispatcher::ledger_for(uint64_t request_id) const {
  std::shared_lock lock(mu_);
  std::vector<LedgerEntry> out;
  for (const auto& e : state_.ledger)
    if (e.request_id == request_id) out.push_back(e);
  return out;
}

std::vector<LedgerEntry> Dispatcher::notify_stage(uint64_t request_id) {
  std::unique_lock lock(mu_);
  auto* c = case_ptr(request_id);
  if (!c) throw Error("unknown request " + std::to_string(request_id));
  return notify_stage_locked(*c);
}

std::vector<LedgerEntry> Dispatcher::notify_stage_locked(RequestCase& c) {
  std::vector<LedgerEntry> fired;
  if (c.status != CaseStatus::open || c.stages_fired >= c.depth || c.donors_exhausted) return fired;
  const Timestamp now = clock_.now();
  std::vector<uint64_t> already;
  for (const auto& e : state_.ledger)
    if (e.request_id == c.request_id) already.push_back(e.donor_id);
  std::vector<DonorRecord> batch;
  for (auto& d : eligible_donors(c, state_.donors, now, cfg_.eligibility_days)) {
    if (std::find(already.begin(), already.end(), d.donor_id) != already.end()) continue;
    batch.push_back(std::move(d));
    if (batch.size() == cfg_.stage_size) break;
  }
  if (batch.empty()) {
    c.donors_exhausted = true;
    if (c.stages_fired == 0) {
      c.operator_attention = true;
      c.attention_reason = "no eligible donors";
      emit({EventKind::operator_attention, c.request_id, std::nullopt, "operator", 0, now,
            "request #" + std::to_string(c.request_id) + ": no eligible donors"});
    }
    return fired;
  }
  ++c.stages_fired;
  c.stage_started_at = now;
  const auto& r = c.request;
  std::string where = !r.hospital_name.empty() ? r.hospital_name : r.location;
  std::vector<std::string> numbers;
  for (const auto& contact : r.contacts) numbers.insert(numbers.end(), contact.contact_numbers.begin(), contact.contact_numbers.end());
  for (const auto& d : batch) {
    LedgerEntry e{c.request_id, d.donor_id, c.stages_fired, now, DonorResponse::none, std::nullopt, false};
    state_.ledger.push_back(e);
    fired.push_back(e);
    std::string text = r.blood_group + " blood needed";
    if (!r.bags_needed.empty()) text += ", " + r.bags_needed + " bag(s)";
    if (!where.empty()) text += " at " + where;
    if (!numbers.empty()) text += ". Contact " + join(numbers, ", ");
    text += ". Reply yes or no to request #" + std::to_string(c.request_id) + ".";
    emit({EventKind::donor_alert, c.request_id, d.donor_id, d.platform_id, c.stages_fired, now, std::move(text)});
  }
  return fired;
}

bool Dispatcher::stage_all_negative(const RequestCase& c) const {
  bool any = false;
  for (const auto& e : state_.ledger) {
    if (e.request_id != c.request_id || e.stage != c.stages_fired) continue;
    any = true;
    if (e.response != DonorResponse::negative) return false;
  }
  return any;
}

void Dispatcher::close_case(RequestCase& c, CaseStatus status, std::string_view reason) {
  if (is_terminal(c.status)) return;
  c.status = status;
  const Timestamp now = clock_.now();
  for (auto& e : state_.ledger) {
    if (e.request_id != c.request_id || e.resolution_notified) continue;
    e.resolution_notified = true;
    std::string platform;
    for (const auto& d : state_.donors)
      if (d.donor_id == e.donor_id) platform = d.platform_id;
    emit({EventKind::resolution_notice, c.request_id, e.donor_id, platform, e.stage, now,
          "Request #" + std::to_string(c.request_id) + " is closed (" + std::string(reason) + "). Thank you."});
  }
}

CaseStatus Dispatcher::handle_response(uint64_t request_id, uint64_t donor_id, bool affirmative) {
  std::unique_lock lock(mu_);
  auto* c = case_ptr(request_id);
  auto entry = std::find_if(state_.ledger.begin(), state_.ledger.end(), [&](const LedgerEntry& e) {
    return e.request_id == request_id && e.donor_id == donor_id;
  });
  if (!c || entry == state_.ledger.end())
    throw Error("no notification for request " + std::to_string(request_id) + " and donor " + std::to_string(donor_id));
  const Timestamp now = clock_.now();
  if (entry->response == DonorResponse::none) {
    entry->response = affirmative ? DonorResponse::affirmative : DonorResponse::negative;
    entry->responded_at = now;
  }
  if (c->status != CaseStatus::open) return c->status;
  if (affirmative) {
    std::string donor_platform;
    for (const auto& d : state_.donors)
      if (d.donor_id == donor_id) donor_platform = d.platform_id;
    emit({EventKind::seeker_update, request_id, donor_id, c->seeker_id, entry->stage, now,
          "A donor (" + donor_platform + ") agreed to help with request #" + std::to_string(request_id) + "."});
    close_case(*c, CaseStatus::fulfilled, "fulfilled");
  } else if (stage_all_negative(*c)) {
    notify_stage_locked(*c);
  }
  return c->status;
}

EditStatus Dispatcher::handle_edit(std::string_view message_id, std::string_view new_text,
                                   const std::optional<ParseOutcome>& outcome) {
  std::unique_lock lock(mu_);
  const auto it = by_message_.find(message_id);
  if (it == by_message_.end()) return EditStatus::unknown_message;
  auto* c = case_ptr(it->second);
  if (has_managed_marker(new_text)) {
    if (is_terminal(c->status)) return EditStatus::already_resolved;
    close_case(*c, CaseStatus::resolved_externally, "managed");
    return EditStatus::resolved_externally;
  }
  if (is_terminal(c->status)) return EditStatus::unchanged;
  if (!outcome) return EditStatus::unchanged;
  if (!outcome->is_request()) return EditStatus::not_a_request;
  const auto updated = canonicalize(*outcome->request);
  if (updated == c->request) return EditStatus::unchanged;
  c->request = updated;
  c->deadline = resolve_deadline(c->request, c->created_at);
  c->depth = std::max(urgency_depth(*c), c->stages_fired);
  if (auto anchor = gazetteer_.anchor(c->request)) c->anchor = anchor;
  return EditStatus::updated;
}

void Dispatcher::tick() {
  std::unique_lock lock(mu_);
  const Timestamp now = clock_.now();
  for (auto& c : state_.cases) {
    if (c.status != CaseStatus::open) continue;
    const Timestamp expiry = c.deadline ? *c.deadline : c.created_at + cfg_.case_ttl_seconds;
    if (now >= expiry) {
      close_case(c, CaseStatus::expired, "expired");
      continue;
    }
    if (c.stages_fired > 0 && now >= c.stage_started_at + cfg_.stage_timeout_seconds) notify_stage_locked(c);
  }
}

std::optional<Timestamp> Dispatcher::next_due() const {
  std::shared_lock lock(mu_);
  std::optional<Timestamp> due;
  auto consider = [&](Timestamp t) {
    if (!due || t < *due) due = t;
  };
  for (const auto& c : state_.cases) {
    if (c.status != CaseStatus::open) continue;
    consider(c.deadline ? *c.deadline : c.created_at + cfg_.case_ttl_seconds);
    if (c.stages_fired > 0 && c.stages_fired < c.depth && !c.donors_exhausted)
      consider(c.stage_started_at + cfg_.stage_timeout_seconds);
  }
  return due;
}

void Dispatcher::emit(OutboundEvent e) { outbox_.push_back(std::move(e)); }

std::vector<OutboundEvent> Dispatcher::drain_events() {
  std::unique_lock lock(mu_);
  std::vector<OutboundEvent> out(std::make_move_iterator(outbox_.begin()), std::make_move_iterator(outbox_.end()));
  outbox_.clear();
  return out;
}

DispatchState Dispatcher::snapshot() const {
  std::shared_lock lock(mu_);
  return state_;
}

void Dispatcher::load(DispatchState state) {
  std::unique_lock lock(mu_);
  std::sort(state.donors.begin(), state.donors.end(),
            [](const DonorRecord& a, const DonorRecord& b) { return a.donor_id < b.donor_id; });
  std::sort(state.cases.begin(), state.cases.end(),
            [](const RequestCase& a, const RequestCase& b) { return a.request_id < b.request_id; });
  state_ = std::move(state);
  by_platform_.clear();
  by_message_.clear();
  for (const auto& d : state_.donors) by_platform_[d.platform_id] = d.donor_id;
  for (const auto& c : state_.cases) by_message_[c.message_id] = c.request_id;
  outbox_.clear();
}

}  // namespace cbrs
