#pragma once

#include <nlohmann/json.hpp>

#include <atomic>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "cbrs/error.hpp"
#include "cbrs/schema.hpp"

namespace cbrs {

// Seconds since the Unix epoch, UTC.
using Timestamp = int64_t;

class Clock {
 public:
  virtual ~Clock() = default;
  virtual Timestamp now() const = 0;
};

class SystemClock : public Clock {
 public:
  Timestamp now() const override;
};

class LogicalClock : public Clock {
 public:
  explicit LogicalClock(Timestamp start = 0) : t_(start) {}
  Timestamp now() const override { return t_.load(); }
  void set(Timestamp t) { t_.store(t); }
  void advance(int64_t seconds) { t_.fetch_add(seconds); }

 private:
  std::atomic<Timestamp> t_;
};

// "YYYY-MM-DD" -> days since 1970-01-01.
std::optional<int64_t> parse_date(std::string_view iso);
std::string format_date(int64_t days);
// "YYYY-MM-DDTHH:MM:SSZ" (or a plain integer) -> Timestamp.
std::optional<Timestamp> parse_timestamp(std::string_view iso);
std::string format_timestamp(Timestamp t);

struct GeoPoint {
  double lat = 0.0;
  double lon = 0.0;
  friend bool operator==(const GeoPoint&, const GeoPoint&) = default;
};

inline constexpr double kEarthRadiusKm = 6371.0;

double haversine_km(GeoPoint a, GeoPoint b);
bool valid_coordinates(GeoPoint p);

struct DonorRecord {
  uint64_t donor_id = 0;
  std::string platform_id;
  std::string blood_group;
  double latitude = 0.0;
  double longitude = 0.0;
  std::string last_donation_date;  // YYYY-MM-DD, empty if never donated
  Timestamp registered_at = 0;
  friend bool operator==(const DonorRecord&, const DonorRecord&) = default;
};

struct DonorPatch {
  std::optional<std::string> blood_group;
  std::optional<double> latitude;
  std::optional<double> longitude;
  std::optional<std::string> last_donation_date;
};

struct FieldIssue {
  std::string field;
  std::string reason;
};

class ValidationError : public Error {
 public:
  explicit ValidationError(std::vector<FieldIssue> issues);
  const std::vector<FieldIssue>& issues() const { return issues_; }

 private:
  std::vector<FieldIssue> issues_;
};

// marker<TAB>lat<TAB>lon per line; markers match case-insensitively.
class Gazetteer {
 public:
  static Gazetteer load(const std::filesystem::path& path);
  void add(std::string_view marker, GeoPoint p);
  std::optional<GeoPoint> lookup(std::string_view marker) const;
  // First location marker that resolves, then location, then hospital_name.
  std::optional<GeoPoint> anchor(const ParsedRequest& r) const;
  size_t size() const { return entries_.size(); }

 private:
  std::map<std::string, GeoPoint> entries_;
};

enum class CaseStatus { open, fulfilled, resolved_externally, expired };
std::string_view to_string(CaseStatus s);
std::optional<CaseStatus> parse_case_status(std::string_view s);
bool is_terminal(CaseStatus s);

struct RequestCase {
  uint64_t request_id = 0;
  std::string message_id;
  std::string group_id;
  std::string seeker_id;
  ParsedRequest request;
  std::optional<Timestamp> deadline;
  CaseStatus status = CaseStatus::open;
  Timestamp created_at = 0;
  std::optional<GeoPoint> anchor;
  int depth = 1;
  int stages_fired = 0;
  Timestamp stage_started_at = 0;
  bool donors_exhausted = false;
  bool operator_attention = false;
  std::string attention_reason;
  friend bool operator==(const RequestCase&, const RequestCase&) = default;
};

enum class DonorResponse { none, affirmative, negative };
std::string_view to_string(DonorResponse r);

struct LedgerEntry {
  uint64_t request_id = 0;
  uint64_t donor_id = 0;
  int stage = 0;
  Timestamp notified_at = 0;
  DonorResponse response = DonorResponse::none;
  std::optional<Timestamp> responded_at;
  bool resolution_notified = false;
  friend bool operator==(const LedgerEntry&, const LedgerEntry&) = default;
};

enum class EventKind { donor_alert, seeker_update, resolution_notice, operator_attention };
std::string_view to_string(EventKind k);

struct OutboundEvent {
  EventKind kind = EventKind::donor_alert;
  uint64_t request_id = 0;
  std::optional<uint64_t> donor_id;
  std::string recipient;  // platform id, or "operator"
  int stage = 0;
  Timestamp at = 0;
  std::string text;
};

nlohmann::ordered_json to_json(const DonorRecord& d);
nlohmann::ordered_json to_json(const RequestCase& c);
nlohmann::ordered_json to_json(const LedgerEntry& e);
nlohmann::ordered_json to_json(const OutboundEvent& e);
DonorRecord donor_from_json(const nlohmann::json& j);

struct DispatchConfig {
  int eligibility_days = 90;
  size_t stage_size = 5;
  int64_t stage_timeout_seconds = 600;
  // Cases with no resolvable deadline expire this long after creation.
  int64_t case_ttl_seconds = 24 * 3600;
};

struct DispatchState {
  std::vector<DonorRecord> donors;  // ascending donor_id
  std::vector<RequestCase> cases;   // ascending request_id
  std::vector<LedgerEntry> ledger;  // notification order
  uint64_t next_donor_id = 1;
  uint64_t next_request_id = 1;
  friend bool operator==(const DispatchState&, const DispatchState&) = default;
};

// Versioned line-delimited JSON, written to a temp file and renamed into
// place. before_rename runs between the two (fault injection in tests).
void persist(const DispatchState& state, const std::filesystem::path& path,
             const std::function<void()>& before_rename = {});
// Throws DataError on any malformed or truncated snapshot.
DispatchState restore(const std::filesystem::path& path);
std::string serialize_snapshot(const DispatchState& state);
DispatchState parse_snapshot(std::string_view text);

// 3 for "today" or a "before HH:MM" time, 2 for anything due within 48
// hours of creation, 1 otherwise.
int urgency_depth(const RequestCase& c);
std::optional<Timestamp> resolve_deadline(const ParsedRequest& r, Timestamp created_at);

bool donor_eligible(const DonorRecord& d, std::string_view blood_group, Timestamp now, int eligibility_days);

// Matching, rested donors ordered by (distance, registered_at, donor_id);
// without an anchor, most recent registration first.
std::vector<DonorRecord> eligible_donors(const RequestCase& c, const std::vector<DonorRecord>& registry,
                                         Timestamp now, int eligibility_days = 90);

// True when the text announces that a request no longer needs donors.
bool has_managed_marker(std::string_view text);

enum class EditStatus {
  unknown_message,
  resolved_externally,
  already_resolved,
  updated,
  unchanged,
  not_a_request,
  case_created
};
std::string_view to_string(EditStatus s);

class Dispatcher {
 public:
  Dispatcher(DispatchConfig cfg, Gazetteer gazetteer, const Clock& clock);

  uint64_t register_donor(DonorRecord d);
  DonorRecord update_donor(uint64_t donor_id, const DonorPatch& patch);
  std::optional<DonorRecord> donor(uint64_t donor_id) const;
  std::optional<DonorRecord> donor_by_platform(std::string_view platform_id) const;

  // Creates the case and, unless fire_first_stage is false, fires stage 1.
  uint64_t open_case(const std::string& message_id, const std::string& group_id, const std::string& seeker_id,
                     const ParsedRequest& request, bool fire_first_stage = true);
  std::optional<uint64_t> case_for_message(std::string_view message_id) const;
  std::optional<RequestCase> find_case(uint64_t request_id) const;
  std::vector<LedgerEntry> ledger_for(uint64_t request_id) const;

  // Next stage of the case; empty when it is closed, at depth or out of donors.
  std::vector<LedgerEntry> notify_stage(uint64_t request_id);
  // Throws Error for an unknown (request, donor) pair.
  CaseStatus handle_response(uint64_t request_id, uint64_t donor_id, bool affirmative);
  // outcome is the re-classified edit; nullopt when re-classification failed.
  EditStatus handle_edit(std::string_view message_id, std::string_view new_text,
                         const std::optional<ParseOutcome>& outcome);
  // Fires due stages and expires overdue cases.
  void tick();
  // Earliest time at which tick() has work to do.
  std::optional<Timestamp> next_due() const;

  std::vector<OutboundEvent> drain_events();
  DispatchState snapshot() const;
  void load(DispatchState state);
  const DispatchConfig& config() const { return cfg_; }

 private:
  RequestCase* case_ptr(uint64_t request_id);
  std::vector<LedgerEntry> notify_stage_locked(RequestCase& c);
  void close_case(RequestCase& c, CaseStatus status, std::string_view reason);
  void emit(OutboundEvent e);
  bool stage_all_negative(const RequestCase& c) const;

  DispatchConfig cfg_;
  Gazetteer gazetteer_;
  const Clock& clock_;
  mutable std::shared_mutex mu_;
  DispatchState state_;
  std::map<std::string, uint64_t, std::less<>> by_platform_;
  std::map<std::string, uint64_t, std::less<>> by_message_;
  std::deque<OutboundEvent> outbox_;
};

}  // namespace cbrs
