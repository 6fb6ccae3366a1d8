#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <set>

#include "cbrs/dispatch.hpp"
#include "test_support.hpp"

using namespace cbrs;
using cbrs::testing::TempDir;

namespace {

constexpr GeoPoint kDhaka{23.8103, 90.4125};
const Timestamp kStart = *parse_timestamp("2025-03-10T08:00:00Z");

double cosine_law_km(GeoPoint a, GeoPoint b) {
  const double r = std::numbers::pi / 180.0;
  const double c = std::sin(a.lat * r) * std::sin(b.lat * r) +
                   std::cos(a.lat * r) * std::cos(b.lat * r) * std::cos((b.lon - a.lon) * r);
  return kEarthRadiusKm * std::acos(std::clamp(c, -1.0, 1.0));
}

GeoPoint random_point(Rng& rng) { return {rng.uniform(-89.0, 89.0), rng.uniform(-180.0, 180.0)}; }

// Point due north of `from` at the given distance.
GeoPoint north_of(GeoPoint from, double km) {
  return {from.lat + km / (kEarthRadiusKm * std::numbers::pi / 180.0), from.lon};
}

DonorRecord donor(const std::string& pid, const std::string& group, GeoPoint at, const std::string& last = "") {
  DonorRecord d;
  d.platform_id = pid;
  d.blood_group = group;
  d.latitude = at.lat;
  d.longitude = at.lon;
  d.last_donation_date = last;
  return d;
}

ParsedRequest request(const std::string& group, const std::string& day = "", const std::string& time = "") {
  ParsedRequest r;
  r.blood_group = group;
  r.location_markers = {"Dhaka"};
  r.hospital_name = "Square Hospital";
  r.probable_day = day;
  r.probable_time = time;
  r.contacts = {{"", {"01711223344"}, ""}};
  return r;
}

struct Fixture {
  LogicalClock clock{kStart};
  Gazetteer gazetteer = [] {
    Gazetteer g;
    g.add("Dhaka", kDhaka);
    return g;
  }();
  Dispatcher dispatch{DispatchConfig{}, gazetteer, clock};

  void add_donors(size_t n, const std::string& group) {
    for (size_t i = 0; i < n; ++i)
      dispatch.register_donor(donor("p" + std::to_string(i + 1), group, north_of(kDhaka, 1.0 + static_cast<double>(i))));
  }
  std::vector<int> stage_sizes(uint64_t id) const {
    std::vector<int> sizes;
    for (const auto& e : dispatch.ledger_for(id)) {
      if (static_cast<size_t>(e.stage) > sizes.size()) sizes.resize(static_cast<size_t>(e.stage), 0);
      ++sizes[static_cast<size_t>(e.stage) - 1];
    }
    return sizes;
  }
  size_t count(EventKind kind, const std::vector<OutboundEvent>& events) const {
    return static_cast<size_t>(std::count_if(events.begin(), events.end(), [&](const auto& e) { return e.kind == kind; }));
  }
};

}  // namespace

TEST(Dates, ParseAndFormat) {
  EXPECT_EQ(parse_date("1970-01-02"), 1);
  EXPECT_EQ(format_date(*parse_date("2025-03-10")), "2025-03-10");
  EXPECT_FALSE(parse_date("2025-02-30"));
  EXPECT_FALSE(parse_date("yesterday"));
  EXPECT_EQ(parse_timestamp("1970-01-01T00:01:00Z"), 60);
  EXPECT_EQ(parse_timestamp("42"), 42);
  EXPECT_EQ(format_timestamp(kStart), "2025-03-10T08:00:00Z");
}

TEST(Haversine, Examples) {
  EXPECT_EQ(haversine_km(kDhaka, kDhaka), 0.0);
  EXPECT_NEAR(haversine_km({0, 0}, {0, 1}), 2 * std::numbers::pi * kEarthRadiusKm / 360.0, 1e-9);
  EXPECT_NEAR(haversine_km({0, 0}, {0, 1}), 111.19, 0.05);
  const GeoPoint chittagong{22.3569, 91.7832};
  const double h = haversine_km(kDhaka, chittagong);
  EXPECT_NEAR(h, cosine_law_km(kDhaka, chittagong), 0.005 * h);
}

TEST(Haversine, SymmetricAndTriangle) {
  Rng rng(51);
  for (int i = 0; i < 1000; ++i) {
    const auto a = random_point(rng), b = random_point(rng), c = random_point(rng);
    EXPECT_NEAR(haversine_km(a, b), haversine_km(b, a), 1e-9);
    EXPECT_LE(haversine_km(a, c), haversine_km(a, b) + haversine_km(b, c) + 1e-9);
  }
}

TEST(Gazetteer, LookupAndAnchor) {
  const auto g = Gazetteer::load(cbrs::testing::data_dir() / "gazetteer.tsv");
  EXPECT_GT(g.size(), 10u);
  EXPECT_TRUE(g.lookup("dhaka"));
  EXPECT_TRUE(g.lookup("  DHAKA "));
  EXPECT_TRUE(g.lookup("ঢাকা"));
  EXPECT_FALSE(g.lookup("Atlantis"));
  ParsedRequest r;
  r.location_markers = {"Atlantis", "Delhi"};
  r.location = "Dhaka";
  EXPECT_EQ(g.anchor(r), g.lookup("Delhi"));
  r.location_markers.clear();
  EXPECT_EQ(g.anchor(r), g.lookup("Dhaka"));
}

TEST(Donors, RegisterRoundTripAndUpsert) {
  Fixture f;
  const auto id = f.dispatch.register_donor(donor("tg:1", "o-", kDhaka, "2024-12-01"));
  const auto d = f.dispatch.donor(id);
  ASSERT_TRUE(d);
  EXPECT_EQ(d->platform_id, "tg:1");
  EXPECT_EQ(d->blood_group, "O-");
  EXPECT_EQ(d->latitude, kDhaka.lat);
  EXPECT_EQ(d->longitude, kDhaka.lon);
  EXPECT_EQ(d->last_donation_date, "2024-12-01");
  EXPECT_EQ(d->registered_at, kStart);
  f.clock.advance(100);
  EXPECT_EQ(f.dispatch.register_donor(donor("tg:1", "O-", {1, 1})), id);
  EXPECT_EQ(f.dispatch.donor(id)->registered_at, kStart);
  EXPECT_EQ(f.dispatch.donor(id)->latitude, 1.0);
  EXPECT_EQ(f.dispatch.donor_by_platform("tg:1")->donor_id, id);
}

TEST(Donors, UpdateOnlyTouchesPatchedField) {
  Fixture f;
  const auto id = f.dispatch.register_donor(donor("tg:2", "A+", kDhaka));
  const auto before = *f.dispatch.donor(id);
  DonorPatch patch;
  patch.last_donation_date = "2025-01-15";
  const auto after = f.dispatch.update_donor(id, patch);
  auto expected = before;
  expected.last_donation_date = "2025-01-15";
  EXPECT_EQ(after, expected);
}

TEST(Donors, InvalidFieldsAreRejectedWithDiagnostics) {
  Fixture f;
  try {
    f.dispatch.register_donor(donor("tg:3", "C+", {91.0, 200.0}, "someday"));
    FAIL();
  } catch (const ValidationError& e) {
    std::set<std::string> fields;
    for (const auto& i : e.issues()) fields.insert(i.field);
    EXPECT_EQ(fields, (std::set<std::string>{"blood_group", "latitude", "longitude", "last_donation_date"}));
  }
  const auto id = f.dispatch.register_donor(donor("tg:4", "A+", kDhaka));
  DonorPatch bad;
  bad.latitude = -95.0;
  EXPECT_THROW(f.dispatch.update_donor(id, bad), ValidationError);
  EXPECT_EQ(f.dispatch.donor(id)->latitude, kDhaka.lat);
}

TEST(Eligibility, Examples) {
  RequestCase c;
  c.request.blood_group = "O-";
  c.anchor = kDhaka;
  std::vector<DonorRecord> reg = {donor("a", "A+", kDhaka)};
  reg[0].donor_id = 1;
  EXPECT_TRUE(eligible_donors(c, reg, kStart).empty());

  reg = {donor("far", "O-", north_of(kDhaka, 5)), donor("near", "O-", north_of(kDhaka, 1))};
  reg[0].donor_id = 1;
  reg[1].donor_id = 2;
  const auto ranked = eligible_donors(c, reg, kStart);
  ASSERT_EQ(ranked.size(), 2u);
  EXPECT_EQ(ranked[0].platform_id, "near");

  // 2025-03-10 minus 30 days.
  const auto recent = donor("recent", "O-", kDhaka, format_date(*parse_date("2025-03-10") - 30));
  const auto rested = donor("rested", "O-", kDhaka, format_date(*parse_date("2025-03-10") - 90));
  EXPECT_FALSE(donor_eligible(recent, "O-", kStart, 90));
  EXPECT_TRUE(donor_eligible(rested, "O-", kStart, 90));
  EXPECT_FALSE(donor_eligible(rested, "O+", kStart, 90));

  c.request.blood_group = "";
  EXPECT_TRUE(eligible_donors(c, reg, kStart).empty());
}

TEST(Eligibility, TotalOrderAndRecencyFallback) {
  Rng rng(52);
  std::vector<DonorRecord> reg;
  for (uint64_t i = 1; i <= 40; ++i) {
    auto d = donor("d" + std::to_string(i), "B+", north_of(kDhaka, static_cast<double>(rng.below(5))));
    d.donor_id = i;
    d.registered_at = kStart - static_cast<Timestamp>(rng.below(4));
    reg.push_back(d);
  }
  RequestCase c;
  c.request.blood_group = "B+";
  c.anchor = kDhaka;
  const auto a = eligible_donors(c, reg, kStart);
  auto shuffled = reg;
  rng.shuffle(shuffled);
  EXPECT_EQ(eligible_donors(c, shuffled, kStart), a);
  for (size_t i = 1; i < a.size(); ++i) {
    const double d0 = haversine_km(kDhaka, {a[i - 1].latitude, a[i - 1].longitude});
    const double d1 = haversine_km(kDhaka, {a[i].latitude, a[i].longitude});
    EXPECT_TRUE(d0 < d1 || (d0 == d1 && std::tie(a[i - 1].registered_at, a[i - 1].donor_id) <
                                            std::tie(a[i].registered_at, a[i].donor_id)));
  }
  c.anchor.reset();
  const auto by_recency = eligible_donors(c, shuffled, kStart);
  for (size_t i = 1; i < by_recency.size(); ++i) EXPECT_GE(by_recency[i - 1].registered_at, by_recency[i].registered_at);
}

TEST(Urgency, Examples) {
  RequestCase c;
  c.created_at = kStart;
  c.request.probable_day = "today";
  EXPECT_EQ(urgency_depth(c), 3);
  c.request.probable_day = "";
  EXPECT_EQ(urgency_depth(c), 1);
  c.request.probable_day = "tomorrow";
  EXPECT_EQ(urgency_depth(c), 2);
  c.request.probable_day = "";
  c.request.probable_time = "before 18:00";
  EXPECT_EQ(urgency_depth(c), 3);
  c.request.probable_time = "";
  c.request.probable_day = "11/03";
  EXPECT_EQ(urgency_depth(c), 2);
  c.request.probable_day = "25/03";
  EXPECT_EQ(urgency_depth(c), 1);
  c.request.probable_day = "0 days later";
  EXPECT_EQ(urgency_depth(c), 3);
}

TEST(Deadline, Resolution) {
  ParsedRequest r;
  const Timestamp midnight = *parse_timestamp("2025-03-10T00:00:00Z");
  r.probable_day = "today";
  EXPECT_EQ(resolve_deadline(r, kStart), midnight + 86400);
  r.probable_time = "before 18:00";
  EXPECT_EQ(resolve_deadline(r, kStart), midnight + 18 * 3600);
  r.probable_day = "";
  r.probable_time = "07:00";
  EXPECT_EQ(resolve_deadline(r, kStart), midnight + 86400 + 7 * 3600);
  r.probable_time = "in 5 hours";
  EXPECT_EQ(resolve_deadline(r, kStart), kStart + 5 * 3600);
  r.probable_time = "";
  r.probable_day = "2 days later";
  EXPECT_EQ(resolve_deadline(r, kStart), midnight + 3 * 86400);
  r.probable_day = "";
  EXPECT_FALSE(resolve_deadline(r, kStart));
}

TEST(ManagedMarker, Lexicon) {
  EXPECT_TRUE(has_managed_marker("Update: Managed, Emergency blood needed"));
  EXPECT_TRUE(has_managed_marker("blood COLLECTED, thanks"));
  EXPECT_TRUE(has_managed_marker("রক্ত ম্যানেজ হয়েছে"));
  EXPECT_TRUE(has_managed_marker("rokto manage hoye gese"));
  EXPECT_FALSE(has_managed_marker("Emergency blood needed at Square Hospital"));
}

TEST(Staging, TwelveDonorsAtDepthThree) {
  Fixture f;
  f.add_donors(12, "O+");
  const auto id = f.dispatch.open_case("m1", "g", "seeker", request("O+", "today"));
  EXPECT_EQ(f.dispatch.find_case(id)->depth, 3);
  EXPECT_EQ(f.stage_sizes(id), (std::vector<int>{5}));
  f.clock.advance(599);
  f.dispatch.tick();
  EXPECT_EQ(f.stage_sizes(id), (std::vector<int>{5}));
  f.clock.advance(1);
  f.dispatch.tick();
  EXPECT_EQ(f.stage_sizes(id), (std::vector<int>{5, 5}));
  f.clock.advance(600);
  f.dispatch.tick();
  EXPECT_EQ(f.stage_sizes(id), (std::vector<int>{5, 5, 2}));
  f.clock.advance(600);
  f.dispatch.tick();
  EXPECT_EQ(f.stage_sizes(id), (std::vector<int>{5, 5, 2}));
  // Nearest donors go first.
  const auto ledger = f.dispatch.ledger_for(id);
  for (size_t i = 0; i < ledger.size(); ++i) EXPECT_EQ(ledger[i].donor_id, i + 1);
}

TEST(Staging, DepthLimitsStages) {
  Fixture f;
  f.add_donors(12, "O+");
  const auto id = f.dispatch.open_case("m1", "g", "seeker", request("O+"));
  EXPECT_EQ(f.dispatch.find_case(id)->depth, 1);
  f.clock.advance(600);
  f.dispatch.tick();
  EXPECT_EQ(f.stage_sizes(id), (std::vector<int>{5}));
}

TEST(Staging, NoEligibleDonorsFlagsOperator) {
  Fixture f;
  f.add_donors(3, "A+");
  const auto id = f.dispatch.open_case("m1", "g", "seeker", request("AB-", "today"));
  EXPECT_TRUE(f.dispatch.ledger_for(id).empty());
  const auto c = *f.dispatch.find_case(id);
  EXPECT_TRUE(c.operator_attention);
  EXPECT_TRUE(c.donors_exhausted);
  EXPECT_EQ(f.count(EventKind::operator_attention, f.dispatch.drain_events()), 1u);
}

TEST(Staging, NeverRenotifies) {
  Fixture f;
  f.add_donors(3, "A+");
  const auto id = f.dispatch.open_case("m1", "g", "seeker", request("A+", "today"));
  EXPECT_EQ(f.dispatch.ledger_for(id).size(), 3u);
  EXPECT_TRUE(f.dispatch.notify_stage(id).empty());
  f.clock.advance(700);
  f.dispatch.tick();
  EXPECT_EQ(f.dispatch.ledger_for(id).size(), 3u);
}

TEST(Responses, FirstAffirmativeFulfills) {
  Fixture f;
  f.add_donors(12, "O+");
  const auto id = f.dispatch.open_case("m1", "g", "seeker", request("O+", "today"));
  f.dispatch.drain_events();
  EXPECT_EQ(f.dispatch.handle_response(id, 2, true), CaseStatus::fulfilled);
  auto events = f.dispatch.drain_events();
  EXPECT_EQ(f.count(EventKind::seeker_update, events), 1u);
  EXPECT_EQ(f.count(EventKind::resolution_notice, events), 5u);
  for (int i = 0; i < 5; ++i) {
    f.clock.advance(600);
    f.dispatch.tick();
  }
  EXPECT_EQ(f.dispatch.ledger_for(id).size(), 5u);
  EXPECT_EQ(f.count(EventKind::donor_alert, f.dispatch.drain_events()), 0u);
  // A late yes is recorded without a state change.
  EXPECT_EQ(f.dispatch.handle_response(id, 3, true), CaseStatus::fulfilled);
  EXPECT_EQ(f.dispatch.ledger_for(id)[2].response, DonorResponse::affirmative);
  EXPECT_TRUE(f.dispatch.drain_events().empty());
}

TEST(Responses, AllNegativeStageAdvancesImmediately) {
  Fixture f;
  f.add_donors(12, "O+");
  const auto id = f.dispatch.open_case("m1", "g", "seeker", request("O+", "today"));
  for (uint64_t d = 1; d <= 4; ++d) {
    f.clock.advance(10);
    EXPECT_EQ(f.dispatch.handle_response(id, d, false), CaseStatus::open);
  }
  EXPECT_EQ(f.stage_sizes(id), (std::vector<int>{5}));
  f.clock.advance(10);
  f.dispatch.handle_response(id, 5, false);
  EXPECT_EQ(f.stage_sizes(id), (std::vector<int>{5, 5}));
  EXPECT_EQ(f.dispatch.find_case(id)->stage_started_at, kStart + 50);
}

TEST(Responses, UnknownPairRejected) {
  Fixture f;
  f.add_donors(7, "O+");
  const auto id = f.dispatch.open_case("m1", "g", "seeker", request("O+", "today"));
  EXPECT_THROW(f.dispatch.handle_response(id, 7, true), Error);
  EXPECT_THROW(f.dispatch.handle_response(999, 1, true), Error);
}

TEST(Edits, ManagedEditFansOutOnce) {
  Fixture f;
  f.add_donors(7, "B+");
  const auto id = f.dispatch.open_case("m1", "g", "seeker", request("B+", "today"));
  f.clock.advance(600);
  f.dispatch.tick();
  f.dispatch.drain_events();
  const std::string text = "Update: Managed, Emergency blood needed";
  EXPECT_EQ(f.dispatch.handle_edit("m1", text, std::nullopt), EditStatus::resolved_externally);
  auto events = f.dispatch.drain_events();
  std::multiset<uint64_t> notified;
  for (const auto& e : events)
    if (e.kind == EventKind::resolution_notice) notified.insert(*e.donor_id);
  EXPECT_EQ(notified, (std::multiset<uint64_t>{1, 2, 3, 4, 5, 6, 7}));
  for (const auto& e : f.dispatch.ledger_for(id)) EXPECT_TRUE(e.resolution_notified);
  EXPECT_EQ(f.dispatch.handle_edit("m1", text, std::nullopt), EditStatus::already_resolved);
  EXPECT_TRUE(f.dispatch.drain_events().empty());
  EXPECT_EQ(f.dispatch.find_case(id)->status, CaseStatus::resolved_externally);
}

TEST(Edits, ContactEditUpdatesInPlace) {
  Fixture f;
  f.add_donors(3, "B+");
  const auto id = f.dispatch.open_case("m1", "g", "seeker", request("B+", "today"));
  f.dispatch.drain_events();
  auto changed = request("B+", "today");
  changed.contacts[0].contact_numbers = {"01899887766"};
  EXPECT_EQ(f.dispatch.handle_edit("m1", "B+ blood today, call 01899887766", ParseOutcome::positive(changed)),
            EditStatus::updated);
  EXPECT_EQ(f.dispatch.find_case(id)->request.contacts[0].contact_numbers[0], "01899887766");
  EXPECT_EQ(f.dispatch.find_case(id)->status, CaseStatus::open);
  EXPECT_TRUE(f.dispatch.drain_events().empty());
  EXPECT_EQ(f.dispatch.handle_edit("m1", "same", ParseOutcome::positive(changed)), EditStatus::unchanged);
  EXPECT_EQ(f.dispatch.handle_edit("nope", "x", std::nullopt), EditStatus::unknown_message);
}

TEST(Expiry, CaseExpiresAtDeadlineWithNotices) {
  Fixture f;
  f.add_donors(2, "A-");
  const auto id = f.dispatch.open_case("m1", "g", "seeker", request("A-", "today", "before 10:00"));
  EXPECT_EQ(*f.dispatch.next_due(), kStart + 600);
  f.clock.set(*parse_timestamp("2025-03-10T10:00:00Z"));
  f.dispatch.drain_events();
  f.dispatch.tick();
  EXPECT_EQ(f.dispatch.find_case(id)->status, CaseStatus::expired);
  EXPECT_EQ(f.count(EventKind::resolution_notice, f.dispatch.drain_events()), 2u);
  EXPECT_FALSE(f.dispatch.next_due());
}

TEST(Expiry, TtlWithoutDeadline) {
  Fixture f;
  f.add_donors(1, "A-");
  const auto id = f.dispatch.open_case("m1", "g", "seeker", request("A-"));
  f.clock.advance(86400 - 1);
  f.dispatch.tick();
  EXPECT_EQ(f.dispatch.find_case(id)->status, CaseStatus::open);
  f.clock.advance(1);
  f.dispatch.tick();
  EXPECT_EQ(f.dispatch.find_case(id)->status, CaseStatus::expired);
}

TEST(Snapshot, PersistRestoreRoundTrip) {
  TempDir dir("snap");
  Fixture f;
  f.add_donors(7, "O+");
  f.dispatch.register_donor(donor("x", "AB-", {-10, 10}, "2024-01-01"));
  const auto id = f.dispatch.open_case("m1", "g", "seeker", request("O+", "today"));
  f.dispatch.handle_response(id, 1, false);
  f.dispatch.open_case("m2", "g", "seeker", request("AB-"));
  const auto state = f.dispatch.snapshot();
  persist(state, dir / "state.jsonl");
  EXPECT_EQ(restore(dir / "state.jsonl"), state);
  EXPECT_FALSE(std::filesystem::exists(dir / "state.jsonl.tmp"));

  Fixture g;
  g.dispatch.load(restore(dir / "state.jsonl"));
  EXPECT_EQ(g.dispatch.snapshot(), state);
  EXPECT_EQ(g.dispatch.case_for_message("m1"), id);
}

TEST(Snapshot, EmptyState) {
  TempDir dir("snap");
  persist(DispatchState{}, dir / "empty.jsonl");
  EXPECT_EQ(restore(dir / "empty.jsonl"), DispatchState{});
}

TEST(Snapshot, CrashBeforeRenameKeepsLastComplete) {
  TempDir dir("snap");
  Fixture f;
  f.add_donors(2, "O+");
  const auto first = f.dispatch.snapshot();
  persist(first, dir / "s.jsonl");
  f.add_donors(5, "O+");
  f.dispatch.open_case("m1", "g", "seeker", request("O+"));
  EXPECT_THROW(persist(f.dispatch.snapshot(), dir / "s.jsonl", [] { throw std::runtime_error("crash"); }),
               std::runtime_error);
  EXPECT_EQ(restore(dir / "s.jsonl"), first);
  persist(f.dispatch.snapshot(), dir / "s.jsonl");
  EXPECT_EQ(restore(dir / "s.jsonl"), f.dispatch.snapshot());
}

TEST(Snapshot, CorruptOrTruncatedFailsLoudly) {
  Fixture f;
  f.add_donors(3, "O+");
  f.dispatch.open_case("m1", "g", "seeker", request("O+", "today"));
  const auto text = serialize_snapshot(f.dispatch.snapshot());
  EXPECT_EQ(parse_snapshot(text), f.dispatch.snapshot());
  EXPECT_THROW(parse_snapshot(text.substr(0, text.size() / 2)), DataError);
  EXPECT_THROW(parse_snapshot(""), DataError);
  auto broken = text;
  broken.replace(broken.find("\"O+\""), 4, "\"Q+\"");
  EXPECT_THROW(parse_snapshot(broken), DataError);
  const auto last_newline = text.rfind('\n', text.size() - 2);
  EXPECT_THROW(parse_snapshot(text.substr(0, last_newline + 1)), DataError);
  EXPECT_THROW(restore("/nonexistent/snap.jsonl"), DataError);
}
