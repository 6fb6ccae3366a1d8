#include "cbrs/gateway.hpp"

#include <openssl/evp.h>
#include <openssl/hmac.h>

#include <algorithm>
#include <cmath>
#include <regex>
#include <set>
#include <fstream>
#include <sstream>

#include "cbrs/unicode.hpp"

namespace cbrs {

std::string_view to_string(InboundKind k) {
  switch (k) {
    case InboundKind::message: return "message";
    case InboundKind::edit: return "edit";
    case InboundKind::command: return "command";
    case InboundKind::donor_response: return "donor_response";
  }
  return "message";
}

namespace {

std::string required_string(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_string()) throw DataError(std::string("field '") + key + "' must be a string");
  return j[key].get<std::string>();
}

std::string optional_string(const nlohmann::json& j, const char* key, std::string fallback = {}) {
  if (!j.contains(key) || j[key].is_null()) return fallback;
  if (!j[key].is_string()) throw DataError(std::string("field '") + key + "' must be a string");
  return j[key].get<std::string>();
}

}  // namespace

InboundEvent inbound_from_json(const nlohmann::json& j, InboundKind default_kind) {
  if (!j.is_object()) throw DataError("event must be a JSON object");
  InboundEvent ev;
  ev.kind = default_kind;
  if (j.contains("kind")) {
    const auto k = required_string(j, "kind");
    if (k == "message") ev.kind = InboundKind::message;
    else if (k == "edit") ev.kind = InboundKind::edit;
    else if (k == "command") ev.kind = InboundKind::command;
    else if (k == "donor_response") ev.kind = InboundKind::donor_response;
    else throw DataError("field 'kind' must be message, edit, command or donor_response");
  }
  ev.platform = optional_string(j, "platform", "sim");
  ev.group_id = optional_string(j, "group_id");
  ev.sender = optional_string(j, "sender");
  ev.message_id = optional_string(j, "message_id");
  ev.text = optional_string(j, "text");
  if (j.contains("timestamp")) {
    if (!j["timestamp"].is_number_integer()) throw DataError("field 'timestamp' must be an integer");
    ev.timestamp = j["timestamp"].get<Timestamp>();
  }
  if (ev.kind == InboundKind::donor_response) {
    if (j.contains("request_id")) {
      if (!j["request_id"].is_number_unsigned()) throw DataError("field 'request_id' must be a positive integer");
      ev.request_id = j["request_id"].get<uint64_t>();
    }
    if (!j.contains("affirmative") || !j["affirmative"].is_boolean())
      throw DataError("field 'affirmative' must be a boolean");
    ev.affirmative = j["affirmative"].get<bool>();
    if (ev.sender.empty()) throw DataError("field 'sender' is required");
    if (!ev.request_id && ev.message_id.empty()) throw DataError("field 'request_id' or 'message_id' is required");
  } else if (ev.kind == InboundKind::message || ev.kind == InboundKind::edit) {
    ev.message_id = required_string(j, "message_id");
    ev.text = required_string(j, "text");
    if (ev.message_id.empty()) throw DataError("field 'message_id' must be non-empty");
  } else {
    ev.text = required_string(j, "text");
  }
  return ev;
}

bool PipelineTrace::monotone() const {
  std::optional<Timestamp> last;
  for (const auto& t : {t_arrival, t_parsed_stored, t_first_notification, t_first_response}) {
    if (!t) continue;
    if (last && *t < *last) return false;
    last = t;
  }
  return true;
}

nlohmann::ordered_json to_json(const PipelineTrace& t) {
  auto ts = [](const std::optional<Timestamp>& v) { return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr); };
  nlohmann::ordered_json j;
  j["message_id"] = t.message_id;
  j["t_arrival"] = ts(t.t_arrival);
  j["t_parsed_stored"] = ts(t.t_parsed_stored);
  j["t_first_notification"] = ts(t.t_first_notification);
  j["t_first_response"] = ts(t.t_first_response);
  j["layer1_prob"] = std::round(t.layer1_prob * 1e6) / 1e6;
  j["layer2_called"] = t.layer2_called;
  j["layer2_outcome"] = t.layer2_outcome;
  j["request_id"] = t.request_id ? nlohmann::ordered_json(*t.request_id) : nlohmann::ordered_json(nullptr);
  if (!t.error.empty()) j["error"] = t.error;
  return j;
}

double KeywordLayer1::p_positive(std::string_view text) const {
  static const std::vector<std::string> words = {"blood", "rokto", "rakto", "roktho", "রক্ত", "plasma", "platelet",
                                                 "প্লাজমা", "প্লাটিলেট"};
  static const std::regex group(R"((^|[^a-z])(ab|a|b|o)\s?(\+|-|\s?pos|\s?neg)(ve|itive|ative)?($|[^a-z]))");
  const auto folded = unicode::casefold(unicode::nfc(text));
  for (const auto& w : words)
    if (folded.find(w) != std::string::npos) return 1.0;
  return std::regex_search(folded, group) ? 1.0 : 0.0;
}

std::string help_text() {
  return "Commands:\n"
         "/start - begin a conversation with the bot\n"
         "/help - show this guide\n"
         "/show_my_info - show your registered donor details\n"
         "/update_my_info - get a link to change your details\n"
         "/register_as_donor - get a link to register as a blood donor\n"
         "/goodbye - end the conversation\n";
}

Pipeline::Pipeline(AppConfig cfg, const Layer1& layer1, ParserBackend& layer2, Dispatcher& dispatch, const Clock& clock,
                   DelayFn delay)
    : cfg_(std::move(cfg)), layer1_(layer1), layer2_(layer2), dispatch_(dispatch), clock_(clock), delay_(std::move(delay)) {}

std::string Pipeline::intake_token(std::string_view sender) const {
  unsigned char mac[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  HMAC(EVP_sha256(), cfg_.intake_secret.data(), static_cast<int>(cfg_.intake_secret.size()),
       reinterpret_cast<const unsigned char*>(sender.data()), sender.size(), mac, &len);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < 16 && i < len; ++i) {
    out += hex[mac[i] >> 4];
    out += hex[mac[i] & 15];
  }
  return out;
}

std::string Pipeline::handle_command(std::string_view cmd, std::string_view sender) {
  std::string name = unicode::trim(cmd);
  name = name.substr(0, name.find_first_of(" \t\n"));
  if (const auto at = name.find('@'); at != std::string::npos) name.resize(at);
  if (name == "/start")
    return "Welcome to the blood request assistant. Send /register_as_donor to join the donor list, or /help for "
           "all commands.";
  if (name == "/show_my_info") {
    const auto d = dispatch_.donor_by_platform(sender);
    if (!d) return "You are not registered yet. Send /register_as_donor to sign up.";
    std::ostringstream os;
    os << "Donor #" << d->donor_id << "\nBlood group: " << d->blood_group << "\nLocation: " << d->latitude << ", "
       << d->longitude << "\nLast donation: " << (d->last_donation_date.empty() ? "never" : d->last_donation_date);
    return os.str();
  }
  if (name == "/update_my_info") return "Update your details here: " + cfg_.intake_base_url + intake_token(sender);
  if (name == "/register_as_donor") return "Register as a donor here: " + cfg_.intake_base_url + intake_token(sender);
  if (name == "/goodbye") return "Goodbye. Send /start whenever you need us again.";
  return help_text();
}

void Pipeline::note_notifications(PipelineTrace& trace) {
  if (!trace.request_id || trace.t_first_notification) return;
  std::optional<Timestamp> first;
  for (const auto& e : dispatch_.ledger_for(*trace.request_id))
    if (!first || e.notified_at < *first) first = e.notified_at;
  trace.t_first_notification = first;
}

void Pipeline::run_layers(const InboundEvent& ev, PipelineTrace& trace) {
  trace.error.clear();
  trace.layer1_prob = layer1_.p_positive(ev.text);
  if (trace.layer1_prob < layer1_.threshold()) {
    trace.layer2_outcome = "skipped";
    return;
  }
  trace.layer2_called = true;
  ++layer2_calls_;
  ParseRecord record;
  try {
    record = layer2_.parse(ev.text);
  } catch (const std::exception& e) {
    record.failed = true;
    record.error = e.what();
  }
  if (record.failed) {
    trace.layer2_outcome = "error";
    trace.error = record.error.empty() ? "layer 2 failed" : record.error;
    std::lock_guard lock(mu_);
    retry_queue_.push_back(ev.message_id);
    return;
  }
  if (delay_ && cfg_.parse_delay_seconds) delay_(cfg_.parse_delay_seconds);
  if (!layer2_filter(record.outcome)) {
    trace.layer2_outcome = "negative";
    return;
  }
  trace.layer2_outcome = "request";
  const auto id = dispatch_.open_case(ev.message_id, ev.group_id, ev.sender, *record.outcome.request, false);
  trace.request_id = id;
  if (!cfg_.snapshot_path.empty()) persist(dispatch_.snapshot(), cfg_.snapshot_path);
  trace.t_parsed_stored = clock_.now();
  if (delay_ && cfg_.retrieval_delay_seconds) delay_(cfg_.retrieval_delay_seconds);
  dispatch_.notify_stage(id);
  note_notifications(trace);
}

PipelineTrace Pipeline::ingest_message(const InboundEvent& ev) {
  PipelineTrace trace;
  trace.message_id = ev.message_id;
  trace.t_arrival = clock_.now();
  const auto text = unicode::trim(ev.text);
  if (!text.empty() && text[0] == '/') {
    trace.layer2_outcome = "command";
  } else {
    run_layers(ev, trace);
  }
  std::lock_guard lock(mu_);
  traces_.push_back(trace);
  messages_[ev.message_id] = {ev, traces_.size() - 1};
  if (trace.request_id) trace_by_request_[*trace.request_id] = traces_.size() - 1;
  return trace;
}

EditStatus Pipeline::handle_edit_event(const InboundEvent& ev) {
  InboundEvent original;
  size_t index = 0;
  {
    std::lock_guard lock(mu_);
    const auto it = messages_.find(ev.message_id);
    if (it == messages_.end()) return EditStatus::unknown_message;
    it->second.event.text = ev.text;
    original = it->second.event;
    index = it->second.trace_index;
  }
  if (dispatch_.case_for_message(ev.message_id)) {
    std::optional<ParseOutcome> outcome = ParseOutcome::negative();
    if (layer1_.p_positive(ev.text) >= layer1_.threshold()) {
      ++layer2_calls_;
      ParseRecord record;
      try {
        record = layer2_.parse(ev.text);
      } catch (const std::exception& e) {
        record.failed = true;
      }
      outcome = record.failed ? std::nullopt : std::optional<ParseOutcome>(record.outcome);
    }
    return dispatch_.handle_edit(ev.message_id, ev.text, outcome);
  }
  PipelineTrace trace;
  {
    std::lock_guard lock(mu_);
    trace = traces_[index];
  }
  run_layers(original, trace);
  std::lock_guard lock(mu_);
  traces_[index] = trace;
  if (!trace.request_id) return trace.layer2_outcome == "error" ? EditStatus::unchanged : EditStatus::not_a_request;
  trace_by_request_[*trace.request_id] = index;
  return EditStatus::case_created;
}

CaseStatus Pipeline::handle_donor_response(const InboundEvent& ev) {
  std::optional<uint64_t> request_id = ev.request_id;
  if (!request_id) request_id = dispatch_.case_for_message(ev.message_id);
  if (!request_id) throw Error("no request for message " + ev.message_id);
  const auto donor = dispatch_.donor_by_platform(ev.sender);
  if (!donor) throw Error("unknown donor " + ev.sender);
  const auto before = dispatch_.find_case(*request_id);
  const auto status = dispatch_.handle_response(*request_id, donor->donor_id, ev.affirmative);
  if (ev.affirmative && before && before->status == CaseStatus::open) {
    std::lock_guard lock(mu_);
    if (auto it = trace_by_request_.find(*request_id); it != trace_by_request_.end()) {
      auto& trace = traces_[it->second];
      if (!trace.t_first_response) trace.t_first_response = clock_.now();
    }
  }
  return status;
}

size_t Pipeline::retry_pending() {
  std::deque<std::string> queue;
  {
    std::lock_guard lock(mu_);
    queue.swap(retry_queue_);
  }
  size_t decided = 0;
  for (const auto& id : queue) {
    InboundEvent ev;
    PipelineTrace trace;
    size_t index = 0;
    {
      std::lock_guard lock(mu_);
      const auto& seen = messages_.at(id);
      ev = seen.event;
      index = seen.trace_index;
      trace = traces_[index];
    }
    run_layers(ev, trace);
    if (trace.layer2_outcome != "error") ++decided;
    std::lock_guard lock(mu_);
    traces_[index] = trace;
    if (trace.request_id) trace_by_request_[*trace.request_id] = index;
  }
  return decided;
}

std::optional<PipelineTrace> Pipeline::trace_for_request(uint64_t request_id) const {
  std::lock_guard lock(mu_);
  const auto it = trace_by_request_.find(request_id);
  if (it == trace_by_request_.end()) return std::nullopt;
  return traces_[it->second];
}

std::vector<PipelineTrace> Pipeline::traces() const {
  std::lock_guard lock(mu_);
  return traces_;
}

size_t Pipeline::pending_retries() const {
  std::lock_guard lock(mu_);
  return retry_queue_.size();
}

// ---- invariants and statistics ----

std::vector<std::string> check_ledger_invariants(const DispatchState& state, const std::vector<OutboundEvent>& events) {
  std::vector<std::string> out;
  auto req = [](uint64_t r) { return "request " + std::to_string(r); };
  std::set<std::pair<uint64_t, uint64_t>> pairs;
  std::map<uint64_t, int> max_stage;
  for (const auto& e : state.ledger) {
    if (!pairs.insert({e.request_id, e.donor_id}).second)
      out.push_back(req(e.request_id) + ": donor " + std::to_string(e.donor_id) + " notified twice");
    max_stage[e.request_id] = std::max(max_stage[e.request_id], e.stage);
  }

  std::set<uint64_t> affirmed;
  std::map<std::pair<uint64_t, uint64_t>, int> notices;
  for (const auto& ev : events) {
    if (ev.kind == EventKind::seeker_update) affirmed.insert(ev.request_id);
    if (ev.kind == EventKind::donor_alert && affirmed.count(ev.request_id))
      out.push_back(req(ev.request_id) + ": alert sent after an affirmative response");
    if (ev.kind == EventKind::resolution_notice && ev.donor_id) ++notices[{ev.request_id, *ev.donor_id}];
  }

  for (const auto& c : state.cases) {
    if (c.stages_fired > c.depth || max_stage[c.request_id] > c.depth)
      out.push_back(req(c.request_id) + ": stage count exceeds urgency depth");
    for (const auto& e : state.ledger) {
      if (e.request_id != c.request_id) continue;
      const int sent = notices.count({e.request_id, e.donor_id}) ? notices[{e.request_id, e.donor_id}] : 0;
      if (is_terminal(c.status)) {
        if (!e.resolution_notified || sent != 1)
          out.push_back(req(c.request_id) + ": donor " + std::to_string(e.donor_id) + " got " + std::to_string(sent) +
                        " resolution notices");
      } else if (e.resolution_notified || sent != 0) {
        out.push_back(req(c.request_id) + ": resolution notice on an open case");
      }
    }
  }
  for (const auto& [key, n] : notices)
    if (!pairs.count(key))
      out.push_back(req(key.first) + ": resolution notice to never-notified donor " + std::to_string(key.second));
  return out;
}

DurationStats duration_stats(const std::vector<double>& seconds) {
  DurationStats s;
  s.count = seconds.size();
  if (seconds.empty()) return s;
  for (double v : seconds) s.mean += v;
  s.mean /= static_cast<double>(s.count);
  if (s.count < 2) return s;
  double ss = 0.0;
  for (double v : seconds) ss += (v - s.mean) * (v - s.mean);
  s.stddev = std::sqrt(ss / static_cast<double>(s.count - 1));
  return s;
}

nlohmann::ordered_json to_json(const SimulationSummary& s) {
  auto stats = [](const DurationStats& d) {
    return nlohmann::ordered_json{{"count", d.count}, {"mean_seconds", d.mean}, {"stddev_seconds", d.stddev}};
  };
  nlohmann::ordered_json j;
  j["events"] = s.events;
  j["cases"] = s.cases;
  j["status_counts"] = s.status_counts;
  j["layer2_calls"] = s.layer2_calls;
  j["notifications"] = s.notifications;
  j["resolution_notices"] = s.resolution_notices;
  j["parse"] = stats(s.parse);
  j["retrieval"] = stats(s.retrieval);
  j["response"] = stats(s.response);
  j["violations"] = s.violations;
  return j;
}

// ---- simulation ----

namespace {

struct ScenarioLine {
  size_t line_number = 0;
  int64_t tick = 0;
  nlohmann::json body;
};

void apply_override(AppConfig& cfg, const std::string& key, const nlohmann::json& value, const std::string& where) {
  auto integer = [&] {
    if (!value.is_number_integer()) throw DataError(where + ": config." + key + " must be an integer");
    return value.get<int64_t>();
  };
  if (key == "stage_size") cfg.dispatch.stage_size = static_cast<size_t>(std::max<int64_t>(1, integer()));
  else if (key == "stage_timeout_seconds") cfg.dispatch.stage_timeout_seconds = integer();
  else if (key == "eligibility_days") cfg.dispatch.eligibility_days = static_cast<int>(integer());
  else if (key == "case_ttl_seconds") cfg.dispatch.case_ttl_seconds = integer();
  else if (key == "parse_delay_seconds") cfg.parse_delay_seconds = integer();
  else if (key == "retrieval_delay_seconds") cfg.retrieval_delay_seconds = integer();
  else if (key == "threshold") {
    if (!value.is_number()) throw DataError(where + ": config.threshold must be a number");
    cfg.threshold = value.get<double>();
  } else {
    throw DataError(where + ": unknown config key " + key);
  }
}

}  // namespace

SimulationResult simulate_text(std::string_view scenario, std::string_view source, const AppConfig& base,
                               const Layer1& layer1, ParserBackend& layer2) {
  const std::string src(source);
  nlohmann::json header = nlohmann::json::object();
  bool have_header = false;
  std::vector<ScenarioLine> lines;
  {
    static const std::set<std::string> types = {"donor", "message", "edit", "command", "response", "advance"};
    std::istringstream in{std::string(scenario)};
    std::string line;
    size_t n = 0;
    int64_t last_tick = 0;
    while (std::getline(in, line)) {
      ++n;
      if (unicode::trim(line).empty()) continue;
      const auto where = src + ":" + std::to_string(n);
      auto j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_discarded() || !j.is_object()) throw DataError(where + ": malformed JSON");
      if (!j.contains("tick")) {
        if (have_header || !lines.empty()) throw DataError(where + ": missing tick");
        header = std::move(j);
        have_header = true;
        continue;
      }
      if (!j["tick"].is_number_integer() || j["tick"].get<int64_t>() < 0)
        throw DataError(where + ": tick must be a non-negative integer");
      const auto tick = j["tick"].get<int64_t>();
      if (tick < last_tick) throw DataError(where + ": ticks must be non-decreasing");
      last_tick = tick;
      if (!j.contains("type") || !j["type"].is_string()) throw DataError(where + ": missing type");
      if (!types.count(j["type"].get<std::string>())) throw DataError(where + ": unknown type " + j["type"].dump());
      lines.push_back({n, tick, std::move(j)});
    }
  }

  const auto header_where = src + ": header";
  AppConfig cfg = base;
  cfg.snapshot_path.clear();
  if (header.contains("config")) {
    if (!header["config"].is_object()) throw DataError(header_where + ": config must be an object");
    for (const auto& [key, value] : header["config"].items()) apply_override(cfg, key, value, header_where);
  }
  Timestamp epoch = *parse_timestamp("2025-01-01T00:00:00Z");
  if (header.contains("epoch")) {
    const auto e = header["epoch"].is_string() ? parse_timestamp(header["epoch"].get<std::string>()) : std::nullopt;
    if (!e) throw DataError(header_where + ": epoch must be YYYY-MM-DDTHH:MM:SSZ");
    epoch = *e;
  }
  Gazetteer gazetteer = cfg.gazetteer_path.empty() ? Gazetteer{} : Gazetteer::load(cfg.gazetteer_path);
  if (header.contains("gazetteer")) {
    for (const auto& [marker, point] : header["gazetteer"].items()) {
      if (!point.is_array() || point.size() != 2 || !point[0].is_number() || !point[1].is_number())
        throw DataError(header_where + ": gazetteer entries must be [lat, lon]");
      gazetteer.add(marker, {point[0].get<double>(), point[1].get<double>()});
    }
  }

  LogicalClock clock(epoch);
  Dispatcher dispatch(cfg.dispatch, std::move(gazetteer), clock);
  Pipeline pipeline(cfg, layer1, layer2, dispatch, clock, [&](int64_t s) { clock.advance(s); });

  SimulationResult result;
  std::vector<OutboundEvent> all_events;
  auto record = [&](nlohmann::ordered_json j) {
    nlohmann::ordered_json line;
    line["t"] = clock.now() - epoch;
    for (auto& [k, v] : j.items()) line[k] = v;
    result.transcript.push_back(line.dump());
  };
  auto flush = [&] {
    for (auto& e : dispatch.drain_events()) {
      auto j = to_json(e);
      j["at"] = e.at - epoch;
      record({{"type", "outbound"}, {"event", j}});
      all_events.push_back(std::move(e));
    }
  };
  auto run_timers = [&](Timestamp until) {
    for (size_t guard = 0; guard < 1'000'000; ++guard) {
      const auto due = dispatch.next_due();
      if (!due || *due > until) return;
      clock.set(std::max(clock.now(), *due));
      dispatch.tick();
      flush();
    }
    throw Error("simulation timers did not settle");
  };

  for (const auto& line : lines) {
    const auto where = src + ":" + std::to_string(line.line_number);
    const auto& j = line.body;
    const auto type = j["type"].get<std::string>();
    run_timers(epoch + line.tick);
    clock.set(std::max(clock.now(), epoch + line.tick));
    ++result.summary.events;
    try {
      if (type == "donor") {
        DonorRecord d;
        d.platform_id = required_string(j, "platform_id");
        d.blood_group = required_string(j, "blood_group");
        if (!j.contains("lat") || !j["lat"].is_number() || !j.contains("lon") || !j["lon"].is_number())
          throw DataError("donor needs numeric lat and lon");
        d.latitude = j["lat"].get<double>();
        d.longitude = j["lon"].get<double>();
        d.last_donation_date = optional_string(j, "last_donation_date");
        const auto id = dispatch.register_donor(d);
        record({{"type", "donor"}, {"platform_id", d.platform_id}, {"donor_id", id}});
      } else if (type == "message") {
        InboundEvent ev;
        ev.group_id = optional_string(j, "group", "group");
        ev.sender = optional_string(j, "sender", "seeker");
        ev.message_id = required_string(j, "message_id");
        ev.text = required_string(j, "text");
        ev.timestamp = clock.now();
        const auto trace = pipeline.ingest_message(ev);
        nlohmann::ordered_json out{{"type", "message"}, {"message_id", ev.message_id}};
        out["layer1_prob"] = std::round(trace.layer1_prob * 1e6) / 1e6;
        out["layer2_outcome"] = trace.layer2_outcome;
        if (trace.request_id) out["request_id"] = *trace.request_id;
        record(out);
      } else if (type == "edit") {
        InboundEvent ev;
        ev.kind = InboundKind::edit;
        ev.message_id = required_string(j, "message_id");
        ev.text = required_string(j, "text");
        ev.timestamp = clock.now();
        const auto status = pipeline.handle_edit_event(ev);
        record({{"type", "edit"}, {"message_id", ev.message_id}, {"status", to_string(status)}});
      } else if (type == "command") {
        const auto sender = optional_string(j, "sender", "user");
        const auto reply = pipeline.handle_command(required_string(j, "text"), sender);
        record({{"type", "command"}, {"sender", sender}, {"reply", reply}});
      } else if (type == "response") {
        InboundEvent ev;
        ev.kind = InboundKind::donor_response;
        ev.sender = required_string(j, "donor");
        ev.message_id = required_string(j, "message_id");
        const auto answer = unicode::casefold(required_string(j, "answer"));
        if (answer != "yes" && answer != "no") throw DataError("answer must be yes or no");
        ev.affirmative = answer == "yes";
        ev.timestamp = clock.now();
        nlohmann::ordered_json out{{"type", "response"}, {"donor", ev.sender}, {"message_id", ev.message_id},
                                   {"answer", answer}};
        try {
          out["status"] = to_string(pipeline.handle_donor_response(ev));
        } catch (const DataError&) {
          throw;
        } catch (const Error& e) {
          out["rejected"] = e.what();
        }
        record(out);
      }
    } catch (const DataError& e) {
      throw DataError(where + ": " + e.what());
    } catch (const ValidationError& e) {
      throw DataError(where + ": " + e.what());
    }
    if (pipeline.pending_retries()) pipeline.retry_pending();
    flush();
  }

  int64_t until = lines.empty() ? 0 : lines.back().tick;
  if (header.contains("until")) {
    if (!header["until"].is_number_integer()) throw DataError(header_where + ": until must be an integer");
    until = std::max(until, header["until"].get<int64_t>());
  }
  if (!lines.empty() || header.contains("until")) run_timers(epoch + until);

  result.traces = pipeline.traces();
  result.final_state = dispatch.snapshot();
  auto& s = result.summary;
  s.cases = result.final_state.cases.size();
  s.layer2_calls = pipeline.layer2_calls();
  s.notifications = result.final_state.ledger.size();
  for (const auto& c : result.final_state.cases) {
    ++s.status_counts[std::string(to_string(c.status))];
    result.actual[c.message_id] = std::string(to_string(c.status));
  }
  for (const auto& e : all_events)
    if (e.kind == EventKind::resolution_notice) ++s.resolution_notices;
  std::vector<double> parse, retrieval, response;
  for (const auto& t : result.traces) {
    if (!t.monotone()) s.violations.push_back("trace " + t.message_id + " is not monotone");
    if (!t.complete()) continue;
    parse.push_back(static_cast<double>(*t.t_parsed_stored - *t.t_arrival));
    retrieval.push_back(static_cast<double>(*t.t_first_notification - *t.t_parsed_stored));
    response.push_back(static_cast<double>(*t.t_first_response - *t.t_first_notification));
  }
  s.parse = duration_stats(parse);
  s.retrieval = duration_stats(retrieval);
  s.response = duration_stats(response);
  for (auto& v : check_ledger_invariants(result.final_state, all_events)) s.violations.push_back(std::move(v));

  if (header.contains("expect")) {
    if (!header["expect"].is_object()) throw DataError(header_where + ": expect must be an object");
    for (const auto& [message_id, status] : header["expect"].items()) {
      if (!status.is_string()) throw DataError(header_where + ": expected statuses must be strings");
      result.expected[message_id] = status.get<std::string>();
      if (!result.actual.count(message_id)) result.actual[message_id] = "none";
    }
  }
  for (const auto& t : result.traces) record({{"type", "trace"}, {"trace", to_json(t)}});
  return result;
}

SimulationResult simulate(const std::filesystem::path& scenario, const AppConfig& base, const Layer1& layer1,
                          ParserBackend& layer2) {
  std::ifstream in(scenario);
  if (!in) throw DataError("cannot open scenario: " + scenario.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return simulate_text(buf.str(), scenario.string(), base, layer1, layer2);
}

}  // namespace cbrs
