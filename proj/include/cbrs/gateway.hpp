#pragma once

#include <nlohmann/json.hpp>

#include <atomic>
#include <deque>
#include <functional>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "cbrs/classifier.hpp"
#include "cbrs/config.hpp"
#include "cbrs/dispatch.hpp"
#include "cbrs/layer2.hpp"

namespace cbrs {

enum class InboundKind { message, edit, command, donor_response };
std::string_view to_string(InboundKind k);

struct InboundEvent {
  InboundKind kind = InboundKind::message;
  std::string platform = "sim";
  std::string group_id;
  std::string sender;
  std::string message_id;
  std::string text;
  Timestamp timestamp = 0;
  // donor_response only
  std::optional<uint64_t> request_id;
  bool affirmative = false;
};

// Throws DataError with the offending field for malformed input.
InboundEvent inbound_from_json(const nlohmann::json& j, InboundKind default_kind = InboundKind::message);

struct PipelineTrace {
  std::string message_id;
  std::optional<Timestamp> t_arrival;
  std::optional<Timestamp> t_parsed_stored;
  std::optional<Timestamp> t_first_notification;
  std::optional<Timestamp> t_first_response;
  double layer1_prob = 0.0;
  bool layer2_called = false;
  std::string layer2_outcome = "skipped";  // skipped, negative, request, error
  std::optional<uint64_t> request_id;
  std::string error;

  // Present timestamps are non-decreasing in the order listed above.
  bool monotone() const;
  bool complete() const { return t_arrival && t_parsed_stored && t_first_notification && t_first_response; }
};

nlohmann::ordered_json to_json(const PipelineTrace& t);

class Layer1 {
 public:
  virtual ~Layer1() = default;
  virtual double p_positive(std::string_view text) const = 0;
  virtual double threshold() const = 0;
};

class ModelLayer1 : public Layer1 {
 public:
  ModelLayer1(ClassifierModel model, double threshold) : model_(std::move(model)), threshold_(threshold) {}
  double p_positive(std::string_view text) const override { return forward(model_, text).p_positive; }
  double threshold() const override { return threshold_; }

 private:
  ClassifierModel model_;
  double threshold_;
};

// Lexicon gate used when no trained model is configured: 1 when the text
// mentions blood (any script) or a blood group, else 0.
class KeywordLayer1 : public Layer1 {
 public:
  explicit KeywordLayer1(double threshold = 0.5) : threshold_(threshold) {}
  double p_positive(std::string_view text) const override;
  double threshold() const override { return threshold_; }

 private:
  double threshold_;
};

std::string help_text();

// Logical-clock hook so simulated stage costs show up in traces.
using DelayFn = std::function<void(int64_t seconds)>;

class Pipeline {
 public:
  Pipeline(AppConfig cfg, const Layer1& layer1, ParserBackend& layer2, Dispatcher& dispatch, const Clock& clock,
           DelayFn delay = {});

  std::string handle_command(std::string_view cmd, std::string_view sender);
  std::string intake_token(std::string_view sender) const;

  PipelineTrace ingest_message(const InboundEvent& ev);
  EditStatus handle_edit_event(const InboundEvent& ev);
  // Resolves the request by id or, failing that, by source message id.
  CaseStatus handle_donor_response(const InboundEvent& ev);
  // Re-runs queued Layer-2 failures; returns how many produced a decision.
  size_t retry_pending();

  std::optional<PipelineTrace> trace_for_request(uint64_t request_id) const;
  std::vector<PipelineTrace> traces() const;
  size_t layer2_calls() const { return layer2_calls_.load(); }
  size_t pending_retries() const;
  Dispatcher& dispatcher() { return dispatch_; }

 private:
  struct Seen {
    InboundEvent event;
    size_t trace_index;
  };
  void run_layers(const InboundEvent& ev, PipelineTrace& trace);
  void note_notifications(PipelineTrace& trace);

  AppConfig cfg_;
  const Layer1& layer1_;
  ParserBackend& layer2_;
  Dispatcher& dispatch_;
  const Clock& clock_;
  DelayFn delay_;
  mutable std::mutex mu_;
  std::vector<PipelineTrace> traces_;
  std::map<std::string, Seen> messages_;
  std::map<uint64_t, size_t> trace_by_request_;
  std::deque<std::string> retry_queue_;
  std::atomic<size_t> layer2_calls_{0};
};

// Ledger rules checked after every scenario run: no duplicate (request,
// donor), no alert after the first affirmative, resolution notices exactly
// once per notified donor of a closed case and never otherwise, stage count
// within urgency depth. Returns human-readable violations.
std::vector<std::string> check_ledger_invariants(const DispatchState& state, const std::vector<OutboundEvent>& events);

struct DurationStats {
  size_t count = 0;
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation, 0 below two values
};

DurationStats duration_stats(const std::vector<double>& seconds);

struct SimulationSummary {
  size_t events = 0;
  size_t cases = 0;
  std::map<std::string, size_t> status_counts;
  size_t layer2_calls = 0;
  size_t notifications = 0;
  size_t resolution_notices = 0;
  DurationStats parse;
  DurationStats retrieval;
  DurationStats response;
  std::vector<std::string> violations;
};

nlohmann::ordered_json to_json(const SimulationSummary& s);

struct SimulationResult {
  std::vector<std::string> transcript;  // one JSON object per line
  std::vector<PipelineTrace> traces;
  DispatchState final_state;
  SimulationSummary summary;
  // message_id -> expected status, from the scenario header
  std::map<std::string, std::string> expected;
  std::map<std::string, std::string> actual;
};

// Scenario: JSON lines. An optional first line without "tick" is the
// header ({"name", "epoch", "until", "config": {...}, "expect": {...}}).
// Every other line carries "tick" (seconds after epoch) and "type": donor,
// message, edit, command, response or advance.
SimulationResult simulate(const std::filesystem::path& scenario, const AppConfig& base, const Layer1& layer1,
                          ParserBackend& layer2);
SimulationResult simulate_text(std::string_view scenario, std::string_view source, const AppConfig& base,
                               const Layer1& layer1, ParserBackend& layer2);

}  // namespace cbrs
