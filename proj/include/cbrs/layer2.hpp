#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <semaphore>
#include <string>
#include <string_view>
#include <vector>

#include "cbrs/schema.hpp"

// Layer 2: one LLM call that both re-filters and parses a Layer-1 positive,
// plus an offline rule-based backend with the same contract.
namespace cbrs {

enum class PromptMode { few_shot, zero_shot };

struct Exemplar {
  std::string text;
  ParseOutcome outcome;
};

struct ExemplarSet {
  std::vector<Exemplar> positives;
  std::vector<Exemplar> negatives;

  // {"positive": [{"text": ..., "output": {...}}], "negative": [{"text": ...}]}
  static ExemplarSet load(const std::filesystem::path& path);
};

struct ChatMessage {
  std::string role;
  std::string content;
};

inline constexpr std::string_view kClosingInstruction =
    "Output only the valid JSON response. No explanations, greetings, or hallucinations.";

struct PromptBundle {
  std::string system;               // instructions, schema and (few-shot) examples
  std::vector<Exemplar> exemplars;  // 3 positive then 2 negative, or none
  std::string query;                // final query including the closing instruction
  size_t token_estimate = 0;

  std::vector<ChatMessage> messages() const;
};

inline constexpr size_t kFewShotPositives = 3;
inline constexpr size_t kFewShotNegatives = 2;

// Throws Error in few-shot mode when fewer than 3 positive / 2 negative
// exemplars are available.
PromptBundle build_prompt(std::string_view text, PromptMode mode, const ExemplarSet& exemplars);

// Approximate token count: whitespace-separated chunks plus punctuation
// characters. Never decreases when text is appended.
size_t estimate_tokens(std::string_view text);

struct Decoding {
  double temperature = 0.7;
  double top_p = 0.8;
  int top_k = 35;
};

enum class BackendKind { remote, rules };

struct BackendConfig {
  BackendKind kind = BackendKind::rules;
  std::string endpoint;  // http(s)://host[:port]/path
  std::string model = "gpt-4o-mini";
  Decoding decoding;
  std::chrono::milliseconds timeout{30000};
  int retries = 2;
  size_t in_flight_limit = 4;
  PromptMode mode = PromptMode::few_shot;
  std::filesystem::path audit_log;
  std::filesystem::path exemplars;

  // Throws Error on out-of-range decoding parameters or negative retries.
  void check() const;
};

struct ParseRecord {
  ParseOutcome outcome;
  size_t input_tokens = 0;
  size_t output_tokens = 0;
  double latency_seconds = 0.0;
  std::string backend;
  bool repair_applied = false;
  std::vector<SchemaError> repairs;
  bool failed = false;  // network/HTTP failure or unrepairable reply
  std::string error;
  std::string raw_reply;
};

class ParserBackend {
 public:
  virtual ~ParserBackend() = default;
  virtual ParseRecord parse(std::string_view text) = 0;
  virtual std::string id() const = 0;
  virtual size_t in_flight_limit() const { return 1; }
};

// Deterministic regex/lexicon extraction; never fails.
ParseRecord parse_rules(std::string_view text);

class RulesBackend : public ParserBackend {
 public:
  ParseRecord parse(std::string_view text) override { return parse_rules(text); }
  std::string id() const override { return "rules"; }
  size_t in_flight_limit() const override { return 16; }
};

// Line-delimited JSON audit trail; appends are serialized.
class AuditLog {
 public:
  explicit AuditLog(const std::filesystem::path& path);
  void append(std::string_view backend, std::string_view endpoint, int status, std::string_view wire_payload);

 private:
  std::mutex mutex_;
  std::ofstream out_;
};

std::string strip_code_fences(std::string_view reply);

// Pulls the model text out of a chat-completion style reply body. Returns
// the body itself when it is not JSON or carries no known field.
std::string extract_reply_text(std::string_view body);

// POSTs {model, messages, temperature, top_p, top_k} to cfg.endpoint with
// retries on transport errors, 429 and 5xx. The reply is validated; schema
// violations get exactly one repair pass.
ParseRecord parse_remote(const BackendConfig& cfg, const PromptBundle& bundle, AuditLog* audit = nullptr);

class RemoteBackend : public ParserBackend {
 public:
  RemoteBackend(BackendConfig cfg, ExemplarSet exemplars);

  ParseRecord parse(std::string_view text) override;
  std::string id() const override { return "remote:" + cfg_.model; }
  size_t in_flight_limit() const override { return cfg_.in_flight_limit; }

 private:
  BackendConfig cfg_;
  ExemplarSet exemplars_;
  std::unique_ptr<AuditLog> audit_;
  std::counting_semaphore<> slots_;
};

std::unique_ptr<ParserBackend> make_backend(const BackendConfig& cfg);

// True iff the outcome should be forwarded to dispatch.
inline bool layer2_filter(const ParseOutcome& outcome) { return outcome.is_request(); }

}  // namespace cbrs
