#include "cbrs/layer2.hpp"

#include <httplib.h>

#include <chrono>
#include <cstdlib>
#include <sstream>
#include <thread>

#include "cbrs/error.hpp"
#include "cbrs/unicode.hpp"

namespace cbrs {

namespace {

using json = nlohmann::json;

constexpr std::string_view kSystemText =
    "You will be provided with a message, typically sent by an individual or organization, which may pertain "
    "to a request for blood donation. Your task is to determine whether the message is a blood donation "
    "request, and if yes, then to extract the necessary information.\n"
    "\n"
    "Instructions:\n"
    "- If the message is not a blood donation request, respond with: {\"is_blood_donation_request\": false}. "
    "No other fields are required.\n"
    "- If it is a request, extract relevant information into a well-structured JSON object strictly "
    "conforming to the schema.\n"
    "- Set fields to \"\" if not stated explicitly in the message.\n"
    "\n"
    "Schema:\n"
    "- blood_group: one of [A+, A-, B+, B-, O+, O-, AB+, AB-] or \"\"\n"
    "- bags_needed: string (e.g., \"3\" or \"3-4\")\n"
    "- patient: {name, gender [M/F/\"\"], age_group [child/teenager/young/adult/\"\"]}\n"
    "- condition: comma-separated medical conditions or status\n"
    "- location, hospital_name: as stated\n"
    "- location_markers: list of city/region tokens\n"
    "- probable_day: one of [DD/MM, DD/MM/YYYY, today, tomorrow, n days later]\n"
    "- probable_time: one of [HH:MM, before HH:MM, after HH:MM, HH:MM-HH:MM, in n hours] (24-hr format)\n"
    "- contacts: list of {name, contact_numbers [...], relation_with_patient}\n"
    "- compensation: {transportation: [Y/N/\"\"], allowance: [Y/N/\"\"]}\n";

struct Endpoint {
  std::string base;  // scheme://host[:port]
  std::string path;
};

Endpoint split_endpoint(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw Error("endpoint must start with http:// or https://: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace

ExemplarSet ExemplarSet::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open exemplar file: " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw DataError("exemplar file is not valid JSON: " + std::string(e.what()));
  }
  ExemplarSet set;
  for (const auto& item : doc.value("positive", json::array())) {
    auto v = validate(item.at("output"));
    if (!v.ok()) throw DataError("positive exemplar does not match the schema: " + v.errors.front().path);
    set.positives.push_back({item.at("text").get<std::string>(), *v.outcome});
  }
  for (const auto& item : doc.value("negative", json::array()))
    set.negatives.push_back({item.at("text").get<std::string>(), ParseOutcome::negative()});
  return set;
}

std::vector<ChatMessage> PromptBundle::messages() const { return {{"system", system}, {"user", query}}; }

size_t estimate_tokens(std::string_view text) {
  size_t tokens = 0;
  bool in_chunk = false;
  for (char32_t cp : unicode::decode(text)) {
    if (unicode::is_space(cp)) {
      in_chunk = false;
      continue;
    }
    if (!in_chunk) ++tokens;
    in_chunk = true;
    if (unicode::is_punct(cp)) ++tokens;
  }
  return tokens;
}

PromptBundle build_prompt(std::string_view text, PromptMode mode, const ExemplarSet& exemplars) {
  PromptBundle bundle;
  bundle.system = kSystemText;
  if (mode == PromptMode::few_shot) {
    if (exemplars.positives.size() < kFewShotPositives || exemplars.negatives.size() < kFewShotNegatives)
      throw Error("few-shot prompting needs at least 3 positive and 2 negative exemplars");
    for (size_t i = 0; i < kFewShotPositives; ++i) bundle.exemplars.push_back(exemplars.positives[i]);
    for (size_t i = 0; i < kFewShotNegatives; ++i) bundle.exemplars.push_back(exemplars.negatives[i]);
    bundle.system += "\nExamples:\n";
    for (const auto& ex : bundle.exemplars) {
      bundle.system += "Text Message: " + ex.text + "\n";
      bundle.system += "Output: " + serialize(ex.outcome) + "\n\n";
    }
  }
  bundle.query = "Final Query:\nText Message: " + std::string(text) + "\nInstruction: " +
                 std::string(kClosingInstruction);
  bundle.token_estimate = estimate_tokens(bundle.system) + estimate_tokens(bundle.query);
  return bundle;
}

void BackendConfig::check() const {
  if (!(decoding.temperature > 0.0 && decoding.temperature <= 1.0)) throw Error("temperature must be in (0, 1]");
  if (!(decoding.top_p > 0.0 && decoding.top_p <= 1.0)) throw Error("top_p must be in (0, 1]");
  if (retries < 0) throw Error("retries must be >= 0");
  if (in_flight_limit == 0) throw Error("in-flight limit must be positive");
  if (kind == BackendKind::remote && endpoint.empty()) throw Error("remote backend needs an endpoint");
}

AuditLog::AuditLog(const std::filesystem::path& path) : out_(path, std::ios::app | std::ios::binary) {
  if (!out_) throw DataError("cannot open audit log: " + path.string());
}

void AuditLog::append(std::string_view backend, std::string_view endpoint, int status, std::string_view wire) {
  nlohmann::ordered_json entry;
  entry["ts"] = std::chrono::duration_cast<std::chrono::milliseconds>(
                    std::chrono::system_clock::now().time_since_epoch())
                    .count();
  entry["backend"] = backend;
  entry["endpoint"] = endpoint;
  entry["status"] = status;
  entry["wire"] = wire;
  const auto line = entry.dump(-1, ' ', false, json::error_handler_t::replace);
  std::lock_guard lock(mutex_);
  out_ << line << '\n';
  out_.flush();
}

std::string strip_code_fences(std::string_view reply) {
  auto s = unicode::trim(reply);
  if (s.rfind("```", 0) != 0) return s;
  const auto first_newline = s.find('\n');
  if (first_newline == std::string::npos) return s;
  auto body = s.substr(first_newline + 1);
  const auto close = body.rfind("```");
  if (close != std::string::npos) body = body.substr(0, close);
  return unicode::trim(body);
}

std::string extract_reply_text(std::string_view body) {
  json doc = json::parse(body, nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) return std::string(body);
  if (doc.contains("choices") && doc["choices"].is_array() && !doc["choices"].empty()) {
    const auto& c = doc["choices"][0];
    if (c.contains("message") && c["message"].contains("content") && c["message"]["content"].is_string())
      return c["message"]["content"].get<std::string>();
    if (c.contains("text") && c["text"].is_string()) return c["text"].get<std::string>();
  }
  if (doc.contains("message") && doc["message"].is_object() && doc["message"].contains("content") &&
      doc["message"]["content"].is_string())
    return doc["message"]["content"].get<std::string>();
  for (const char* key : {"content", "response", "text"})
    if (doc.contains(key) && doc[key].is_string()) return doc[key].get<std::string>();
  return std::string(body);
}

namespace {

void read_usage(std::string_view body, ParseRecord& rec) {
  json doc = json::parse(body, nullptr, false);
  if (doc.is_discarded() || !doc.is_object() || !doc.contains("usage") || !doc["usage"].is_object()) return;
  const auto& u = doc["usage"];
  for (const char* k : {"prompt_tokens", "input_tokens"})
    if (u.contains(k) && u[k].is_number_unsigned()) rec.input_tokens = u[k].get<size_t>();
  for (const char* k : {"completion_tokens", "output_tokens"})
    if (u.contains(k) && u[k].is_number_unsigned()) rec.output_tokens = u[k].get<size_t>();
}

}  // namespace

ParseRecord parse_remote(const BackendConfig& cfg, const PromptBundle& bundle, AuditLog* audit) {
  ParseRecord rec;
  rec.backend = "remote:" + cfg.model;
  rec.input_tokens = bundle.token_estimate;
  const auto start = std::chrono::steady_clock::now();
  auto finish = [&] {
    rec.latency_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return rec;
  };

  const auto ep = split_endpoint(cfg.endpoint);
  json request;
  request["model"] = cfg.model;
  request["messages"] = json::array();
  for (const auto& m : bundle.messages()) request["messages"].push_back({{"role", m.role}, {"content", m.content}});
  request["temperature"] = cfg.decoding.temperature;
  request["top_p"] = cfg.decoding.top_p;
  request["top_k"] = cfg.decoding.top_k;
  const auto payload = request.dump();

  httplib::Client client(ep.base);
  const auto secs = cfg.timeout.count() / 1000;
  const auto usecs = (cfg.timeout.count() % 1000) * 1000;
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);
  httplib::Headers headers;
  if (const char* key = std::getenv("CBRS_LLM_API_KEY"); key && *key)
    headers.emplace("Authorization", std::string("Bearer ") + key);

  std::string body;
  bool got_reply = false;
  std::string last_error = "no attempt made";
  for (int attempt = 0; attempt <= cfg.retries; ++attempt) {
    if (attempt > 0) std::this_thread::sleep_for(std::chrono::milliseconds(50 * (1 << std::min(attempt, 6))));
    auto res = client.Post(ep.path, headers, payload, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (audit) audit->append(rec.backend, cfg.endpoint, res->status, res->body);
    if (res->status == 429 || res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200) {
      last_error = "HTTP " + std::to_string(res->status);
      rec.raw_reply = res->body;
      break;
    }
    body = res->body;
    got_reply = true;
    break;
  }
  if (!got_reply) {
    rec.failed = true;
    rec.error = last_error;
    return finish();
  }

  rec.raw_reply = body;
  read_usage(body, rec);
  const auto text = strip_code_fences(extract_reply_text(body));
  if (rec.output_tokens == 0) rec.output_tokens = estimate_tokens(text);

  json doc = json::parse(text, nullptr, false);
  if (doc.is_discarded()) {
    rec.failed = true;
    rec.error = "reply is not valid JSON";
    return finish();
  }
  auto checked = validate(doc);
  if (checked.ok()) {
    rec.outcome = *checked.outcome;
  } else {
    auto fixed = repair(doc);
    rec.outcome = std::move(fixed.outcome);
    rec.repairs = std::move(fixed.repaired);
    rec.repair_applied = true;
  }
  return finish();
}

RemoteBackend::RemoteBackend(BackendConfig cfg, ExemplarSet exemplars)
    : cfg_(std::move(cfg)),
      exemplars_(std::move(exemplars)),
      slots_(static_cast<std::ptrdiff_t>(std::max<size_t>(1, cfg_.in_flight_limit))) {
  cfg_.check();
  if (!cfg_.audit_log.empty()) audit_ = std::make_unique<AuditLog>(cfg_.audit_log);
}

ParseRecord RemoteBackend::parse(std::string_view text) {
  const auto bundle = build_prompt(text, cfg_.mode, exemplars_);
  slots_.acquire();
  struct Release {
    std::counting_semaphore<>& s;
    ~Release() { s.release(); }
  } release{slots_};
  return parse_remote(cfg_, bundle, audit_.get());
}

std::unique_ptr<ParserBackend> make_backend(const BackendConfig& cfg) {
  cfg.check();
  if (cfg.kind == BackendKind::rules) return std::make_unique<RulesBackend>();
  ExemplarSet exemplars;
  if (!cfg.exemplars.empty()) exemplars = ExemplarSet::load(cfg.exemplars);
  return std::make_unique<RemoteBackend>(cfg, std::move(exemplars));
}

}  // namespace cbrs
