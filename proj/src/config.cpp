#include "cbrs/config.hpp"

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "cbrs/error.hpp"
#include "cbrs/unicode.hpp"

namespace cbrs {

KeyValueConfig KeyValueConfig::parse(std::string_view text, std::string_view source) {
  KeyValueConfig kv;
  kv.source_ = source;
  std::istringstream in{std::string(text)};
  std::string line;
  size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto t = unicode::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw DataError(std::string(source) + ":" + std::to_string(n) + ": expected key = value");
    const auto key = unicode::trim(t.substr(0, eq));
    if (key.empty()) throw DataError(std::string(source) + ":" + std::to_string(n) + ": empty key");
    if (kv.entries_.count(key)) throw DataError(std::string(source) + ":" + std::to_string(n) + ": duplicate key " + key);
    kv.entries_[key] = unicode::trim(t.substr(eq + 1));
  }
  return kv;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config: " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str(), path.string());
}

bool KeyValueConfig::has(std::string_view key) const { return entries_.find(key) != entries_.end(); }

std::optional<std::string> KeyValueConfig::get(std::string_view key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

std::string KeyValueConfig::get_or(std::string_view key, std::string fallback) const {
  return get(key).value_or(std::move(fallback));
}

double KeyValueConfig::get_double(std::string_view key, double fallback) const {
  const auto v = get(key);
  if (!v) return fallback;
  try {
    size_t used = 0;
    const double d = std::stod(*v, &used);
    if (used == v->size()) return d;
  } catch (const std::exception&) {
  }
  throw DataError(source_ + ": " + std::string(key) + " is not a number: " + *v);
}

int64_t KeyValueConfig::get_int(std::string_view key, int64_t fallback) const {
  const auto v = get(key);
  if (!v) return fallback;
  int64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
  if (ec != std::errc() || ptr != v->data() + v->size())
    throw DataError(source_ + ": " + std::string(key) + " is not an integer: " + *v);
  return out;
}

void KeyValueConfig::set(std::string_view key, std::string value) { entries_[std::string(key)] = std::move(value); }

AppConfig app_config(const KeyValueConfig& kv, const std::filesystem::path& base_dir) {
  static const std::set<std::string, std::less<>> known = {
      "threshold",        "stage_size",      "stage_timeout_seconds", "eligibility_days", "case_ttl_seconds",
      "backend",          "endpoint",        "model",                 "temperature",      "top_p",
      "top_k",            "timeout_ms",      "retries",               "in_flight_limit",  "prompt_mode",
      "audit_log",        "exemplars",       "model_path",            "gazetteer",        "snapshot",
      "listen_host",      "port",            "intake_base_url",       "intake_secret",    "parse_delay_seconds",
      "retrieval_delay_seconds"};
  for (const auto& [key, _] : kv.entries())
    if (!known.count(key)) throw DataError(kv.source() + ": unknown key " + key);

  auto path_of = [&](std::string_view key) -> std::filesystem::path {
    const auto v = kv.get(key);
    if (!v || v->empty()) return {};
    std::filesystem::path p(*v);
    return p.is_relative() && !base_dir.empty() ? base_dir / p : p;
  };
  auto require = [&](bool ok, std::string_view key, std::string_view what) {
    if (!ok) throw DataError(kv.source() + ": " + std::string(key) + " " + std::string(what));
  };

  AppConfig c;
  c.threshold = kv.get_double("threshold", c.threshold);
  require(c.threshold >= 0.0 && c.threshold <= 1.0, "threshold", "must be within [0, 1]");
  const auto stage_size = kv.get_int("stage_size", static_cast<int64_t>(c.dispatch.stage_size));
  require(stage_size > 0, "stage_size", "must be positive");
  c.dispatch.stage_size = static_cast<size_t>(stage_size);
  c.dispatch.stage_timeout_seconds = kv.get_int("stage_timeout_seconds", c.dispatch.stage_timeout_seconds);
  require(c.dispatch.stage_timeout_seconds > 0, "stage_timeout_seconds", "must be positive");
  c.dispatch.eligibility_days = static_cast<int>(kv.get_int("eligibility_days", c.dispatch.eligibility_days));
  require(c.dispatch.eligibility_days >= 0, "eligibility_days", "must be non-negative");
  c.dispatch.case_ttl_seconds = kv.get_int("case_ttl_seconds", c.dispatch.case_ttl_seconds);
  require(c.dispatch.case_ttl_seconds > 0, "case_ttl_seconds", "must be positive");

  const auto backend = kv.get_or("backend", "rules");
  require(backend == "rules" || backend == "remote", "backend", "must be rules or remote");
  c.backend.kind = backend == "rules" ? BackendKind::rules : BackendKind::remote;
  c.backend.endpoint = kv.get_or("endpoint", "");
  require(c.backend.kind == BackendKind::rules || !c.backend.endpoint.empty(), "endpoint",
          "is required for the remote backend");
  c.backend.model = kv.get_or("model", c.backend.model);
  c.backend.decoding.temperature = kv.get_double("temperature", c.backend.decoding.temperature);
  c.backend.decoding.top_p = kv.get_double("top_p", c.backend.decoding.top_p);
  c.backend.decoding.top_k = static_cast<int>(kv.get_int("top_k", c.backend.decoding.top_k));
  c.backend.timeout = std::chrono::milliseconds(kv.get_int("timeout_ms", c.backend.timeout.count()));
  c.backend.retries = static_cast<int>(kv.get_int("retries", c.backend.retries));
  const auto in_flight = kv.get_int("in_flight_limit", static_cast<int64_t>(c.backend.in_flight_limit));
  require(in_flight > 0, "in_flight_limit", "must be positive");
  c.backend.in_flight_limit = static_cast<size_t>(in_flight);
  const auto mode = kv.get_or("prompt_mode", "few_shot");
  require(mode == "few_shot" || mode == "zero_shot", "prompt_mode", "must be few_shot or zero_shot");
  c.backend.mode = mode == "few_shot" ? PromptMode::few_shot : PromptMode::zero_shot;
  c.backend.audit_log = path_of("audit_log");
  c.backend.exemplars = path_of("exemplars");
  try {
    c.backend.check();
  } catch (const Error& e) {
    throw DataError(kv.source() + ": " + e.what());
  }

  c.model_path = path_of("model_path");
  c.gazetteer_path = path_of("gazetteer");
  c.snapshot_path = path_of("snapshot");
  c.listen_host = kv.get_or("listen_host", c.listen_host);
  c.port = static_cast<int>(kv.get_int("port", c.port));
  require(c.port >= 0 && c.port <= 65535, "port", "must be within [0, 65535]");
  c.intake_base_url = kv.get_or("intake_base_url", c.intake_base_url);
  c.intake_secret = kv.get_or("intake_secret", c.intake_secret);
  c.parse_delay_seconds = kv.get_int("parse_delay_seconds", 0);
  c.retrieval_delay_seconds = kv.get_int("retrieval_delay_seconds", 0);
  require(c.parse_delay_seconds >= 0, "parse_delay_seconds", "must be non-negative");
  require(c.retrieval_delay_seconds >= 0, "retrieval_delay_seconds", "must be non-negative");
  return c;
}

AppConfig load_app_config(const std::filesystem::path& path) {
  return app_config(KeyValueConfig::load(path), path.parent_path());
}

}  // namespace cbrs
