#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>

#include "cbrs/dispatch.hpp"
#include "cbrs/layer2.hpp"

namespace cbrs {

// Flat "key = value" text; '#' starts a comment line.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::string_view text, std::string_view source = "<config>");
  static KeyValueConfig load(const std::filesystem::path& path);

  bool has(std::string_view key) const;
  std::optional<std::string> get(std::string_view key) const;
  std::string get_or(std::string_view key, std::string fallback) const;
  double get_double(std::string_view key, double fallback) const;
  int64_t get_int(std::string_view key, int64_t fallback) const;
  void set(std::string_view key, std::string value);
  const std::map<std::string, std::string, std::less<>>& entries() const { return entries_; }
  const std::string& source() const { return source_; }

 private:
  std::map<std::string, std::string, std::less<>> entries_;
  std::string source_;
};

struct AppConfig {
  double threshold = 0.5;
  DispatchConfig dispatch;
  BackendConfig backend;
  std::filesystem::path model_path;  // empty: keyword Layer 1
  std::filesystem::path gazetteer_path;
  std::filesystem::path snapshot_path;
  std::string listen_host = "127.0.0.1";
  int port = 8080;
  std::string intake_base_url = "https://cbrs.local/intake/";
  std::string intake_secret = "change-me";
  // Logical-clock cost of the parse and match steps in simulation.
  int64_t parse_delay_seconds = 0;
  int64_t retrieval_delay_seconds = 0;
};

// Unknown keys and unparsable values throw DataError. Relative paths are
// resolved against base_dir.
AppConfig app_config(const KeyValueConfig& kv, const std::filesystem::path& base_dir = {});
AppConfig load_app_config(const std::filesystem::path& path);

}  // namespace cbrs
