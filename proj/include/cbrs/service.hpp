#pragma once

#include <iosfwd>
#include <memory>
#include <string>

#include "cbrs/config.hpp"
#include "cbrs/gateway.hpp"

namespace cbrs {

// HTTP/JSON front end over a pipeline:
//   POST /messages   InboundEvent (kind message, edit, command or donor_response)
//   POST /donors     register, or update when donor_id is present
//   GET  /donors/{id}
//   POST /responses  {request_id | message_id, sender, affirmative}
//   GET  /requests/{id}
//   GET  /health
// One JSON log line per request goes to log.
class Service {
 public:
  Service(Pipeline& pipeline, std::ostream& log);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  // Binds (port 0 picks a free one) and returns the bound port.
  int bind(const std::string& host, int port);
  // Blocks until stop().
  void run();
  void stop();
  void log_line(const nlohmann::ordered_json& j);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Builds the full stack from config and serves until interrupted. Restores
// the snapshot when one exists.
int serve(const AppConfig& cfg, std::ostream& log);

std::unique_ptr<Layer1> make_layer1(const AppConfig& cfg);

}  // namespace cbrs
