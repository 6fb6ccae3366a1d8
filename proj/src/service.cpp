#include "cbrs/service.hpp"

#include <httplib.h>

#include <chrono>
#include <csignal>
#include <condition_variable>
#include <ostream>
#include <thread>

namespace cbrs {

namespace {

void reply_json(httplib::Response& res, int status, const nlohmann::ordered_json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void reply_error(httplib::Response& res, int status, std::string_view message,
                 const std::vector<FieldIssue>& fields = {}) {
  nlohmann::ordered_json j{{"error", message}};
  if (!fields.empty()) {
    j["fields"] = nlohmann::ordered_json::array();
    for (const auto& f : fields) j["fields"].push_back({{"field", f.field}, {"reason", f.reason}});
  }
  reply_json(res, status, j);
}

std::optional<nlohmann::json> parse_body(const httplib::Request& req, httplib::Response& res) {
  auto j = nlohmann::json::parse(req.body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    reply_error(res, 400, "body must be a JSON object", {{"body", "malformed JSON"}});
    return std::nullopt;
  }
  return j;
}

std::optional<uint64_t> parse_id(const std::string& s) {
  if (s.empty() || s.size() > 19 || s.find_first_not_of("0123456789") != std::string::npos) return std::nullopt;
  return std::stoull(s);
}

nlohmann::ordered_json donor_body(const DonorRecord& d) {
  auto j = to_json(d);
  j["registered_at"] = format_timestamp(d.registered_at);
  return j;
}

}  // namespace

struct Service::Impl {
  Pipeline& pipeline;
  std::ostream& log;
  std::mutex log_mu;
  httplib::Server server;

  Impl(Pipeline& p, std::ostream& l) : pipeline(p), log(l) { routes(); }

  void write_log(const nlohmann::ordered_json& j) {
    std::lock_guard lock(log_mu);
    log << j.dump() << "\n";
    log.flush();
  }

  void routes() {
    server.set_logger([this](const httplib::Request& req, const httplib::Response& res) {
      write_log({{"ts", format_timestamp(SystemClock().now())},
                 {"method", req.method},
                 {"path", req.path},
                 {"status", res.status},
                 {"bytes", res.body.size()}});
    });
    server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
      try {
        std::rethrow_exception(ep);
      } catch (const std::exception& e) {
        reply_error(res, 500, e.what());
      }
    });

    server.Get("/health", [](const httplib::Request&, httplib::Response& res) {
      reply_json(res, 200, {{"status", "ok"}});
    });

    server.Post("/messages", [this](const httplib::Request& req, httplib::Response& res) {
      const auto body = parse_body(req, res);
      if (!body) return;
      InboundEvent ev;
      try {
        ev = inbound_from_json(*body);
      } catch (const DataError& e) {
        return reply_error(res, 400, "invalid event", {{"event", e.what()}});
      }
      switch (ev.kind) {
        case InboundKind::message: {
          const auto trace = pipeline.ingest_message(ev);
          return reply_json(res, 200, to_json(trace));
        }
        case InboundKind::edit: {
          const auto status = pipeline.handle_edit_event(ev);
          if (status == EditStatus::unknown_message) return reply_error(res, 404, "unknown message_id");
          return reply_json(res, 200, {{"status", to_string(status)}});
        }
        case InboundKind::command:
          return reply_json(res, 200, {{"reply", pipeline.handle_command(ev.text, ev.sender)}});
        case InboundKind::donor_response:
          return respond(ev, res);
      }
    });

    server.Post("/responses", [this](const httplib::Request& req, httplib::Response& res) {
      const auto body = parse_body(req, res);
      if (!body) return;
      InboundEvent ev;
      try {
        ev = inbound_from_json(*body, InboundKind::donor_response);
      } catch (const DataError& e) {
        return reply_error(res, 400, "invalid response", {{"response", e.what()}});
      }
      if (ev.kind != InboundKind::donor_response) return reply_error(res, 400, "kind must be donor_response");
      respond(ev, res);
    });

    server.Post("/donors", [this](const httplib::Request& req, httplib::Response& res) {
      const auto body = parse_body(req, res);
      if (!body) return;
      const auto& j = *body;
      std::vector<FieldIssue> issues;
      auto str = [&](const char* key, bool required) -> std::optional<std::string> {
        if (!j.contains(key)) {
          if (required) issues.push_back({key, "missing"});
          return std::nullopt;
        }
        if (!j[key].is_string()) {
          issues.push_back({key, "must be a string"});
          return std::nullopt;
        }
        return j[key].get<std::string>();
      };
      auto num = [&](const char* key, bool required) -> std::optional<double> {
        if (!j.contains(key)) {
          if (required) issues.push_back({key, "missing"});
          return std::nullopt;
        }
        if (!j[key].is_number()) {
          issues.push_back({key, "must be a number"});
          return std::nullopt;
        }
        return j[key].get<double>();
      };
      auto& dispatch = pipeline.dispatcher();
      try {
        if (j.contains("donor_id")) {
          if (!j["donor_id"].is_number_unsigned()) return reply_error(res, 400, "invalid donor", {{"donor_id", "must be a positive integer"}});
          const auto id = j["donor_id"].get<uint64_t>();
          DonorPatch patch{str("blood_group", false), num("latitude", false), num("longitude", false),
                           str("last_donation_date", false)};
          if (!issues.empty()) return reply_error(res, 400, "invalid donor", issues);
          if (!dispatch.donor(id)) return reply_error(res, 404, "unknown donor_id");
          return reply_json(res, 200, donor_body(dispatch.update_donor(id, patch)));
        }
        DonorRecord d;
        d.platform_id = str("platform_id", true).value_or("");
        d.blood_group = str("blood_group", true).value_or("");
        d.latitude = num("latitude", true).value_or(0.0);
        d.longitude = num("longitude", true).value_or(0.0);
        d.last_donation_date = str("last_donation_date", false).value_or("");
        if (!issues.empty()) return reply_error(res, 400, "invalid donor", issues);
        const auto id = dispatch.register_donor(d);
        reply_json(res, 201, donor_body(*dispatch.donor(id)));
      } catch (const ValidationError& e) {
        reply_error(res, 400, "invalid donor", e.issues());
      }
    });

    server.Get(R"(/donors/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      const auto id = parse_id(req.matches[1]);
      const auto d = id ? pipeline.dispatcher().donor(*id) : std::nullopt;
      if (!d) return reply_error(res, 404, "unknown donor_id");
      reply_json(res, 200, donor_body(*d));
    });

    server.Get(R"(/requests/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      const auto id = parse_id(req.matches[1]);
      const auto c = id ? pipeline.dispatcher().find_case(*id) : std::nullopt;
      if (!c) return reply_error(res, 404, "unknown request_id");
      nlohmann::ordered_json j;
      j["case"] = to_json(*c);
      const auto trace = pipeline.trace_for_request(*id);
      j["trace"] = trace ? to_json(*trace) : nlohmann::ordered_json(nullptr);
      j["ledger"] = nlohmann::ordered_json::array();
      for (const auto& e : pipeline.dispatcher().ledger_for(*id)) j["ledger"].push_back(to_json(e));
      reply_json(res, 200, j);
    });
  }

  void respond(const InboundEvent& ev, httplib::Response& res) {
    try {
      const auto status = pipeline.handle_donor_response(ev);
      reply_json(res, 200, {{"status", to_string(status)}});
    } catch (const Error& e) {
      reply_error(res, 404, e.what());
    }
  }
};

Service::Service(Pipeline& pipeline, std::ostream& log) : impl_(std::make_unique<Impl>(pipeline, log)) {}
Service::~Service() { stop(); }

int Service::bind(const std::string& host, int port) {
  if (port == 0) return impl_->server.bind_to_any_port(host);
  if (!impl_->server.bind_to_port(host, port)) return -1;
  return port;
}

void Service::log_line(const nlohmann::ordered_json& j) { impl_->write_log(j); }

void Service::run() { impl_->server.listen_after_bind(); }
void Service::stop() {
  if (impl_) impl_->server.stop();
}

std::unique_ptr<Layer1> make_layer1(const AppConfig& cfg) {
  if (cfg.model_path.empty()) return std::make_unique<KeywordLayer1>(cfg.threshold);
  return std::make_unique<ModelLayer1>(load_model(cfg.model_path), cfg.threshold);
}

namespace {

std::atomic<Service*> g_service{nullptr};

extern "C" void on_signal(int) {
  if (auto* s = g_service.load()) s->stop();
}

}  // namespace

int serve(const AppConfig& cfg, std::ostream& log) {
  const auto layer1 = make_layer1(cfg);
  const auto layer2 = make_backend(cfg.backend);
  Gazetteer gazetteer = cfg.gazetteer_path.empty() ? Gazetteer{} : Gazetteer::load(cfg.gazetteer_path);
  SystemClock clock;
  Dispatcher dispatch(cfg.dispatch, std::move(gazetteer), clock);
  if (!cfg.snapshot_path.empty() && std::filesystem::exists(cfg.snapshot_path))
    dispatch.load(restore(cfg.snapshot_path));
  Pipeline pipeline(cfg, *layer1, *layer2, dispatch, clock);
  Service service(pipeline, log);
  const int port = service.bind(cfg.listen_host, cfg.port);
  if (port < 0) throw Error("cannot bind " + cfg.listen_host + ":" + std::to_string(cfg.port));

  std::mutex mu;
  std::condition_variable cv;
  bool done = false;
  std::thread ticker([&] {
    std::unique_lock lock(mu);
    while (!cv.wait_for(lock, std::chrono::seconds(1), [&] { return done; })) {
      dispatch.tick();
      pipeline.retry_pending();
      for (const auto& e : dispatch.drain_events()) service.log_line({{"outbound", to_json(e)}});
      if (!cfg.snapshot_path.empty()) persist(dispatch.snapshot(), cfg.snapshot_path);
    }
  });

  g_service = &service;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  service.log_line({{"listening", cfg.listen_host + ":" + std::to_string(port)}});
  service.run();
  g_service = nullptr;
  {
    std::lock_guard lock(mu);
    done = true;
  }
  cv.notify_all();
  ticker.join();
  if (!cfg.snapshot_path.empty()) persist(dispatch.snapshot(), cfg.snapshot_path);
  return 0;
}

}  // namespace cbrs
