#include <httplib.h>

#include "logforge/error.hpp"
#include "logforge/service.hpp"
#include "logforge/executor.hpp"
#include "logforge/version.hpp"

namespace logforge::service {

using json = nlohmann::json;

namespace {

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void error_reply(httplib::Response& res, int status, const std::string& message) {
  reply(res, status, {{"error", {{"message", message}}}});
}

std::optional<Timestamp> time_param(const json& body, const char* key) {
  if (!body.contains(key) || body[key].is_null()) return std::nullopt;
  if (!body[key].is_number_integer()) throw ConfigError(std::string(key) + " must be integer microseconds");
  return body[key].get<Timestamp>();
}

}  // namespace

struct HttpServer::Impl {
  Service& svc;
  httplib::Server server;
  std::thread thread;

  explicit Impl(Service& s) : svc(s) { routes(); }

  // Parses the body or answers 400.
  static std::optional<json> body_of(const httplib::Request& req, httplib::Response& res) {
    auto j = json::parse(req.body, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      error_reply(res, 400, "request body must be a JSON object");
      return std::nullopt;
    }
    return j;
  }

  void routes() {
    server.Post("/api/search", [this](const httplib::Request& req, httplib::Response& res) {
      auto body = body_of(req, res);
      if (!body) return;
      try {
        if (!body->contains("query") || !(*body)["query"].is_string()) {
          error_reply(res, 400, "query must be a string");
          return;
        }
        SearchRequest sr;
        sr.query = (*body)["query"].get<std::string>();
        sr.earliest = time_param(*body, "earliest");
        sr.latest = time_param(*body, "latest");
        sr.profile = body->value("profile", false);
        reply(res, 200, svc.search_json(sr));
      } catch (const ParseError& e) {
        reply(res, 400, {{"error", {{"message", e.message()}, {"offset", e.offset()}, {"expected", e.expected()}}}});
      } catch (const Error& e) {
        error_reply(res, 400, e.what());
      }
    });

    server.Get("/api/dashboards", [this](const httplib::Request&, httplib::Response& res) {
      json arr = json::array();
      for (const auto& d : svc.dashboards()) arr.push_back(d.to_json());
      reply(res, 200, {{"dashboards", arr}});
    });
    server.Post("/api/dashboards", [this](const httplib::Request& req, httplib::Response& res) {
      auto body = body_of(req, res);
      if (!body) return;
      try {
        auto d = Dashboard::from_json(*body);
        svc.save_dashboard(d);
        reply(res, 201, d.to_json());
      } catch (const ParseError& e) {
        reply(res, 400, {{"error", {{"message", e.message()}, {"offset", e.offset()}}}});
      } catch (const Error& e) {
        error_reply(res, 400, e.what());
      }
    });
    server.Get(R"(/api/dashboards/([^/]+)/render)", [this](const httplib::Request& req, httplib::Response& res) {
      auto out = svc.render_dashboard(req.matches[1]);
      if (!out) {
        error_reply(res, 404, "no dashboard '" + std::string(req.matches[1]) + "'");
        return;
      }
      reply(res, 200, *out);
    });
    server.Get(R"(/api/dashboards/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      auto d = svc.dashboard(req.matches[1]);
      if (!d) {
        error_reply(res, 404, "no dashboard '" + std::string(req.matches[1]) + "'");
        return;
      }
      reply(res, 200, d->to_json());
    });

    server.Get("/api/alerts", [this](const httplib::Request&, httplib::Response& res) {
      json defs = json::array();
      for (const auto& a : svc.alerts()) defs.push_back(a.to_json());
      reply(res, 200, {{"alerts", defs}, {"fired", svc.fired_alerts()}});
    });
    server.Post("/api/alerts", [this](const httplib::Request& req, httplib::Response& res) {
      auto body = body_of(req, res);
      if (!body) return;
      try {
        auto a = AlertDef::from_json(*body);
        svc.save_alert(a);
        reply(res, 201, a.to_json());
      } catch (const ParseError& e) {
        reply(res, 400, {{"error", {{"message", e.message()}, {"offset", e.offset()}}}});
      } catch (const Error& e) {
        error_reply(res, 400, e.what());
      }
    });

    server.Get("/api/findings", [this](const httplib::Request&, httplib::Response& res) {
      auto r = svc.findings();
      json arr = json::array();
      for (const auto& f : r.findings) arr.push_back(security::to_json(f));
      reply(res, 200, {{"findings", arr}, {"by_rule", query::to_json(r.by_rule)}, {"unresolved", r.unresolved}});
    });

    server.Get("/api/health", [this](const httplib::Request&, httplib::Response& res) {
      auto& idx = svc.index();
      reply(res, 200,
            {{"status", "ok"},
             {"version", kVersionString},
             {"index", idx.name()},
             {"events", idx.event_count()},
             {"buckets", idx.bucket_count()}});
    });

    if (std::filesystem::is_directory(svc.config().ui_dir))
      server.set_mount_point("/ui", svc.config().ui_dir.string());

    server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
      try {
        std::rethrow_exception(ep);
      } catch (const std::exception& e) {
        error_reply(res, 500, e.what());
      } catch (...) {
        error_reply(res, 500, "internal error");
      }
    });
  }
};

HttpServer::HttpServer(Service& svc) : impl_(std::make_unique<Impl>(svc)) {}

HttpServer::~HttpServer() { stop(); }

std::uint16_t HttpServer::bind(const std::string& host, std::uint16_t port) {
  if (port == 0) {
    int p = impl_->server.bind_to_any_port(host);
    if (p < 0) throw Error("cannot bind " + host);
    return static_cast<std::uint16_t>(p);
  }
  if (!impl_->server.bind_to_port(host, port)) throw Error("cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::start() {
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
}

void HttpServer::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace logforge::service
