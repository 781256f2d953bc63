#pragma once

// JSON-over-HTTP front for Service, versioned under /v1/.
//
//   POST /v1/sessions                  {"condition": "...", "seed": 7?}
//   GET  /v1/sessions/{id}
//   GET  /v1/sessions/{id}/puzzle
//   POST /v1/sessions/{id}/submit      {"puzzle": "P1", "program": {...}}
//   POST /v1/sessions/{id}/skip        {"puzzle": "P1", "client_elapsed_ms": 360000?}
//   POST /v1/sessions/{id}/events      {"kind": "instruction_added", "payload": {...}}
//   GET  /v1/export?condition=...&session=...
//
// Errors come back as {"error": "..."} with 400 (bad request), 404 (unknown
// session), 409 (wrong state) or 500 (storage failure).

#include <string>

#include "httplib.h"
#include "json.hpp"
#include "lightbot/service.hpp"

namespace lightbot::service {

namespace detail {

inline void send_json(httplib::Response& res, const Json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

inline void send_error(httplib::Response& res, int status, const std::string& message) {
  Json body;
  body["error"] = message;
  send_json(res, body, status);
}

inline nlohmann::json parse_body(const httplib::Request& req) {
  auto body = nlohmann::json::parse(req.body.empty() ? std::string("{}") : req.body);
  if (!body.is_object()) throw Error("request body must be a JSON object");
  return body;
}

// Runs a handler, mapping exceptions to status codes.
template <class F>
httplib::Server::Handler guarded(F f) {
  return [f](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const NotFound& e) {
      send_error(res, 404, e.what());
    } catch (const Conflict& e) {
      send_error(res, 409, e.what());
    } catch (const StorageError& e) {
      send_error(res, 500, e.what());
    } catch (const nlohmann::json::exception& e) {
      send_error(res, 400, e.what());
    } catch (const Error& e) {
      send_error(res, 400, e.what());
    }
  };
}

}  // namespace detail

inline void register_routes(httplib::Server& server, Service& svc) {
  using detail::guarded;
  using detail::parse_body;
  using detail::send_json;

  server.Post("/v1/sessions", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
                const auto body = parse_body(req);
                std::optional<std::uint64_t> seed;
                if (body.contains("seed")) seed = body["seed"].get<std::uint64_t>();
                send_json(res, svc.create_session(body.at("condition").get<std::string>(), seed), 201);
              }));
  server.Get(R"(/v1/sessions/([A-Za-z0-9_-]+))",
             guarded([&svc](const httplib::Request& req, httplib::Response& res) {
               send_json(res, svc.get_session(req.matches[1]));
             }));
  server.Get(R"(/v1/sessions/([A-Za-z0-9_-]+)/puzzle)",
             guarded([&svc](const httplib::Request& req, httplib::Response& res) {
               send_json(res, svc.get_puzzle(req.matches[1]));
             }));
  server.Post(R"(/v1/sessions/([A-Za-z0-9_-]+)/submit)",
              guarded([&svc](const httplib::Request& req, httplib::Response& res) {
                const auto body = parse_body(req);
                send_json(res, svc.submit_program(req.matches[1], body.at("puzzle").get<std::string>(),
                                                  body.at("program")));
              }));
  server.Post(R"(/v1/sessions/([A-Za-z0-9_-]+)/skip)",
              guarded([&svc](const httplib::Request& req, httplib::Response& res) {
                const auto body = parse_body(req);
                std::optional<std::int64_t> client;
                if (body.contains("client_elapsed_ms")) client = body["client_elapsed_ms"].get<std::int64_t>();
                const auto out = svc.skip_puzzle(req.matches[1], body.at("puzzle").get<std::string>(), client);
                send_json(res, out, out["ok"].get<bool>() ? 200 : 409);
              }));
  server.Post(R"(/v1/sessions/([A-Za-z0-9_-]+)/events)",
              guarded([&svc](const httplib::Request& req, httplib::Response& res) {
                const auto body = parse_body(req);
                Json out;
                out["seq"] = svc.log_event(req.matches[1], body.at("kind").get<std::string>(),
                                           body.value("payload", nlohmann::json::object()));
                send_json(res, out);
              }));
  server.Get("/v1/export", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
               Service::ExportFilter filter;
               if (req.has_param("condition")) filter.condition = req.get_param_value("condition");
               if (req.has_param("session")) filter.session = req.get_param_value("session");
               res.set_content(svc.export_sessions(filter), "application/x-ndjson");
             }));
  if (!svc.config().static_dir.empty()) {
    if (!server.set_mount_point("/", svc.config().static_dir.string())) {
      throw Error("static directory " + svc.config().static_dir.string() + " does not exist");
    }
  }
}

}  // namespace lightbot::service
