#pragma once

// HTTP routes for ccbm::Service.

#include <optional>
#include <string>

#include "httplib.h"

#include "ccbm/service.hpp"

namespace ccbm {

inline void reply(httplib::Response& res, const ServiceResponse& r) {
  res.status = r.status;
  res.set_content(r.body.dump(), "application/json");
}

// Handlers capture `service` by reference; it must outlive the server.
inline void bind_routes(httplib::Server& server, const Service& service) {
  server.Get("/model/meta", [&](const httplib::Request&, httplib::Response& res) { reply(res, service.meta()); });
  server.Get("/samples", [&](const httplib::Request& req, httplib::Response& res) {
    std::optional<std::string> limit;
    if (req.has_param("limit")) limit = req.get_param_value("limit");
    reply(res, service.samples(limit));
  });
  server.Get(R"(/explain/([^/]+))", [&](const httplib::Request& req, httplib::Response& res) {
    reply(res, service.explain(req.matches[1].str()));
  });
  server.Post("/intervene", [&](const httplib::Request& req, httplib::Response& res) {
    reply(res, service.intervene(req.body));
  });
  server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string what = "internal error";
    try {
      if (ep) std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      what = e.what();
    } catch (...) {
    }
    reply(res, {500, {{"error", "internal"}, {"message", what}}});
  });
}

}  // namespace ccbm
