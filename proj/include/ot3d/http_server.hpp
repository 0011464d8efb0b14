#pragma once

#include <string>

#include <httplib.h>

#include "ot3d/service.hpp"

namespace ot3d::service {

inline Request from_httplib(const httplib::Request& req) {
  Request out;
  out.method = req.method;
  out.path = req.path;
  for (const auto& [k, v] : req.params) out.query[k] = v;
  out.content_type = req.get_header_value("Content-Type");
  if (req.is_multipart_form_data()) {
    for (const auto& [key, part] : req.files) {
      if (part.filename.empty()) {
        out.fields[key] = part.content;
      } else {
        out.files.push_back(part.content);
      }
    }
  } else {
    out.body = req.body;
  }
  return out;
}

/// Binds every session route of `manager` on `server`, with permissive CORS
/// so a browser frontend on another origin can call it.
inline void bind_routes(httplib::Server& server, SessionManager& manager) {
  server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                              {"Access-Control-Allow-Headers", "Content-Type"},
                              {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
  auto handler = [&manager](const httplib::Request& req, httplib::Response& res) {
    const Response out = manager.handle(from_httplib(req));
    res.status = out.status;
    res.set_content(out.body.dump(), "application/json");
  };
  server.Get(R"(/sessions/.*)", handler);
  server.Post(R"(/sessions(/.*)?)", handler);
  server.Options(R"(/sessions(/.*)?)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
  server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string what = "internal error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      what = e.what();
    } catch (...) {
    }
    res.status = 500;
    res.set_content(error_body(ErrorCode::io_error, what).dump(), "application/json");
  });
}

}  // namespace ot3d::service
