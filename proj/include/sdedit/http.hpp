#pragma once

// JSON-over-HTTP front end for SessionStore.
//
//   POST /v1/sessions                      {"preset"}                  -> {"session_id", "t0_search"}
//   GET  /v1/sessions/{id}                                             -> session state
//   POST /v1/sessions/{id}/guide           {"guide": b64, "mask"?: b64} -> {"shape"}
//   POST /v1/sessions/{id}/generate        {"t0"?, "n_steps"?, "repeats"?, "seed"?, "hard_restore"?}
//   POST /v1/sessions/{id}/feedback        {"verdict"}                 -> {"t0_search"}
//   GET  /v1/sessions/{id}/results/{rid}                               -> PPM/PGM bytes or a text vector
//   GET  /v1/presets
//
// Errors: {"error": {"code", "message"}} with a matching HTTP status.

#include "sdedit/serialization.hpp"
#include "sdedit/service.hpp"

#include <httplib.h>
#include <json.hpp>

#include <string>

namespace sdedit {

inline json shape_to_json(const Shape& s) {
  if (s.image) return {{"c", s.channels}, {"h", s.height}, {"w", s.width}};
  return {{"d", s.size()}};
}

inline json search_to_json(const T0SearchState& s) {
  json hist = json::array();
  for (const auto& h : s.history) hist.push_back({{"t0", h.t0}, {"feedback", to_string(h.feedback)}});
  return {{"lo", s.lo},
          {"hi", s.hi},
          {"probe", s.probe},
          {"iterations", s.iterations},
          {"accepted", s.accepted},
          {"soft_cap_reached", s.soft_cap_reached()},
          {"history", hist}};
}

inline json generate_to_json(const GenerateResult& r, const std::string& session_id) {
  return {{"result_id", r.result_id},
          {"result_url", "/v1/sessions/" + session_id + "/results/" + r.result_id},
          {"t0", r.t0},
          {"n_steps", r.n_steps},
          {"repeats", r.repeats},
          {"seed", r.seed},
          {"metrics", {{"l2", r.metrics.l2}, {"l2_squared", r.metrics.l2_squared}}},
          {"elapsed_ms", r.elapsed_ms}};
}

inline json presets_to_json(const std::vector<ModelPreset>& presets) {
  json arr = json::array();
  for (const auto& p : presets)
    arr.push_back({{"name", p.name},
                   {"description", p.description},
                   {"score", p.score_kind},
                   {"schedule", schedule_to_json(p.schedule)},
                   {"shape", shape_to_json(p.shape)}});
  return {{"presets", arr}};
}

namespace detail {

inline void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

inline void send_error(httplib::Response& res, ApiCode code, const std::string& msg) {
  send_json(res, http_status(code), {{"error", {{"code", to_string(code)}, {"message", msg}}}});
}

inline json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  json j = json::parse(req.body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw ApiError(ApiCode::bad_request, "request body must be a JSON object");
  return j;
}

template <class T>
std::optional<T> opt_field(const json& j, const char* key) {
  const auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw ApiError(ApiCode::bad_request, std::string("field '") + key + "' has the wrong type");
  }
}

inline std::string b64_field(const json& j, const char* key) {
  const auto v = opt_field<std::string>(j, key);
  if (!v) throw ApiError(ApiCode::bad_request, std::string("missing field '") + key + "'");
  try {
    return base64_decode(*v);
  } catch (const FormatError& e) {
    throw ApiError(ApiCode::bad_request, std::string(key) + ": " + e.what());
  }
}

/// Runs a handler, mapping exceptions onto the error envelope.
template <class F>
auto guarded(F f) {
  return [f](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const ApiError& e) {
      send_error(res, e.code(), e.what());
    } catch (const std::exception& e) {
      send_error(res, ApiCode::internal, e.what());
    }
  };
}

} // namespace detail

/// Registers every route on `server`. The store must outlive the server.
inline void install_routes(httplib::Server& server, SessionStore& store) {
  using detail::guarded;
  using detail::send_json;

  server.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
  server.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });

  server.Get("/v1/presets", guarded([&store](const httplib::Request&, httplib::Response& res) {
               send_json(res, 200, presets_to_json(store.presets()));
             }));

  server.Post("/v1/sessions", guarded([&store](const httplib::Request& req, httplib::Response& res) {
                const json body = detail::parse_body(req);
                const auto preset = detail::opt_field<std::string>(body, "preset");
                if (!preset) throw ApiError(ApiCode::bad_request, "missing field 'preset'");
                const std::string id = store.create_session(*preset);
                send_json(res, 201, {{"session_id", id}, {"preset", *preset}, {"t0_search", search_to_json(store.view(id).search)}});
              }));

  server.Get(R"(/v1/sessions/([0-9a-f]+))", guarded([&store](const httplib::Request& req, httplib::Response& res) {
               const SessionView v = store.view(req.matches[1]);
               json j = {{"session_id", v.id},
                         {"preset", v.preset},
                         {"t0_search", search_to_json(v.search)},
                         {"has_mask", v.has_mask},
                         {"pending_candidate", v.pending_candidate},
                         {"results", v.result_ids}};
               j["guide_shape"] = v.guide_shape ? shape_to_json(*v.guide_shape) : json(nullptr);
               send_json(res, 200, j);
             }));

  server.Post(R"(/v1/sessions/([0-9a-f]+)/guide)", guarded([&store](const httplib::Request& req, httplib::Response& res) {
                const json body = detail::parse_body(req);
                const std::string guide = detail::b64_field(body, "guide");
                std::optional<std::string> mask;
                if (body.contains("mask") && !body["mask"].is_null()) mask = detail::b64_field(body, "mask");
                const Shape shape = store.submit_guide(req.matches[1], guide, mask);
                send_json(res, 200, {{"shape", shape_to_json(shape)}, {"has_mask", mask.has_value()}});
              }));

  server.Post(R"(/v1/sessions/([0-9a-f]+)/generate)", guarded([&store](const httplib::Request& req, httplib::Response& res) {
                const json body = detail::parse_body(req);
                GenerateRequest g;
                g.t0 = detail::opt_field<double>(body, "t0");
                g.n_steps = detail::opt_field<int>(body, "n_steps");
                g.repeats = detail::opt_field<int>(body, "repeats");
                g.seed = detail::opt_field<std::uint64_t>(body, "seed");
                g.hard_restore = detail::opt_field<bool>(body, "hard_restore").value_or(false);
                const std::string id = req.matches[1];
                send_json(res, 200, generate_to_json(store.generate(id, g), id));
              }));

  server.Post(R"(/v1/sessions/([0-9a-f]+)/feedback)", guarded([&store](const httplib::Request& req, httplib::Response& res) {
                const json body = detail::parse_body(req);
                const auto verdict = detail::opt_field<std::string>(body, "verdict");
                const auto fb = verdict ? parse_feedback(*verdict) : std::nullopt;
                if (!fb) throw ApiError(ApiCode::bad_request, "verdict must be more_realistic, more_faithful or accept");
                send_json(res, 200, {{"t0_search", search_to_json(store.feedback(req.matches[1], *fb))}});
              }));

  server.Get(R"(/v1/sessions/([0-9a-f]+)/results/(r[0-9]+))",
             guarded([&store](const httplib::Request& req, httplib::Response& res) {
               const std::string id = req.matches[1];
               const std::string bytes = store.result_payload(id, req.matches[2]);
               const Shape shape = store.result_shape(id);
               res.status = 200;
               res.set_content(bytes, !shape.image           ? "text/plain"
                                      : shape.channels == 1 ? "image/x-portable-graymap"
                                                            : "image/x-portable-pixmap");
             }));

  server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) detail::send_error(res, res.status == 404 ? ApiCode::not_found : ApiCode::bad_request, "no such route");
  });
}

} // namespace sdedit
