#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <boost/beast/core/detail/base64.hpp>
#include <nlohmann/json.hpp>

#include "ot3d/cloud_io.hpp"
#include "ot3d/config.hpp"
#include "ot3d/error.hpp"
#include "ot3d/features.hpp"
#include "ot3d/learner.hpp"
#include "ot3d/rng.hpp"

namespace ot3d::service {

using json = nlohmann::ordered_json;

inline std::string base64_encode(std::string_view bytes) {
  namespace b64 = boost::beast::detail::base64;
  std::string out(b64::encoded_size(bytes.size()), '\0');
  out.resize(b64::encode(out.data(), bytes.data(), bytes.size()));
  return out;
}

inline std::string base64_decode(std::string_view text) {
  namespace b64 = boost::beast::detail::base64;
  require(text.size() % 4 == 0, ErrorCode::format_error, "invalid base64 payload");
  std::size_t padding = 0;
  while (padding < 2 && padding < text.size() && text[text.size() - 1 - padding] == '=') ++padding;
  std::string out(b64::decoded_size(text.size()), '\0');
  const auto [written, consumed] = b64::decode(out.data(), text.data(), text.size());
  require(consumed == text.size() - padding, ErrorCode::format_error, "invalid base64 payload");
  out.resize(written);
  return out;
}

inline int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::not_found: return 404;
    case ErrorCode::duplicate_category:
    case ErrorCode::stale_reference:
    case ErrorCode::not_ready: return 409;
    case ErrorCode::unusable_view:
    case ErrorCode::unknown_category: return 422;
    default: return 400;
  }
}

inline json error_body(ErrorCode code, std::string_view message, json detail = json::object()) {
  return {{"code", to_string(code)}, {"message", message}, {"detail", std::move(detail)}};
}

/// Canonical JSON form of a classification: label, margin (null below two
/// categories) and every OCD ascending.
inline json to_json(const ClassificationResult& result) {
  json ranked = json::array();
  for (const auto& d : result.ranked()) ranked.push_back({{"category", d.category}, {"ocd", d.ocd}});
  return {{"label", result.label},
          {"margin", result.margin ? json(*result.margin) : json(nullptr)},
          {"ranked", std::move(ranked)}};
}

/// At most `limit` points, evenly strided over the cloud.
inline json cloud_echo(const PointCloud& cloud, std::size_t limit = 2048) {
  const std::size_t n = cloud.size();
  const std::size_t m = std::min(n, limit);
  json points = json::array();
  for (std::size_t i = 0; i < m; ++i) {
    const auto& p = cloud.points[i * n / m];
    points.push_back({p.x(), p.y(), p.z()});
  }
  return {{"total_points", n}, {"points", std::move(points)}};
}

struct SessionConfig {
  std::string config_text;
  std::optional<std::string> model_path;

  /// Accepts {"config": {key: value}}, {"config_text": "..."} and an
  /// optional "model_path" (a directory written by save_generic).
  static SessionConfig from_json(const json& body) {
    require(body.is_object(), ErrorCode::invalid_argument, "session request must be a JSON object");
    SessionConfig out;
    if (body.contains("config_text")) {
      require(body["config_text"].is_string(), ErrorCode::invalid_argument, "config_text must be a string");
      out.config_text = body["config_text"].get<std::string>();
    }
    if (body.contains("config")) {
      const auto& cfg = body["config"];
      require(cfg.is_object(), ErrorCode::invalid_argument, "config must be an object");
      for (const auto& [key, value] : cfg.items()) {
        out.config_text += key + " = " + (value.is_string() ? value.get<std::string>() : value.dump()) + "\n";
      }
    }
    if (body.contains("model_path")) {
      require(body["model_path"].is_string(), ErrorCode::invalid_argument, "model_path must be a string");
      out.model_path = body["model_path"].get<std::string>();
    }
    return out;
  }

  json to_json() const {
    json out{{"config_text", config_text}};
    if (model_path) out["model_path"] = *model_path;
    return out;
  }
};

/// One interactive learner plus its append-only event log.
///
/// Learning calls (teach, correct, maintenance) hold the session lock
/// exclusively; classify and state share it. Events are appended while the
/// session lock is held, so log order is consistent with learner state.
class Session {
 public:
  static constexpr std::size_t kCacheCapacity = 256;

  Session(std::string id, SessionConfig config)
      : id_(std::move(id)), config_(std::move(config)), learner_(Params::parse(config_.config_text)) {
    if (config_.model_path) learner_.load_generic(std::filesystem::path(*config_.model_path));
  }

  const std::string& id() const { return id_; }
  const SessionConfig& config() const { return config_; }
  const Params& params() const { return learner_.params(); }

  json teach(const std::string& name, const std::vector<std::string>& uploads) {
    require(!name.empty(), ErrorCode::invalid_argument, "teach needs a category name");
    require(name != kUnknownLabel, ErrorCode::invalid_argument, "'Unknown' is reserved");
    require(!uploads.empty(), ErrorCode::empty_input, "teach needs at least one cloud");
    std::vector<FeatureSet> views;
    for (const auto& bytes : uploads) views.push_back(describe(bytes).second);
    std::unique_lock lock(mutex_);
    learner_.teach(name, views);
    json views_json = json::array();
    for (const auto& bytes : uploads) views_json.push_back(base64_encode(bytes));
    const auto* category = learner_.store().find(name);
    json summary{{"category", name}, {"instances", category->instances.size()}, {"ready", learner_.ready()}};
    append({{"type", "teach"}, {"name", name}, {"views", std::move(views_json)}, {"response", summary}});
    return summary;
  }

  json classify(const std::string& upload) {
    auto [cloud, features] = describe(upload);
    std::shared_lock lock(mutex_);
    const auto result = learner_.classify(features);
    const json result_json = to_json(result);
    std::lock_guard log(log_mutex_);
    const std::uint64_t ref = next_ref_++;
    cache_[ref] = {std::move(features), result.label};
    while (cache_.size() > kCacheCapacity) cache_.erase(cache_.begin());
    ++classified_;
    json response{{"object_ref", ref_name(ref)}};
    response.update(result_json);
    append_locked({{"type", "classify"}, {"object_ref", ref_name(ref)}, {"data", base64_encode(upload)},
                   {"response", result_json}});
    response["cloud"] = cloud_echo(cloud);
    return response;
  }

  json correct(const std::string& name, const std::string& object_ref) {
    std::unique_lock lock(mutex_);
    const std::uint64_t ref = parse_ref(object_ref);
    auto it = cache_.find(ref);
    require(it != cache_.end(), ErrorCode::stale_reference,
            "object reference '" + object_ref + "' is no longer retained");
    require(learner_.store().find(name) != nullptr, ErrorCode::unknown_category, "unknown category '" + name + "'");
    learner_.correct(name, it->second.features);
    const bool mistake = it->second.predicted != name;
    if (mistake) ++mistakes_;
    cache_.erase(it);
    json ack{{"category", name},
             {"instances", learner_.store().find(name)->instances.size()},
             {"counted_as_mistake", mistake}};
    append({{"type", "correct"}, {"name", name}, {"object_ref", object_ref}, {"response", ack}});
    return ack;
  }

  json refresh_topics() {
    std::unique_lock lock(mutex_);
    learner_.refresh_topics();
    json ack{{"ok", true}, {"ready", learner_.ready()}};
    append({{"type", "refresh_topics"}, {"response", ack}});
    return ack;
  }

  json rebuild_dictionary() {
    std::unique_lock lock(mutex_);
    learner_.rebuild_dictionary();
    json ack{{"ok", true}, {"ready", learner_.ready()}};
    append({{"type", "rebuild_dictionary"}, {"response", ack}});
    return ack;
  }

  json state() const {
    std::shared_lock lock(mutex_);
    std::lock_guard log(log_mutex_);
    json categories = json::array();
    for (const auto& c : learner_.store().categories()) {
      categories.push_back({{"name", c.name}, {"instances", c.instances.size()}});
    }
    json accuracy = classified_ == 0 ? json(nullptr)
                                     : json(static_cast<double>(classified_ - mistakes_) / classified_);
    return {{"id", id_},
            {"categories", std::move(categories)},
            {"classified", classified_},
            {"mistakes", mistakes_},
            {"accuracy", std::move(accuracy)},
            {"ready", learner_.ready()},
            {"views_learned", learner_.views_learned()},
            {"events", events_.size()}};
  }

  /// The event log; upload payloads are replaced by their sizes unless
  /// `include_data`.
  json events(bool include_data = false) const {
    std::lock_guard log(log_mutex_);
    json out = json::array();
    for (const auto& e : events_) out.push_back(include_data ? e : strip(e));
    return out;
  }

  json export_json() const {
    return {{"format", "ot3d-session"}, {"version", 1}, {"session", config_.to_json()}, {"events", events(true)}};
  }

  std::map<std::string, std::size_t> instance_counts() const {
    std::shared_lock lock(mutex_);
    return learner_.instance_counts();
  }

 private:
  struct CachedObject {
    FeatureSet features;
    std::string predicted;
  };

  std::pair<PointCloud, FeatureSet> describe(const std::string& bytes) const {
    PointCloud cloud = parse_cloud(bytes);
    FeatureSet features = extract_features(cloud, learner_.params().features);
    return {std::move(cloud), std::move(features)};
  }

  static std::string ref_name(std::uint64_t ref) { return "obj-" + std::to_string(ref); }

  std::uint64_t parse_ref(const std::string& text) const {
    std::uint64_t ref = 0;
    const bool ok = text.starts_with("obj-") &&
                    std::from_chars(text.data() + 4, text.data() + text.size(), ref).ptr == text.data() + text.size() &&
                    text.size() > 4;
    require(ok, ErrorCode::invalid_argument, "malformed object reference '" + text + "'");
    require(ref < next_ref_, ErrorCode::not_found, "object reference '" + text + "' was never issued");
    return ref;
  }

  static json strip(const json& event) {
    json out = event;
    if (out.contains("data")) out["data"] = json{{"bytes", base64_decode(out["data"].get<std::string>()).size()}};
    if (out.contains("views")) out["views"] = out["views"].size();
    return out;
  }

  void append(json event) {
    std::lock_guard log(log_mutex_);
    append_locked(std::move(event));
  }

  void append_locked(json event) {
    json e{{"seq", events_.size()}};
    e.update(event);
    events_.push_back(std::move(e));
  }

  std::string id_;
  SessionConfig config_;
  mutable std::shared_mutex mutex_;
  mutable std::mutex log_mutex_;
  Learner learner_;
  std::vector<json> events_;
  std::map<std::uint64_t, CachedObject> cache_;
  std::uint64_t next_ref_ = 0;
  std::size_t classified_ = 0;
  std::size_t mistakes_ = 0;
};

/// Transport-independent request; the HTTP binding fills it from the wire.
struct Request {
  std::string method;
  std::string path;
  std::map<std::string, std::string> query;
  std::string content_type;
  std::string body;
  std::vector<std::string> files;              // multipart cloud uploads
  std::map<std::string, std::string> fields;   // multipart text fields
};

struct Response {
  int status = 200;
  json body;
};

struct ReplayReport {
  std::string session_id;
  std::size_t replayed = 0;
  std::vector<std::size_t> mismatched;  // seq of classify events whose output differs

  json to_json() const {
    return {{"id", session_id}, {"replayed", replayed}, {"consistent", mismatched.empty()}, {"mismatched", mismatched}};
  }
};

class SessionManager {
 public:
  explicit SessionManager(std::optional<std::uint64_t> id_seed = std::nullopt)
      : ids_(id_seed.value_or((static_cast<std::uint64_t>(std::random_device{}()) << 32) ^ std::random_device{}())) {}

  std::string create(const SessionConfig& config) {
    std::string id;
    {
      std::unique_lock lock(mutex_);
      do {
        char buf[20];
        const std::uint32_t hi = ids_.next();
        std::snprintf(buf, sizeof buf, "s%08x%08x", hi, ids_.next());
        id = buf;
      } while (sessions_.count(id));
      sessions_[id] = nullptr;
    }
    try {
      auto session = std::make_shared<Session>(id, config);
      std::unique_lock lock(mutex_);
      sessions_[id] = std::move(session);
    } catch (...) {
      std::unique_lock lock(mutex_);
      sessions_.erase(id);
      throw;
    }
    return id;
  }

  std::shared_ptr<Session> get(const std::string& id) const {
    std::shared_lock lock(mutex_);
    auto it = sessions_.find(id);
    require(it != sessions_.end() && it->second, ErrorCode::not_found, "no session '" + id + "'");
    return it->second;
  }

  std::size_t size() const {
    std::shared_lock lock(mutex_);
    return sessions_.size();
  }

  /// Recreates a session from an export and replays its event log,
  /// comparing every classify output with the logged one.
  ReplayReport import(const json& exported) {
    require(exported.is_object() && exported.value("format", "") == "ot3d-session", ErrorCode::format_error,
            "not an ot3d session export");
    ReplayReport report;
    report.session_id = create(SessionConfig::from_json(exported.at("session")));
    auto session = get(report.session_id);
    std::map<std::string, std::string> refs;
    for (const auto& event : exported.at("events")) {
      const std::string type = event.at("type").get<std::string>();
      if (type == "teach") {
        std::vector<std::string> uploads;
        for (const auto& v : event.at("views")) uploads.push_back(base64_decode(v.get<std::string>()));
        session->teach(event.at("name").get<std::string>(), uploads);
      } else if (type == "classify") {
        auto response = session->classify(base64_decode(event.at("data").get<std::string>()));
        refs[event.at("object_ref").get<std::string>()] = response["object_ref"].get<std::string>();
        response.erase("object_ref");
        response.erase("cloud");
        if (response != event.at("response")) report.mismatched.push_back(event.at("seq").get<std::size_t>());
      } else if (type == "correct") {
        auto it = refs.find(event.at("object_ref").get<std::string>());
        require(it != refs.end(), ErrorCode::format_error, "correct event references an unknown classify");
        session->correct(event.at("name").get<std::string>(), it->second);
      } else if (type == "refresh_topics") {
        session->refresh_topics();
      } else if (type == "rebuild_dictionary") {
        session->rebuild_dictionary();
      } else {
        fail(ErrorCode::format_error, "unknown event type '" + type + "'");
      }
      ++report.replayed;
    }
    return report;
  }

  /// Routes one request; library errors become {code, message, detail}.
  Response handle(const Request& req) {
    try {
      return route(req);
    } catch (const Error& e) {
      return {http_status(e.code()), error_body(e.code(), e.what(), {{"path", req.path}})};
    } catch (const json::exception& e) {
      return {400, error_body(ErrorCode::invalid_argument, "malformed JSON request", {{"reason", e.what()}})};
    }
  }

 private:
  static std::vector<std::string> split_path(std::string_view path) {
    std::vector<std::string> parts;
    std::size_t pos = 0;
    while (pos < path.size()) {
      const auto next = path.find('/', pos);
      const auto end = next == std::string_view::npos ? path.size() : next;
      if (end > pos) parts.emplace_back(path.substr(pos, end - pos));
      pos = end + 1;
    }
    return parts;
  }

  static json parse_body(const Request& req) {
    if (req.body.empty()) return json::object();
    return json::parse(req.body);
  }

  static std::vector<std::string> uploads(const Request& req) {
    if (!req.files.empty()) return req.files;
    if (req.body.empty()) return {};
    return {req.body};
  }

  static std::string param(const Request& req, const std::string& key) {
    if (auto it = req.query.find(key); it != req.query.end()) return it->second;
    if (auto it = req.fields.find(key); it != req.fields.end()) return it->second;
    return {};
  }

  Response route(const Request& req) {
    const auto parts = split_path(req.path);
    const bool post = req.method == "POST";
    const bool get_method = req.method == "GET";
    if (parts.empty() || parts[0] != "sessions") fail(ErrorCode::not_found, "no route for " + req.path);
    if (parts.size() == 1 && post) {
      const std::string id = create(SessionConfig::from_json(parse_body(req)));
      return {201, {{"id", id}, {"state", get(id)->state()}}};
    }
    if (parts.size() == 2 && parts[1] == "import" && post) return {201, import(parse_body(req)).to_json()};
    require(parts.size() >= 3, ErrorCode::not_found, "no route for " + req.path);
    auto session = get(parts[1]);
    const std::string& verb = parts[2];
    if (parts.size() == 3 && post && verb == "teach") return {200, session->teach(param(req, "name"), uploads(req))};
    if (parts.size() == 3 && post && verb == "classify") {
      const auto files = uploads(req);
      require(files.size() == 1, ErrorCode::invalid_argument, "classify needs exactly one cloud");
      return {200, session->classify(files.front())};
    }
    if (parts.size() == 3 && post && verb == "correct") {
      const json body = parse_body(req);
      return {200, session->correct(body.at("name").get<std::string>(), body.at("object_ref").get<std::string>())};
    }
    if (parts.size() == 4 && post && verb == "maintenance") {
      if (parts[3] == "refresh-topics") return {200, session->refresh_topics()};
      if (parts[3] == "rebuild-dictionary") return {200, session->rebuild_dictionary()};
    }
    if (parts.size() == 3 && get_method && verb == "state") return {200, session->state()};
    if (parts.size() == 3 && get_method && verb == "events") {
      return {200, session->events(param(req, "include_data") == "1")};
    }
    if (parts.size() == 3 && get_method && verb == "export") return {200, session->export_json()};
    fail(ErrorCode::not_found, "no route for " + req.method + " " + req.path);
  }

  mutable std::shared_mutex mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  Pcg32 ids_;
};

}  // namespace ot3d::service
