#include <gtest/gtest.h>

#include <filesystem>
#include <functional>
#include <thread>

#include "ot3d/cloud_io.hpp"
#include "ot3d/datasets.hpp"
#include "ot3d/experiment.hpp"
#include "ot3d/http_server.hpp"

using namespace ot3d;
using namespace ot3d::service;

namespace {

const char* kConfig =
    "generic_words = 12\ntopics = 5\nspecific_words = 8\ngibbs_sweeps = 5\nbootstrap_views = 3\nunknown_threshold = 1.5\n";

std::string upload(ShapeFamily family, std::uint64_t seed) {
  SyntheticShapeSpec spec;
  spec.family = family;
  spec.points = 800;
  spec.seed = seed;
  spec.noise = 0.001;
  return encode_ot3d_binary(generate_synthetic(spec));
}

SessionConfig config() { return {kConfig, std::nullopt}; }

Request post(const std::string& path, std::string body = {}) {
  Request r;
  r.method = "POST";
  r.path = path;
  r.body = std::move(body);
  return r;
}

Request get(const std::string& path) {
  Request r;
  r.method = "GET";
  r.path = path;
  return r;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorCode::io_error;
}

}  // namespace

TEST(Base64, RoundTripAndRejectsGarbage) {
  for (const std::string& s : std::vector<std::string>{"", "a", "ab", "abc", std::string("\0\xff\x10", 3)}) EXPECT_EQ(base64_decode(base64_encode(s)), s);
  EXPECT_EQ(base64_encode("abc"), "YWJj");
  EXPECT_THROW(base64_decode("**not base64**"), Error);
}

TEST(Session, FreshSessionAnswersUnknown) {
  Session s("x", config());
  const auto r = s.classify(upload(ShapeFamily::mug, 1));
  EXPECT_EQ(r["label"], "Unknown");
  EXPECT_TRUE(r["margin"].is_null());
  EXPECT_TRUE(r["ranked"].empty());
  EXPECT_EQ(r["object_ref"], "obj-0");
  EXPECT_EQ(r["cloud"]["total_points"], 800);
  EXPECT_EQ(r["cloud"]["points"].size(), 800u);
  EXPECT_FALSE(s.state()["ready"].get<bool>());
}

TEST(Session, TeachClassifyCorrectUpdatesState) {
  Session s("x", config());
  EXPECT_EQ(s.teach("mug", {upload(ShapeFamily::mug, 1)})["instances"], 1);
  EXPECT_EQ(s.teach("box", {upload(ShapeFamily::box, 1), upload(ShapeFamily::box, 2)})["instances"], 2);
  const auto r = s.classify(upload(ShapeFamily::mug, 3));
  EXPECT_EQ(r["ranked"].size(), 2u);
  EXPECT_FALSE(r["margin"].is_null());
  const auto ref = r["object_ref"].get<std::string>();
  const auto ack = s.correct("box", ref);
  EXPECT_EQ(ack["instances"], 3);
  EXPECT_EQ(ack["counted_as_mistake"].get<bool>(), r["label"] != "box");

  const auto st = s.state();
  EXPECT_EQ(st["classified"], 1);
  EXPECT_EQ(st["categories"].size(), 2u);
  EXPECT_EQ(st["categories"][1]["instances"], 3);
  EXPECT_EQ(st["views_learned"], 4);
  EXPECT_EQ(st["events"], 4);
  EXPECT_EQ(s.instance_counts(), (std::map<std::string, std::size_t>{{"box", 3}, {"mug", 1}}));

  const auto events = s.events();
  ASSERT_EQ(events.size(), 4u);
  for (std::size_t i = 0; i < events.size(); ++i) EXPECT_EQ(events[i]["seq"], i);
  EXPECT_EQ(events[1]["views"], 2);
  EXPECT_TRUE(events[2]["data"].contains("bytes"));
  EXPECT_TRUE(s.events(true)[2]["data"].is_string());
}

TEST(Session, ErrorCodes) {
  Session s("x", config());
  s.teach("mug", {upload(ShapeFamily::mug, 1)});
  const auto ref = s.classify(upload(ShapeFamily::mug, 2))["object_ref"].get<std::string>();
  EXPECT_EQ(code_of([&] { s.teach("mug", {upload(ShapeFamily::mug, 3)}); }), ErrorCode::duplicate_category);
  EXPECT_EQ(code_of([&] { s.teach("Unknown", {upload(ShapeFamily::mug, 3)}); }), ErrorCode::invalid_argument);
  EXPECT_EQ(code_of([&] { s.teach("", {upload(ShapeFamily::mug, 3)}); }), ErrorCode::invalid_argument);
  EXPECT_EQ(code_of([&] { s.classify("garbage"); }), ErrorCode::format_error);
  EXPECT_EQ(code_of([&] { s.correct("mug", "obj-x"); }), ErrorCode::invalid_argument);
  EXPECT_EQ(code_of([&] { s.correct("mug", "obj-99"); }), ErrorCode::not_found);
  EXPECT_EQ(code_of([&] { s.correct("cup", ref); }), ErrorCode::unknown_category);
  s.correct("mug", ref);
  EXPECT_EQ(code_of([&] { s.correct("mug", ref); }), ErrorCode::stale_reference);
}

TEST(Session, OldReferencesAreEvicted) {
  Session s("x", config());
  s.teach("cone", {upload(ShapeFamily::cone, 1)});
  const std::string cloud = upload(ShapeFamily::cone, 2);
  for (std::size_t i = 0; i < Session::kCacheCapacity + 1; ++i) s.classify(cloud);
  EXPECT_EQ(code_of([&] { s.correct("cone", "obj-0"); }), ErrorCode::stale_reference);
  EXPECT_EQ(s.correct("cone", "obj-1")["instances"], 2);
}

TEST(Session, PrebuiltModelPath) {
  DatasetSource src;
  src.families = {ShapeFamily::sphere, ShapeFamily::box};
  src.views_per_category = 3;
  src.points = 800;
  const auto params = Params::parse(kConfig);
  const auto learner = pooled_learner(params, make_protocol_dataset(src, params.features));
  const auto dir = std::filesystem::temp_directory_path() / "ot3d_service_model";
  std::filesystem::remove_all(dir);
  learner.save_generic(dir);

  Session s("x", {kConfig, dir.string()});
  EXPECT_TRUE(s.state()["ready"].get<bool>());
  s.teach("sphere", {upload(ShapeFamily::sphere, 9)});
  EXPECT_EQ(s.classify(upload(ShapeFamily::sphere, 10))["label"], "sphere");

  EXPECT_THROW(Session("y", {"topics = 6\n", dir.string()}), Error);
  EXPECT_THROW(Session("y", {kConfig, (dir / "missing").string()}), Error);
  std::filesystem::remove_all(dir);
}

TEST(SessionManager, SessionsAreIsolated) {
  SessionManager m(1);
  const auto a = m.create(config());
  const auto b = m.create(config());
  EXPECT_NE(a, b);
  EXPECT_EQ(a.size(), 17u);
  m.get(a)->teach("mug", {upload(ShapeFamily::mug, 1)});
  EXPECT_EQ(m.get(b)->classify(upload(ShapeFamily::mug, 1))["label"], "Unknown");
  EXPECT_EQ(m.get(b)->state()["categories"].size(), 0u);
  EXPECT_THROW(m.get("s0"), Error);
  EXPECT_THROW(m.create({"topics = 0\n", std::nullopt}), Error);
  EXPECT_EQ(m.size(), 2u);
}

TEST(SessionManager, ExportImportReplaysConsistently) {
  SessionManager m(2);
  auto s = m.get(m.create(config()));
  s->teach("mug", {upload(ShapeFamily::mug, 1)});
  s->teach("box", {upload(ShapeFamily::box, 1)});
  for (std::uint64_t i = 2; i < 6; ++i) {
    const auto r = s->classify(upload(i % 2 ? ShapeFamily::mug : ShapeFamily::box, i));
    s->correct(i % 2 ? "mug" : "box", r["object_ref"].get<std::string>());
  }
  s->refresh_topics();
  s->classify(upload(ShapeFamily::box, 9));
  s->rebuild_dictionary();
  s->classify(upload(ShapeFamily::mug, 9));

  const auto exported = json::parse(s->export_json().dump());
  const auto report = m.import(exported);
  EXPECT_EQ(report.replayed, exported["events"].size());
  EXPECT_TRUE(report.mismatched.empty());
  EXPECT_EQ(m.get(report.session_id)->instance_counts(), s->instance_counts());

  auto tampered = exported;
  for (auto& e : tampered["events"]) {
    if (e["type"] == "classify") e["response"]["label"] = "elsewhere";
  }
  EXPECT_FALSE(m.import(tampered).mismatched.empty());
  EXPECT_THROW(m.import(json{{"format", "other"}}), Error);
}

TEST(Routes, StatusCodesAndBodies) {
  SessionManager m(3);
  auto created = m.handle(post("/sessions", json{{"config_text", kConfig}}.dump()));
  ASSERT_EQ(created.status, 201);
  const std::string id = created.body["id"];
  const std::string base = "/sessions/" + id;

  EXPECT_EQ(m.handle(get("/sessions/nope/state")).status, 404);
  EXPECT_EQ(m.handle(get("/elsewhere")).status, 404);
  EXPECT_EQ(m.handle(post("/sessions", "{bad json")).status, 400);
  EXPECT_EQ(m.handle(post("/sessions", R"({"config": {"topics": 0}})")).status, 400);

  auto teach = post(base + "/teach", upload(ShapeFamily::cylinder, 1));
  teach.query["name"] = "can";
  EXPECT_EQ(m.handle(teach).status, 200);
  const auto dup = m.handle(teach);
  EXPECT_EQ(dup.status, 409);
  EXPECT_EQ(dup.body["code"], "duplicate_category");
  EXPECT_TRUE(dup.body.contains("message"));
  EXPECT_TRUE(dup.body.contains("detail"));

  Request multi = post(base + "/teach");
  multi.fields["name"] = "cone";
  multi.files = {upload(ShapeFamily::cone, 1), upload(ShapeFamily::cone, 2)};
  EXPECT_EQ(m.handle(multi).body["instances"], 2);

  const auto cls = m.handle(post(base + "/classify", upload(ShapeFamily::cylinder, 2)));
  ASSERT_EQ(cls.status, 200);
  EXPECT_EQ(m.handle(post(base + "/classify")).status, 400);
  const auto ref = cls.body["object_ref"].get<std::string>();
  const auto bad = m.handle(post(base + "/correct", json{{"name", "cup"}, {"object_ref", ref}}.dump()));
  EXPECT_EQ(bad.status, 422);
  EXPECT_EQ(m.handle(post(base + "/correct", json{{"name", "can"}, {"object_ref", ref}}.dump())).status, 200);
  EXPECT_EQ(m.handle(post(base + "/correct", json{{"name", "can"}, {"object_ref", ref}}.dump())).status, 409);
  EXPECT_EQ(m.handle(post(base + "/correct", R"({"name": "can"})")).status, 400);

  EXPECT_EQ(m.handle(post(base + "/maintenance/refresh-topics")).body["ok"], true);
  EXPECT_EQ(m.handle(post(base + "/maintenance/rebuild-dictionary")).status, 200);
  EXPECT_EQ(m.handle(post(base + "/maintenance/defragment")).status, 404);

  const auto state = m.handle(get(base + "/state"));
  EXPECT_EQ(state.body["categories"].size(), 2u);
  auto events = get(base + "/events");
  EXPECT_TRUE(m.handle(events).body[0]["views"].is_number());
  events.query["include_data"] = "1";
  EXPECT_TRUE(m.handle(events).body[0]["views"].is_array());

  const auto exported = m.handle(get(base + "/export"));
  const auto imported = m.handle(post("/sessions/import", exported.body.dump()));
  EXPECT_EQ(imported.status, 201);
  EXPECT_TRUE(imported.body["consistent"].get<bool>());
}

TEST(HttpServer, ServesRoutesOverLoopback) {
  SessionManager m(4);
  httplib::Server server;
  bind_routes(server, m);
  const int port = server.bind_to_any_port("127.0.0.1");
  ASSERT_GT(port, 0);
  std::thread thread([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  httplib::Client client("127.0.0.1", port);
  auto created = client.Post("/sessions", json{{"config_text", kConfig}}.dump(), "application/json");
  ASSERT_TRUE(created);
  EXPECT_EQ(created->status, 201);
  EXPECT_EQ(created->get_header_value("Access-Control-Allow-Origin"), "*");
  const std::string id = json::parse(created->body)["id"];

  httplib::MultipartFormDataItems items{{"name", "mug", "", ""},
                                        {"cloud", upload(ShapeFamily::mug, 1), "a.ot3d", "application/octet-stream"}};
  auto taught = client.Post("/sessions/" + id + "/teach", items);
  ASSERT_TRUE(taught);
  EXPECT_EQ(taught->status, 200);
  EXPECT_EQ(json::parse(taught->body)["category"], "mug");

  auto cls = client.Post("/sessions/" + id + "/classify", upload(ShapeFamily::mug, 2), "application/octet-stream");
  ASSERT_TRUE(cls);
  EXPECT_EQ(json::parse(cls->body)["label"], "mug");

  auto state = client.Get("/sessions/" + id + "/state");
  ASSERT_TRUE(state);
  EXPECT_EQ(json::parse(state->body)["classified"], 1);
  auto missing = client.Get("/sessions/none/state");
  ASSERT_TRUE(missing);
  EXPECT_EQ(missing->status, 404);
  auto options = client.Options("/sessions");
  ASSERT_TRUE(options);
  EXPECT_EQ(options->status, 204);

  server.stop();
  thread.join();
}
