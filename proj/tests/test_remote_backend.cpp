#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <functional>
#include <string>
#include <thread>

#include <httplib.h>

#include "trex/remote_backend.hpp"

using namespace trex;

namespace {

std::string fix(const std::string& rel) {
  return std::string(TREX_SOURCE_DIR) + "/fixtures/" + rel;
}

// Loopback chat-completions server owning its listener thread.
struct LocalServer {
  explicit LocalServer(httplib::Server::Handler handler) {
    server.Post("/v1/chat/completions", std::move(handler));
    port = server.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }

  ~LocalServer() {
    server.stop();
    thread.join();
  }

  RemoteBackendConfig config() const {
    RemoteBackendConfig cfg;
    cfg.host = "127.0.0.1";
    cfg.port = port;
    cfg.timeout_seconds = 5;
    return cfg;
  }

  httplib::Server server;
  std::thread thread;
  int port = 0;
};

std::string phase_of(const std::string& system_prompt) {
  if (system_prompt.find("Decompose") != std::string::npos) return "decompose";
  if (system_prompt.find("spatial constraints") != std::string::npos) {
    return "constraints";
  }
  if (system_prompt.find("cost expression") != std::string::npos) return "emit";
  if (system_prompt.find("full grounded plan") != std::string::npos) {
    return "merged";
  }
  return "unknown";
}

}  // namespace

TEST_CASE("a chat-completions server grounds plans end to end") {
  const TaskScript task = task_script_load(fix("tasks/pick_place.json"));
  const Scene scene = scene_load(fix("scenes/pick_place.json"));
  const Registry registry = registry_load(fix("registry.json"));
  TaskScriptBackend script(task);

  Json first_body;
  std::string last_auth = "unset";
  LocalServer server([&](const httplib::Request& req, httplib::Response& res) {
    const Json body = Json::parse(req.body);
    if (first_body.is_null()) first_body = body;
    last_auth = req.has_header("Authorization")
                    ? req.get_header_value("Authorization")
                    : "";
    const std::string prompt = body["messages"][0]["content"];
    const Json request =
        Json::parse(body["messages"][1]["content"].get<std::string>());
    const std::string phase = phase_of(prompt);

    std::string content = script.call(phase, request).dump();
    // Replies may arrive fenced; the emit phase exercises the unwrap path.
    if (phase == "emit") content = "```json\n" + content + "\n```";
    const Json reply{
        {"choices", Json::array({Json{{"message", {{"content", content}}}}})}};
    res.set_content(reply.dump(), "application/json");
  });

  RemoteGroundingBackend remote(server.config());
  const GroundedPlan over_http =
      ground_with_cog(task, scene, registry, remote);
  const GroundedPlan direct =
      ground_with_cog(task, scene, registry, script);

  CHECK(canonical_dump(plan_to_json(over_http)) ==
        canonical_dump(plan_to_json(direct)));
  CHECK(over_http.backend_calls == 5);

  const GroundedPlan merged_http =
      ground_single_shot(task, scene, registry, remote);
  const GroundedPlan merged_direct =
      ground_single_shot(task, scene, registry, script);
  CHECK(canonical_dump(plan_to_json(merged_http)) ==
        canonical_dump(plan_to_json(merged_direct)));

  // The wire format is the chat-completions shape with determinism pinned.
  CHECK(first_body.at("model") == "grounder-large");
  CHECK(first_body.at("temperature") == 0.0);
  REQUIRE(first_body.at("messages").size() == 2);
  CHECK(first_body["messages"][0].at("role") == "system");
  CHECK(first_body["messages"][1].at("role") == "user");
  // No API key in the environment means no Authorization header.
  CHECK(last_auth.empty());
}

TEST_CASE("bearer tokens are read from the configured environment variable") {
  const TaskScript task = task_script_load(fix("tasks/pick_place.json"));
  TaskScriptBackend script(task);

  std::string seen_auth;
  LocalServer server([&](const httplib::Request& req, httplib::Response& res) {
    seen_auth = req.has_header("Authorization")
                    ? req.get_header_value("Authorization")
                    : "";
    const Json body = Json::parse(req.body);
    const Json request =
        Json::parse(body["messages"][1]["content"].get<std::string>());
    const std::string content =
        script.call(phase_of(body["messages"][0]["content"]), request).dump();
    const Json reply{
        {"choices", Json::array({Json{{"message", {{"content", content}}}}})}};
    res.set_content(reply.dump(), "application/json");
  });

  RemoteBackendConfig cfg = server.config();
  cfg.api_key_env = "TREX_TEST_TOKEN";
  ::setenv("TREX_TEST_TOKEN", "sekrit", 1);
  RemoteGroundingBackend remote(cfg);
  remote.call("decompose", Json{{"instruction", "x"}, {"objects", Json::array()}});
  ::unsetenv("TREX_TEST_TOKEN");

  CHECK(seen_auth == "Bearer sekrit");
}

TEST_CASE("transport and protocol failures raise phase-tagged errors") {
  SECTION("non-200 statuses") {
    LocalServer server([](const httplib::Request&, httplib::Response& res) {
      res.status = 503;
      res.set_content("overloaded", "text/plain");
    });
    RemoteGroundingBackend remote(server.config());
    try {
      remote.call("decompose", Json::object());
      FAIL("expected GroundingError");
    } catch (const GroundingError& e) {
      CHECK(e.phase() == "decompose");
      CHECK(std::string(e.what()).find("503") != std::string::npos);
    }
  }

  SECTION("bodies that are not JSON") {
    LocalServer server([](const httplib::Request&, httplib::Response& res) {
      res.set_content("<html>hi</html>", "text/html");
    });
    RemoteGroundingBackend remote(server.config());
    CHECK_THROWS_AS(remote.call("emit", Json::object()), GroundingError);
  }

  SECTION("replies without message content") {
    LocalServer server([](const httplib::Request&, httplib::Response& res) {
      res.set_content(R"({"choices": []})", "application/json");
    });
    RemoteGroundingBackend remote(server.config());
    try {
      remote.call("merged", Json::object());
      FAIL("expected GroundingError");
    } catch (const GroundingError& e) {
      CHECK(e.phase() == "merged");
      CHECK(std::string(e.what()).find("content") != std::string::npos);
    }
  }

  SECTION("nothing listening on the port") {
    RemoteBackendConfig cfg;
    {
      LocalServer server([](const httplib::Request&, httplib::Response&) {});
      cfg = server.config();
    }  // server torn down; the port is closed again
    cfg.timeout_seconds = 2;
    RemoteGroundingBackend remote(cfg);
    try {
      remote.call("constraints", Json::object());
      FAIL("expected GroundingError");
    } catch (const GroundingError& e) {
      CHECK(e.phase() == "constraints");
      CHECK(std::string(e.what()).find("unreachable") != std::string::npos);
    }
  }
}

TEST_CASE("reply content is unfenced before parsing") {
  using remote_detail::parse_content;

  const Json direct = parse_content(R"({"a": 1})", "emit");
  CHECK(direct.at("a") == 1);

  const Json fenced = parse_content("```json\n{\"a\": 2}\n```", "emit");
  CHECK(fenced.at("a") == 2);

  const Json bare_fence = parse_content("```\n{\"a\": 3}\n```", "emit");
  CHECK(bare_fence.at("a") == 3);

  CHECK_THROWS_AS(parse_content("```json\n{\"a\": 4}", "emit"), GroundingError);
  CHECK_THROWS_AS(parse_content("not json at all", "emit"), GroundingError);
}
