#pragma once

// HTTP grounding backend.
//
// Speaks the common chat-completions shape: POST {path} with a model, a
// per-phase system prompt, and the request document as the user message;
// the reply's first choice content must be a JSON document (optionally
// inside a ```json fence), which is returned for the same validation the
// scripted backend goes through.  Responses are data: they are parsed,
// validated, and compiled through the constraint grammar, never executed.
//
// Transport failures, non-200 statuses, and unparseable bodies raise
// GroundingError for the calling phase; the grounding loop's repair retries
// then decide whether to re-ask.

#include <cstdlib>
#include <string>

#include <httplib.h>

#include "trex/cog.hpp"

namespace trex {

struct RemoteBackendConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string path = "/v1/chat/completions";
  std::string model = "grounder-large";
  std::string api_key_env = "TREX_API_KEY";  // bearer token source; optional
  double temperature = 0.0;                  // grounding wants determinism
  int timeout_seconds = 30;
};

namespace remote_detail {

inline std::string phase_prompt(const std::string& phase) {
  if (phase == "decompose") {
    return "Decompose the instruction into gripper stages. Reply with JSON "
           "{\"stages\": [{\"name\", \"description\", \"gripper_end\": "
           "open|close|none}], \"program\"?: [...]} and nothing else.";
  }
  if (phase == "constraints") {
    return "List the spatial constraints for the named stage. Reply with JSON "
           "{\"constraints\": [{\"id\", \"statement\", \"kind\": "
           "subgoal|path, \"objects\": [{\"name\", \"object\", \"part\"?, "
           "\"kind\", \"granularity\"?}]}]} and nothing else.";
  }
  if (phase == "emit") {
    return "Write the cost expression for the named constraint using the "
           "documented grammar over rep()/ee()/constants. Reply with JSON "
           "{\"expr\", \"tolerance\"?, \"weight\"?} and nothing else.";
  }
  if (phase == "merged") {
    return "Produce the full grounded plan in one reply: JSON {\"stages\": "
           "[...with constraints and exprs...], \"program\"?: [...]} and "
           "nothing else.";
  }
  return "Reply with the requested JSON document and nothing else.";
}

// Accepts raw JSON or a fenced block around it.
inline Json parse_content(const std::string& content, const std::string& phase) {
  std::string body = content;
  const auto fence = body.find("```");
  if (fence != std::string::npos) {
    auto start = body.find('\n', fence);
    const auto end = body.rfind("```");
    if (start == std::string::npos || end <= fence) {
      throw GroundingError(phase, "unterminated code fence in reply");
    }
    body = body.substr(start + 1, end - start - 1);
  }
  const Json parsed = Json::parse(body, nullptr, false);
  if (parsed.is_discarded()) {
    throw GroundingError(phase, "reply content is not valid JSON");
  }
  return parsed;
}

}  // namespace remote_detail

class RemoteGroundingBackend : public GroundingBackend {
 public:
  explicit RemoteGroundingBackend(RemoteBackendConfig config = {})
      : config_(std::move(config)) {}

  Json call(const std::string& phase, const Json& request) override {
    Json body;
    body["model"] = config_.model;
    body["temperature"] = config_.temperature;
    body["messages"] = Json::array(
        {Json{{"role", "system"}, {"content", remote_detail::phase_prompt(phase)}},
         Json{{"role", "user"}, {"content", request.dump()}}});

    httplib::Client client(config_.host, config_.port);
    client.set_connection_timeout(config_.timeout_seconds);
    client.set_read_timeout(config_.timeout_seconds);
    httplib::Headers headers;
    if (const char* key = std::getenv(config_.api_key_env.c_str());
        key && *key) {
      headers.emplace("Authorization", std::string("Bearer ") + key);
    }

    const auto res =
        client.Post(config_.path, headers, body.dump(), "application/json");
    if (!res) {
      throw GroundingError(phase, "backend unreachable: " +
                                      httplib::to_string(res.error()));
    }
    if (res->status != 200) {
      throw GroundingError(phase, "backend returned HTTP " +
                                      std::to_string(res->status));
    }
    const Json reply = Json::parse(res->body, nullptr, false);
    if (reply.is_discarded()) {
      throw GroundingError(phase, "backend body is not JSON");
    }
    const Json* content = nullptr;
    if (reply.contains("choices") && reply["choices"].is_array() &&
        !reply["choices"].empty()) {
      const Json& first = reply["choices"][0];
      if (first.contains("message") && first["message"].contains("content")) {
        content = &first["message"]["content"];
      }
    }
    if (!content || !content->is_string()) {
      throw GroundingError(phase, "backend reply has no message content");
    }
    return remote_detail::parse_content(content->get<std::string>(), phase);
  }

 private:
  RemoteBackendConfig config_;
};

}  // namespace trex
