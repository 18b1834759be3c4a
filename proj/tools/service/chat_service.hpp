#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "kgdial/pipeline.hpp"

namespace kgdial {

struct ServiceResponse {
  int status = 200;
  nlohmann::json body;
};

/// Session store and request router behind `kgdial serve`. Independent of the
/// HTTP layer so it can be driven directly.
///
///   POST /session                  {goal, knowledge}  -> {session_id}
///   POST /session/{id}/utterance   {text}             -> {reply, model_id, candidates, scores, chosen}
///   GET  /session/{id}                                -> {session_id, goal, knowledge, transcript}
///
/// An empty `text` adds no human turn, so on a fresh session the agent opens.
class ChatService {
 public:
  explicit ChatService(const ChatAgent& agent) : agent_(agent) {}

  ServiceResponse handle(const std::string& method, const std::string& path, const std::string& body);

  ServiceResponse create_session(const std::string& body);
  ServiceResponse utterance(const std::string& session_id, const std::string& body);
  ServiceResponse transcript(const std::string& session_id) const;

 private:
  struct BotTurnInfo {
    std::string model_id;
    std::vector<CandidateResponse> candidates;
    std::vector<Real> scores;
    std::size_t chosen = 0;
  };
  struct Session {
    std::mutex mutex;
    DialogueSample context;  // goal and knowledge; history grows with the dialogue
    nlohmann::json goal;
    nlohmann::json knowledge;
    std::map<std::size_t, BotTurnInfo> bot_turns;  // keyed by history index
  };

  std::shared_ptr<Session> find(const std::string& id) const;

  const ChatAgent& agent_;
  mutable std::mutex store_mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::size_t next_id_ = 1;
};

nlohmann::json error_body(const std::string& message, const std::string& field = "");

}  // namespace kgdial
