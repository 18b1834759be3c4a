#include "chat_service.hpp"

#include "kgdial/error.hpp"

namespace kgdial {

using nlohmann::json;

namespace {

json candidate_json(const CandidateResponse& c, Real score) {
  return {{"model_id", c.model_id},
          {"text", join_tokens(c.tokens)},
          {"beam_score", c.beam_score},
          {"raw_logp", c.raw_logp},
          {"score", score}};
}

ServiceResponse bad_request(const std::string& message, const std::string& field) {
  return {400, error_body(message, field)};
}

ServiceResponse not_found(const std::string& what) { return {404, error_body(what + " not found")}; }

std::optional<json> parse_body(const std::string& body) {
  try {
    json j = json::parse(body.empty() ? "{}" : body);
    if (j.is_object()) return j;
  } catch (const json::parse_error&) {
  }
  return std::nullopt;
}

}  // namespace

json error_body(const std::string& message, const std::string& field) {
  json j = {{"error", message}};
  if (!field.empty()) j["field"] = field;
  return j;
}

std::shared_ptr<ChatService::Session> ChatService::find(const std::string& id) const {
  std::lock_guard lock(store_mutex_);
  auto it = sessions_.find(id);
  return it == sessions_.end() ? nullptr : it->second;
}

ServiceResponse ChatService::create_session(const std::string& body) {
  const auto j = parse_body(body);
  if (!j) return bad_request("body must be a JSON object", "body");
  if (!j->contains("goal")) return bad_request("missing field", "goal");
  if (!j->contains("knowledge")) return bad_request("missing field", "knowledge");
  json record = {{"id", "session"}, {"goal", j->at("goal")}, {"knowledge", j->at("knowledge")}, {"history", json::array()}};
  auto session = std::make_shared<Session>();
  try {
    session->context = parse_sample(record.dump());
  } catch (const SchemaError& e) {
    return bad_request(e.what(), e.field());
  } catch (const Error& e) {
    return bad_request(e.what(), "goal");
  }
  session->goal = j->at("goal");
  session->knowledge = j->at("knowledge");
  std::lock_guard lock(store_mutex_);
  const std::string id = "s" + std::to_string(next_id_++);
  session->context.id = id;
  sessions_.emplace(id, session);
  return {201, {{"session_id", id}}};
}

ServiceResponse ChatService::utterance(const std::string& session_id, const std::string& body) {
  const auto session = find(session_id);
  if (!session) return not_found("session \"" + session_id + "\"");
  const auto j = parse_body(body);
  if (!j) return bad_request("body must be a JSON object", "body");
  auto text = j->find("text");
  if (text == j->end()) return bad_request("missing field", "text");
  if (!text->is_string()) return bad_request("must be a string", "text");
  const Tokens tokens = split_whitespace(text->get<std::string>());
  for (const auto& t : tokens)
    if (is_reserved_token(t)) return bad_request("reserved token \"" + t + "\"", "text");

  std::lock_guard lock(session->mutex);
  DialogueSample context = session->context;
  if (!tokens.empty()) context.history.push_back({Speaker::kHuman, tokens});
  context.id = session_id + "-" + std::to_string(context.history.size());
  AgentReply reply;
  try {
    reply = agent_.respond(context);
  } catch (const Error& e) {
    return {500, error_body(e.what())};
  }
  session->context.history = context.history;
  session->context.history.push_back({Speaker::kBot, reply.reply.tokens});
  session->bot_turns[session->context.history.size() - 1] =
      BotTurnInfo{reply.reply.model_id, reply.candidates, reply.scores, reply.chosen};

  json candidates = json::array();
  for (std::size_t i = 0; i < reply.candidates.size(); ++i) candidates.push_back(candidate_json(reply.candidates[i], reply.scores[i]));
  return {200,
          {{"reply", join_tokens(reply.reply.tokens)},
           {"model_id", reply.reply.model_id},
           {"candidates", candidates},
           {"scores", reply.scores},
           {"chosen", reply.chosen}}};
}

ServiceResponse ChatService::transcript(const std::string& session_id) const {
  const auto session = find(session_id);
  if (!session) return not_found("session \"" + session_id + "\"");
  std::lock_guard lock(session->mutex);
  json turns = json::array();
  const auto& history = session->context.history;
  for (std::size_t i = 0; i < history.size(); ++i) {
    json t = {{"speaker", history[i].speaker == Speaker::kHuman ? "human" : "bot"}, {"text", join_tokens(history[i].tokens)}};
    if (auto it = session->bot_turns.find(i); it != session->bot_turns.end()) {
      json candidates = json::array();
      for (std::size_t k = 0; k < it->second.candidates.size(); ++k)
        candidates.push_back(candidate_json(it->second.candidates[k], it->second.scores[k]));
      t["model_id"] = it->second.model_id;
      t["candidates"] = candidates;
      t["chosen"] = it->second.chosen;
    }
    turns.push_back(std::move(t));
  }
  return {200, {{"session_id", session_id}, {"goal", session->goal}, {"knowledge", session->knowledge}, {"transcript", turns}}};
}

ServiceResponse ChatService::handle(const std::string& method, const std::string& path, const std::string& body) {
  static const std::string prefix = "/session";
  if (path == prefix) {
    if (method == "POST") return create_session(body);
    return {405, error_body("method not allowed")};
  }
  if (path.rfind(prefix + "/", 0) != 0) return not_found("route \"" + path + "\"");
  std::string rest = path.substr(prefix.size() + 1);
  static const std::string suffix = "/utterance";
  if (rest.size() > suffix.size() && rest.compare(rest.size() - suffix.size(), suffix.size(), suffix) == 0) {
    rest.resize(rest.size() - suffix.size());
    if (rest.find('/') != std::string::npos) return not_found("route \"" + path + "\"");
    if (method == "POST") return utterance(rest, body);
    return {405, error_body("method not allowed")};
  }
  if (rest.empty() || rest.find('/') != std::string::npos) return not_found("route \"" + path + "\"");
  if (method == "GET") return transcript(rest);
  return {405, error_body("method not allowed")};
}

}  // namespace kgdial
