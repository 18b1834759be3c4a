#include "kgdial/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "kgdial/error.hpp"

namespace kgdial {

using nlohmann::json;

Tokens split_whitespace(std::string_view text) {
  Tokens out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    const std::size_t start = i;
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i > start) out.emplace_back(text.substr(start, i - start));
  }
  return out;
}

std::string join_tokens(std::span<const std::string> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

Tokens SPOTriple::flatten() const {
  Tokens out = subject;
  out.insert(out.end(), predicate.begin(), predicate.end());
  out.insert(out.end(), object.begin(), object.end());
  return out;
}

// ---------------------------------------------------------------------------
// Flag tokens

std::string goal_flag(std::size_t n) {
  return "[Goal=" + std::to_string(std::min(n, kGoalFlagCount - 1)) + "]";
}
std::string question_flag(std::size_t k) { return "[Q=" + std::to_string(std::min(k, kMaxTurnFlag)) + "]"; }
std::string answer_flag(std::size_t k) { return "[A=" + std::to_string(std::min(k, kMaxTurnFlag)) + "]"; }

namespace {

std::vector<std::string> reserved_tokens() {
  std::vector<std::string> out = {std::string(kPadToken), std::string(kUnkToken),
                                  std::string(kBosToken), std::string(kEosToken),
                                  std::string(kClsToken), std::string(kKnowledgeToken)};
  for (std::size_t n = 0; n < kGoalFlagCount; ++n) out.push_back(goal_flag(n));
  for (std::size_t k = 0; k <= kMaxTurnFlag; ++k) out.push_back(question_flag(k));
  for (std::size_t k = 0; k <= kMaxTurnFlag; ++k) out.push_back(answer_flag(k));
  return out;
}

const std::vector<std::string>& reserved() {
  static const std::vector<std::string> tokens = reserved_tokens();
  return tokens;
}

// "[Goal=N]", "[Q=N]", "[A=N]" for any decimal N.
bool is_indexed_flag(std::string_view t) {
  if (t.size() < 5 || t.front() != '[' || t.back() != ']') return false;
  const std::size_t eq = t.find('=');
  if (eq == std::string_view::npos) return false;
  const std::string_view head = t.substr(1, eq - 1);
  if (head != "Goal" && head != "Q" && head != "A") return false;
  const std::string_view digits = t.substr(eq + 1, t.size() - eq - 2);
  return !digits.empty() && std::all_of(digits.begin(), digits.end(), [](char c) {
    return std::isdigit(static_cast<unsigned char>(c));
  });
}

}  // namespace

bool is_reserved_token(std::string_view token) {
  const auto& r = reserved();
  return is_indexed_flag(token) || std::find(r.begin(), r.end(), token) != r.end();
}

// ---------------------------------------------------------------------------
// Validation and JSON

namespace {

void validate_tokens(const Tokens& tokens, const std::string& where) {
  for (const auto& t : tokens) {
    if (t.empty() || t.find_first_of(" \t\r\n") != std::string::npos) {
      throw ValidationError(where + ": token contains whitespace or is empty");
    }
    if (is_reserved_token(t)) throw ValidationError(where + ": reserved token \"" + t + "\" in text");
  }
}

void validate_triple(const SPOTriple& t, const std::string& where) {
  if (t.subject.empty() || t.predicate.empty() || t.object.empty()) {
    throw ValidationError(where + ": SPO triple with an empty field");
  }
  validate_tokens(t.subject, where);
  validate_tokens(t.predicate, where);
  validate_tokens(t.object, where);
}

}  // namespace

void validate_sample(const DialogueSample& s) {
  if (s.goal_path.empty()) throw ValidationError("goal path is empty");
  for (const auto& topic : s.goal_path) {
    if (topic.empty()) throw ValidationError("goal path has an empty topic");
    validate_tokens(topic, "goal");
  }
  for (const auto& t : s.goal_relations) validate_triple(t, "goal");
  for (const auto& t : s.knowledge) validate_triple(t, "knowledge");
  if (s.knowledge.empty() && s.goal_relations.empty()) {
    throw ValidationError("sample has neither knowledge nor goal relations");
  }
  for (std::size_t i = 0; i < s.history.size(); ++i) {
    if (s.history[i].tokens.empty()) throw ValidationError("history turn " + std::to_string(i) + " is empty");
    validate_tokens(s.history[i].tokens, "history");
    if (i > 0 && s.history[i].speaker == s.history[i - 1].speaker) {
      throw ValidationError("history speakers do not alternate at turn " + std::to_string(i));
    }
  }
  if (s.response) {
    if (s.response->empty()) throw ValidationError("response is empty");
    validate_tokens(*s.response, "response");
  }
}

namespace {

Tokens tokens_field(const json& value, const std::string& field) {
  if (!value.is_string()) throw SchemaError(field);
  return split_whitespace(value.get<std::string>());
}

SPOTriple triple_field(const json& value, const std::string& field) {
  if (!value.is_array() || value.size() != 3) throw SchemaError(field);
  return SPOTriple{tokens_field(value[0], field), tokens_field(value[1], field),
                   tokens_field(value[2], field)};
}

Speaker speaker_from(const json& value) {
  if (!value.is_string()) throw SchemaError("history.speaker");
  std::string s = value.get<std::string>();
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s == "human" || s == "user" || s == "q") return Speaker::kHuman;
  if (s == "bot" || s == "agent" || s == "a") return Speaker::kBot;
  throw ValidationError("unknown speaker \"" + value.get<std::string>() + "\"");
}

}  // namespace

DialogueSample parse_sample(std::string_view json_record) {
  json record;
  try {
    record = json::parse(json_record);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed JSON: ") + e.what(), e.byte);
  }
  if (!record.is_object()) throw ParseError("record is not a JSON object", 0);

  DialogueSample s;
  if (auto it = record.find("id"); it != record.end()) {
    s.id = it->is_string() ? it->get<std::string>() : it->dump();
  }

  auto goal = record.find("goal");
  if (goal == record.end() || !goal->is_array() || goal->empty()) throw SchemaError("goal");
  const json& path = (*goal)[0];
  if (!path.is_array()) throw SchemaError("goal");
  for (const auto& topic : path) s.goal_path.push_back(tokens_field(topic, "goal"));
  for (std::size_t i = 1; i < goal->size(); ++i) s.goal_relations.push_back(triple_field((*goal)[i], "goal"));

  auto knowledge = record.find("knowledge");
  if (knowledge == record.end() || !knowledge->is_array()) throw SchemaError("knowledge");
  for (const auto& t : *knowledge) s.knowledge.push_back(triple_field(t, "knowledge"));

  auto history = record.find("history");
  bool bot_first = false;
  if (history == record.end()) {
    history = record.find("conversation");
    bot_first = true;
  }
  if (history == record.end() || !history->is_array()) throw SchemaError("history");
  const std::size_t n = history->size();
  for (std::size_t i = 0; i < n; ++i) {
    const json& item = (*history)[i];
    Turn turn;
    if (item.is_object()) {
      auto sp = item.find("speaker");
      auto text = item.find("text");
      if (sp == item.end()) throw SchemaError("history.speaker");
      if (text == item.end()) throw SchemaError("history.text");
      turn.speaker = speaker_from(*sp);
      turn.tokens = tokens_field(*text, "history.text");
    } else {
      turn.tokens = tokens_field(item, "history");
      const bool bot = bot_first ? (i % 2 == 0) : ((n - 1 - i) % 2 == 1);
      turn.speaker = bot ? Speaker::kBot : Speaker::kHuman;
    }
    s.history.push_back(std::move(turn));
  }

  if (auto it = record.find("response"); it != record.end() && !it->is_null()) {
    s.response = tokens_field(*it, "response");
  }
  if (auto it = record.find("knowledge_first"); it != record.end()) {
    if (!it->is_boolean()) throw SchemaError("knowledge_first");
    s.knowledge_first = it->get<bool>();
  }
  validate_sample(s);
  return s;
}

json sample_to_json(const DialogueSample& s) {
  json out = json::object();
  out["id"] = s.id;
  json goal = json::array();
  json path = json::array();
  for (const auto& topic : s.goal_path) path.push_back(join_tokens(topic));
  goal.push_back(path);
  auto triple_json = [](const SPOTriple& t) {
    return json::array({join_tokens(t.subject), join_tokens(t.predicate), join_tokens(t.object)});
  };
  for (const auto& t : s.goal_relations) goal.push_back(triple_json(t));
  out["goal"] = goal;
  json knowledge = json::array();
  for (const auto& t : s.knowledge) knowledge.push_back(triple_json(t));
  out["knowledge"] = knowledge;

  const bool ends_human = s.history.empty() || s.history.back().speaker == Speaker::kHuman;
  const bool starts_bot = !s.history.empty() && s.history.front().speaker == Speaker::kBot;
  json turns = json::array();
  if (ends_human || starts_bot) {
    for (const auto& t : s.history) turns.push_back(join_tokens(t.tokens));
    out[ends_human ? "history" : "conversation"] = turns;
  } else {
    for (const auto& t : s.history) {
      turns.push_back({{"speaker", t.speaker == Speaker::kHuman ? "human" : "bot"},
                       {"text", join_tokens(t.tokens)}});
    }
    out["history"] = turns;
  }
  if (s.response) out["response"] = join_tokens(*s.response);
  if (s.knowledge_first) out["knowledge_first"] = true;
  return out;
}

std::vector<DialogueSample> read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read corpus " + path.string());
  std::vector<DialogueSample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (split_whitespace(line).empty()) continue;
    try {
      DialogueSample s = parse_sample(line);
      if (s.id.empty()) s.id = std::to_string(out.size());
      out.push_back(std::move(s));
    } catch (const ParseError& e) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what(), e.offset());
    } catch (const ValidationError& e) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void write_corpus(const std::filesystem::path& path, std::span<const DialogueSample> samples) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write corpus " + path.string());
  for (const auto& s : samples) out << sample_to_json(s).dump() << '\n';
}

// ---------------------------------------------------------------------------
// Linearization

namespace {

void append(Tokens& out, const Tokens& more) { out.insert(out.end(), more.begin(), more.end()); }

void append_goal(Tokens& out, const DialogueSample& s) {
  out.push_back(goal_flag(0));
  for (const auto& topic : s.goal_path) append(out, topic);
  for (const auto& t : s.goal_relations) append(out, t.flatten());
}

void append_knowledge(Tokens& out, const DialogueSample& s) {
  for (const auto& t : s.knowledge) {
    out.emplace_back(kKnowledgeToken);
    append(out, t.flatten());
  }
}

}  // namespace

Tokens linearize(const DialogueSample& s) {
  Tokens out;
  if (s.knowledge_first) {
    append_knowledge(out, s);
    append_goal(out, s);
  } else {
    append_goal(out, s);
    append_knowledge(out, s);
  }
  if (s.history.empty() || s.history.front().speaker == Speaker::kBot) {
    out.push_back(question_flag(0));
    out.emplace_back(kClsToken);
  }
  std::size_t exchange = 0;
  for (const auto& turn : s.history) {
    if (turn.speaker == Speaker::kHuman) {
      out.push_back(question_flag(exchange));
    } else {
      out.push_back(answer_flag(exchange));
    }
    append(out, turn.tokens);
    if (turn.speaker == Speaker::kBot) ++exchange;
  }
  return out;
}

std::vector<SourceRegion> source_regions(std::span<const std::string> tokens) {
  std::vector<SourceRegion> out;
  out.reserve(tokens.size());
  SourceRegion current = SourceRegion::kGoal;
  for (const auto& t : tokens) {
    if (t == kKnowledgeToken) {
      current = SourceRegion::kKnowledge;
    } else if (t.rfind("[Goal=", 0) == 0 && is_indexed_flag(t)) {
      current = SourceRegion::kGoal;
    } else if ((t.rfind("[Q=", 0) == 0 || t.rfind("[A=", 0) == 0) && is_indexed_flag(t)) {
      current = SourceRegion::kHistory;
    }
    out.push_back(current);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Vocabulary

Vocabulary::Vocabulary() : Vocabulary(std::span<const std::string>{}) {}

Vocabulary::Vocabulary(std::span<const std::string> tokens) {
  for (const auto& t : reserved()) {
    ids_.emplace(t, tokens_.size());
    tokens_.push_back(t);
  }
  for (const auto& t : tokens) {
    if (ids_.count(t)) continue;
    ids_.emplace(t, tokens_.size());
    tokens_.push_back(t);
  }
}

std::size_t Vocabulary::reserved_count() { return reserved().size(); }

TokenId Vocabulary::id(std::string_view token) const { return find(token).value_or(kUnk); }

std::optional<TokenId> Vocabulary::find(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

bool Vocabulary::is_control(TokenId id) const {
  return id == kPad || id == kBos || (id > kEos && id < reserved_count());
}

std::string Vocabulary::to_text() const {
  std::string out;
  for (const auto& t : tokens_) {
    out += t;
    out += '\n';
  }
  return out;
}

Vocabulary Vocabulary::from_text(std::string_view text) {
  Tokens lines;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    lines.emplace_back(text.substr(start, end - start));
    start = end + 1;
  }
  const auto& r = reserved();
  if (lines.size() < r.size() || !std::equal(r.begin(), r.end(), lines.begin())) {
    throw FormatError("vocabulary file does not start with the reserved token block");
  }
  Tokens rest(lines.begin() + static_cast<std::ptrdiff_t>(r.size()), lines.end());
  Vocabulary v(rest);
  if (v.size() != lines.size()) throw FormatError("vocabulary file has duplicate tokens");
  return v;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write vocabulary " + path.string());
  out << to_text();
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read vocabulary " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return from_text(buffer.str());
}

Vocabulary build_vocabulary(std::span<const DialogueSample> corpus, std::size_t max_size,
                            std::size_t min_freq) {
  if (corpus.empty()) throw UsageError("build_vocabulary: empty corpus");
  if (max_size <= Vocabulary::reserved_count()) {
    throw UsageError("build_vocabulary: max_size must exceed " +
                     std::to_string(Vocabulary::reserved_count()) + " reserved tokens");
  }
  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& s : corpus) {
    for (const auto& t : linearize(s)) {
      if (!is_reserved_token(t)) ++counts[t];
    }
    if (s.response) {
      for (const auto& t : *s.response) ++counts[t];
    }
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  Tokens kept;
  const std::size_t room = max_size - Vocabulary::reserved_count();
  for (const auto& [token, count] : ranked) {
    if (kept.size() == room || count < min_freq) break;
    kept.push_back(token);
  }
  return Vocabulary(kept);
}

// ---------------------------------------------------------------------------
// Encoding

const std::string& LinearizedPair::surface(TokenId id, const Vocabulary& vocab) const {
  if (id < vocab_size) return vocab.token(id);
  return extended_tokens.at(id - vocab_size);
}

LinearizedPair encode_tokens(std::span<const std::string> source, const std::optional<Tokens>& target,
                             const Vocabulary& vocab) {
  LinearizedPair pair;
  pair.vocab_size = vocab.size();
  pair.source_tokens.assign(source.begin(), source.end());
  std::unordered_map<std::string, TokenId> extended;
  for (std::size_t pos = 0; pos < source.size(); ++pos) {
    if (auto id = vocab.find(source[pos])) {
      pair.source_ids.push_back(*id);
      continue;
    }
    auto [it, inserted] = extended.emplace(source[pos], vocab.size() + pair.extended_tokens.size());
    if (inserted) pair.extended_tokens.push_back(source[pos]);
    pair.source_ids.push_back(it->second);
    pair.dynamic_map.emplace(pos, it->second);
  }
  if (target) {
    std::vector<TokenId> ids{Vocabulary::kBos};
    for (const auto& t : *target) {
      if (auto id = vocab.find(t)) {
        ids.push_back(*id);
      } else if (auto it = extended.find(t); it != extended.end()) {
        ids.push_back(it->second);
      } else {
        ids.push_back(Vocabulary::kUnk);
      }
    }
    ids.push_back(Vocabulary::kEos);
    pair.target_ids = std::move(ids);
  }
  return pair;
}

LinearizedPair encode_pair(const DialogueSample& sample, const Vocabulary& vocab,
                           std::size_t max_source_length) {
  Tokens source = linearize(sample);
  if (source.size() > max_source_length) {
    DialogueSample trimmed = sample;
    while (source.size() > max_source_length && !trimmed.history.empty()) {
      trimmed.history.erase(trimmed.history.begin());
      source = linearize(trimmed);
    }
    while (source.size() > max_source_length && !trimmed.knowledge.empty()) {
      trimmed.knowledge.pop_back();
      source = linearize(trimmed);
    }
    if (source.size() > max_source_length) source.resize(max_source_length);
  }
  return encode_tokens(source, sample.response, vocab);
}

Tokens decode_source(const LinearizedPair& pair, const Vocabulary& vocab) {
  Tokens out;
  out.reserve(pair.source_ids.size());
  for (TokenId id : pair.source_ids) out.push_back(pair.surface(id, vocab));
  return out;
}

}  // namespace kgdial
