#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace kgdial {

using Tokens = std::vector<std::string>;
using TokenId = std::size_t;

Tokens split_whitespace(std::string_view text);
std::string join_tokens(std::span<const std::string> tokens);

struct SPOTriple {
  Tokens subject;
  Tokens predicate;
  Tokens object;

  /// subject, predicate and object tokens laid end to end
  Tokens flatten() const;
  friend bool operator==(const SPOTriple&, const SPOTriple&) = default;
};

enum class Speaker { kHuman, kBot };

struct Turn {
  Speaker speaker = Speaker::kHuman;
  Tokens tokens;
  friend bool operator==(const Turn&, const Turn&) = default;
};

/// One dialogue context. History speakers alternate; a history opening with a
/// bot turn is read as following the implicit proactive opener "[Q=0] [CLS]".
struct DialogueSample {
  std::string id;
  std::vector<Tokens> goal_path;
  std::vector<SPOTriple> goal_relations;
  std::vector<SPOTriple> knowledge;
  std::vector<Turn> history;
  std::optional<Tokens> response;
  /// Set by section swapping: the knowledge block precedes the goal block.
  bool knowledge_first = false;

  friend bool operator==(const DialogueSample&, const DialogueSample&) = default;
};

/// Throws ValidationError when a DialogueSample invariant does not hold.
void validate_sample(const DialogueSample& sample);

/// Parses one JSON-lines record. Accepts `history` (strings, last one spoken
/// by the human) or `conversation` (strings, first one spoken by the bot);
/// history items may also be {"speaker": "human"|"bot", "text": ...} objects.
DialogueSample parse_sample(std::string_view json_record);
nlohmann::json sample_to_json(const DialogueSample& sample);

std::vector<DialogueSample> read_corpus(const std::filesystem::path& path);
void write_corpus(const std::filesystem::path& path, std::span<const DialogueSample> samples);

// Flag tokens.
inline constexpr std::string_view kPadToken = "<pad>";
inline constexpr std::string_view kUnkToken = "<unk>";
inline constexpr std::string_view kBosToken = "<s>";
inline constexpr std::string_view kEosToken = "</s>";
inline constexpr std::string_view kClsToken = "[CLS]";
inline constexpr std::string_view kKnowledgeToken = "[KG]";
inline constexpr std::size_t kGoalFlagCount = 4;
/// Turn indices above this share the last [Q=k]/[A=k] flag.
inline constexpr std::size_t kMaxTurnFlag = 15;

std::string goal_flag(std::size_t n);
std::string question_flag(std::size_t k);
std::string answer_flag(std::size_t k);
bool is_reserved_token(std::string_view token);

/// Flag-token source sequence: goal block, knowledge block ([KG] S P O per
/// triple), then history with [Q=k]/[A=k] prefixes, k counting exchanges.
Tokens linearize(const DialogueSample& sample);

enum class SourceRegion { kGoal, kKnowledge, kHistory };
/// Region of each position of a linearized source.
std::vector<SourceRegion> source_regions(std::span<const std::string> tokens);

class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kUnk = 1;
  static constexpr TokenId kBos = 2;
  static constexpr TokenId kEos = 3;

  /// Reserved tokens only.
  Vocabulary();
  /// Reserved tokens followed by `tokens` (duplicates and reserved entries skipped).
  explicit Vocabulary(std::span<const std::string> tokens);

  std::size_t size() const noexcept { return tokens_.size(); }
  static std::size_t reserved_count();

  /// Id of `token`, or kUnk.
  TokenId id(std::string_view token) const;
  std::optional<TokenId> find(std::string_view token) const;
  const std::string& token(TokenId id) const { return tokens_.at(id); }
  bool is_reserved(TokenId id) const { return id < reserved_count(); }
  /// PAD, BOS and the flag family: never valid in generated output.
  bool is_control(TokenId id) const;

  std::string to_text() const;
  static Vocabulary from_text(std::string_view text);
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
};

/// Frequency-ranked vocabulary (ties broken lexicographically) over
/// linearized sources and responses. Throws UsageError on empty corpus or
/// max_size not above the reserved count.
Vocabulary build_vocabulary(std::span<const DialogueSample> corpus, std::size_t max_size,
                            std::size_t min_freq);

struct LinearizedPair {
  std::vector<TokenId> source_ids;
  Tokens source_tokens;
  /// BOS y1 .. yn EOS, absent at test time.
  std::optional<std::vector<TokenId>> target_ids;
  /// Source position -> extended id, for out-of-vocabulary source tokens.
  std::map<std::size_t, TokenId> dynamic_map;
  /// extended_tokens[k] is the surface form of id vocab_size + k.
  Tokens extended_tokens;
  std::size_t vocab_size = 0;

  std::size_t extended_size() const { return vocab_size + extended_tokens.size(); }
  /// Surface form of an id in the extended vocabulary.
  const std::string& surface(TokenId id, const Vocabulary& vocab) const;
};

inline constexpr std::size_t kDefaultMaxSourceLength = 512;

/// Encodes arbitrary source/target token lists with a per-pair dynamic
/// dictionary for source OOVs.
LinearizedPair encode_tokens(std::span<const std::string> source,
                             const std::optional<Tokens>& target, const Vocabulary& vocab);

/// linearize + encode_tokens. Sources longer than `max_source_length` drop
/// their oldest history turns first, then trailing knowledge triples, and are
/// finally cut at the cap.
LinearizedPair encode_pair(const DialogueSample& sample, const Vocabulary& vocab,
                           std::size_t max_source_length = kDefaultMaxSourceLength);

/// Maps source ids back to tokens through the vocabulary and dynamic map.
Tokens decode_source(const LinearizedPair& pair, const Vocabulary& vocab);

}  // namespace kgdial
