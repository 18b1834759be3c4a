#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "kgdial/corpus.hpp"

namespace kgdial {

/// Closed set of category tokens entities generalize to.
const std::set<std::string>& entity_categories();

/// Surface form (token sequence) -> category token.
class EntityMap {
 public:
  /// First assignment of a surface form wins. Throws ValidationError for a
  /// category outside entity_categories().
  void add(const Tokens& surface, const std::string& category);
  void merge(const EntityMap& other);

  bool empty() const noexcept { return entries_.empty(); }
  std::size_t size() const noexcept { return entries_.size(); }
  const std::map<Tokens, std::string>& entries() const noexcept { return entries_; }
  std::size_t longest() const noexcept { return longest_; }

 private:
  std::map<Tokens, std::string> entries_;
  std::size_t longest_ = 0;
};

struct EntityMatch {
  std::size_t start = 0;
  std::size_t length = 0;
  friend bool operator==(const EntityMatch&, const EntityMatch&) = default;
};

/// Non-overlapping matches chosen longest first, ties to the leftmost;
/// returned in left-to-right order.
std::vector<EntityMatch> match_entities(std::span<const std::string> tokens, const EntityMap& entities);

struct PredicateCategories {
  std::string subject;  // empty: not an entity
  std::string object;
};
using PredicateTable = std::map<std::string, PredicateCategories>;

/// Small default table (DuConv predicates plus English test predicates).
PredicateTable default_predicate_table();

/// Entities of one sample: goal topics and knowledge subjects (category from
/// the predicate table, else "topic") plus objects the table types.
EntityMap infer_entities(const DialogueSample& sample, const PredicateTable& table);

struct EntityReplacement {
  std::size_t list = 0;      // index into the sample's token lists, see token_list_count
  std::size_t position = 0;  // position of the category token in the generalized list
  std::string category;
  Tokens original;
};

struct EntityInverse {
  std::string id;
  std::vector<EntityReplacement> replacements;

  nlohmann::json to_json() const;
  static EntityInverse from_json(const nlohmann::json& j);
};

/// Number of token lists a sample exposes: goal topics, goal relation
/// S/P/O, knowledge S/P/O, history turns, response.
std::size_t token_list_count(const DialogueSample& sample);

std::pair<DialogueSample, EntityInverse> generalize_entities(const DialogueSample& sample,
                                                            const EntityMap& entities);
DialogueSample restore_entities(const DialogueSample& generalized, const EntityInverse& inverse);

/// Maps category tokens in generated output back to surface forms: the k-th
/// occurrence of a category takes the k-th distinct entity of that category
/// recorded in `inverse` (the last one once they run out).
Tokens restore_output(std::span<const std::string> output, const EntityInverse& inverse);

inline constexpr double kDefaultKnowledgeThreshold = 0.25;

/// Token-overlap F1 between a triple and a response, ignoring punctuation and
/// common function words.
double knowledge_overlap_f1(const SPOTriple& triple, std::span<const std::string> response);

/// Keeps triples with overlap F1 >= threshold, or the single best triple when
/// none qualifies. Throws UsageError if the sample has no response.
DialogueSample select_knowledge(const DialogueSample& sample, double threshold = kDefaultKnowledgeThreshold);

/// Randomly exchanges goal/knowledge block order and permutes knowledge triples.
DialogueSample swap_sections(const DialogueSample& sample, std::uint64_t seed);

enum class ExtractionMode { kAllTurns, kTwoThreeAndAll };

/// One (context, response) sample per bot turn of the dialogue formed by
/// history plus response.
std::vector<DialogueSample> extract_conversations(const DialogueSample& sample, ExtractionMode mode);

struct DatasetRecipe {
  std::string name;
  bool entity_generalization = false;
  bool knowledge_selection = false;
  bool swap = false;
  ExtractionMode extraction = ExtractionMode::kAllTurns;
  double knowledge_threshold = kDefaultKnowledgeThreshold;

  bool same_operators(const DatasetRecipe& other) const;
};

/// "D-1" .. "D-6" (also "d1", "D1"); throws UsageError otherwise.
DatasetRecipe named_recipe(const std::string& name);
std::vector<DatasetRecipe> all_named_recipes();

/// key=value lines: entity_generalization, knowledge_selection, swap
/// (0/1/true/false), extraction (all | two_three_all), knowledge_threshold.
DatasetRecipe parse_recipe(std::string_view text, const std::string& name = "");
std::string recipe_to_text(const DatasetRecipe& recipe);
/// Files named d1.recipe .. d6.recipe must agree with the named row.
DatasetRecipe load_recipe(const std::filesystem::path& path);
/// Named recipe or recipe file path.
DatasetRecipe resolve_recipe(const std::string& name_or_path);

struct AugmentedDataset {
  std::vector<DialogueSample> samples;
  std::vector<EntityInverse> inverses;  // parallel to samples
};

/// extraction -> entity generalization -> knowledge selection -> swap.
/// Per-sample entities are `entities` merged with infer_entities(sample).
AugmentedDataset build_dataset(std::span<const DialogueSample> corpus, const DatasetRecipe& recipe,
                               const EntityMap& entities, std::uint64_t seed,
                               const PredicateTable& table = default_predicate_table());

std::vector<LinearizedPair> build_pairs(const AugmentedDataset& dataset, const Vocabulary& vocab,
                                        std::size_t max_source_length = kDefaultMaxSourceLength);

/// The inference-time part of a recipe: only entity generalization applies.
std::pair<DialogueSample, EntityInverse> prepare_for_inference(
    const DialogueSample& sample, bool entity_generalization, const EntityMap& entities = {},
    const PredicateTable& table = default_predicate_table());

void write_inverses(const std::filesystem::path& path, std::span<const EntityInverse> inverses);

}  // namespace kgdial
