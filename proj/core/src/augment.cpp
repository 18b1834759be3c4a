#include "kgdial/augment.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "kgdial/error.hpp"
#include "kgdial/random.hpp"

namespace kgdial {

using nlohmann::json;

const std::set<std::string>& entity_categories() {
  static const std::set<std::string> categories = {"person", "movie", "place", "topic"};
  return categories;
}

// ---------------------------------------------------------------------------
// EntityMap

void EntityMap::add(const Tokens& surface, const std::string& category) {
  if (surface.empty()) return;
  if (!entity_categories().count(category)) {
    throw ValidationError("unknown entity category \"" + category + "\"");
  }
  if (entries_.emplace(surface, category).second) longest_ = std::max(longest_, surface.size());
}

void EntityMap::merge(const EntityMap& other) {
  for (const auto& [surface, category] : other.entries_) add(surface, category);
}

std::vector<EntityMatch> match_entities(std::span<const std::string> tokens, const EntityMap& entities) {
  std::vector<EntityMatch> all;
  if (entities.empty()) return all;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const std::size_t max_len = std::min(entities.longest(), tokens.size() - i);
    for (std::size_t len = 1; len <= max_len; ++len) {
      Tokens key(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                 tokens.begin() + static_cast<std::ptrdiff_t>(i + len));
      if (entities.entries().count(key)) all.push_back({i, len});
    }
  }
  std::stable_sort(all.begin(), all.end(), [](const EntityMatch& a, const EntityMatch& b) {
    return a.length != b.length ? a.length > b.length : a.start < b.start;
  });
  std::vector<bool> taken(tokens.size(), false);
  std::vector<EntityMatch> chosen;
  for (const auto& m : all) {
    const bool free = std::none_of(taken.begin() + static_cast<std::ptrdiff_t>(m.start),
                                   taken.begin() + static_cast<std::ptrdiff_t>(m.start + m.length),
                                   [](bool t) { return t; });
    if (!free) continue;
    std::fill(taken.begin() + static_cast<std::ptrdiff_t>(m.start),
              taken.begin() + static_cast<std::ptrdiff_t>(m.start + m.length), true);
    chosen.push_back(m);
  }
  std::sort(chosen.begin(), chosen.end(),
            [](const EntityMatch& a, const EntityMatch& b) { return a.start < b.start; });
  return chosen;
}

PredicateTable default_predicate_table() {
  return {
      {"主演", {"movie", "person"}},
      {"导演", {"movie", "person"}},
      {"编剧", {"movie", "person"}},
      {"代表作", {"person", "movie"}},
      {"出生地", {"person", "place"}},
      {"国家", {"movie", "place"}},
      {"starring", {"movie", "person"}},
      {"directed_by", {"movie", "person"}},
      {"representative_work", {"person", "movie"}},
      {"birthplace", {"person", "place"}},
  };
}

EntityMap infer_entities(const DialogueSample& sample, const PredicateTable& table) {
  EntityMap map;
  std::vector<const SPOTriple*> triples;
  for (const auto& t : sample.goal_relations) triples.push_back(&t);
  for (const auto& t : sample.knowledge) triples.push_back(&t);
  for (const SPOTriple* t : triples) {
    auto it = table.find(join_tokens(t->predicate));
    if (it == table.end()) continue;
    if (!it->second.subject.empty()) map.add(t->subject, it->second.subject);
    if (!it->second.object.empty()) map.add(t->object, it->second.object);
  }
  for (const auto& t : sample.knowledge) map.add(t.subject, "topic");
  for (const auto& topic : sample.goal_path) {
    std::string lowered = join_tokens(topic);
    std::transform(lowered.begin(), lowered.end(), lowered.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    if (lowered == "start") continue;
    map.add(topic, "topic");
  }
  return map;
}

// ---------------------------------------------------------------------------
// Generalization

namespace {

template <typename Sample>
auto token_lists(Sample& s) {
  using Ptr = std::conditional_t<std::is_const_v<Sample>, const Tokens*, Tokens*>;
  std::vector<Ptr> lists;
  for (auto& topic : s.goal_path) lists.push_back(&topic);
  for (auto& t : s.goal_relations) {
    lists.push_back(&t.subject);
    lists.push_back(&t.predicate);
    lists.push_back(&t.object);
  }
  for (auto& t : s.knowledge) {
    lists.push_back(&t.subject);
    lists.push_back(&t.predicate);
    lists.push_back(&t.object);
  }
  for (auto& turn : s.history) lists.push_back(&turn.tokens);
  if (s.response) lists.push_back(&*s.response);
  return lists;
}

}  // namespace

std::size_t token_list_count(const DialogueSample& sample) { return token_lists(sample).size(); }

json EntityInverse::to_json() const {
  json rows = json::array();
  for (const auto& r : replacements) {
    rows.push_back({{"list", r.list},
                    {"position", r.position},
                    {"category", r.category},
                    {"original", join_tokens(r.original)}});
  }
  return {{"id", id}, {"replacements", rows}};
}

EntityInverse EntityInverse::from_json(const json& j) {
  EntityInverse inv;
  if (!j.contains("replacements") || !j["replacements"].is_array()) throw SchemaError("replacements");
  inv.id = j.value("id", "");
  for (const auto& r : j["replacements"]) {
    EntityReplacement rep;
    rep.list = r.at("list").get<std::size_t>();
    rep.position = r.at("position").get<std::size_t>();
    rep.category = r.at("category").get<std::string>();
    rep.original = split_whitespace(r.at("original").get<std::string>());
    inv.replacements.push_back(std::move(rep));
  }
  return inv;
}

std::pair<DialogueSample, EntityInverse> generalize_entities(const DialogueSample& sample,
                                                            const EntityMap& entities) {
  DialogueSample out = sample;
  EntityInverse inverse;
  inverse.id = sample.id;
  auto lists = token_lists(out);
  for (std::size_t li = 0; li < lists.size(); ++li) {
    Tokens& tokens = *lists[li];
    const auto matches = match_entities(tokens, entities);
    if (matches.empty()) continue;
    Tokens rewritten;
    std::size_t i = 0;
    for (const auto& m : matches) {
      while (i < m.start) rewritten.push_back(tokens[i++]);
      Tokens original(tokens.begin() + static_cast<std::ptrdiff_t>(m.start),
                      tokens.begin() + static_cast<std::ptrdiff_t>(m.start + m.length));
      const std::string& category = entities.entries().at(original);
      inverse.replacements.push_back({li, rewritten.size(), category, std::move(original)});
      rewritten.push_back(category);
      i = m.start + m.length;
    }
    while (i < tokens.size()) rewritten.push_back(tokens[i++]);
    tokens = std::move(rewritten);
  }
  return {std::move(out), std::move(inverse)};
}

DialogueSample restore_entities(const DialogueSample& generalized, const EntityInverse& inverse) {
  DialogueSample out = generalized;
  auto lists = token_lists(out);
  // Later positions first so earlier positions stay valid.
  std::vector<const EntityReplacement*> order;
  for (const auto& r : inverse.replacements) order.push_back(&r);
  std::stable_sort(order.begin(), order.end(), [](const EntityReplacement* a, const EntityReplacement* b) {
    return a->list != b->list ? a->list < b->list : a->position > b->position;
  });
  for (const EntityReplacement* r : order) {
    if (r->list >= lists.size() || r->position >= lists[r->list]->size()) {
      throw ValidationError("entity inverse does not fit sample \"" + generalized.id + "\"");
    }
    Tokens& tokens = *lists[r->list];
    const auto at = tokens.begin() + static_cast<std::ptrdiff_t>(r->position);
    tokens.insert(tokens.erase(at), r->original.begin(), r->original.end());
  }
  return out;
}

Tokens restore_output(std::span<const std::string> output, const EntityInverse& inverse) {
  std::map<std::string, std::vector<Tokens>> by_category;
  for (const auto& r : inverse.replacements) {
    auto& forms = by_category[r.category];
    if (std::find(forms.begin(), forms.end(), r.original) == forms.end()) forms.push_back(r.original);
  }
  std::map<std::string, std::size_t> used;
  Tokens out;
  for (const auto& t : output) {
    auto it = by_category.find(t);
    if (it == by_category.end()) {
      out.push_back(t);
      continue;
    }
    const std::size_t k = std::min(used[t]++, it->second.size() - 1);
    out.insert(out.end(), it->second[k].begin(), it->second[k].end());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Knowledge selection

namespace {

bool is_function_token(const std::string& t) {
  static const std::set<std::string> stop = {
      "，", "。", "？", "！", "、", "：", "；", "“", "”", "‘", "’", "（", "）", "…",
      ",", ".", "?", "!", ":", ";", "\"", "'", "(", ")", "-",
      "的", "了", "是", "吗", "呢", "啊", "吧", "呀", "哦", "也", "都", "就", "和", "在",
      "the", "a", "an", "is", "of", "and", "to", "in"};
  return stop.count(t) > 0;
}

}  // namespace

double knowledge_overlap_f1(const SPOTriple& triple, std::span<const std::string> response) {
  std::map<std::string, std::size_t> counts;
  std::size_t triple_n = 0;
  for (const auto& t : triple.flatten()) {
    if (is_function_token(t)) continue;
    ++counts[t];
    ++triple_n;
  }
  std::size_t response_n = 0, common = 0;
  for (const auto& t : response) {
    if (is_function_token(t)) continue;
    ++response_n;
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  if (common == 0) return 0.0;
  const double p = static_cast<double>(common) / static_cast<double>(triple_n);
  const double r = static_cast<double>(common) / static_cast<double>(response_n);
  return 2.0 * p * r / (p + r);
}

DialogueSample select_knowledge(const DialogueSample& sample, double threshold) {
  if (!sample.response) throw UsageError("select_knowledge: sample \"" + sample.id + "\" has no response");
  DialogueSample out = sample;
  if (sample.knowledge.empty()) return out;
  out.knowledge.clear();
  std::size_t best = 0;
  double best_score = -1.0;
  for (std::size_t i = 0; i < sample.knowledge.size(); ++i) {
    const double f1 = knowledge_overlap_f1(sample.knowledge[i], *sample.response);
    if (f1 >= threshold) out.knowledge.push_back(sample.knowledge[i]);
    if (f1 > best_score) {
      best_score = f1;
      best = i;
    }
  }
  if (out.knowledge.empty()) out.knowledge.push_back(sample.knowledge[best]);
  return out;
}

DialogueSample swap_sections(const DialogueSample& sample, std::uint64_t seed) {
  DialogueSample out = sample;
  auto rng = make_rng(seed);
  if ((rng() >> 63) != 0) out.knowledge_first = !out.knowledge_first;
  std::shuffle(out.knowledge.begin(), out.knowledge.end(), rng);
  return out;
}

// ---------------------------------------------------------------------------
// Conversation extraction

std::vector<DialogueSample> extract_conversations(const DialogueSample& sample, ExtractionMode mode) {
  std::vector<Turn> turns = sample.history;
  if (sample.response) turns.push_back({Speaker::kBot, *sample.response});

  std::vector<DialogueSample> out;
  for (std::size_t j = 0; j < turns.size(); ++j) {
    if (turns[j].speaker != Speaker::kBot) continue;
    std::vector<std::size_t> windows{j};
    if (mode == ExtractionMode::kTwoThreeAndAll) {
      for (std::size_t w : {std::size_t{2}, std::size_t{3}}) {
        const std::size_t len = std::min(w, j);
        if (std::find(windows.begin(), windows.end(), len) == windows.end()) windows.push_back(len);
      }
    }
    for (std::size_t len : windows) {
      DialogueSample pair = sample;
      pair.history.assign(turns.begin() + static_cast<std::ptrdiff_t>(j - len),
                          turns.begin() + static_cast<std::ptrdiff_t>(j));
      pair.response = turns[j].tokens;
      pair.id = sample.id + "/t" + std::to_string(j);
      if (len != j) pair.id += "w" + std::to_string(len);
      out.push_back(std::move(pair));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Recipes

bool DatasetRecipe::same_operators(const DatasetRecipe& o) const {
  return entity_generalization == o.entity_generalization &&
         knowledge_selection == o.knowledge_selection && swap == o.swap && extraction == o.extraction;
}

std::vector<DatasetRecipe> all_named_recipes() {
  using M = ExtractionMode;
  return {
      {"D-1", false, false, false, M::kAllTurns},
      {"D-2", true, false, false, M::kAllTurns},
      {"D-3", true, true, false, M::kTwoThreeAndAll},
      {"D-4", true, true, false, M::kAllTurns},
      {"D-5", true, false, true, M::kTwoThreeAndAll},
      {"D-6", true, true, true, M::kAllTurns},
  };
}

namespace {

std::string canonical_recipe_name(std::string name) {
  std::string digits;
  for (char c : name) {
    if (std::isdigit(static_cast<unsigned char>(c))) digits += c;
  }
  std::string letters;
  for (char c : name) {
    if (std::isalpha(static_cast<unsigned char>(c))) letters += static_cast<char>(std::toupper(c));
  }
  if (letters != "D" || digits.size() != 1) return "";
  return "D-" + digits;
}

bool parse_flag(const std::string& value, const std::string& key) {
  if (value == "1" || value == "true" || value == "yes" || value == "on") return true;
  if (value == "0" || value == "false" || value == "no" || value == "off") return false;
  throw ParseError("recipe: bad flag value \"" + value + "\" for " + key, 0);
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

DatasetRecipe named_recipe(const std::string& name) {
  const std::string canonical = canonical_recipe_name(name);
  for (const auto& r : all_named_recipes()) {
    if (r.name == canonical) return r;
  }
  throw UsageError("unknown recipe \"" + name + "\" (expected D-1 .. D-6)");
}

DatasetRecipe parse_recipe(std::string_view text, const std::string& name) {
  DatasetRecipe recipe;
  recipe.name = name;
  std::size_t offset = 0;
  while (offset < text.size()) {
    std::size_t end = text.find('\n', offset);
    if (end == std::string_view::npos) end = text.size();
    std::string line = trim(text.substr(offset, end - offset));
    const std::size_t line_at = offset;
    offset = end + 1;
    if (const auto hash = line.find('#'); hash != std::string::npos) line = trim(line.substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("recipe: expected key=value", line_at);
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "entity_generalization") {
      recipe.entity_generalization = parse_flag(value, key);
    } else if (key == "knowledge_selection") {
      recipe.knowledge_selection = parse_flag(value, key);
    } else if (key == "swap" || key == "switch") {
      recipe.swap = parse_flag(value, key);
    } else if (key == "extraction") {
      if (value == "all") {
        recipe.extraction = ExtractionMode::kAllTurns;
      } else if (value == "two_three_all") {
        recipe.extraction = ExtractionMode::kTwoThreeAndAll;
      } else {
        throw ParseError("recipe: extraction must be all or two_three_all", line_at);
      }
    } else if (key == "knowledge_threshold") {
      try {
        recipe.knowledge_threshold = std::stod(value);
      } catch (const std::exception&) {
        throw ParseError("recipe: bad knowledge_threshold", line_at);
      }
      if (recipe.knowledge_threshold < 0 || recipe.knowledge_threshold > 1) {
        throw ValidationError("recipe: knowledge_threshold outside [0,1]");
      }
    } else if (key == "name") {
      recipe.name = value;
    } else {
      throw ParseError("recipe: unknown key \"" + key + "\"", line_at);
    }
  }
  return recipe;
}

std::string recipe_to_text(const DatasetRecipe& r) {
  std::ostringstream out;
  out << "name=" << r.name << '\n'
      << "entity_generalization=" << (r.entity_generalization ? 1 : 0) << '\n'
      << "knowledge_selection=" << (r.knowledge_selection ? 1 : 0) << '\n'
      << "swap=" << (r.swap ? 1 : 0) << '\n'
      << "extraction=" << (r.extraction == ExtractionMode::kAllTurns ? "all" : "two_three_all") << '\n'
      << "knowledge_threshold=" << r.knowledge_threshold << '\n';
  return out.str();
}

DatasetRecipe load_recipe(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read recipe " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  const std::string stem = path.stem().string();
  const std::string canonical = canonical_recipe_name(stem);
  DatasetRecipe recipe = parse_recipe(buffer.str(), canonical.empty() ? stem : canonical);
  if (!canonical.empty() && !recipe.same_operators(named_recipe(canonical))) {
    throw ValidationError("recipe file " + path.string() + " does not match row " + canonical);
  }
  return recipe;
}

DatasetRecipe resolve_recipe(const std::string& name_or_path) {
  if (std::filesystem::exists(name_or_path)) return load_recipe(name_or_path);
  return named_recipe(name_or_path);
}

// ---------------------------------------------------------------------------
// Dataset assembly

AugmentedDataset build_dataset(std::span<const DialogueSample> corpus, const DatasetRecipe& recipe,
                               const EntityMap& entities, std::uint64_t seed, const PredicateTable& table) {
  AugmentedDataset out;
  std::uint64_t counter = 0;
  for (const auto& dialogue : corpus) {
    EntityMap local;
    if (recipe.entity_generalization) {
      local = entities;
      local.merge(infer_entities(dialogue, table));
    }
    for (auto& pair : extract_conversations(dialogue, recipe.extraction)) {
      DialogueSample s = std::move(pair);
      EntityInverse inverse;
      inverse.id = s.id;
      if (recipe.entity_generalization) std::tie(s, inverse) = generalize_entities(s, local);
      if (recipe.knowledge_selection) s = select_knowledge(s, recipe.knowledge_threshold);
      if (recipe.swap) s = swap_sections(s, splitmix64(seed ^ splitmix64(counter)));
      ++counter;
      out.samples.push_back(std::move(s));
      out.inverses.push_back(std::move(inverse));
    }
  }
  return out;
}

std::vector<LinearizedPair> build_pairs(const AugmentedDataset& dataset, const Vocabulary& vocab,
                                        std::size_t max_source_length) {
  std::vector<LinearizedPair> pairs;
  pairs.reserve(dataset.samples.size());
  for (const auto& s : dataset.samples) pairs.push_back(encode_pair(s, vocab, max_source_length));
  return pairs;
}

std::pair<DialogueSample, EntityInverse> prepare_for_inference(const DialogueSample& sample,
                                                              bool entity_generalization,
                                                              const EntityMap& entities,
                                                              const PredicateTable& table) {
  if (!entity_generalization) {
    EntityInverse none;
    none.id = sample.id;
    return {sample, none};
  }
  EntityMap local = entities;
  local.merge(infer_entities(sample, table));
  return generalize_entities(sample, local);
}

void write_inverses(const std::filesystem::path& path, std::span<const EntityInverse> inverses) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& inv : inverses) out << inv.to_json().dump() << '\n';
}

}  // namespace kgdial
