#include "kgdial/synthetic.hpp"

#include <algorithm>
#include <random>

#include "kgdial/error.hpp"
#include "kgdial/random.hpp"

namespace kgdial {

namespace {

const Tokens kCopyGoal = {"copy"};
const SPOTriple kCopyRelation = {{"task"}, {"is"}, {"copy"}};

std::string payload_word(std::size_t i) { return "w" + std::to_string(i); }

}  // namespace

std::vector<DialogueSample> generate_copy_corpus(std::size_t count, const CopyTaskConfig& config, CopySplit split) {
  if (config.words == 0 || config.max_payload == 0) throw UsageError("copy corpus: empty word list or payload");
  auto rng = make_rng(config.seed, split == CopySplit::kTrain ? 10 : 11);
  std::uniform_int_distribution<std::size_t> length(1, config.max_payload);
  std::uniform_int_distribution<std::size_t> word(0, config.words - 1);
  std::uniform_int_distribution<std::size_t> rare(0, 9999);
  std::bernoulli_distribution with_oov(config.oov_sample_rate);
  const std::string pool = split == CopySplit::kTrain ? "rare" : "unseen";

  std::vector<DialogueSample> out;
  out.reserve(count);
  for (std::size_t n = 0; n < count; ++n) {
    Tokens payload(length(rng));
    for (auto& t : payload) t = payload_word(word(rng));
    if (with_oov(rng) && config.max_oov_per_sample > 0) {
      std::uniform_int_distribution<std::size_t> how_many(1, std::min(config.max_oov_per_sample, payload.size()));
      const std::size_t k = how_many(rng);
      std::vector<std::size_t> positions(payload.size());
      for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = i;
      std::shuffle(positions.begin(), positions.end(), rng);
      for (std::size_t i = 0; i < k; ++i) payload[positions[i]] = pool + std::to_string(rare(rng));
    }
    DialogueSample s;
    s.id = (split == CopySplit::kTrain ? "copy-train-" : "copy-test-") + std::to_string(n);
    s.goal_path = {kCopyGoal};
    s.goal_relations = {kCopyRelation};
    s.history = {{Speaker::kHuman, payload}};
    s.response = payload;
    out.push_back(std::move(s));
  }
  return out;
}

Vocabulary copy_task_vocabulary(const CopyTaskConfig& config) {
  Tokens words;
  for (std::size_t i = 0; i < config.words; ++i) words.push_back(payload_word(i));
  for (const auto& t : kCopyRelation.flatten()) words.push_back(t);
  return Vocabulary(words);
}

bool has_oov_payload(const DialogueSample& sample, const Vocabulary& vocab) {
  if (!sample.response) return false;
  return std::any_of(sample.response->begin(), sample.response->end(),
                     [&](const std::string& t) { return !vocab.find(t); });
}

// ---------------------------------------------------------------------------
// Movie chats

namespace {

const std::vector<std::string> kFamily = {"Zhang", "Wang", "Li", "Zhao", "Chen", "Liu", "Sun", "Zhou"};
const std::vector<std::string> kGiven = {"Wei", "Fang", "Jing", "Lei", "Yang", "Min", "Tao", "Hui"};
const std::vector<std::string> kAdjective = {"Red", "Silent", "Lost", "Golden", "Broken", "Distant", "Hidden", "Last"};
const std::vector<std::string> kNoun = {"River", "Sky", "Garden", "Letter", "City", "Summer", "Bridge", "Voice"};
const std::vector<std::string> kPlaces = {"Beijing", "Shanghai", "Hangzhou", "Chengdu", "Xiamen", "Wuhan",
                                          "Nanjing", "Harbin", "Suzhou", "Dalian"};
const std::vector<std::string> kGenres = {"comedy", "drama", "romance", "thriller", "action"};

struct World {
  std::vector<Tokens> people;
  std::vector<Tokens> movies;
  std::vector<Tokens> places;
  std::vector<std::size_t> director;           // per movie
  std::vector<std::vector<std::size_t>> stars;  // per movie
  std::vector<std::size_t> country;            // per movie
  std::vector<std::size_t> genre;              // per movie
  std::vector<std::size_t> birthplace;         // per person
};

World build_world(const DialogueCorpusConfig& c) {
  if (c.people < 3 || c.movies < 1 || c.places < 1) throw UsageError("dialogue corpus: world too small");
  if (c.people > kFamily.size() * kGiven.size() || c.movies > kAdjective.size() * kNoun.size() ||
      c.places > kPlaces.size()) {
    throw UsageError("dialogue corpus: world too large for the name lists");
  }
  World w;
  for (std::size_t i = 0; i < c.people; ++i) w.people.push_back({kFamily[i % kFamily.size()], kGiven[(i / kFamily.size() + i) % kGiven.size()]});
  for (std::size_t i = 0; i < c.movies; ++i) w.movies.push_back({kAdjective[i % kAdjective.size()], kNoun[(i / kAdjective.size() + 3 * i) % kNoun.size()]});
  for (std::size_t i = 0; i < c.places; ++i) w.places.push_back({kPlaces[i]});
  // Deduplicate names that the modular construction could repeat.
  std::sort(w.people.begin(), w.people.end());
  w.people.erase(std::unique(w.people.begin(), w.people.end()), w.people.end());
  std::sort(w.movies.begin(), w.movies.end());
  w.movies.erase(std::unique(w.movies.begin(), w.movies.end()), w.movies.end());

  auto rng = make_rng(c.seed, 20);
  std::uniform_int_distribution<std::size_t> person(0, w.people.size() - 1);
  std::uniform_int_distribution<std::size_t> place(0, w.places.size() - 1);
  std::uniform_int_distribution<std::size_t> genre(0, kGenres.size() - 1);
  for (std::size_t m = 0; m < w.movies.size(); ++m) {
    const std::size_t d = person(rng);
    std::size_t s1 = person(rng), s2 = person(rng);
    while (s1 == d) s1 = person(rng);
    while (s2 == d || s2 == s1) s2 = person(rng);
    w.director.push_back(d);
    w.stars.push_back({s1, s2});
    w.country.push_back(place(rng));
    w.genre.push_back(genre(rng));
  }
  for (std::size_t p = 0; p < w.people.size(); ++p) w.birthplace.push_back(place(rng));
  return w;
}

Tokens cat(std::initializer_list<Tokens> parts) {
  Tokens out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

}  // namespace

EntityMap synthetic_entities(const DialogueCorpusConfig& config) {
  const World w = build_world(config);
  EntityMap map;
  for (const auto& p : w.people) map.add(p, "person");
  for (const auto& m : w.movies) map.add(m, "movie");
  for (const auto& p : w.places) map.add(p, "place");
  return map;
}

std::vector<DialogueSample> generate_dialogue_corpus(std::size_t count, const DialogueCorpusConfig& config) {
  const World w = build_world(config);
  auto rng = make_rng(config.seed, 21);
  std::uniform_int_distribution<std::size_t> movie(0, w.movies.size() - 1);
  std::bernoulli_distribution coin(0.5);

  std::vector<DialogueSample> out;
  out.reserve(count);
  for (std::size_t n = 0; n < count; ++n) {
    const std::size_t m = movie(rng);
    const std::size_t star = w.stars[m][coin(rng) ? 1 : 0];
    const std::size_t other = w.stars[m][0] == star ? w.stars[m][1] : w.stars[m][0];
    const Tokens& M = w.movies[m];
    const Tokens& P = w.people[star];
    const Tokens& D = w.people[w.director[m]];
    const Tokens& X = w.places[w.birthplace[star]];
    const Tokens& C = w.places[w.country[m]];
    const Tokens G = {kGenres[w.genre[m]]};

    DialogueSample s;
    s.id = "chat-" + std::to_string(n);
    s.goal_path = {{"START"}, M, P};
    s.goal_relations = {{M, {"starring"}, P}};
    s.knowledge = {
        {M, {"directed_by"}, D}, {M, {"starring"}, P},          {M, {"starring"}, w.people[other]},
        {M, {"genre"}, G},       {M, {"country"}, C},           {P, {"birthplace"}, X},
        {P, {"representative_work"}, M},
    };
    std::shuffle(s.knowledge.begin(), s.knowledge.end(), rng);

    std::vector<Turn> turns;
    if (coin(rng)) turns.push_back({Speaker::kHuman, coin(rng) ? Tokens{"hello", "!"} : Tokens{"hi", "there"}});
    turns.push_back({Speaker::kBot, coin(rng) ? cat({{"have", "you", "seen"}, M, {"?"}})
                                              : cat({{"do", "you", "know", "the", "movie"}, M, {"?"}})});
    turns.push_back({Speaker::kHuman, coin(rng) ? Tokens{"no", ",", "what", "is", "it", "about", "?"}
                                                : Tokens{"not", "yet", ",", "tell", "me", "more"}});
    turns.push_back({Speaker::kBot, coin(rng) ? cat({{"it", "is", "a"}, G, {"directed", "by"}, D, {"and", "it", "stars"}, P, {"."}})
                                              : cat({M, {"is", "a"}, G, {"starring"}, P, {"."}})});
    turns.push_back({Speaker::kHuman, cat({{"who", "is"}, P, {"?"}})});
    turns.push_back({Speaker::kBot, cat({P, {"was", "born", "in"}, X, {"."}})});
    turns.push_back({Speaker::kHuman, coin(rng) ? Tokens{"cool", ",", "anything", "else", "?"} : Tokens{"interesting", "!"}});
    turns.push_back({Speaker::kBot, coin(rng) ? cat({P, {"is", "best", "known", "for"}, M, {"."}})
                                              : cat({{"the", "movie", "was", "made", "in"}, C, {"."}})});
    // Cut after a random bot turn.
    std::vector<std::size_t> bot_ends;
    for (std::size_t i = 0; i < turns.size(); ++i) {
      if (turns[i].speaker == Speaker::kBot) bot_ends.push_back(i);
    }
    std::uniform_int_distribution<std::size_t> pick(0, bot_ends.size() - 1);
    const std::size_t end = bot_ends[pick(rng)];
    s.history.assign(turns.begin(), turns.begin() + static_cast<std::ptrdiff_t>(end));
    s.response = turns[end].tokens;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace kgdial
