#include <doctest.h>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>

#include "kgdial/error.hpp"
#include "kgdial/metrics.hpp"
#include "kgdial/rerank.hpp"
#include "kgdial/synthetic.hpp"

using namespace kgdial;

namespace {

Tokens toks(const std::string& s) { return split_whitespace(s); }

DialogueSample movie_sample() {
  DialogueSample s;
  s.id = "m1";
  s.goal_path = {toks("START"), toks("Red Sky"), toks("Li Wei")};
  s.goal_relations = {{toks("Red Sky"), toks("starring"), toks("Li Wei")}};
  s.knowledge = {{toks("Red Sky"), toks("directed_by"), toks("Chen Min")},
                 {toks("Red Sky"), toks("starring"), toks("Li Wei")},
                 {toks("Li Wei"), toks("birthplace"), toks("Harbin")},
                 {toks("Lost City"), toks("starring"), toks("Zhao Lei")}};
  s.history = {{Speaker::kBot, toks("have you seen Red Sky ?")}, {Speaker::kHuman, toks("no , who is in it ?")}};
  s.response = toks("it stars Li Wei , directed by Chen Min .");
  return s;
}

// Counts every repeated bigram/trigram occurrence by direct pairwise comparison.
std::size_t brute_force_repeats(const Tokens& t) {
  std::size_t repeats = 0;
  for (std::size_t n = 2; n <= 3; ++n) {
    if (t.size() < n) continue;
    for (std::size_t i = 0; i + n <= t.size(); ++i) {
      // occurrence i is a repeat if an identical n-gram starts earlier
      for (std::size_t j = 0; j < i; ++j) {
        if (std::equal(t.begin() + i, t.begin() + i + n, t.begin() + j)) {
          ++repeats;
          break;
        }
      }
    }
  }
  return repeats;
}

CandidateResponse cand(const std::string& model, const std::string& text, Real beam = -1.0) {
  return {"m1", model, toks(text), beam, beam * 2};
}

}  // namespace

TEST_CASE("feature slots") {
  const auto names = feature_names();
  CHECK(names.size() == 14);
  CHECK(names.front() == "model_weight");
  CHECK(names.back() == "raw_logp");
  FeatureOptions o;
  o.knowledge_similarity = true;
  CHECK(feature_names(o).size() == 16);
}

TEST_CASE("fluency against a brute-force repeat counter") {
  CHECK(fluency(toks("a a a a")) == doctest::Approx(1.0 / (1.0 + brute_force_repeats(toks("a a a a")))));
  CHECK(brute_force_repeats(toks("a a a a")) == 3);
  CHECK(fluency(toks("a b c d")) == 1.0);
  CHECK(fluency({}) == 1.0);
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> w(0, 3), len(0, 12);
  for (int trial = 0; trial < 200; ++trial) {
    Tokens t;
    for (int i = len(rng); i > 0; --i) t.push_back(std::string(1, static_cast<char>('a' + w(rng))));
    CHECK(fluency(t) == doctest::Approx(1.0 / (1.0 + static_cast<Real>(brute_force_repeats(t)))));
  }
}

TEST_CASE("tf-idf uses smooth idf and cosine") {
  const std::vector<Tokens> docs = {toks("a b"), toks("a c"), toks("a b d")};
  const TfidfModel m = TfidfModel::fit(docs);
  CHECK(m.terms() == 4);
  CHECK(m.idf(*m.term("a")) == doctest::Approx(std::log(4.0 / 4.0) + 1.0));
  CHECK(m.idf(*m.term("b")) == doctest::Approx(std::log(4.0 / 3.0) + 1.0));
  CHECK(m.idf(*m.term("d")) == doctest::Approx(std::log(4.0 / 2.0) + 1.0));
  CHECK(m.similarity(toks("a b"), toks("b a")) == doctest::Approx(1.0));
  CHECK(m.similarity(toks("c"), toks("d")) == 0.0);
  CHECK(m.similarity(toks("zzz"), toks("a")) == 0.0);
  // direct dense oracle
  const Real ia = m.idf(*m.term("a")), ib = m.idf(*m.term("b")), id = m.idf(*m.term("d"));
  const Real dot = (2 * ia) * ia + ib * ib;  // "a a b" vs "a b d"
  const Real na = std::sqrt(4 * ia * ia + ib * ib), nb = std::sqrt(ia * ia + ib * ib + id * id);
  CHECK(m.similarity(toks("a a b"), toks("a b d")) == doctest::Approx(dot / (na * nb)).epsilon(1e-12));
  CHECK(TfidfModel::from_json(m.to_json()).similarity(toks("a a b"), toks("a b d")) ==
        m.similarity(toks("a a b"), toks("a b d")));
}

TEST_CASE("lsa recovers the leading singular values") {
  std::vector<Tokens> docs;
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> w(0, 11), len(1, 6);
  for (int d = 0; d < 30; ++d) {
    Tokens t;
    for (int i = len(rng); i > 0; --i) t.push_back("w" + std::to_string(w(rng)));
    docs.push_back(t);
  }
  const TfidfModel tf = TfidfModel::fit(docs);
  const LsaModel lsa = LsaModel::fit(tf, docs, 5, 1);
  REQUIRE(lsa.rank() == 5);
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(30, static_cast<Eigen::Index>(tf.terms()));
  for (int d = 0; d < 30; ++d)
    for (const auto& [t, v] : tf.vector(docs[d])) x(d, static_cast<Eigen::Index>(t)) = v;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(x);
  for (std::size_t i = 0; i < 5; ++i)
    CHECK(lsa.singular_values()[i] == doctest::Approx(svd.singularValues()[static_cast<Eigen::Index>(i)]).epsilon(1e-6));
  CHECK(lsa.similarity(tf, docs[0], docs[0]) == doctest::Approx(1.0));
  const LsaModel full = LsaModel::fit(tf, docs, 64, 1);
  CHECK(full.rank() <= 12);
  const LsaModel back = LsaModel::from_json(lsa.to_json());
  CHECK(back.similarity(tf, docs[1], docs[2]) == lsa.similarity(tf, docs[1], docs[2]));
}

TEST_CASE("embedding similarity is the cosine of mean vectors") {
  EmbeddingTable e;
  e.add("x", {1, 0});
  e.add("y", {0, 1});
  e.add("z", {1, 1});
  CHECK(e.similarity(toks("x y"), toks("z")) == doctest::Approx(1.0));
  CHECK(e.similarity(toks("x"), toks("y")) == doctest::Approx(0.0));
  CHECK(e.similarity(toks("x unknown"), toks("x")) == doctest::Approx(1.0));
  CHECK(e.similarity(toks("unknown"), toks("x")) == 0.0);
  CHECK_THROWS_AS(e.add("w", {1, 2, 3}), DimensionError);
  const auto path = std::filesystem::temp_directory_path() / "kgdial_rerank_vecs.txt";
  {
    std::ofstream out(path);
    out << "2 2\nx 1 0\ny 0 1\n";
  }
  const EmbeddingTable loaded = EmbeddingTable::load_text(path);
  CHECK(loaded.size() == 2);
  CHECK(loaded.similarity(toks("x"), toks("x y")) == doctest::Approx(std::sqrt(0.5)));
  std::filesystem::remove(path);
}

TEST_CASE("entity co-occurrence against an SPO oracle") {
  const DialogueSample s = movie_sample();
  // pairs sharing a triple: (Red Sky, Chen Min), (Red Sky, Li Wei), (Li Wei, Harbin), (Lost City, Zhao Lei)
  const std::set<std::set<std::string>> together = {
      {"Red Sky", "Chen Min"}, {"Red Sky", "Li Wei"}, {"Li Wei", "Harbin"}, {"Lost City", "Zhao Lei"}};
  const std::vector<std::string> ents = {"Red Sky", "Chen Min", "Li Wei", "Harbin", "Lost City", "Zhao Lei"};
  EntityMap none;
  for (std::size_t i = 0; i < ents.size(); ++i) {
    for (std::size_t j = i + 1; j < ents.size(); ++j) {
      const Tokens r = toks("well " + ents[i] + " and " + ents[j] + " !");
      const EntityCounts c = entity_counts(r, s, none);
      const bool expect = together.count({ents[i], ents[j]}) > 0;
      CAPTURE(ents[i]);
      CAPTURE(ents[j]);
      CHECK(c.possible == (expect ? 1u : 0u));
      CHECK(c.impossible == (expect ? 0u : 1u));
      CHECK(c.in_knowledge == 2);
    }
  }
  const EntityCounts single = entity_counts(toks("Red Sky is good , Red Sky !"), s, none);
  CHECK(single.in_knowledge == 2);
  CHECK(single.possible + single.impossible == 0);
  // a corpus-wide entity outside this sample's knowledge
  EntityMap extra;
  extra.add(toks("Golden Bridge"), "movie");
  const EntityCounts outside = entity_counts(toks("Golden Bridge with Li Wei"), s, extra);
  CHECK(outside.in_knowledge == 1);
  CHECK(outside.impossible == 1);
}

TEST_CASE("extract_features fills each slot") {
  const DialogueSample s = movie_sample();
  SimilarityModels aux = fit_similarity_models(generate_dialogue_corpus(40, DialogueCorpusConfig{}), 8);
  aux.embeddings.add("who", {1, 0});
  aux.embeddings.add("stars", {0, 1});
  const ModelWeights weights = {{"L11", 96.41}};
  const CandidateResponse c = cand("L11", "no , who is in it ?", -0.5);
  const auto f = extract_features(c, s, aux, weights);
  REQUIRE(f.size() == 14);
  CHECK(f[0] == 96.41);
  CHECK(f[1] == 7);
  CHECK(f[2] == 13);  // characters without spaces
  CHECK(f[3] == doctest::Approx(1.0));  // identical to the closest history utterance
  CHECK(f[4] == doctest::Approx(1.0));
  CHECK(f[5] == doctest::Approx(1.0));
  CHECK(f[6] == doctest::Approx(1.0));
  CHECK(f[11] == 1.0);
  CHECK(f[12] == -0.5);
  CHECK(f[13] == -1.0);
  for (Real v : f) CHECK(std::isfinite(v));
  // unknown model id, empty candidate
  const auto e = extract_features(cand("T", ""), s, aux, weights);
  CHECK(e[0] == 0.0);
  for (std::size_t k = 1; k <= 7; ++k) CHECK(e[k] == 0.0);
  CHECK(e[11] == 1.0);
  CandidateResponse inf = cand("T", "x");
  inf.beam_score = -INFINITY;
  for (Real v : extract_features(inf, s, aux, weights)) CHECK(std::isfinite(v));
  FeatureOptions o;
  o.knowledge_similarity = true;
  CHECK(extract_features(c, s, aux, weights, o).size() == 16);
}

TEST_CASE("rank dataset targets follow the metrics") {
  const DialogueSample s = movie_sample();
  const SimilarityModels aux = fit_similarity_models(std::vector<DialogueSample>{s}, 4);
  const std::vector<CandidateResponse> cands = {cand("A", "it stars Li Wei , directed by Chen Min ."),
                                                cand("B", "Li Wei was born in Harbin ."), cand("C", "")};
  const auto rows = build_rank_dataset(cands, std::vector<DialogueSample>{s}, aux, {});
  REQUIRE(rows.size() == 3);
  CHECK(*rows[0].target == doctest::Approx(3.0));
  for (std::size_t i = 0; i < 3; ++i) {
    const Real f1 = char_f1(join_tokens(cands[i].tokens), join_tokens(*s.response));
    const Real b1 = bleu_n(cands[i].tokens, *s.response, 1);
    const Real b2 = bleu_n(cands[i].tokens, *s.response, 2);
    CHECK(*rows[i].target == doctest::Approx(f1 + b1 + b2).epsilon(1e-14));
    CHECK(rows[i].model_id == cands[i].model_id);
  }
  std::vector<CandidateResponse> stray = {cand("A", "x")};
  stray[0].sample_id = "nope";
  CHECK_THROWS_AS(build_rank_dataset(stray, std::vector<DialogueSample>{s}, aux, {}), AlignmentError);
  DialogueSample no_gold = s;
  no_gold.response.reset();
  CHECK_THROWS_AS(build_rank_dataset(cands, std::vector<DialogueSample>{no_gold}, aux, {}), UsageError);
}

TEST_CASE("rank csv round-trips exactly") {
  std::vector<RankSample> rows = {{"a,1", "L\"11", {0.1, -2.5e-17, 3.0}, 2.25}, {"b", "T", {1.0 / 3.0, 0, 7}, std::nullopt}};
  const std::vector<std::string> names = {"f1", "f2", "f3"};
  const auto path = std::filesystem::temp_directory_path() / "kgdial_rank.csv";
  write_rank_csv(path, rows, names);
  std::vector<std::string> got_names;
  const auto back = read_rank_csv(path, &got_names);
  CHECK(got_names == names);
  REQUIRE(back.size() == 2);
  CHECK(back[0].sample_id == "a,1");
  CHECK(back[0].model_id == "L\"11");
  CHECK(back[0].features == rows[0].features);
  CHECK(back[0].target == rows[0].target);
  CHECK(back[1].features == rows[1].features);
  CHECK_FALSE(back[1].target.has_value());
  std::filesystem::remove(path);
}

TEST_CASE("selection tie-breaks and order invariance") {
  std::vector<CandidateResponse> pool = {cand("M2", "x", -1.0), cand("M1", "y", -1.0), cand("M0", "z", -3.0)};
  CHECK(select_by_score(pool, std::vector<Real>{0.5, 0.5, 0.5}) == 1);  // beam tie, lower model id
  CHECK(select_by_score(pool, std::vector<Real>{0.5, 0.4, 0.5}) == 0);  // higher beam score
  CHECK(select_by_score(pool, std::vector<Real>{0.1, 0.4, 0.9}) == 2);
  CHECK_THROWS_AS(select_by_score({}, {}), UsageError);
  const std::vector<CandidateResponse> one = {cand("X", "only")};
  CHECK(select_by_score(one, std::vector<Real>{-4.0}) == 0);
  std::vector<std::size_t> perm = {0, 1, 2};
  const std::vector<Real> scores = {0.5, 0.5, 0.5};
  do {
    std::vector<CandidateResponse> p;
    std::vector<Real> s;
    for (std::size_t i : perm) {
      p.push_back(pool[i]);
      s.push_back(scores[i]);
    }
    CHECK(p[select_by_score(p, s)].model_id == "M1");
  } while (std::next_permutation(perm.begin(), perm.end()));
}

TEST_CASE("trained ranker selects the brute-force argmax and survives save/load") {
  const auto corpus = generate_dialogue_corpus(30, DialogueCorpusConfig{});
  Ranker r;
  r.aux = fit_similarity_models(corpus, 8);
  r.aux.entities = synthetic_entities(DialogueCorpusConfig{});
  std::mt19937_64 rng(2);
  // 27 candidates per sample: the gold reply, shuffled variants and other replies
  std::vector<CandidateResponse> cands;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    for (int k = 0; k < 27; ++k) {
      Tokens t = k % 9 == 0 ? *corpus[i].response : *corpus[(i + k) % corpus.size()].response;
      if (k % 3 == 1) std::shuffle(t.begin(), t.end(), rng);
      cands.push_back({corpus[i].id, "M" + std::to_string(k), t, -0.1 * k, -0.2 * k});
      r.weights["M" + std::to_string(k)] = 90.0 + k % 5;
    }
  }
  const auto rows = build_rank_dataset(cands, corpus, r.aux, r.weights);
  FeatureMatrix x;
  std::vector<Real> y;
  for (const auto& row : rows) {
    x.push_row(row.features);
    y.push_back(*row.target);
  }
  GbdtConfig gc;
  gc.n_trees = 30;
  gc.max_depth = 3;
  gc.learning_rate = 0.2;
  gc.min_leaf = 5;
  r.model = GbdtModel::fit(x, y, gc, feature_names());

  const auto groups = group_by_sample(cands);
  REQUIRE(groups.size() == corpus.size());
  const auto path = std::filesystem::temp_directory_path() / "kgdial_ranker.json";
  r.save(path);
  const Ranker back = Ranker::load(path);
  std::filesystem::remove(path);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto& pool = groups[g].second;
    REQUIRE(pool.size() == 27);
    // independent sweep: score every candidate and keep the first strict maximum
    std::size_t best = 0;
    Real best_score = -INFINITY;
    for (std::size_t i = 0; i < pool.size(); ++i) {
      const Real sc = r.model.predict(extract_features(pool[i], corpus[g], r.aux, r.weights));
      if (sc > best_score) {
        best_score = sc;
        best = i;
      }
    }
    const std::size_t chosen = r.select(pool, corpus[g]);
    CHECK(r.score(pool[chosen], corpus[g]) == best_score);
    if (chosen != best) CHECK(pool[chosen].beam_score >= pool[best].beam_score);
    CHECK(back.select(pool, corpus[g]) == chosen);
  }
}
