// Acceptance run: one PASS/FAIL line per primary criterion.
//
//   kgdial_acceptance            all nine
//   kgdial_acceptance --only 4   a subset

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <CLI11.hpp>

#include "kgdial/augment.hpp"
#include "kgdial/decoder.hpp"
#include "kgdial/gbdt.hpp"
#include "kgdial/gradcheck.hpp"
#include "kgdial/metrics.hpp"
#include "kgdial/pipeline.hpp"
#include "kgdial/rerank.hpp"
#include "kgdial/seq2seq.hpp"
#include "kgdial/synthetic.hpp"
#include "kgdial/trainer.hpp"
#include "score_table.hpp"
#include "tiny_pipeline.hpp"
#include "toy_models.hpp"
#include "toy_step_model.hpp"

using namespace kgdial;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------------------

Outcome gradients() {
  const auto t0 = Clock::now();
  Outcome o;
  double worst = 0;
  std::string worst_variant;
  for (Variant v : all_variants()) {
    const std::size_t vocab = 20 + Vocabulary::reserved_count();
    const LinearizedPair pair = testing::random_pair(vocab, 5, 11);
    Seq2SeqModel m(testing::toy_config(v, vocab), 3);
    testing::spread_parameters(m.params(), v == Variant::kTransformer ? 0.4 : 0.8, 9);
    const auto r = grad_check([&](Binding& b) { return m.forward_loss(b, pair).total; }, m.params(), {1e-5, 8, 5});
    if (r.max_relative_error >= worst) {
      worst = r.max_relative_error;
      worst_variant = std::string(variant_name(v));
    }
    if (r.max_relative_error >= 1e-4) o.pass = false;
  }
  const double secs = seconds_since(t0);
  if (secs >= 60) o.pass = false;
  o.detail = fmt("max relative error %.2e (%s), %.1f s", worst, worst_variant.c_str(), secs);
  return o;
}

// ---------------------------------------------------------------------------

Tensor uniform_tensor(Shape shape, std::mt19937_64& rng, double range) {
  std::uniform_real_distribution<double> u(-range, range);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = u(rng);
  return t;
}

Tensor simplex(std::size_t n, std::mt19937_64& rng) {
  std::exponential_distribution<double> e(1.0);
  Tensor t(Shape{n});
  double z = 0;
  for (double& v : t.values()) z += (v = e(rng));
  for (double& v : t.values()) v /= z;
  return t;
}

bool is_distribution(const Tensor& p, double& worst_sum_gap) {
  double s = 0;
  for (double v : p.values()) {
    if (!(v >= 0)) return false;
    s += v;
  }
  worst_sum_gap = std::max(worst_sum_gap, std::abs(s - 1));
  return std::abs(s - 1) <= 1e-9;
}

Outcome distributions() {
  Outcome o;
  std::mt19937_64 rng(2024);
  double gap = 0;
  std::size_t bad = 0, extreme_bad = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t hidden = 4 + rng() % 6, vocab = Vocabulary::reserved_count() + 10 + rng() % 40, len = 1 + rng() % 12;
    ModelConfig cfg = testing::toy_config(Variant::kLstmL11, vocab, hidden);
    Seq2SeqModel model(cfg, rng());
    testing::spread_parameters(model.params(), 0.5 + 2.5 * (trial % 4), rng());
    const std::size_t W = model.encoder_width();
    const double scale = 1 + trial % 5;
    Graph g;
    Binding b(g, model.params());
    EncoderOutput enc;
    enc.states = g.constant(uniform_tensor({len, W}, rng, scale));
    enc.keys = ad::matmul(enc.states, b("attn.Wh"));
    const Var s = g.constant(uniform_tensor({hidden}, rng, scale));
    const auto att = model.attention(b, s, enc);
    if (!is_distribution(att.weights.value(), gap)) ++bad;
    const Var pv = model.vocab_distribution(b, s, att.context);
    if (!is_distribution(pv.value(), gap)) ++bad;
  }
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t vocab = 2 + rng() % 30, len = 1 + rng() % 10, oov = rng() % 4;
    Graph g;
    const Tensor pv = simplex(vocab, rng), at = simplex(len, rng);
    std::vector<TokenId> src;
    for (std::size_t i = 0; i < len; ++i) src.push_back(static_cast<TokenId>(rng() % (vocab + oov)));
    const double p_gen = trial % 10 == 0 ? 0.0 : trial % 10 == 1 ? 1.0 : std::uniform_real_distribution<double>(0, 1)(rng);
    const Tensor p = Seq2SeqModel::mixture_distribution(g.constant(pv), g.constant(at), g.constant(Tensor::vector({p_gen})),
                                                        src, vocab + oov)
                         .value();
    if (!is_distribution(p, gap)) ++bad;
    if (p_gen == 1.0 || p_gen == 0.0) {
      // trivial cases: the vocabulary distribution padded with zeros, or the
      // attention mass summed per source id
      Tensor expect(Shape{vocab + oov});
      if (p_gen == 1.0) {
        for (std::size_t w = 0; w < vocab; ++w) expect[w] = pv[w];
      } else {
        for (std::size_t i = 0; i < len; ++i) expect[src[i]] += at[i];
      }
      if (!(p == expect)) ++extreme_bad;
    }
  }
  o.pass = bad == 0 && extreme_bad == 0;
  o.detail = fmt("3000 trials, %zu not distributions, worst |sum-1| %.1e, %zu extreme mismatches", bad, gap, extreme_bad);
  return o;
}

// ---------------------------------------------------------------------------

Outcome beam_oracle() {
  std::size_t hits = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed + 500);
    const std::size_t vocab = 2 + rng() % 5, max_length = 1 + rng() % 4;
    testing::ToyStepModel m(vocab, 3, rng());
    const auto best = testing::brute_force_best(m, max_length, 0);
    BeamConfig c;
    c.beam_size = static_cast<std::size_t>(std::pow(vocab, max_length));
    c.max_length = max_length;
    c.length_alpha = 0;
    c.coverage_beta = 0;
    c.end_token = 0;
    const auto beam = beam_search(m, c);
    if (!beam.empty() && beam.front().tokens == best.tokens) ++hits;
  }
  return {hits == 100, fmt("%zu/100 toy models", hits)};
}

// ---------------------------------------------------------------------------

struct CopyRun {
  double accuracy = 0, oov_accuracy = 0;
  std::size_t oov_samples = 0;
  std::size_t epochs = 0;
};

CopyRun copy_run(bool copy, const std::vector<DialogueSample>& train_s, const std::vector<DialogueSample>& dev_s,
                 const std::vector<DialogueSample>& test_s, const Vocabulary& vocab) {
  std::vector<LinearizedPair> tr, dv;
  for (const auto& s : train_s) tr.push_back(encode_pair(s, vocab));
  for (const auto& s : dev_s) dv.push_back(encode_pair(s, vocab));
  ModelConfig cfg = ModelConfig::for_variant(Variant::kLstmL11, vocab.size(), 64);
  cfg.embedding_dim = 32;
  cfg.copy_enabled = copy;
  TrainConfig tc;
  tc.lr_initial = 3e-3;
  tc.lr_finetune = 3e-4;
  tc.batch_size = 16;
  tc.max_epochs = 12;
  tc.patience = 2;
  tc.seed = 7;
  const TrainResult r = train(Seq2SeqModel(cfg, 7), tr, dv, tc);

  BeamConfig greedy;
  greedy.beam_size = 1;
  greedy.max_length = 14;
  greedy.length_alpha = 0;
  greedy.coverage_beta = 0;
  CopyRun out;
  out.epochs = r.report.epochs.size();
  std::size_t hit = 0, oov_hit = 0;
  for (const auto& s : test_s) {
    LinearizedPair p = encode_pair(s, vocab);
    const auto c = decode_pair(r.model, p, vocab, greedy, s.id, "copy");
    const bool ok = !c.empty() && c.front().tokens == *s.response;
    hit += ok;
    if (has_oov_payload(s, vocab)) {
      ++out.oov_samples;
      oov_hit += ok;
    }
  }
  out.accuracy = 100.0 * static_cast<double>(hit) / static_cast<double>(test_s.size());
  out.oov_accuracy = out.oov_samples ? 100.0 * static_cast<double>(oov_hit) / static_cast<double>(out.oov_samples) : 0;
  return out;
}

Outcome copy_task() {
  const auto t0 = Clock::now();
  CopyTaskConfig cc;
  cc.seed = 1;
  const auto train_s = generate_copy_corpus(2000, cc, CopySplit::kTrain);
  cc.seed = 2;
  const auto dev_s = generate_copy_corpus(200, cc, CopySplit::kTrain);
  cc.seed = 3;
  const auto test_s = generate_copy_corpus(200, cc, CopySplit::kTest);
  const Vocabulary vocab = copy_task_vocabulary(cc);

  const CopyRun with = copy_run(true, train_s, dev_s, test_s, vocab);
  const CopyRun without = copy_run(false, train_s, dev_s, test_s, vocab);
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = with.accuracy >= 95 && without.oov_accuracy <= 5 && with.oov_samples > 0 && secs < 600;
  o.detail = fmt("copy %.1f%% exact (%zu epochs), no-copy %.1f%% on %zu OOV payloads, %.0f s", with.accuracy, with.epochs,
                 without.oov_accuracy, without.oov_samples, secs);
  return o;
}

// ---------------------------------------------------------------------------

Outcome metric_identities() {
  using namespace kgdial::testing;
  const bool ensemble = total_score(kEnsembleRow.f1, kEnsembleRow.bleu1, kEnsembleRow.bleu2) == 115.3;
  const bool baseline = total_score(kBaselineRow.f1, kBaselineRow.bleu1, kBaselineRow.bleu2) == 79.45;
  std::size_t within = 0;
  double worst = 0;
  std::string worst_row;
  for (const auto& row : reference_score_rows()) {
    const double gap = std::abs(total_score(row.f1, row.bleu1, row.bleu2) - row.score);
    if (gap <= 0.02 + 1e-9) ++within;
    if (gap > worst) {
      worst = gap;
      worst_row = row.model + " " + row.recipe;
    }
  }
  const std::size_t rows = reference_score_rows().size();
  Outcome o;
  o.pass = ensemble && baseline && within == rows;
  o.detail = fmt("ensemble %s, baseline %s, %zu/%zu rows within 0.02 (worst %.2f on %s; the printed components "
                 "themselves disagree with their totals)",
                 ensemble ? "exact" : "WRONG", baseline ? "exact" : "WRONG", within, rows, worst, worst_row.c_str());
  return o;
}

// ---------------------------------------------------------------------------

struct Linear {
  FeatureMatrix x;
  std::vector<Real> y;
};

Linear linear_rows(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<Real> u(0.0, 1.0);
  std::normal_distribution<Real> noise(0.0, 0.1);
  Linear d{FeatureMatrix(n, 2), {}};
  for (std::size_t i = 0; i < n; ++i) {
    d.x.at(i, 0) = u(rng);
    d.x.at(i, 1) = u(rng);
    d.y.push_back(3 * d.x.at(i, 0) - 2 * d.x.at(i, 1) + noise(rng));
  }
  return d;
}

// best split by brute force: every feature, every midpoint between distinct values
std::pair<std::size_t, Real> brute_force_split(const FeatureMatrix& x, const std::vector<Real>& y, std::size_t min_leaf,
                                               bool& found) {
  found = false;
  Real best_sse = INFINITY;
  std::pair<std::size_t, Real> best{};
  for (std::size_t f = 0; f < x.cols; ++f) {
    std::vector<Real> v;
    for (std::size_t i = 0; i < x.rows; ++i) v.push_back(x.at(i, f));
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    for (std::size_t k = 0; k + 1 < v.size(); ++k) {
      const Real thr = v[k] + (v[k + 1] - v[k]) / 2;
      Real sl = 0, sr = 0;
      std::size_t nl = 0, nr = 0;
      for (std::size_t i = 0; i < x.rows; ++i) (x.at(i, f) < thr ? (sl += y[i], ++nl) : (sr += y[i], ++nr));
      if (nl < min_leaf || nr < min_leaf) continue;
      Real sse = 0;
      for (std::size_t i = 0; i < x.rows; ++i) {
        const Real m = x.at(i, f) < thr ? sl / nl : sr / nr;
        sse += (y[i] - m) * (y[i] - m);
      }
      if (sse < best_sse - 1e-12) {
        best_sse = sse;
        best = {f, thr};
        found = true;
      }
    }
  }
  return best;
}

Outcome gbdt() {
  const Linear d = linear_rows(500, 3), held = linear_rows(500, 4);
  GbdtConfig c;
  c.n_trees = 200;
  c.max_depth = 3;
  c.learning_rate = 0.1;
  c.min_leaf = 20;
  const GbdtModel m = GbdtModel::fit(d.x, d.y, c);
  const auto& mse = m.training_mse();
  std::size_t rises = 0;
  for (std::size_t i = 1; i < mse.size(); ++i) rises += mse[i] > mse[i - 1];
  Real se = 0;
  for (std::size_t i = 0; i < held.x.rows; ++i) se += std::pow(m.predict(held.x.row(i)) - held.y[i], 2);
  const Real rmse = std::sqrt(se / static_cast<Real>(held.x.rows));

  std::mt19937_64 rng(91);
  std::size_t stump_ok = 0;
  const std::size_t cases = 40;
  for (std::size_t trial = 0; trial < cases; ++trial) {
    const std::size_t cols = 1 + trial % 4;
    FeatureMatrix x(50, cols);
    std::normal_distribution<Real> g(0, 1);
    std::uniform_int_distribution<int> coarse(0, 9);
    for (Real& v : x.values) v = trial % 2 ? coarse(rng) : g(rng);
    std::vector<Real> y;
    for (std::size_t i = 0; i < 50; ++i) y.push_back(g(rng) + (x.at(i, 0) > 0.3 ? 1.5 : 0.0));
    GbdtConfig sc;
    sc.n_trees = 1;
    sc.max_depth = 1;
    sc.learning_rate = 1.0;
    sc.min_leaf = 1 + trial % 7;
    const GbdtModel s = GbdtModel::fit(x, y, sc);
    const Real mean = std::accumulate(y.begin(), y.end(), 0.0) / 50.0;
    std::vector<Real> residual;
    for (Real v : y) residual.push_back(v - mean);
    bool found = false;
    const auto [f, thr] = brute_force_split(x, residual, sc.min_leaf, found);
    const auto& root = s.trees().at(0).nodes.at(0);
    if (found == !root.is_leaf() && (!found || (static_cast<std::size_t>(root.feature) == f && root.threshold == thr)))
      ++stump_ok;
  }
  Outcome o;
  o.pass = mse.size() == 201 && rises == 0 && rmse <= 0.15 && stump_ok == cases;
  o.detail = fmt("%zu MSE increases over 200 rounds, held-out RMSE %.4f, %zu/%zu stumps match", rises, rmse, stump_ok, cases);
  return o;
}

// ---------------------------------------------------------------------------

// Five generators of decreasing quality: each corrupts the gold reply token by
// token with its own rate.
std::vector<CandidateResponse> synthetic_pool(const std::vector<DialogueSample>& samples, std::uint64_t seed) {
  static const std::vector<double> rates = {0.15, 0.3, 0.45, 0.6, 0.75};
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  Tokens filler;
  for (const auto& s : samples)
    for (const auto& t : *s.response) filler.push_back(t);
  std::vector<CandidateResponse> out;
  for (const auto& s : samples) {
    for (std::size_t m = 0; m < rates.size(); ++m) {
      Tokens t;
      for (const auto& tok : *s.response) {
        const double r = u(rng);
        if (r < rates[m] / 3) continue;                                       // drop
        t.push_back(r < rates[m] ? filler[rng() % filler.size()] : tok);      // replace or keep
      }
      if (t.empty()) t.push_back(filler[rng() % filler.size()]);
      out.push_back({s.id, "G" + std::to_string(m), t, -0.1 * static_cast<double>(t.size()) * (1 + rates[m]), 0});
    }
  }
  return out;
}

std::vector<TextRecord> references(const std::vector<DialogueSample>& samples) {
  std::vector<TextRecord> out;
  for (const auto& s : samples) out.push_back({s.id, *s.response});
  return out;
}

Outcome ensemble() {
  DialogueCorpusConfig dc;
  dc.seed = 31;
  const auto fit_samples = generate_dialogue_corpus(200, dc);
  dc.seed = 32;
  auto eval_samples = generate_dialogue_corpus(200, dc);
  for (auto& s : eval_samples) s.id = "eval-" + s.id;
  const auto fit_pool = synthetic_pool(fit_samples, 5);
  const auto eval_pool = synthetic_pool(eval_samples, 6);
  const auto gold_fit = references(fit_samples), gold_eval = references(eval_samples);

  auto model_score = [](const std::vector<CandidateResponse>& pool, const std::string& id,
                        const std::vector<TextRecord>& gold) {
    std::vector<TextRecord> recs;
    for (const auto& c : pool)
      if (c.model_id == id) recs.push_back({c.sample_id, c.tokens});
    return corpus_eval(recs, gold).score;
  };

  Ranker ranker;
  ranker.aux = fit_similarity_models(fit_samples, 8);
  ranker.aux.entities = synthetic_entities(DialogueCorpusConfig{});
  for (int m = 0; m < 5; ++m) ranker.weights["G" + std::to_string(m)] = model_score(fit_pool, "G" + std::to_string(m), gold_fit);
  const auto rows = build_rank_dataset(fit_pool, fit_samples, ranker.aux, ranker.weights);
  FeatureMatrix x;
  std::vector<Real> y;
  for (const auto& r : rows) {
    x.push_row(r.features);
    y.push_back(*r.target);
  }
  GbdtConfig gc;
  gc.n_trees = 100;
  gc.max_depth = 3;
  gc.learning_rate = 0.1;
  gc.min_leaf = 10;
  ranker.model = GbdtModel::fit(x, y, gc, feature_names());

  std::vector<double> singles;
  for (int m = 0; m < 5; ++m) singles.push_back(model_score(eval_pool, "G" + std::to_string(m), gold_eval));
  // oracle: per sample, the candidate with the highest known target
  std::vector<TextRecord> oracle;
  for (const auto& [id, pool] : group_by_sample(eval_pool)) {
    const auto& gold = gold_eval[oracle.size()].tokens;
    std::size_t best = 0;
    double best_score = -1;
    for (std::size_t i = 0; i < pool.size(); ++i) {
      const double sc = sample_metrics(id, pool[i].tokens, gold).score();
      if (sc > best_score) best_score = sc, best = i;
    }
    oracle.push_back({id, pool[best].tokens});
  }
  const double oracle_score = corpus_eval(oracle, gold_eval).score;
  std::vector<TextRecord> picked;
  for (const auto& s : select_responses(eval_pool, eval_samples, &ranker)) picked.push_back({s.sample_id, s.tokens});
  const double ranked = corpus_eval(picked, gold_eval).score;
  const double best_single = *std::max_element(singles.begin(), singles.end());
  const double mean_single = std::accumulate(singles.begin(), singles.end(), 0.0) / singles.size();
  Outcome o;
  o.pass = oracle_score >= best_single && ranked >= mean_single;
  o.detail = fmt("oracle %.2f, ranker %.2f, best single %.2f, mean single %.2f", oracle_score, ranked, best_single,
                 mean_single);
  return o;
}

// ---------------------------------------------------------------------------

std::multiset<std::string> bag(const std::vector<Tokens>& lists) {
  std::multiset<std::string> out;
  for (const auto& l : lists) out.insert(l.begin(), l.end());
  return out;
}

std::size_t window_count(const DialogueSample& s, ExtractionMode mode) {
  std::vector<Speaker> speakers;
  for (const auto& u : s.history) speakers.push_back(u.speaker);
  if (s.response) speakers.push_back(Speaker::kBot);
  std::size_t n = 0;
  for (std::size_t j = 0; j < speakers.size(); ++j) {
    if (speakers[j] != Speaker::kBot) continue;
    std::set<std::size_t> lens = {j};
    if (mode == ExtractionMode::kTwoThreeAndAll) lens.insert({std::min<std::size_t>(2, j), std::min<std::size_t>(3, j)});
    n += lens.size();
  }
  return n;
}

Outcome augmentation() {
  DialogueCorpusConfig dc;
  dc.seed = 21;
  const auto corpus = generate_dialogue_corpus(1000, dc);
  const EntityMap inventory = synthetic_entities(dc);
  std::size_t swap_bad = 0, gen_bad = 0, extract_bad = 0;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& s = corpus[i];
    const auto out = swap_sections(s, i * 7919 + 1);
    std::vector<Tokens> g0 = s.goal_path, g1 = out.goal_path, k0, k1;
    for (const auto& t : s.goal_relations) g0.push_back(t.flatten());
    for (const auto& t : out.goal_relations) g1.push_back(t.flatten());
    for (const auto& t : s.knowledge) k0.push_back(t.flatten());
    for (const auto& t : out.knowledge) k1.push_back(t.flatten());
    if (bag(g0) != bag(g1) || bag(k0) != bag(k1) || out.history != s.history || out.response != s.response) ++swap_bad;

    EntityMap local = inventory;
    local.merge(infer_entities(s, default_predicate_table()));
    const auto [gen, inv] = generalize_entities(s, local);
    if (!(restore_entities(gen, inv) == s)) ++gen_bad;

    for (auto mode : {ExtractionMode::kAllTurns, ExtractionMode::kTwoThreeAndAll})
      if (extract_conversations(s, mode).size() != window_count(s, mode)) ++extract_bad;
  }
  const DatasetRecipe d1 = named_recipe("D-1"), d6 = named_recipe("D-6");
  const bool rows = !d1.entity_generalization && !d1.knowledge_selection && !d1.swap &&
                    d1.extraction == ExtractionMode::kAllTurns && d6.entity_generalization && d6.knowledge_selection &&
                    d6.swap && d6.extraction == ExtractionMode::kAllTurns;
  Outcome o;
  o.pass = swap_bad == 0 && gen_bad == 0 && extract_bad == 0 && rows;
  o.detail = fmt("1000 samples: %zu swap, %zu round-trip, %zu extraction failures; D-1/D-6 rows %s", swap_bad, gen_bad,
                 extract_bad, rows ? "match" : "DIFFER");
  return o;
}

// ---------------------------------------------------------------------------

// train -> decode -> rank -> select, serialized; everything a rerun must reproduce
std::string pipeline_bytes(const fs::path& dir) {
  DialogueCorpusConfig dc;
  dc.seed = 1;
  const auto train_s = generate_dialogue_corpus(30, dc);
  dc.seed = 2;
  auto dev = generate_dialogue_corpus(10, dc);
  for (auto& s : dev) s.id = "dev-" + s.id;
  const EntityMap entities = synthetic_entities(DialogueCorpusConfig{});
  std::ostringstream all;
  std::vector<CandidateResponse> pool;
  Ranker ranker;
  for (const auto& [id, recipe, seed] : {std::tuple{"A", "D-1", 3}, std::tuple{"B", "D-6", 4}}) {
    TrainJob job = testing::tiny_job(id, Variant::kLstmL11, recipe, seed);
    const JobResult r = run_train_job(job, train_s, dev, entities);
    all << r.report.to_json().dump() << '\n';
    const fs::path ckpt = dir / (std::string(id) + ".ckpt");
    save_bundle(ckpt, r.bundle);
    std::ifstream in(ckpt, std::ios::binary);
    all << in.rdbuf() << '\n';
    for (const auto& s : dev)
      for (auto& c : decode_sample(r.bundle, s, entities, 3)) {
        all << c.to_json().dump() << '\n';
        pool.push_back(std::move(c));
      }
    ranker.weights[id] = 10.0 + seed;
  }
  ranker.aux = fit_similarity_models(train_s, 8);
  ranker.aux.entities = entities;
  const auto rows = build_rank_dataset(pool, dev, ranker.aux, ranker.weights);
  FeatureMatrix x;
  std::vector<Real> y;
  for (const auto& r : rows) {
    x.push_row(r.features);
    y.push_back(*r.target);
  }
  GbdtConfig gc;
  gc.n_trees = 20;
  gc.max_depth = 3;
  gc.min_leaf = 3;
  ranker.model = GbdtModel::fit(x, y, gc, feature_names());
  ranker.save(dir / "ranker.json");
  std::ifstream rin(dir / "ranker.json", std::ios::binary);
  all << rin.rdbuf() << '\n';
  for (const auto& s : select_responses(pool, dev, &ranker)) all << s.to_json().dump() << '\n';
  return all.str();
}

Outcome determinism() {
  const fs::path dir = fs::temp_directory_path() / "kgdial_acceptance_determinism";
  fs::create_directories(dir);
  const std::string a = pipeline_bytes(dir);
  const std::string b = pipeline_bytes(dir);
  fs::remove_all(dir);
  return {a == b && !a.empty(), fmt("two runs, %zu bytes each, %s", a.size(), a == b ? "identical" : "DIFFERENT")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kgdial acceptance run"};
  std::vector<int> only;
  app.add_option("--only", only, "criteria to run (default: all)")->check(CLI::Range(1, 9));
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"gradient correctness", gradients},  {"distribution soundness", distributions},
      {"beam optimality", beam_oracle},     {"copy task", copy_task},
      {"metric identities", metric_identities}, {"gbdt", gbdt},
      {"ensemble property", ensemble},      {"augmentation invariants", augmentation},
      {"determinism", determinism},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = static_cast<int>(i + 1);
    if (!only.empty() && std::find(only.begin(), only.end(), n) == only.end()) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("criterion %d %-24s %s  %s\n", n, criteria[i].first, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
  }
  return failures ? 1 : 0;
}
