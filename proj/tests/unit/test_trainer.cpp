#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "kgdial/autodiff.hpp"
#include "kgdial/error.hpp"
#include "kgdial/synthetic.hpp"
#include "kgdial/trainer.hpp"
#include "toy_models.hpp"

using namespace kgdial;
using kgdial::testing::random_pair;
using kgdial::testing::spread_parameters;
using kgdial::testing::toy_config;

namespace {

ParameterSet single(std::vector<Real> values) {
  ParameterSet p;
  Tensor t(Shape{values.size()});
  for (std::size_t i = 0; i < values.size(); ++i) t[i] = values[i];
  p.add("p", std::move(t));
  return p;
}

Real norm(const Tensor& t) {
  Real s = 0;
  for (Real v : t.values()) s += v * v;
  return std::sqrt(s);
}

std::vector<LinearizedPair> copy_pairs(std::size_t n, std::uint64_t seed, Vocabulary& vocab) {
  CopyTaskConfig cc;
  cc.words = 8;
  cc.max_payload = 3;
  cc.oov_sample_rate = 0.3;
  cc.seed = seed;
  vocab = copy_task_vocabulary(cc);
  std::vector<LinearizedPair> out;
  for (const auto& s : generate_copy_corpus(n, cc, CopySplit::kTrain)) out.push_back(encode_pair(s, vocab));
  return out;
}

}  // namespace

TEST_CASE("adam leaves parameters alone on a zero gradient") {
  ParameterSet p = single({0.5, -1.5, 2.0});
  const ParameterSet before = p;
  AdamState st;
  std::vector<Tensor> g = {Tensor(Shape{3}, 0.0)};
  for (int i = 0; i < 5; ++i) CHECK(adam_step(p, g, st, 1e-3));
  CHECK(p == before);
  CHECK(st.steps == 5);
}

TEST_CASE("adam first step moves each coordinate by about lr against the gradient sign") {
  ParameterSet p = single({0.0, 0.0, 0.0, 0.0});
  AdamState st;
  Tensor g(Shape{4});
  g[0] = 3.0;
  g[1] = -0.02;
  g[2] = 1e-3;
  g[3] = -250.0;
  const Real lr = 1e-3;
  adam_step(p, std::vector<Tensor>{g}, st, lr);
  for (std::size_t i = 0; i < 4; ++i) {
    const Real expected = -lr * (g[i] > 0 ? 1.0 : -1.0);
    CHECK(p[0][i] == doctest::Approx(expected).epsilon(1e-4));
  }
}

TEST_CASE("adam skips non-finite gradients and counts them") {
  ParameterSet p = single({1.0, 2.0});
  const ParameterSet before = p;
  AdamState st;
  Tensor g(Shape{2}, 1.0);
  g[1] = std::nan("");
  CHECK_FALSE(adam_step(p, std::vector<Tensor>{g}, st, 0.1));
  g[1] = INFINITY;
  CHECK_FALSE(adam_step(p, std::vector<Tensor>{g}, st, 0.1));
  CHECK(p == before);
  CHECK(st.skipped == 2);
  CHECK(st.steps == 0);
  CHECK_THROWS_AS(adam_step(p, std::vector<Tensor>{Tensor(Shape{3}, 0.0)}, st, 0.1), DimensionError);
}

TEST_CASE("adam on the quadratic bowl") {
  ParameterSet p = single({0.5, 0.5});
  AdamState st;
  std::vector<Real> norms;
  for (int step = 0; step < 100; ++step) {
    Tensor g = p[0];
    for (Real& v : g.values()) v *= 2.0;  // gradient of ||p||^2
    adam_step(p, std::vector<Tensor>{g}, st, 0.02);
    norms.push_back(norm(p[0]));
  }
  CHECK(norms.back() < 1e-3);
  // Momentum makes single steps overshoot; the envelope over 20-step windows shrinks.
  for (std::size_t w = 20; w < norms.size(); w += 20) {
    const Real prev = *std::max_element(norms.begin() + static_cast<long>(w) - 20, norms.begin() + static_cast<long>(w));
    const Real cur = *std::max_element(norms.begin() + static_cast<long>(w), norms.begin() + static_cast<long>(w) + 20);
    CHECK(cur < prev);
  }
}

TEST_CASE("gradient clipping") {
  std::vector<Tensor> g = {Tensor(Shape{2}), Tensor(Shape{1})};
  g[0][0] = 3;
  g[0][1] = 4;
  g[1][0] = 12;
  CHECK(clip_gradient_norm(g, 5.0) == doctest::Approx(13.0));
  CHECK(std::hypot(g[0][0], g[0][1], g[1][0]) == doctest::Approx(5.0));
  CHECK(g[0][0] / g[1][0] == doctest::Approx(0.25));
  std::vector<Tensor> small = {Tensor(Shape{1}, 0.5)};
  CHECK(clip_gradient_norm(small, 5.0) == doctest::Approx(0.5));
  CHECK(small[0][0] == 0.5);
}

TEST_CASE("train config validation and json") {
  TrainConfig c;
  CHECK(c.batch_size == 16);
  CHECK(c.lr_initial == 1e-3);
  CHECK(c.lr_finetune == 1e-4);
  CHECK(c.clip_norm == 5.0);
  c.seed = 99;
  c.patience = 2;
  const TrainConfig back = TrainConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  TrainConfig bad;
  bad.patience = 0;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = {};
  bad.lr_finetune = 0;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  CHECK_THROWS_AS(TrainConfig::from_json(nlohmann::json{{"batch_size", "x"}}), FormatError);
}

TEST_CASE("early stopper counts relative improvements") {
  EarlyStopper s(2, 1e-3);
  CHECK(s.update(100.0));
  CHECK_FALSE(s.update(99.95));  // 0.05% better: not enough
  CHECK_FALSE(s.exhausted());
  CHECK(s.update(99.0));
  CHECK_FALSE(s.update(101.0));
  CHECK_FALSE(s.update(99.0));
  CHECK(s.exhausted());
  CHECK(s.best() == 99.0);
  CHECK_THROWS_AS(EarlyStopper(0, 0.0), UsageError);
}

TEST_CASE("patience 1 with worsening dev perplexity stops at epoch 2 of each stage") {
  TrainConfig c;
  c.patience = 1;
  c.max_epochs = 10;
  int saved = 0, restored = 0;
  ScheduleHooks hooks;
  hooks.run_epoch = [](std::size_t, Real, std::size_t epoch) {
    EpochRecord r;
    r.dev_perplexity = 10.0 + static_cast<Real>(epoch);
    return r;
  };
  hooks.save_best = [&] { ++saved; };
  hooks.restore_best = [&] { ++restored; };
  const TrainReport rep = run_schedule(c, hooks);
  REQUIRE(rep.epochs.size() == 4);
  CHECK(rep.epochs[0].stage == 1);
  CHECK(rep.epochs[1].stage == 1);
  CHECK(rep.epochs[2].stage == 2);
  CHECK(rep.epochs[3].stage == 2);
  CHECK(rep.epochs[0].lr == 1e-3);
  CHECK(rep.epochs[2].lr == 1e-4);
  CHECK(rep.stop_reason == "stage1:patience,stage2:patience");
  CHECK(rep.best_epoch == 1);
  CHECK(rep.best_dev_perplexity == 11.0);
  CHECK(saved == 1);
  CHECK(restored == 1);
}

TEST_CASE("schedule runs to max epochs while improving and skips stage 2 without finetune") {
  TrainConfig c;
  c.patience = 1;
  c.max_epochs = 3;
  c.finetune = false;
  ScheduleHooks hooks;
  hooks.run_epoch = [](std::size_t, Real, std::size_t epoch) {
    EpochRecord r;
    r.dev_perplexity = 10.0 / static_cast<Real>(epoch);
    return r;
  };
  const TrainReport rep = run_schedule(c, hooks);
  CHECK(rep.epochs.size() == 3);
  CHECK(rep.stop_reason == "stage1:max_epochs");
  CHECK(rep.best_epoch == 3);
  hooks.run_epoch = [](std::size_t, Real, std::size_t) {
    EpochRecord r;
    r.dev_perplexity = NAN;
    return r;
  };
  CHECK_THROWS_AS(run_schedule(c, hooks), NumericError);
}

TEST_CASE("perplexity of a uniform head equals the vocabulary size") {
  const std::size_t vocab = 30 + Vocabulary::reserved_count();
  ModelConfig cfg = toy_config(Variant::kLstmL11, vocab);
  cfg.copy_enabled = false;
  Seq2SeqModel m(cfg, 1);
  for (const char* name : {"out.W2", "out.b2"})
    for (Real& v : m.params().at(name).values()) v = 0.0;
  std::vector<LinearizedPair> pairs;
  for (std::uint64_t s = 0; s < 4; ++s) pairs.push_back(random_pair(vocab, 6, s));
  CHECK(perplexity(m, pairs) == doctest::Approx(static_cast<double>(vocab)).epsilon(1e-9));
}

TEST_CASE("perplexity of a near-certain model is one") {
  const std::size_t vocab = 10 + Vocabulary::reserved_count();
  ModelConfig cfg = toy_config(Variant::kLstmL11, vocab);
  cfg.copy_enabled = false;
  Seq2SeqModel m(cfg, 1);
  for (Real& v : m.params().at("out.W2").values()) v = 0.0;
  m.params().at("out.b2")[Vocabulary::kEos] = 200.0;
  LinearizedPair p = random_pair(vocab, 4, 3);
  p.target_ids = std::vector<TokenId>{Vocabulary::kBos, Vocabulary::kEos};
  const std::vector<LinearizedPair> pairs = {p};
  CHECK(perplexity(m, pairs) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("perplexity matches a step-by-step oracle") {
  const std::size_t vocab = 20 + Vocabulary::reserved_count();
  Seq2SeqModel m(toy_config(Variant::kLstmL22, vocab), 5);
  spread_parameters(m.params(), 0.5, 8);
  std::vector<LinearizedPair> pairs;
  for (std::uint64_t s = 0; s < 3; ++s) pairs.push_back(random_pair(vocab, 5 + s, 40 + s));
  Real nll = 0;
  std::size_t n = 0;
  for (const auto& p : pairs) {
    const auto session = m.bind_source(p);
    DecoderState st = session->start(), next;
    const auto& tgt = *p.target_ids;
    for (std::size_t t = 0; t + 1 < tgt.size(); ++t) {
      nll -= session->step(st, tgt[t], next).log_probs[tgt[t + 1]];
      st = next;
      ++n;
    }
  }
  CHECK(perplexity(m, pairs) == doctest::Approx(std::exp(nll / static_cast<Real>(n))).epsilon(1e-10));
  const std::vector<std::size_t> all = {0, 1, 2};
  CHECK(batch_mean_nll(m, pairs, all) == doctest::Approx(nll / static_cast<Real>(n)).epsilon(1e-10));
  CHECK_THROWS_AS(perplexity(m, std::vector<LinearizedPair>{}), UsageError);
}

TEST_CASE("batch mean NLL is the token-weighted mean regardless of grouping") {
  const std::size_t vocab = 20 + Vocabulary::reserved_count();
  Seq2SeqModel m(toy_config(Variant::kLstmL11, vocab), 2);
  spread_parameters(m.params(), 0.5, 3);
  std::vector<LinearizedPair> pairs;
  for (std::uint64_t s = 0; s < 6; ++s) pairs.push_back(random_pair(vocab, 3 + s, 70 + s));
  pairs[2].target_ids->insert(pairs[2].target_ids->begin() + 2, 30);  // uneven lengths
  Real total = 0;
  std::size_t tokens = 0;
  for (const auto& p : pairs) {
    const auto [s, k] = m.evaluate_nll(p);
    total += s;
    tokens += k;
  }
  const std::vector<std::size_t> order = {5, 0, 3, 1, 4, 2};
  CHECK(batch_mean_nll(m, pairs, order) == doctest::Approx(total / static_cast<Real>(tokens)).epsilon(1e-12));
}

TEST_CASE("batches cover every sample once and depend only on the seed") {
  Vocabulary vocab;
  const auto pairs = copy_pairs(37, 1, vocab);
  const auto a = make_batches(pairs, 8, 5);
  const auto b = make_batches(pairs, 8, 5);
  CHECK(a == b);
  std::vector<std::size_t> seen;
  for (const auto& batch : a) {
    CHECK(batch.size() <= 8);
    seen.insert(seen.end(), batch.begin(), batch.end());
  }
  std::sort(seen.begin(), seen.end());
  std::vector<std::size_t> expect(37);
  std::iota(expect.begin(), expect.end(), std::size_t{0});
  CHECK(seen == expect);
  CHECK(make_batches(pairs, 8, 6) != a);
  CHECK_THROWS_AS(make_batches(pairs, 0, 1), UsageError);
}

TEST_CASE("train rejects empty sets") {
  Vocabulary vocab;
  const auto pairs = copy_pairs(4, 1, vocab);
  Seq2SeqModel m(toy_config(Variant::kLstmL11, vocab.size()), 1);
  CHECK_THROWS_AS(train(m, {}, pairs, TrainConfig{}), UsageError);
  CHECK_THROWS_AS(train(m, pairs, {}, TrainConfig{}), UsageError);
}

TEST_CASE("overfitting 50 samples drives train NLL below 0.1") {
  Vocabulary vocab;
  const auto pairs = copy_pairs(50, 3, vocab);
  ModelConfig cfg = toy_config(Variant::kLstmL11, vocab.size(), 16);
  cfg.embedding_dim = 12;
  Seq2SeqModel m(cfg, 4);
  TrainConfig tc;
  tc.lr_initial = 1e-2;
  tc.batch_size = 10;
  tc.max_epochs = 200;
  tc.patience = 200;
  tc.finetune = false;
  tc.seed = 1;
  Real last = 1e9;
  std::size_t epochs = 0;
  // dev = train; stop once the target is reached by capping epochs through the callback
  struct Done {};
  try {
    train(m, pairs, pairs, tc, [&](const EpochRecord& r) {
      last = r.train_nll;
      epochs = r.epoch;
      if (last < 0.1) throw Done{};
    });
  } catch (const Done&) {
  }
  MESSAGE("epochs: " << epochs << " nll: " << last);
  CHECK(last < 0.1);
  CHECK(epochs <= 200);
}

TEST_CASE("training is deterministic and returns the best checkpoint") {
  Vocabulary vocab;
  const auto pairs = copy_pairs(24, 9, vocab);
  const std::vector<LinearizedPair> train_set(pairs.begin(), pairs.begin() + 16);
  const std::vector<LinearizedPair> dev_set(pairs.begin() + 16, pairs.end());
  Seq2SeqModel m(toy_config(Variant::kLstmL11, vocab.size()), 6);
  TrainConfig tc;
  tc.lr_initial = 5e-3;
  tc.lr_finetune = 5e-4;
  tc.batch_size = 4;
  tc.max_epochs = 3;
  tc.patience = 1;
  tc.seed = 12;
  const TrainResult a = train(m, train_set, dev_set, tc);
  const TrainResult b = train(m, train_set, dev_set, tc);
  CHECK(a.report.to_json().dump() == b.report.to_json().dump());
  CHECK(a.model.params() == b.model.params());
  for (const auto& e : a.report.epochs) CHECK(a.report.best_dev_perplexity <= e.dev_perplexity);
  CHECK(perplexity(a.model, dev_set) == doctest::Approx(a.report.best_dev_perplexity).epsilon(1e-12));
  CHECK_FALSE(a.report.to_json().contains("wall_seconds"));
  tc.seed = 13;
  const TrainResult c = train(m, train_set, dev_set, tc);
  CHECK_FALSE(c.model.params() == a.model.params());
}
