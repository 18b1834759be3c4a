#include <benchmark/benchmark.h>

#include <random>

#include "kgdial/corpus.hpp"
#include "kgdial/decoder.hpp"
#include "kgdial/gbdt.hpp"
#include "kgdial/metrics.hpp"
#include "kgdial/rerank.hpp"
#include "kgdial/seq2seq.hpp"
#include "kgdial/synthetic.hpp"

using namespace kgdial;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1, 1);
  Tensor t(Shape{r, c});
  for (double& v : t.values()) v = u(rng);
  return t;
}

struct CopySetup {
  Vocabulary vocab;
  std::vector<LinearizedPair> pairs;
};

const CopySetup& copy_setup() {
  static const CopySetup s = [] {
    CopySetup out;
    CopyTaskConfig c;
    c.seed = 1;
    out.vocab = copy_task_vocabulary(c);
    for (const auto& d : generate_copy_corpus(64, c, CopySplit::kTrain)) out.pairs.push_back(encode_pair(d, out.vocab));
    return out;
  }();
  return s;
}

}  // namespace

static void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(1);
  const Tensor a = random_matrix(n, n, rng), b = random_matrix(n, n, rng);
  for (auto _ : state) {
    Graph g;
    benchmark::DoNotOptimize(ad::matmul(g.constant(a), g.constant(b)).value());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(64)->Arg(128);

// forward loss plus backward over one copy-task pair
static void BM_LossAndGradient(benchmark::State& state) {
  const auto& s = copy_setup();
  const auto v = static_cast<Variant>(state.range(0));
  ModelConfig cfg = ModelConfig::for_variant(v, s.vocab.size(), 64);
  if (v == Variant::kTransformer) {
    cfg.heads = 4;
    cfg.ff_size = 128;
  }
  const Seq2SeqModel m(cfg, 1);
  std::size_t i = 0;
  for (auto _ : state) {
    Graph g;
    Binding b(g, m.params());
    const auto r = m.forward_loss(b, s.pairs[i++ % s.pairs.size()]);
    g.backward(r.total);
    benchmark::DoNotOptimize(b.gradients());
  }
  state.SetLabel(std::string(variant_name(v)));
}
BENCHMARK(BM_LossAndGradient)->DenseRange(0, static_cast<int>(all_variants().size()) - 1)->Unit(benchmark::kMillisecond);

static void BM_BeamDecode(benchmark::State& state) {
  const auto& s = copy_setup();
  ModelConfig cfg = ModelConfig::for_variant(Variant::kLstmL11, s.vocab.size(), 64);
  const Seq2SeqModel m(cfg, 1);
  BeamConfig bc;
  bc.beam_size = static_cast<std::size_t>(state.range(0));
  bc.max_length = 12;
  std::size_t i = 0;
  for (auto _ : state)
    benchmark::DoNotOptimize(decode_pair(m, s.pairs[i++ % s.pairs.size()], s.vocab, bc, "s", "m"));
}
BENCHMARK(BM_BeamDecode)->Arg(1)->Arg(5)->Arg(10)->Unit(benchmark::kMillisecond);

static void BM_GbdtFit(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<Real> u(0, 1);
  FeatureMatrix x(n, 8);
  std::vector<Real> y;
  for (Real& v : x.values) v = u(rng);
  for (std::size_t i = 0; i < n; ++i) y.push_back(3 * x.at(i, 0) - 2 * x.at(i, 1) + x.at(i, 5) * x.at(i, 6));
  GbdtConfig c;
  c.n_trees = 100;
  c.max_depth = 3;
  for (auto _ : state) benchmark::DoNotOptimize(GbdtModel::fit(x, y, c));
}
BENCHMARK(BM_GbdtFit)->Arg(500)->Arg(5000)->Unit(benchmark::kMillisecond);

static void BM_CorpusEval(benchmark::State& state) {
  const auto corpus = generate_dialogue_corpus(1000, DialogueCorpusConfig{});
  std::vector<TextRecord> gold, cand;
  for (const auto& s : corpus) {
    gold.push_back({s.id, *s.response});
    cand.push_back({s.id, s.history.empty() ? *s.response : s.history.back().tokens});
  }
  for (auto _ : state) benchmark::DoNotOptimize(corpus_eval(cand, gold));
  state.SetItemsProcessed(state.iterations() * 1000);
}
BENCHMARK(BM_CorpusEval)->Unit(benchmark::kMillisecond);

static void BM_RankFeatures(benchmark::State& state) {
  const auto corpus = generate_dialogue_corpus(200, DialogueCorpusConfig{});
  SimilarityModels aux = fit_similarity_models(corpus, 16);
  aux.entities = synthetic_entities(DialogueCorpusConfig{});
  const ModelWeights weights = {{"m", 90.0}};
  std::size_t i = 0;
  for (auto _ : state) {
    const auto& s = corpus[i++ % corpus.size()];
    const CandidateResponse c{s.id, "m", *s.response, -1.0, -1.0};
    benchmark::DoNotOptimize(extract_features(c, s, aux, weights));
  }
}
BENCHMARK(BM_RankFeatures);

BENCHMARK_MAIN();
