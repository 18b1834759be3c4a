#include "kgdial/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "kgdial/error.hpp"
#include "kgdial/random.hpp"

namespace kgdial {

using nlohmann::json;

void AdamState::reset(const ParameterSet& params) {
  m.clear();
  v.clear();
  for (std::size_t i = 0; i < params.size(); ++i) {
    m.emplace_back(params[i].shape(), 0.0);
    v.emplace_back(params[i].shape(), 0.0);
  }
  steps = 0;
}

bool adam_step(ParameterSet& params, std::span<const Tensor> grads, AdamState& state, Real lr,
               const AdamConfig& config) {
  if (grads.size() != params.size()) {
    throw DimensionError("adam_step", std::to_string(grads.size()) + " gradients for " +
                                          std::to_string(params.size()) + " parameters");
  }
  if (state.m.size() != params.size()) state.reset(params);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].shape() != params[i].shape()) {
      throw DimensionError("adam_step", params.name(i) + ": gradient " + shape_string(grads[i].shape()) +
                                            " vs parameter " + shape_string(params[i].shape()));
    }
    if (!grads[i].all_finite()) {
      ++state.skipped;
      return false;
    }
  }
  ++state.steps;
  const Real t = static_cast<Real>(state.steps);
  const Real c1 = 1.0 - std::pow(config.beta1, t);
  const Real c2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    const Tensor& g = grads[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = config.beta1 * m[k] + (1.0 - config.beta1) * g[k];
      v[k] = config.beta2 * v[k] + (1.0 - config.beta2) * g[k] * g[k];
      p[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + config.epsilon);
    }
  }
  return true;
}

Real clip_gradient_norm(std::span<Tensor> grads, Real max_norm) {
  Real sq = 0;
  for (const Tensor& g : grads)
    for (Real x : g.values()) sq += x * x;
  const Real norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0) {
    const Real k = max_norm / norm;
    for (Tensor& g : grads)
      for (Real& x : g.values()) x *= k;
  }
  return norm;
}

// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
  if (batch_size == 0) throw ValidationError("train config: batch_size must be positive");
  if (!(lr_initial > 0) || !(lr_finetune > 0)) throw ValidationError("train config: learning rates must be positive");
  if (patience < 1) throw ValidationError("train config: patience must be at least 1");
  if (max_epochs < 1) throw ValidationError("train config: max_epochs must be at least 1");
  if (!(clip_norm > 0)) throw ValidationError("train config: clip_norm must be positive");
  if (!(adam.beta1 >= 0 && adam.beta1 < 1 && adam.beta2 >= 0 && adam.beta2 < 1 && adam.epsilon > 0)) {
    throw ValidationError("train config: Adam constants out of range");
  }
}

json TrainConfig::to_json() const {
  return {{"batch_size", batch_size}, {"lr_initial", lr_initial},
          {"lr_finetune", lr_finetune}, {"adam_beta1", adam.beta1},
          {"adam_beta2", adam.beta2}, {"adam_epsilon", adam.epsilon},
          {"patience", patience},     {"max_epochs", max_epochs},
          {"clip_norm", clip_norm},   {"min_relative_improvement", min_relative_improvement},
          {"finetune", finetune},     {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  try {
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr_initial = j.value("lr_initial", c.lr_initial);
    c.lr_finetune = j.value("lr_finetune", c.lr_finetune);
    c.adam.beta1 = j.value("adam_beta1", c.adam.beta1);
    c.adam.beta2 = j.value("adam_beta2", c.adam.beta2);
    c.adam.epsilon = j.value("adam_epsilon", c.adam.epsilon);
    c.patience = j.value("patience", c.patience);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    c.min_relative_improvement = j.value("min_relative_improvement", c.min_relative_improvement);
    c.finetune = j.value("finetune", c.finetune);
    c.seed = j.value("seed", c.seed);
  } catch (const json::exception& e) {
    throw FormatError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

EarlyStopper::EarlyStopper(std::size_t patience, Real min_relative_improvement)
    : patience_(patience), min_rel_(min_relative_improvement) {
  if (patience < 1) throw UsageError("EarlyStopper: patience must be at least 1");
}

bool EarlyStopper::update(Real value) {
  const bool improved = std::isinf(best_) ? std::isfinite(value) : value < best_ * (1.0 - min_rel_);
  if (improved) {
    best_ = value;
    stale_ = 0;
  } else {
    ++stale_;
  }
  return improved;
}

json TrainReport::to_json() const {
  json rows = json::array();
  for (const auto& e : epochs) {
    rows.push_back({{"epoch", e.epoch},
                    {"stage", e.stage},
                    {"lr", e.lr},
                    {"train_nll", e.train_nll},
                    {"dev_perplexity", e.dev_perplexity},
                    {"improved", e.improved},
                    {"skipped_updates", e.skipped_updates}});
  }
  return {{"epochs", rows},
          {"best_epoch", best_epoch},
          {"best_dev_perplexity", best_dev_perplexity},
          {"stop_reason", stop_reason},
          {"seed", seed}};
}

// ---------------------------------------------------------------------------

Real perplexity(const Seq2SeqModel& model, std::span<const LinearizedPair> pairs) {
  Real total = 0;
  std::size_t tokens = 0;
  for (const auto& p : pairs) {
    const auto [nll, n] = model.evaluate_nll(p);
    total += nll;
    tokens += n;
  }
  if (tokens == 0) throw UsageError("perplexity: no target tokens");
  return std::exp(total / static_cast<Real>(tokens));
}

Real batch_mean_nll(const Seq2SeqModel& model, std::span<const LinearizedPair> pairs,
                    std::span<const std::size_t> indices) {
  Real total = 0;
  std::size_t tokens = 0;
  for (std::size_t i : indices) {
    const auto [nll, n] = model.evaluate_nll(pairs[i]);
    total += nll;
    tokens += n;
  }
  return tokens ? total / static_cast<Real>(tokens) : 0.0;
}

std::vector<std::vector<std::size_t>> make_batches(std::span<const LinearizedPair> pairs,
                                                   std::size_t batch_size, std::uint64_t rng_seed) {
  if (batch_size == 0) throw UsageError("make_batches: batch_size must be positive");
  auto rng = make_rng(rng_seed, 2);
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return pairs[a].source_ids.size() < pairs[b].source_ids.size();
  });
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), i + batch_size)));
  }
  std::shuffle(batches.begin(), batches.end(), rng);
  return batches;
}

namespace {

struct BatchOutcome {
  Real nll = 0;
  std::size_t tokens = 0;
  bool applied = false;
};

BatchOutcome train_batch(Seq2SeqModel& model, std::span<const LinearizedPair> pairs,
                         std::span<const std::size_t> batch, AdamState& adam, Real lr, const TrainConfig& config) {
  ParameterSet& params = model.params();
  std::vector<Tensor> grads;
  for (std::size_t i = 0; i < params.size(); ++i) grads.emplace_back(params[i].shape(), 0.0);
  BatchOutcome out;
  for (std::size_t idx : batch) {
    Graph g;
    Binding b(g, params);
    const LossResult loss = model.forward_loss(b, pairs[idx]);
    g.backward(loss.total);
    const std::vector<Tensor> sample_grads = b.gradients();
    for (std::size_t p = 0; p < grads.size(); ++p)
      for (std::size_t k = 0; k < grads[p].size(); ++k) grads[p][k] += sample_grads[p][k];
    out.nll += loss.total.item();
    out.tokens += loss.tokens;
  }
  if (out.tokens == 0) return out;
  const Real inv = 1.0 / static_cast<Real>(out.tokens);
  for (Tensor& g : grads)
    for (Real& x : g.values()) x *= inv;
  clip_gradient_norm(grads, config.clip_norm);
  out.applied = adam_step(params, grads, adam, lr, config.adam);
  return out;
}

}  // namespace

TrainReport run_schedule(const TrainConfig& config, const ScheduleHooks& hooks, const EpochCallback& on_epoch) {
  config.validate();
  TrainReport report;
  report.seed = config.seed;
  std::size_t epoch = 0;
  std::vector<std::string> reasons;
  const std::size_t stages = config.finetune ? 2 : 1;
  for (std::size_t stage = 1; stage <= stages; ++stage) {
    const Real lr = stage == 1 ? config.lr_initial : config.lr_finetune;
    if (stage == 2 && hooks.restore_best) hooks.restore_best();
    // Each stage gets its own patience window measured from its first epoch.
    EarlyStopper stopper(config.patience, config.min_relative_improvement);
    std::string reason = "max_epochs";
    for (std::size_t local = 0; local < config.max_epochs; ++local) {
      ++epoch;
      EpochRecord rec = hooks.run_epoch(stage, lr, epoch);
      rec.epoch = epoch;
      rec.stage = stage;
      rec.lr = lr;
      if (!std::isfinite(rec.dev_perplexity)) throw NumericError("train: non-finite dev perplexity");
      rec.improved = stopper.update(rec.dev_perplexity);
      if (rec.dev_perplexity < report.best_dev_perplexity) {
        report.best_dev_perplexity = rec.dev_perplexity;
        report.best_epoch = epoch;
        if (hooks.save_best) hooks.save_best();
      }
      report.epochs.push_back(rec);
      if (on_epoch) on_epoch(rec);
      if (stopper.exhausted()) {
        reason = "patience";
        break;
      }
    }
    reasons.push_back("stage" + std::to_string(stage) + ":" + reason);
  }
  for (std::size_t i = 0; i < reasons.size(); ++i) report.stop_reason += (i ? "," : "") + reasons[i];
  return report;
}

TrainResult train(const Seq2SeqModel& initial, std::span<const LinearizedPair> train_set,
                  std::span<const LinearizedPair> dev_set, const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  if (train_set.empty()) throw UsageError("train: empty training set");
  if (dev_set.empty()) throw UsageError("train: empty development set");
  const auto started = std::chrono::steady_clock::now();

  Seq2SeqModel model = initial;
  Seq2SeqModel best = initial;
  AdamState adam;
  std::size_t current_stage = 0;

  ScheduleHooks hooks;
  hooks.run_epoch = [&](std::size_t stage, Real lr, std::size_t epoch) {
    if (stage != current_stage) {
      adam.reset(model.params());
      current_stage = stage;
    }
    EpochRecord rec;
    const std::size_t skipped_before = adam.skipped;
    Real nll = 0;
    std::size_t tokens = 0;
    for (const auto& batch : make_batches(train_set, config.batch_size, splitmix64(config.seed) ^ epoch)) {
      const BatchOutcome o = train_batch(model, train_set, batch, adam, lr, config);
      nll += o.nll;
      tokens += o.tokens;
    }
    rec.train_nll = tokens ? nll / static_cast<Real>(tokens) : 0.0;
    rec.skipped_updates = adam.skipped - skipped_before;
    rec.dev_perplexity = perplexity(model, dev_set);
    return rec;
  };
  hooks.save_best = [&] { best = model; };
  hooks.restore_best = [&] { model = best; };

  TrainReport report = run_schedule(config, hooks, on_epoch);
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return {std::move(best), std::move(report)};
}

}  // namespace kgdial
