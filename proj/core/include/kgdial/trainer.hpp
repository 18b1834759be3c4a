#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "kgdial/seq2seq.hpp"

namespace kgdial {

struct AdamConfig {
  Real beta1 = 0.9;
  Real beta2 = 0.999;
  Real epsilon = 1e-8;
};

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::size_t steps = 0;
  std::size_t skipped = 0;  // updates refused because of non-finite gradients

  void reset(const ParameterSet& params);
};

/// One bias-corrected Adam update. Returns false, leaving parameters and
/// moments untouched (but counting the skip), if any gradient is non-finite.
bool adam_step(ParameterSet& params, std::span<const Tensor> grads, AdamState& state, Real lr,
               const AdamConfig& config = {});

/// Scales `grads` so their global L2 norm is at most `max_norm`; returns the
/// norm before clipping.
Real clip_gradient_norm(std::span<Tensor> grads, Real max_norm);

struct TrainConfig {
  std::size_t batch_size = 16;
  Real lr_initial = 1e-3;
  Real lr_finetune = 1e-4;
  AdamConfig adam;
  std::size_t patience = 3;
  /// Epoch cap applied to each learning-rate stage.
  std::size_t max_epochs = 30;
  Real clip_norm = 5.0;
  /// An epoch counts as improving only below best * (1 - this).
  Real min_relative_improvement = 1e-3;
  bool finetune = true;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

/// Patience counter over a value to be minimised.
class EarlyStopper {
 public:
  EarlyStopper(std::size_t patience, Real min_relative_improvement);

  /// Records one observation; returns true if it counts as an improvement.
  bool update(Real value);
  /// Starts a new patience window, keeping the best value.
  void restart() { stale_ = 0; }
  bool exhausted() const { return stale_ >= patience_; }
  Real best() const { return best_; }

 private:
  std::size_t patience_;
  Real min_rel_;
  Real best_ = std::numeric_limits<Real>::infinity();
  std::size_t stale_ = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based across stages
  std::size_t stage = 1;
  Real lr = 0;
  Real train_nll = 0;  // token-weighted mean over the epoch
  Real dev_perplexity = 0;
  bool improved = false;
  std::size_t skipped_updates = 0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  Real best_dev_perplexity = std::numeric_limits<Real>::infinity();
  std::string stop_reason;
  std::uint64_t seed = 0;
  /// Kept out of to_json so reruns serialize identically.
  double wall_seconds = 0;

  nlohmann::json to_json() const;
};

/// exp(total NLL / total predicted tokens) over pairs with targets.
Real perplexity(const Seq2SeqModel& model, std::span<const LinearizedPair> pairs);

/// Token-weighted mean NLL of the selected pairs, accumulated per sample.
Real batch_mean_nll(const Seq2SeqModel& model, std::span<const LinearizedPair> pairs,
                    std::span<const std::size_t> indices);

/// Batches of similar source length; batch order shuffled by `rng_seed`.
std::vector<std::vector<std::size_t>> make_batches(std::span<const LinearizedPair> pairs,
                                                   std::size_t batch_size, std::uint64_t rng_seed);

struct TrainResult {
  Seq2SeqModel model;  // best-dev-perplexity parameters
  TrainReport report;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Model-agnostic driver for the two-stage schedule.
struct ScheduleHooks {
  /// Trains one epoch at `lr` and fills train_nll, dev_perplexity and
  /// skipped_updates of the returned record.
  std::function<EpochRecord(std::size_t stage, Real lr, std::size_t epoch)> run_epoch;
  /// Called whenever an epoch sets a new global best dev perplexity.
  std::function<void()> save_best;
  /// Called before stage 2 starts.
  std::function<void()> restore_best;
};

TrainReport run_schedule(const TrainConfig& config, const ScheduleHooks& hooks, const EpochCallback& on_epoch = {});

/// Two-stage schedule: lr_initial until patience runs out, then lr_finetune
/// from the best parameters with fresh Adam moments until it runs out again.
/// Throws UsageError on empty train or dev sets.
TrainResult train(const Seq2SeqModel& initial, std::span<const LinearizedPair> train_set,
                  std::span<const LinearizedPair> dev_set, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

}  // namespace kgdial
