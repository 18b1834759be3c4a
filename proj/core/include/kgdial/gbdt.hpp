#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "kgdial/tensor.hpp"

namespace kgdial {

/// Dense row-major design matrix.
struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<Real> values;

  FeatureMatrix() = default;
  FeatureMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), values(r * c, 0.0) {}
  Real& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  Real at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  std::span<const Real> row(std::size_t r) const { return {values.data() + r * cols, cols}; }
  void push_row(std::span<const Real> row);
};

struct GbdtConfig {
  std::size_t n_trees = 1900;
  std::size_t max_depth = 6;
  Real learning_rate = 0.05;
  std::size_t min_leaf = 20;

  void validate() const;
  nlohmann::json to_json() const;
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  Real threshold = 0;
  int left = -1;
  int right = -1;
  Real value = 0;  // leaf output, before shrinkage

  bool is_leaf() const { return feature < 0; }
  friend bool operator==(const TreeNode&, const TreeNode&) = default;
};

/// Node 0 is the root. x[feature] < threshold goes left.
struct RegressionTree {
  std::vector<TreeNode> nodes;

  Real predict(std::span<const Real> x) const;
  std::size_t depth() const;
  friend bool operator==(const RegressionTree&, const RegressionTree&) = default;
};

struct SplitChoice {
  bool found = false;
  std::size_t feature = 0;
  Real threshold = 0;
  Real gain = 0;  // reduction in sum of squared residuals
};

/// Exact greedy split over `rows`: every feature, thresholds at midpoints of
/// consecutive distinct sorted values, both sides holding at least
/// `min_leaf` rows. Ties keep the lower feature, then the lower threshold.
SplitChoice best_split(const FeatureMatrix& x, std::span<const Real> residual, std::span<const std::size_t> rows,
                       std::size_t min_leaf);

class GbdtModel {
 public:
  GbdtModel() = default;

  /// Squared-error boosting; deterministic for a fixed row order. Throws
  /// UsageError for fewer than two rows or mismatched lengths.
  static GbdtModel fit(const FeatureMatrix& x, std::span<const Real> y, const GbdtConfig& config,
                       std::vector<std::string> feature_names = {});

  Real predict(std::span<const Real> features) const;
  std::vector<Real> predict_all(const FeatureMatrix& x) const;

  std::size_t arity() const noexcept { return arity_; }
  Real base() const noexcept { return base_; }
  Real learning_rate() const noexcept { return config_.learning_rate; }
  const GbdtConfig& config() const noexcept { return config_; }
  const std::vector<RegressionTree>& trees() const noexcept { return trees_; }
  std::vector<RegressionTree>& trees() noexcept { return trees_; }
  const std::vector<std::string>& feature_names() const noexcept { return names_; }
  /// Training MSE after each round (index 0 = base prediction only).
  const std::vector<Real>& training_mse() const noexcept { return mse_; }

  nlohmann::json to_json() const;
  static GbdtModel from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static GbdtModel load(const std::filesystem::path& path);

  /// Assembles a model directly (tests, hand-built rankers).
  GbdtModel(std::size_t arity, Real base, GbdtConfig config, std::vector<RegressionTree> trees);

 private:
  std::size_t arity_ = 0;
  Real base_ = 0;
  GbdtConfig config_;
  std::vector<RegressionTree> trees_;
  std::vector<std::string> names_;
  std::vector<Real> mse_;
};

}  // namespace kgdial
