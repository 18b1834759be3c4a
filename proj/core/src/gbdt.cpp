#include "kgdial/gbdt.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "kgdial/error.hpp"

namespace kgdial {

using nlohmann::json;

namespace {
constexpr int kFormatVersion = 1;
constexpr Real kMinGain = 1e-12;
}  // namespace

void FeatureMatrix::push_row(std::span<const Real> row) {
  if (rows == 0 && cols == 0) cols = row.size();
  if (row.size() != cols) throw DimensionError("FeatureMatrix::push_row", std::to_string(row.size()) + " vs " + std::to_string(cols));
  values.insert(values.end(), row.begin(), row.end());
  ++rows;
}

void GbdtConfig::validate() const {
  if (max_depth < 1) throw ValidationError("gbdt: max_depth must be at least 1");
  if (!(learning_rate > 0 && learning_rate <= 1)) throw ValidationError("gbdt: learning_rate must be in (0, 1]");
  if (min_leaf < 1) throw ValidationError("gbdt: min_leaf must be at least 1");
}

json GbdtConfig::to_json() const {
  return {{"n_trees", n_trees}, {"max_depth", max_depth}, {"learning_rate", learning_rate}, {"min_leaf", min_leaf}};
}

Real RegressionTree::predict(std::span<const Real> x) const {
  if (nodes.empty()) return 0;
  int n = 0;
  while (!nodes[n].is_leaf()) {
    const TreeNode& node = nodes[n];
    n = x[static_cast<std::size_t>(node.feature)] < node.threshold ? node.left : node.right;
  }
  return nodes[n].value;
}

std::size_t RegressionTree::depth() const {
  if (nodes.empty()) return 0;
  std::size_t best = 0;
  std::vector<std::pair<int, std::size_t>> stack{{0, 0}};
  while (!stack.empty()) {
    const auto [n, d] = stack.back();
    stack.pop_back();
    best = std::max(best, d);
    if (!nodes[n].is_leaf()) {
      stack.push_back({nodes[n].left, d + 1});
      stack.push_back({nodes[n].right, d + 1});
    }
  }
  return best;
}

SplitChoice best_split(const FeatureMatrix& x, std::span<const Real> residual, std::span<const std::size_t> rows,
                       std::size_t min_leaf) {
  SplitChoice best;
  const std::size_t n = rows.size();
  if (n < 2 * min_leaf) return best;
  Real total = 0;
  for (std::size_t r : rows) total += residual[r];
  const Real parent = total * total / static_cast<Real>(n);
  std::vector<std::size_t> order(rows.begin(), rows.end());
  for (std::size_t f = 0; f < x.cols; ++f) {
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x.at(a, f) < x.at(b, f); });
    Real left = 0;
    for (std::size_t i = 0; i + 1 < n; ++i) {
      left += residual[order[i]];
      const Real lo = x.at(order[i], f);
      const Real hi = x.at(order[i + 1], f);
      if (!(lo < hi)) continue;
      const std::size_t nl = i + 1, nr = n - nl;
      if (nl < min_leaf || nr < min_leaf) continue;
      const Real right = total - left;
      const Real gain = left * left / static_cast<Real>(nl) + right * right / static_cast<Real>(nr) - parent;
      if (gain > best.gain + kMinGain || (!best.found && gain > kMinGain)) {
        best.found = true;
        best.feature = f;
        best.threshold = lo + (hi - lo) / 2;
        best.gain = gain;
      }
    }
  }
  return best;
}

namespace {

int grow(RegressionTree& tree, const FeatureMatrix& x, std::span<const Real> residual, std::vector<std::size_t> rows,
         std::size_t depth, const GbdtConfig& config) {
  const int id = static_cast<int>(tree.nodes.size());
  tree.nodes.emplace_back();
  Real sum = 0;
  for (std::size_t r : rows) sum += residual[r];
  tree.nodes[id].value = rows.empty() ? 0.0 : sum / static_cast<Real>(rows.size());
  if (depth >= config.max_depth) return id;
  const SplitChoice split = best_split(x, residual, rows, config.min_leaf);
  if (!split.found) return id;
  std::vector<std::size_t> left, right;
  for (std::size_t r : rows) (x.at(r, split.feature) < split.threshold ? left : right).push_back(r);
  rows.clear();
  rows.shrink_to_fit();
  tree.nodes[id].feature = static_cast<int>(split.feature);
  tree.nodes[id].threshold = split.threshold;
  const int l = grow(tree, x, residual, std::move(left), depth + 1, config);
  const int r = grow(tree, x, residual, std::move(right), depth + 1, config);
  tree.nodes[id].left = l;
  tree.nodes[id].right = r;
  tree.nodes[id].value = 0;
  return id;
}

Real mean_squared(std::span<const Real> y, std::span<const Real> pred) {
  Real s = 0;
  for (std::size_t i = 0; i < y.size(); ++i) s += (y[i] - pred[i]) * (y[i] - pred[i]);
  return s / static_cast<Real>(y.size());
}

}  // namespace

GbdtModel::GbdtModel(std::size_t arity, Real base, GbdtConfig config, std::vector<RegressionTree> trees)
    : arity_(arity), base_(base), config_(config), trees_(std::move(trees)) {
  for (const auto& t : trees_)
    for (const auto& n : t.nodes)
      if (!n.is_leaf() && static_cast<std::size_t>(n.feature) >= arity_) throw ValidationError("gbdt: split feature out of range");
}

GbdtModel GbdtModel::fit(const FeatureMatrix& x, std::span<const Real> y, const GbdtConfig& config,
                         std::vector<std::string> feature_names) {
  config.validate();
  if (x.rows < 2) throw UsageError("gbdt: need at least two rows");
  if (y.size() != x.rows) throw UsageError("gbdt: " + std::to_string(y.size()) + " targets for " + std::to_string(x.rows) + " rows");
  if (!feature_names.empty() && feature_names.size() != x.cols) throw UsageError("gbdt: feature name count differs from columns");
  for (Real v : x.values)
    if (!std::isfinite(v)) throw NumericError("gbdt: non-finite feature value");

  GbdtModel m;
  m.arity_ = x.cols;
  m.config_ = config;
  m.names_ = std::move(feature_names);
  m.base_ = std::accumulate(y.begin(), y.end(), Real{0}) / static_cast<Real>(y.size());
  std::vector<Real> pred(y.size(), m.base_);
  std::vector<Real> residual(y.size());
  std::vector<std::size_t> all(x.rows);
  std::iota(all.begin(), all.end(), std::size_t{0});
  m.mse_.push_back(mean_squared(y, pred));
  for (std::size_t t = 0; t < config.n_trees; ++t) {
    for (std::size_t i = 0; i < y.size(); ++i) residual[i] = y[i] - pred[i];
    RegressionTree tree;
    grow(tree, x, residual, all, 0, config);
    for (std::size_t i = 0; i < x.rows; ++i) pred[i] += config.learning_rate * tree.predict(x.row(i));
    m.trees_.push_back(std::move(tree));
    m.mse_.push_back(mean_squared(y, pred));
  }
  return m;
}

Real GbdtModel::predict(std::span<const Real> features) const {
  if (features.size() != arity_) {
    throw UsageError("gbdt: expected " + std::to_string(arity_) + " features, got " + std::to_string(features.size()));
  }
  Real sum = 0;
  for (const auto& t : trees_) sum += t.predict(features);
  return base_ + config_.learning_rate * sum;
}

std::vector<Real> GbdtModel::predict_all(const FeatureMatrix& x) const {
  std::vector<Real> out;
  out.reserve(x.rows);
  for (std::size_t i = 0; i < x.rows; ++i) out.push_back(predict(x.row(i)));
  return out;
}

json GbdtModel::to_json() const {
  json trees = json::array();
  for (const auto& t : trees_) {
    json nodes = json::array();
    for (const auto& n : t.nodes) {
      if (n.is_leaf()) {
        nodes.push_back({{"leaf", n.value}});
      } else {
        nodes.push_back({{"feature", n.feature}, {"threshold", n.threshold}, {"left", n.left}, {"right", n.right}});
      }
    }
    trees.push_back(std::move(nodes));
  }
  return {{"format", "kgdial-gbdt"}, {"version", kFormatVersion}, {"arity", arity_},
          {"feature_names", names_}, {"base", base_},       {"config", config_.to_json()},
          {"training_mse", mse_},    {"trees", trees}};
}

GbdtModel GbdtModel::from_json(const json& j) {
  if (!j.is_object() || j.value("format", "") != "kgdial-gbdt") throw FormatError("gbdt: not a ranker dump");
  if (j.value("version", 0) != kFormatVersion) throw FormatError("gbdt: unsupported version " + j.value("version", json()).dump());
  try {
    GbdtConfig c;
    const json& cj = j.at("config");
    c.n_trees = cj.at("n_trees").get<std::size_t>();
    c.max_depth = cj.at("max_depth").get<std::size_t>();
    c.learning_rate = cj.at("learning_rate").get<Real>();
    c.min_leaf = cj.at("min_leaf").get<std::size_t>();
    std::vector<RegressionTree> trees;
    for (const json& tj : j.at("trees")) {
      RegressionTree t;
      for (const json& nj : tj) {
        TreeNode n;
        if (nj.contains("leaf")) {
          n.value = nj.at("leaf").get<Real>();
        } else {
          n.feature = nj.at("feature").get<int>();
          n.threshold = nj.at("threshold").get<Real>();
          n.left = nj.at("left").get<int>();
          n.right = nj.at("right").get<int>();
        }
        t.nodes.push_back(n);
      }
      const int size = static_cast<int>(t.nodes.size());
      for (const auto& n : t.nodes)
        if (!n.is_leaf() && (n.left <= 0 || n.right <= 0 || n.left >= size || n.right >= size)) throw FormatError("gbdt: bad child index");
      trees.push_back(std::move(t));
    }
    GbdtModel m(j.at("arity").get<std::size_t>(), j.at("base").get<Real>(), c, std::move(trees));
    m.names_ = j.value("feature_names", std::vector<std::string>{});
    m.mse_ = j.value("training_mse", std::vector<Real>{});
    return m;
  } catch (const json::exception& e) {
    throw FormatError(std::string("gbdt: ") + e.what());
  } catch (const ValidationError& e) {
    throw FormatError(e.what());
  }
}

void GbdtModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write ranker " + path.string());
  out << to_json().dump() << '\n';
}

GbdtModel GbdtModel::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read ranker " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ParseError("ranker " + path.string() + ": invalid JSON", e.byte);
  }
  return from_json(j);
}

}  // namespace kgdial
