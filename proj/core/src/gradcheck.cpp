#include "kgdial/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "kgdial/error.hpp"

namespace kgdial {
namespace {

Real evaluate(const LossFunction& loss, const ParameterSet& params) {
  Graph graph;
  Binding binding(graph, params);
  const Real value = loss(binding).item();
  if (!std::isfinite(value)) throw NumericError("grad_check: non-finite loss");
  return value;
}

}  // namespace

GradCheckResult grad_check(const LossFunction& loss, ParameterSet& params,
                           const GradCheckOptions& options) {
  if (!(options.epsilon > 0)) throw UsageError("grad_check: epsilon must be positive");

  std::vector<Tensor> analytic;
  {
    Graph graph;
    Binding binding(graph, params);
    Var out = loss(binding);
    if (!std::isfinite(out.item())) throw NumericError("grad_check: non-finite loss");
    graph.backward(out);
    analytic = binding.gradients();
  }

  std::mt19937_64 rng(options.seed);
  GradCheckResult result;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& tensor = params[p];
    if (!analytic[p].all_finite()) {
      throw NumericError("grad_check: non-finite gradient for " + params.name(p));
    }
    std::vector<std::size_t> coords(tensor.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (coords.size() > options.coordinates_per_parameter) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.coordinates_per_parameter);
    }
    for (std::size_t i : coords) {
      const Real saved = tensor[i];
      tensor[i] = saved + options.epsilon;
      const Real plus = evaluate(loss, params);
      tensor[i] = saved - options.epsilon;
      const Real minus = evaluate(loss, params);
      tensor[i] = saved;

      const Real numeric = (plus - minus) / (2.0 * options.epsilon);
      const Real a = analytic[p][i];
      const Real denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const Real rel = std::abs(a - numeric) / denom;
      ++result.coordinates_checked;
      if (rel > result.max_relative_error || result.worst_parameter.empty()) {
        if (rel >= result.max_relative_error) {
          result.max_relative_error = rel;
          result.worst_parameter = params.name(p);
          result.worst_index = i;
          result.analytic = a;
          result.numeric = numeric;
        }
      }
    }
  }
  return result;
}

}  // namespace kgdial
