#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "kgdial/autodiff.hpp"

namespace kgdial {

struct GradCheckOptions {
  Real epsilon = 1e-5;
  /// Coordinates sampled per parameter tensor; tensors at most this large are
  /// checked exhaustively.
  std::size_t coordinates_per_parameter = 8;
  std::uint64_t seed = 17;
};

struct GradCheckResult {
  Real max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  Real analytic = 0.0;
  Real numeric = 0.0;
  std::size_t coordinates_checked = 0;
};

/// Builds a scalar loss from parameters bound into a fresh graph.
using LossFunction = std::function<Var(Binding&)>;

/// Compares reverse-mode gradients against central differences. The relative
/// error of one coordinate is |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
/// `params` is perturbed in place and restored before returning.
/// Throws NumericError if any loss or gradient is non-finite.
GradCheckResult grad_check(const LossFunction& loss, ParameterSet& params,
                           const GradCheckOptions& options = {});

}  // namespace kgdial
