#pragma once

#include <cstddef>
#include <vector>

#include "kgdial/corpus.hpp"
#include "kgdial/tensor.hpp"

namespace kgdial {

/// Recurrent state carried between decoding steps: per-layer hidden/cell
/// vectors for LSTMs, the generated prefix for the transformer.
struct DecoderState {
  std::vector<Tensor> hidden;
  std::vector<Tensor> cell;
  std::vector<TokenId> prefix;
};

struct StepOutput {
  std::vector<Real> log_probs;  // over the extended vocabulary
  std::vector<Real> attention;  // over source positions, sums to 1
};

/// What beam search needs from a model bound to one source.
class StepModel {
 public:
  virtual ~StepModel() = default;

  virtual std::size_t output_size() const = 0;
  virtual std::size_t source_length() const = 0;
  virtual DecoderState start() const = 0;
  /// Consumes `token` (the previous output, BOS first) and returns the next
  /// distribution; `next` receives the advanced state.
  virtual StepOutput step(const DecoderState& state, TokenId token, DecoderState& next) const = 0;
};

}  // namespace kgdial
