#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "kgdial/autodiff.hpp"
#include "kgdial/corpus.hpp"
#include "kgdial/step_model.hpp"

namespace kgdial {

enum class Variant { kLstmL11, kLstmL11Embed, kLstmL22, kLstmL31, kTransformer };

std::string_view variant_name(Variant variant);
/// Accepts the names printed by variant_name (case-insensitive).
Variant parse_variant(std::string_view name);
const std::vector<Variant>& all_variants();

struct ModelConfig {
  Variant variant = Variant::kLstmL11;
  std::size_t vocab_size = 0;
  std::size_t hidden_size = 256;
  std::size_t embedding_dim = 128;
  std::size_t encoder_layers = 1;
  std::size_t decoder_layers = 1;
  // Transformer only.
  std::size_t heads = 4;
  std::size_t ff_size = 1024;
  bool copy_enabled = true;
  /// Attention scoring for the LSTM decoders; only "additive" is implemented.
  std::string attention = "additive";

  /// Layer counts, embedding width and copy default of a named variant.
  static ModelConfig for_variant(Variant variant, std::size_t vocab_size, std::size_t hidden_size = 256);

  bool is_transformer() const { return variant == Variant::kTransformer; }
  /// Throws ValidationError when the fields disagree with the variant.
  void validate() const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct EncoderOutput {
  Var states;  // N x encoder_width: h_1 .. h_N
  Var keys;    // N x hidden: attention projection of the states (LSTM only)
  std::vector<Var> init_hidden;  // per decoder layer (LSTM only)
  std::vector<Var> init_cell;
};

struct AttentionResult {
  Var weights;  // a^t over source positions
  Var context;  // h_t* = sum_i a_i^t h_i
};

struct LossResult {
  Var total;  // summed NLL over predicted target tokens
  std::size_t tokens = 0;
  /// Per-step output distributions when requested.
  std::vector<Tensor> distributions;

  Real mean_nll() const { return tokens ? total.item() / static_cast<Real>(tokens) : 0.0; }
};

inline constexpr Real kProbabilityFloor = 1e-12;

class Seq2SeqModel {
 public:
  /// Randomly initialised parameters.
  explicit Seq2SeqModel(const ModelConfig& config, std::uint64_t seed = 0);
  /// Adopts `params`; throws FormatError if names or shapes do not fit `config`.
  Seq2SeqModel(const ModelConfig& config, ParameterSet params);

  const ModelConfig& config() const noexcept { return config_; }
  const ParameterSet& params() const noexcept { return params_; }
  ParameterSet& params() noexcept { return params_; }
  std::size_t encoder_width() const;

  /// Throws UsageError for an empty source. Extended ids embed as UNK.
  EncoderOutput encode(Binding& b, std::span<const TokenId> source_ids) const;

  /// Additive attention v^T tanh(W_h h_i + W_s s + b), softmax over i.
  AttentionResult attention(Binding& b, Var s, const EncoderOutput& enc) const;
  /// softmax(W'(W[s, h*] + b) + b')
  Var vocab_distribution(Binding& b, Var s, Var context) const;
  /// sigmoid(w_h . h* + w_s . s + w_x . x + b) as a single-element vector.
  Var copy_gate(Binding& b, Var context, Var s, Var x) const;

  /// P_gen P_vocab(w) + (1 - P_gen) sum_{i: w_i = w} a_i over `extended_size` ids.
  static Var mixture_distribution(Var p_vocab, Var attention, Var p_gen,
                                  std::span<const TokenId> source_ids, std::size_t extended_size);

  /// Teacher-forced NLL of pair.target_ids. Throws UsageError without a target.
  LossResult forward_loss(Binding& b, const LinearizedPair& pair, bool keep_distributions = false) const;
  /// Convenience: forward_loss in a throwaway graph, returning (summed NLL, tokens).
  std::pair<Real, std::size_t> evaluate_nll(const LinearizedPair& pair) const;

  /// Encodes the source once for step-wise decoding. The model must outlive it.
  std::unique_ptr<StepModel> bind_source(const LinearizedPair& pair) const;

  nlohmann::json descriptor() const;

 private:
  struct DecoderRun {
    std::vector<Var> states;      // s_t per step
    std::vector<Var> attentions;  // a^t per step
    std::vector<Var> contexts;    // h_t* per step
    std::vector<Var> inputs;      // x_t per step
  };

  void init_parameters(std::uint64_t seed);
  void check_parameters() const;
  TokenId clamp_input(TokenId id) const;
  /// P_vocab, or the copy mixture over the extended vocabulary.
  Var output_distribution(Binding& b, Var s, Var weights, Var context, Var x,
                          std::span<const TokenId> source_ids, std::size_t extended_size) const;

  EncoderOutput encode_lstm(Binding& b, std::span<const TokenId> ids) const;
  EncoderOutput encode_transformer(Binding& b, std::span<const TokenId> ids) const;
  /// One LSTM decoder step from (h, c) per layer; returns s_t.
  Var lstm_decoder_step(Binding& b, Var x, std::vector<Var>& h, std::vector<Var>& c) const;
  DecoderRun run_lstm_decoder(Binding& b, const EncoderOutput& enc, std::span<const TokenId> inputs) const;
  DecoderRun run_transformer_decoder(Binding& b, const EncoderOutput& enc,
                                     std::span<const TokenId> inputs) const;

  friend class LstmSession;
  friend class TransformerSession;

  ModelConfig config_;
  ParameterSet params_;
};

/// Writes a checkpoint whose descriptor carries the model config plus `meta`.
void save_model(const std::filesystem::path& path, const Seq2SeqModel& model,
                const nlohmann::json& meta = nlohmann::json::object());

struct LoadedModel {
  Seq2SeqModel model;
  nlohmann::json meta;
};

/// Throws FormatError if the file is not a seq2seq checkpoint or its variant
/// differs from `expected`.
LoadedModel load_model(const std::filesystem::path& path, std::optional<Variant> expected = std::nullopt);

/// Fills embedding rows from a word2vec-style text file ("token v1 .. vE" per
/// line, optional "count dim" header). Returns the number of rows set.
std::size_t load_pretrained_embeddings(Seq2SeqModel& model, const Vocabulary& vocab,
                                       const std::filesystem::path& path);

}  // namespace kgdial
