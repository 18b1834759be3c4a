#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "kgdial/corpus.hpp"
#include "kgdial/step_model.hpp"

namespace kgdial {

class Seq2SeqModel;

struct BeamConfig {
  std::size_t beam_size = 10;
  std::size_t max_length = 30;
  /// Hypotheses ending before this many tokens (EOS excluded) cannot finish.
  std::size_t min_length = 0;
  Real length_alpha = 0.6;
  Real coverage_beta = 0.2;
  TokenId end_token = Vocabulary::kEos;
  /// Ids never emitted.
  std::vector<TokenId> banned;

  void validate() const;
  nlohmann::json to_json() const;
  /// Missing fields keep their defaults; `banned` is not serialized.
  static BeamConfig from_json(const nlohmann::json& j);
};

struct BeamHypothesis {
  std::vector<TokenId> tokens;  // without the end token
  Real log_prob = 0;            // sum of step log-probabilities, end token included
  Real score = 0;               // log_prob / length_penalty + coverage_penalty
  bool forced = false;          // hit max_length without the end token
  std::vector<std::vector<Real>> attention;  // one row per step
};

/// ((5 + length) / 6)^alpha.
Real length_penalty(std::size_t length, Real alpha);

/// beta * sum_i log(min(sum_t a_i^t, 1)), with sums floored at 1e-12.
Real coverage_penalty(const std::vector<std::vector<Real>>& attention, Real beta);
/// Same, from already accumulated per-position sums.
Real coverage_penalty_from_sums(std::span<const Real> sums, Real beta);

/// Beam search from the model's start state. Candidates are pruned on their
/// penalized score at the current length; results are sorted by score
/// (descending, ties on token ids), and at least one is returned.
std::vector<BeamHypothesis> beam_search(const StepModel& model, const BeamConfig& config);

/// Argmax at every step; same tie rule as beam search (lowest id).
BeamHypothesis greedy_decode(const StepModel& model, const BeamConfig& config);

/// Control ids of `vocab` (PAD, BOS, flags), for BeamConfig::banned.
std::vector<TokenId> control_ids(const Vocabulary& vocab);

/// One decoded reply, the rerank interchange row.
struct CandidateResponse {
  std::string sample_id;
  std::string model_id;
  Tokens tokens;
  Real beam_score = 0;
  Real raw_logp = 0;

  nlohmann::json to_json() const;
  static CandidateResponse from_json(const nlohmann::json& j);
  friend bool operator==(const CandidateResponse&, const CandidateResponse&) = default;
};

/// Beam search over `pair` with control ids banned; extended ids are mapped
/// back to their source surface tokens.
std::vector<CandidateResponse> decode_pair(const Seq2SeqModel& model, const LinearizedPair& pair,
                                           const Vocabulary& vocab, const BeamConfig& config,
                                           const std::string& sample_id, const std::string& model_id);

void write_candidates(const std::filesystem::path& path, std::span<const CandidateResponse> rows);
std::vector<CandidateResponse> read_candidates(const std::filesystem::path& path);

struct BeamGrid {
  std::vector<std::size_t> beam_sizes = {1, 5, 10};
  std::vector<Real> alphas = {0.0, 0.6, 1.0};
  std::vector<Real> betas = {0.0, 0.2, 0.4};
};

struct BeamTrial {
  BeamConfig config;
  Real score = 0;
};

/// Evaluates every grid point with `score` (higher is better); the first
/// best point in grid order wins. Returns all trials, best first.
std::vector<BeamTrial> tune_beam(const BeamConfig& base, const BeamGrid& grid,
                                 const std::function<Real(const BeamConfig&)>& score);

}  // namespace kgdial
