#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "kgdial/augment.hpp"
#include "kgdial/corpus.hpp"
#include "kgdial/decoder.hpp"
#include "kgdial/gbdt.hpp"

namespace kgdial {

// ---------------------------------------------------------------------------
// Similarity models fitted on training responses

/// Smooth-idf TF-IDF: idf(t) = ln((1 + N) / (1 + df(t))) + 1, raw term
/// counts, L2-normalised vectors. Unknown terms are dropped.
class TfidfModel {
 public:
  using SparseVector = std::vector<std::pair<std::size_t, Real>>;  // sorted by index

  static TfidfModel fit(std::span<const Tokens> documents);

  std::size_t terms() const noexcept { return idf_.size(); }
  std::size_t documents() const noexcept { return documents_; }
  SparseVector vector(std::span<const std::string> tokens) const;
  /// Cosine of the two TF-IDF vectors; 0 if either is empty.
  Real similarity(std::span<const std::string> a, std::span<const std::string> b) const;
  std::optional<std::size_t> term(const std::string& t) const;
  Real idf(std::size_t term) const { return idf_.at(term); }

  nlohmann::json to_json() const;
  static TfidfModel from_json(const nlohmann::json& j);

 private:
  std::vector<std::string> vocab_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<Real> idf_;
  std::size_t documents_ = 0;
};

Real sparse_cosine(const TfidfModel::SparseVector& a, const TfidfModel::SparseVector& b);

/// Truncated SVD of the document-term TF-IDF matrix (randomised range finder
/// with power iterations, fixed seed). Queries fold in as q . V_k.
class LsaModel {
 public:
  static LsaModel fit(const TfidfModel& tfidf, std::span<const Tokens> documents, std::size_t rank = 64,
                      std::uint64_t seed = 0);

  std::size_t rank() const noexcept { return rank_; }
  const std::vector<Real>& singular_values() const noexcept { return sigma_; }
  std::vector<Real> project(const TfidfModel::SparseVector& v) const;
  Real similarity(const TfidfModel& tfidf, std::span<const std::string> a, std::span<const std::string> b) const;

  nlohmann::json to_json() const;
  static LsaModel from_json(const nlohmann::json& j);

 private:
  std::size_t rank_ = 0;
  std::size_t terms_ = 0;
  std::vector<Real> basis_;  // terms x rank, row-major
  std::vector<Real> sigma_;
};

/// Word vectors keyed by surface token.
class EmbeddingTable {
 public:
  void add(const std::string& token, std::vector<Real> vec);
  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return table_.size(); }
  /// Mean of the known tokens' vectors; empty if none is known.
  std::vector<Real> mean(std::span<const std::string> tokens) const;
  /// Cosine of mean vectors; 0 if either side has no known token.
  Real similarity(std::span<const std::string> a, std::span<const std::string> b) const;

  /// word2vec text format, optional "count dim" header.
  static EmbeddingTable load_text(const std::filesystem::path& path);
  nlohmann::json to_json() const;
  static EmbeddingTable from_json(const nlohmann::json& j);

 private:
  std::size_t dim_ = 0;
  std::map<std::string, std::vector<Real>> table_;
};

class Seq2SeqModel;
/// The embedding rows of a trained model, named through `vocab`.
EmbeddingTable embeddings_from_model(const Seq2SeqModel& model, const Vocabulary& vocab);

struct SimilarityModels {
  TfidfModel tfidf;
  LsaModel lsa;
  EmbeddingTable embeddings;
  /// Corpus-wide entity inventory, merged with each sample's own entities.
  EntityMap entities;

  nlohmann::json to_json() const;
  static SimilarityModels from_json(const nlohmann::json& j);
};

/// TF-IDF and LSA over the training responses; embeddings and entities are
/// left for the caller.
SimilarityModels fit_similarity_models(std::span<const DialogueSample> training, std::size_t lsa_rank = 64,
                                       std::uint64_t seed = 0);

// ---------------------------------------------------------------------------
// Features

struct FeatureOptions {
  /// Adds TF-IDF and BLEU1 similarity between the response and the sample's
  /// knowledge text.
  bool knowledge_similarity = false;

  nlohmann::json to_json() const;
};

/// Slot names in column order.
std::vector<std::string> feature_names(const FeatureOptions& options = {});

/// 1 / (1 + sum over n in {2, 3} of (count - 1) for every repeated n-gram).
Real fluency(std::span<const std::string> tokens);

struct EntityCounts {
  std::size_t in_knowledge = 0;  // entity mentions whose surface appears in the knowledge
  std::size_t possible = 0;      // distinct entity pairs sharing a knowledge triple
  std::size_t impossible = 0;    // distinct entity pairs sharing none
};

EntityCounts entity_counts(std::span<const std::string> response, const DialogueSample& sample,
                           const EntityMap& entities);

using ModelWeights = std::map<std::string, Real>;

/// Most recent history utterance, empty without history.
Tokens closest_history(const DialogueSample& sample);

std::vector<Real> extract_features(const CandidateResponse& candidate, const DialogueSample& sample,
                                   const SimilarityModels& aux, const ModelWeights& weights,
                                   const FeatureOptions& options = {});

// ---------------------------------------------------------------------------
// Rank datasets and selection

struct RankSample {
  std::string sample_id;
  std::string model_id;
  std::vector<Real> features;
  std::optional<Real> target;  // F1 + BLEU1 + BLEU2 as fractions, [0, 3]
};

/// One row per candidate, in candidate order. Throws AlignmentError for a
/// candidate whose sample id is unknown, UsageError if a sample lacks a gold
/// response.
std::vector<RankSample> build_rank_dataset(std::span<const CandidateResponse> candidates,
                                           std::span<const DialogueSample> samples, const SimilarityModels& aux,
                                           const ModelWeights& weights, const FeatureOptions& options = {});

void write_rank_csv(const std::filesystem::path& path, std::span<const RankSample> rows,
                    const std::vector<std::string>& names);
std::vector<RankSample> read_rank_csv(const std::filesystem::path& path, std::vector<std::string>* names = nullptr);

/// Index of the highest score; ties go to the higher beam score, then the
/// lower model id, then the earlier position.
std::size_t select_by_score(std::span<const CandidateResponse> pool, std::span<const Real> scores);

/// A trained ranker with everything feature extraction needs.
struct Ranker {
  GbdtModel model;
  SimilarityModels aux;
  ModelWeights weights;
  FeatureOptions options;

  Real score(const CandidateResponse& c, const DialogueSample& sample) const;
  /// Throws UsageError on an empty pool.
  std::size_t select(std::span<const CandidateResponse> pool, const DialogueSample& sample) const;

  void save(const std::filesystem::path& path) const;
  static Ranker load(const std::filesystem::path& path);
};

/// Groups candidates by sample id, keeping first-appearance order.
std::vector<std::pair<std::string, std::vector<CandidateResponse>>> group_by_sample(
    std::span<const CandidateResponse> candidates);

}  // namespace kgdial
