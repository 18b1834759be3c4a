#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "kgdial/augment.hpp"
#include "kgdial/corpus.hpp"
#include "kgdial/decoder.hpp"
#include "kgdial/rerank.hpp"
#include "kgdial/seq2seq.hpp"
#include "kgdial/trainer.hpp"

namespace kgdial {

// Entity inventories on disk: one "category<TAB>surface" line per entry.
void write_entities(const std::filesystem::path& path, const EntityMap& entities);
EntityMap read_entities(const std::filesystem::path& path);

/// A trained model plus what decoding needs, stored as one checkpoint.
struct ModelBundle {
  std::string id;
  Seq2SeqModel model;
  Vocabulary vocab;
  DatasetRecipe recipe;
  BeamConfig beam;
  std::size_t max_source_length = kDefaultMaxSourceLength;
  nlohmann::json report = nlohmann::json::object();  // training report, informational
};

void save_bundle(const std::filesystem::path& path, const ModelBundle& bundle);
ModelBundle load_bundle(const std::filesystem::path& path);

/// Up to `nbest` candidates for one context. Entity placeholders are restored
/// when the bundle's recipe generalizes entities.
std::vector<CandidateResponse> decode_sample(const ModelBundle& bundle, const DialogueSample& sample,
                                             const EntityMap& entities, std::size_t nbest = 1);

struct TrainJob {
  std::string id;
  Variant variant = Variant::kLstmL11;
  std::string recipe = "D-1";  // named recipe or recipe file
  std::size_t hidden_size = 256;
  std::size_t embedding_dim = 0;  // 0: the variant default
  bool copy = true;
  std::size_t vocab_size = 30000;
  std::size_t min_freq = 1;
  std::size_t max_source_length = kDefaultMaxSourceLength;
  std::optional<std::filesystem::path> pretrained_embeddings;
  TrainConfig train;
  BeamConfig beam = default_beam();

  static BeamConfig default_beam();  // as BeamConfig, but replies are never empty
  nlohmann::json to_json() const;
  static TrainJob from_json(const nlohmann::json& j);
  /// Fields absent from `j` are taken from `defaults`.
  static TrainJob from_json(const nlohmann::json& j, const TrainJob& defaults);
};

struct JobResult {
  ModelBundle bundle;
  TrainReport report;
};

/// Augments both splits with the job's recipe, builds the vocabulary from the
/// augmented training samples and trains.
JobResult run_train_job(const TrainJob& job, std::span<const DialogueSample> train_corpus,
                        std::span<const DialogueSample> dev_corpus, const EntityMap& entities,
                        const EpochCallback& on_epoch = {});

/// The (variant x recipe) grid and the files each stage exchanges. Relative
/// paths resolve against the manifest's directory.
struct PipelineManifest {
  std::uint64_t seed = 0;
  std::filesystem::path train_corpus;
  std::filesystem::path dev_corpus;
  std::filesystem::path test_corpus;
  std::filesystem::path entities;  // optional
  std::filesystem::path checkpoint_dir = "checkpoints";
  std::filesystem::path candidate_dir = "candidates";
  std::filesystem::path ranker = "ranker.json";
  std::vector<TrainJob> jobs;

  /// Throws ValidationError for duplicate job ids or unknown recipes.
  void validate() const;
  std::filesystem::path checkpoint_path(const TrainJob& job) const;
  std::filesystem::path candidates_path(const TrainJob& job) const;

  nlohmann::json to_json() const;
  static PipelineManifest from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
  static PipelineManifest load(const std::filesystem::path& path);
};

/// Seed of the index-th job when the manifest does not give one.
std::uint64_t job_seed(std::uint64_t global_seed, std::size_t index);

struct Selection {
  std::string sample_id;
  std::string model_id;
  Tokens tokens;
  Real score = 0;

  nlohmann::json to_json() const;  // {"id", "response", "model_id", "score"}
};

/// One selection per sample, in sample order. Pools are the candidates sharing
/// a sample id, in file order. Without a ranker the beam score decides.
std::vector<Selection> select_responses(std::span<const CandidateResponse> candidates,
                                        std::span<const DialogueSample> samples, const Ranker* ranker);
void write_selections(const std::filesystem::path& path, std::span<const Selection> rows);

struct AgentReply {
  CandidateResponse reply;
  std::vector<CandidateResponse> candidates;
  std::vector<Real> scores;
  std::size_t chosen = 0;
};

/// Decodes a context with every model and picks one reply. Read-only after
/// construction, so one agent can serve concurrent sessions.
class ChatAgent {
 public:
  ChatAgent(std::vector<ModelBundle> models, std::optional<Ranker> ranker, EntityMap entities,
            std::size_t nbest = 1);

  std::vector<CandidateResponse> candidates(const DialogueSample& context) const;
  AgentReply respond(const DialogueSample& context) const;
  const std::vector<ModelBundle>& models() const noexcept { return models_; }
  bool has_ranker() const noexcept { return ranker_.has_value(); }

 private:
  std::vector<ModelBundle> models_;
  std::optional<Ranker> ranker_;
  EntityMap entities_;
  std::size_t nbest_;
};

}  // namespace kgdial
