#include "kgdial/pipeline.hpp"

#include <fstream>
#include <set>

#include "kgdial/error.hpp"
#include "kgdial/random.hpp"

namespace kgdial {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {
constexpr int kBundleVersion = 1;
constexpr int kManifestVersion = 1;

bool is_named_recipe(const std::string& name) {
  try {
    named_recipe(name);
    return true;
  } catch (const UsageError&) {
    return false;
  }
}
}  // namespace

void write_entities(const fs::path& path, const EntityMap& entities) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write entities " + path.string());
  for (const auto& [surface, category] : entities.entries()) out << category << '\t' << join_tokens(surface) << '\n';
  if (!out) throw IoError("failed writing entities " + path.string());
}

EntityMap read_entities(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read entities " + path.string());
  EntityMap map;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (split_whitespace(line).empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected category<TAB>surface");
    const Tokens surface = split_whitespace(std::string_view(line).substr(tab + 1));
    if (surface.empty()) throw FormatError(path.string() + ":" + std::to_string(line_no) + ": empty surface");
    try {
      map.add(surface, line.substr(0, tab));
    } catch (const Error& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return map;
}

void save_bundle(const fs::path& path, const ModelBundle& b) {
  json meta = {{"format", "kgdial-bundle"},
               {"version", kBundleVersion},
               {"model_id", b.id},
               {"vocab", b.vocab.to_text()},
               {"recipe", recipe_to_text(b.recipe)},
               {"recipe_name", b.recipe.name},
               {"beam", b.beam.to_json()},
               {"max_source_length", b.max_source_length},
               {"report", b.report}};
  save_model(path, b.model, meta);
}

ModelBundle load_bundle(const fs::path& path) {
  LoadedModel loaded = load_model(path);
  const json& meta = loaded.meta;
  if (meta.value("format", "") != "kgdial-bundle") throw FormatError(path.string() + ": checkpoint carries no vocabulary");
  if (meta.value("version", 0) != kBundleVersion) {
    throw FormatError(path.string() + ": unsupported bundle version " + meta.value("version", json()).dump());
  }
  try {
    Vocabulary vocab = Vocabulary::from_text(meta.at("vocab").get<std::string>());
    if (vocab.size() != loaded.model.config().vocab_size) throw FormatError(path.string() + ": vocabulary size differs from the model");
    ModelBundle b{meta.at("model_id").get<std::string>(),
                  std::move(loaded.model),
                  std::move(vocab),
                  parse_recipe(meta.at("recipe").get<std::string>(), meta.value("recipe_name", "")),
                  BeamConfig::from_json(meta.at("beam")),
                  meta.value("max_source_length", kDefaultMaxSourceLength),
                  meta.value("report", json::object())};
    return b;
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::vector<CandidateResponse> decode_sample(const ModelBundle& bundle, const DialogueSample& sample,
                                             const EntityMap& entities, std::size_t nbest) {
  if (nbest == 0) throw UsageError("decode: nbest must be at least 1");
  auto [prepared, inverse] = prepare_for_inference(sample, bundle.recipe.entity_generalization, entities);
  prepared.response.reset();
  const LinearizedPair pair = encode_pair(prepared, bundle.vocab, bundle.max_source_length);
  std::vector<CandidateResponse> out = decode_pair(bundle.model, pair, bundle.vocab, bundle.beam, sample.id, bundle.id);
  if (out.size() > nbest) out.resize(nbest);
  for (auto& c : out) c.tokens = restore_output(c.tokens, inverse);
  return out;
}

BeamConfig TrainJob::default_beam() {
  BeamConfig b;
  b.min_length = 1;
  return b;
}

json TrainJob::to_json() const {
  json j = {{"id", id},
            {"variant", std::string(variant_name(variant))},
            {"recipe", recipe},
            {"hidden_size", hidden_size},
            {"embedding_dim", embedding_dim},
            {"copy", copy},
            {"vocab_size", vocab_size},
            {"min_freq", min_freq},
            {"max_source_length", max_source_length},
            {"train", train.to_json()},
            {"beam", beam.to_json()}};
  if (pretrained_embeddings) j["pretrained_embeddings"] = pretrained_embeddings->string();
  return j;
}

TrainJob TrainJob::from_json(const json& j) { return from_json(j, TrainJob{}); }

TrainJob TrainJob::from_json(const json& j, const TrainJob& defaults) {
  if (!j.is_object()) throw SchemaError("job");
  TrainJob t = defaults;
  try {
    t.id = j.value("id", t.id);
    if (j.contains("variant")) t.variant = parse_variant(j.at("variant").get<std::string>());
    t.recipe = j.value("recipe", t.recipe);
    t.hidden_size = j.value("hidden_size", t.hidden_size);
    t.embedding_dim = j.value("embedding_dim", t.embedding_dim);
    t.copy = j.value("copy", t.copy);
    t.vocab_size = j.value("vocab_size", t.vocab_size);
    t.min_freq = j.value("min_freq", t.min_freq);
    t.max_source_length = j.value("max_source_length", t.max_source_length);
    if (j.contains("pretrained_embeddings")) t.pretrained_embeddings = j.at("pretrained_embeddings").get<std::string>();
    if (j.contains("train")) {
      json merged = t.train.to_json();
      merged.update(j.at("train"));
      t.train = TrainConfig::from_json(merged);
    }
    if (j.contains("beam")) {
      json merged = t.beam.to_json();
      merged.update(j.at("beam"));
      t.beam = BeamConfig::from_json(merged);
    }
  } catch (const json::exception&) {
    throw SchemaError("job");
  }
  if (t.id.empty()) throw SchemaError("job.id");
  return t;
}

JobResult run_train_job(const TrainJob& job, std::span<const DialogueSample> train_corpus,
                        std::span<const DialogueSample> dev_corpus, const EntityMap& entities,
                        const EpochCallback& on_epoch) {
  const DatasetRecipe recipe = resolve_recipe(job.recipe);
  const AugmentedDataset train_set = build_dataset(train_corpus, recipe, entities, job.train.seed);
  const AugmentedDataset dev_set = build_dataset(dev_corpus, recipe, entities, splitmix64(job.train.seed));
  if (train_set.samples.empty()) throw UsageError("train: the recipe produced no training pairs");
  if (dev_set.samples.empty()) throw UsageError("train: the recipe produced no dev pairs");

  Vocabulary vocab = build_vocabulary(train_set.samples, job.vocab_size, job.min_freq);
  ModelConfig config = ModelConfig::for_variant(job.variant, vocab.size(), job.hidden_size);
  if (job.embedding_dim > 0 && !config.is_transformer()) config.embedding_dim = job.embedding_dim;
  config.copy_enabled = job.copy;
  config.validate();
  Seq2SeqModel initial(config, job.train.seed);
  if (job.pretrained_embeddings) load_pretrained_embeddings(initial, vocab, *job.pretrained_embeddings);

  const auto train_pairs = build_pairs(train_set, vocab, job.max_source_length);
  const auto dev_pairs = build_pairs(dev_set, vocab, job.max_source_length);
  TrainResult trained = train(initial, train_pairs, dev_pairs, job.train, on_epoch);
  json report = trained.report.to_json();
  report["job"] = job.to_json();
  return {ModelBundle{job.id, std::move(trained.model), std::move(vocab), recipe, job.beam, job.max_source_length, report},
          std::move(trained.report)};
}

std::uint64_t job_seed(std::uint64_t global_seed, std::size_t index) {
  return splitmix64(global_seed ^ splitmix64(index + 1));
}

void PipelineManifest::validate() const {
  if (jobs.empty()) throw ValidationError("manifest: no jobs");
  std::set<std::string> ids;
  for (const auto& job : jobs) {
    if (!ids.insert(job.id).second) throw ValidationError("manifest: duplicate job id \"" + job.id + "\"");
    try {
      resolve_recipe(job.recipe);
    } catch (const Error& e) {
      throw ValidationError("manifest: job \"" + job.id + "\": recipe \"" + job.recipe + "\" not found");
    }
  }
}

fs::path PipelineManifest::checkpoint_path(const TrainJob& job) const { return checkpoint_dir / (job.id + ".ckpt"); }
fs::path PipelineManifest::candidates_path(const TrainJob& job) const { return candidate_dir / (job.id + ".jsonl"); }

json PipelineManifest::to_json() const {
  json js = json::array();
  for (const auto& j : jobs) js.push_back(j.to_json());
  return {{"format", "kgdial-manifest"},
          {"version", kManifestVersion},
          {"seed", seed},
          {"train", train_corpus.string()},
          {"dev", dev_corpus.string()},
          {"test", test_corpus.string()},
          {"entities", entities.string()},
          {"checkpoints", checkpoint_dir.string()},
          {"candidates", candidate_dir.string()},
          {"ranker", ranker.string()},
          {"jobs", js}};
}

PipelineManifest PipelineManifest::from_json(const json& j, const fs::path& base_dir) {
  if (!j.is_object() || j.value("format", "") != "kgdial-manifest") throw FormatError("manifest: not a pipeline manifest");
  if (j.value("version", 0) != kManifestVersion) throw FormatError("manifest: unsupported version " + j.value("version", json()).dump());
  auto resolve = [&](const std::string& p) -> fs::path {
    if (p.empty()) return {};
    const fs::path path(p);
    return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
  };
  PipelineManifest m;
  try {
    m.seed = j.value("seed", std::uint64_t{0});
    m.train_corpus = resolve(j.at("train").get<std::string>());
    m.dev_corpus = resolve(j.at("dev").get<std::string>());
    m.test_corpus = resolve(j.value("test", std::string()));
    m.entities = resolve(j.value("entities", std::string()));
    m.checkpoint_dir = resolve(j.value("checkpoints", std::string("checkpoints")));
    m.candidate_dir = resolve(j.value("candidates", std::string("candidates")));
    m.ranker = resolve(j.value("ranker", std::string("ranker.json")));
    TrainJob defaults;
    if (j.contains("defaults")) {
      // defaults carry no id of their own; every job must still name itself
      json d = j.at("defaults");
      if (d.is_object()) d["id"] = "defaults";
      defaults = TrainJob::from_json(d, defaults);
      defaults.id.clear();
    }
    std::size_t index = 0;
    for (const json& jj : j.at("jobs")) {
      TrainJob job = TrainJob::from_json(jj, defaults);
      const bool seeded = jj.contains("train") && jj.at("train").contains("seed");
      if (!seeded) job.train.seed = job_seed(m.seed, index);
      if (job.pretrained_embeddings) job.pretrained_embeddings = resolve(job.pretrained_embeddings->string());
      if (!is_named_recipe(job.recipe)) job.recipe = resolve(job.recipe).string();
      m.jobs.push_back(std::move(job));
      ++index;
    }
  } catch (const json::exception& e) {
    throw SchemaError(std::string("manifest: ") + e.what());
  }
  m.validate();
  return m;
}

PipelineManifest PipelineManifest::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read manifest " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ParseError("manifest " + path.string() + ": invalid JSON", e.byte);
  }
  return from_json(j, path.parent_path());
}

json Selection::to_json() const {
  return {{"id", sample_id}, {"response", join_tokens(tokens)}, {"model_id", model_id}, {"score", score}};
}

std::vector<Selection> select_responses(std::span<const CandidateResponse> candidates,
                                        std::span<const DialogueSample> samples, const Ranker* ranker) {
  std::map<std::string, std::vector<CandidateResponse>> pools;
  for (const auto& [id, pool] : group_by_sample(candidates)) pools.emplace(id, pool);
  std::set<std::string> known;
  for (const auto& s : samples) known.insert(s.id);
  for (const auto& [id, pool] : pools)
    if (!known.count(id)) throw AlignmentError(id);

  std::vector<Selection> out;
  for (const auto& s : samples) {
    auto it = pools.find(s.id);
    if (it == pools.end()) throw AlignmentError(s.id);
    const auto& pool = it->second;
    std::vector<Real> scores;
    for (const auto& c : pool) scores.push_back(ranker ? ranker->score(c, s) : c.beam_score);
    const std::size_t k = select_by_score(pool, scores);
    out.push_back({s.id, pool[k].model_id, pool[k].tokens, scores[k]});
  }
  return out;
}

void write_selections(const fs::path& path, std::span<const Selection> rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write selections " + path.string());
  for (const auto& r : rows) out << r.to_json().dump() << '\n';
  if (!out) throw IoError("failed writing selections " + path.string());
}

ChatAgent::ChatAgent(std::vector<ModelBundle> models, std::optional<Ranker> ranker, EntityMap entities, std::size_t nbest)
    : models_(std::move(models)), ranker_(std::move(ranker)), entities_(std::move(entities)), nbest_(nbest) {
  if (models_.empty()) throw UsageError("chat: at least one model is required");
  if (nbest_ == 0) throw UsageError("chat: nbest must be at least 1");
}

std::vector<CandidateResponse> ChatAgent::candidates(const DialogueSample& context) const {
  std::vector<CandidateResponse> pool;
  for (const auto& m : models_) {
    auto c = decode_sample(m, context, entities_, nbest_);
    pool.insert(pool.end(), std::make_move_iterator(c.begin()), std::make_move_iterator(c.end()));
  }
  return pool;
}

AgentReply ChatAgent::respond(const DialogueSample& context) const {
  AgentReply r;
  r.candidates = candidates(context);
  for (const auto& c : r.candidates) r.scores.push_back(ranker_ ? ranker_->score(c, context) : c.beam_score);
  r.chosen = select_by_score(r.candidates, r.scores);
  r.reply = r.candidates[r.chosen];
  return r;
}

}  // namespace kgdial
