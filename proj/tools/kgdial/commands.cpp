#include "commands.hpp"

#include <atomic>
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include <json.hpp>

#include "../service/chat_service.hpp"
#include "../service/http_server.hpp"
#include "kgdial/error.hpp"
#include "kgdial/metrics.hpp"
#include "kgdial/pipeline.hpp"
#include "kgdial/synthetic.hpp"

namespace kgdial::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

void write_json(const fs::path& path, const json& j) {
  ensure_parent(path);
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    json j;
    in >> j;
    return j;
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": invalid JSON", e.byte);
  }
}

EntityMap maybe_entities(const std::string& path) { return path.empty() ? EntityMap{} : read_entities(path); }

std::vector<CandidateResponse> read_all_candidates(const std::vector<std::string>& paths) {
  std::vector<CandidateResponse> all;
  for (const auto& p : paths) {
    auto rows = read_candidates(p);
    all.insert(all.end(), std::make_move_iterator(rows.begin()), std::make_move_iterator(rows.end()));
  }
  return all;
}

void apply_overrides(BeamConfig& beam, const BeamOverrides& o) {
  if (!o.beam_config.empty()) {
    const json j = read_json(o.beam_config);
    if (!j.contains("best")) throw SchemaError("best");
    beam = BeamConfig::from_json(j.at("best"));
  }
  if (o.beam_size) beam.beam_size = *o.beam_size;
  if (o.alpha) beam.length_alpha = *o.alpha;
  if (o.beta) beam.coverage_beta = *o.beta;
  if (o.max_length) beam.max_length = *o.max_length;
  beam.validate();
}

std::vector<CandidateResponse> decode_corpus(const ModelBundle& bundle, std::span<const DialogueSample> samples,
                                             const EntityMap& entities, std::size_t nbest) {
  std::vector<CandidateResponse> out;
  for (const auto& s : samples) {
    auto c = decode_sample(bundle, s, entities, nbest);
    out.insert(out.end(), std::make_move_iterator(c.begin()), std::make_move_iterator(c.end()));
  }
  return out;
}

std::vector<TextRecord> gold_records(std::span<const DialogueSample> samples) {
  std::vector<TextRecord> out;
  for (const auto& s : samples) {
    if (!s.response) throw UsageError("sample \"" + s.id + "\" has no gold response");
    out.push_back({s.id, *s.response});
  }
  return out;
}

// Each model's dev-set total score from its best candidate per sample.
ModelWeights model_scores(std::span<const CandidateResponse> candidates, std::span<const DialogueSample> gold) {
  std::map<std::string, std::map<std::string, Tokens>> best;  // model -> sample -> tokens
  for (const auto& c : candidates) best[c.model_id].try_emplace(c.sample_id, c.tokens);
  const auto refs = gold_records(gold);
  ModelWeights weights;
  for (const auto& [model, replies] : best) {
    std::vector<TextRecord> pred;
    for (const auto& r : refs) {
      auto it = replies.find(r.id);
      pred.push_back({r.id, it == replies.end() ? Tokens{} : it->second});
    }
    weights[model] = corpus_eval(pred, refs).score;
  }
  return weights;
}

void log_epoch(const std::string& id, const EpochRecord& r) {
  std::fprintf(stderr, "[%s] epoch %zu stage %zu lr %.2g train_nll %.4f dev_ppl %.4f%s\n", id.c_str(), r.epoch, r.stage,
               r.lr, r.train_nll, r.dev_perplexity, r.improved ? " *" : "");
}

ChatAgent load_agent(const AgentOptions& o) {
  std::vector<ModelBundle> models;
  std::set<std::string> ids;
  for (const auto& p : o.models) {
    models.push_back(load_bundle(p));
    if (!ids.insert(models.back().id).second) throw UsageError("duplicate model id \"" + models.back().id + "\"");
  }
  std::optional<Ranker> ranker;
  if (!o.ranker.empty()) ranker = Ranker::load(o.ranker);
  return ChatAgent(std::move(models), std::move(ranker), maybe_entities(o.entities), o.nbest);
}

}  // namespace

int run_prepare(const PrepareOptions& o) {
  std::vector<DialogueSample> samples;
  if (!o.synthetic.empty() && !o.input.empty()) throw UsageError("--synthetic and --input are exclusive");
  if (o.synthetic == "dialogue") {
    DialogueCorpusConfig c;
    c.seed = o.seed;
    samples = generate_dialogue_corpus(o.count, c);
    if (!o.entities_out.empty()) {
      ensure_parent(o.entities_out);
      write_entities(o.entities_out, synthetic_entities(c));
    }
  } else if (o.synthetic == "copy") {
    CopyTaskConfig c;
    c.seed = o.seed;
    if (o.split != "train" && o.split != "test") throw UsageError("--split must be train or test");
    samples = generate_copy_corpus(o.count, c, o.split == "train" ? CopySplit::kTrain : CopySplit::kTest);
    if (!o.entities_out.empty()) throw UsageError("--entities-out applies to the dialogue corpus only");
  } else if (!o.synthetic.empty()) {
    throw UsageError("--synthetic must be dialogue or copy");
  } else if (!o.input.empty()) {
    samples = read_corpus(o.input);
  } else {
    throw UsageError("one of --synthetic or --input is required");
  }
  ensure_parent(o.out);
  write_corpus(o.out, samples);
  std::cerr << "wrote " << samples.size() << " samples to " << o.out << '\n';
  return 0;
}

int run_augment(const AugmentOptions& o) {
  const auto corpus = read_corpus(o.input);
  const DatasetRecipe recipe = resolve_recipe(o.recipe);
  const AugmentedDataset ds = build_dataset(corpus, recipe, maybe_entities(o.entities), o.seed);
  ensure_parent(o.out);
  write_corpus(o.out, ds.samples);
  if (!o.inverses.empty()) write_inverses(o.inverses, ds.inverses);
  std::cerr << "recipe " << recipe.name << ": " << corpus.size() << " dialogues -> " << ds.samples.size() << " pairs\n";
  return 0;
}

int run_train(const TrainOptions& o) {
  if (!o.manifest.empty()) {
    const PipelineManifest m = PipelineManifest::load(o.manifest);
    const std::set<std::string> wanted(o.only_jobs.begin(), o.only_jobs.end());
    for (const auto& id : wanted) {
      if (std::none_of(m.jobs.begin(), m.jobs.end(), [&](const TrainJob& j) { return j.id == id; })) {
        throw UsageError("manifest has no job \"" + id + "\"");
      }
    }
    const auto train_corpus = read_corpus(m.train_corpus);
    const auto dev_corpus = read_corpus(m.dev_corpus);
    const EntityMap entities = m.entities.empty() ? EntityMap{} : read_entities(m.entities);
    for (const auto& job : m.jobs) {
      if (!wanted.empty() && !wanted.count(job.id)) continue;
      JobResult r = run_train_job(job, train_corpus, dev_corpus, entities, [&](const EpochRecord& e) {
        if (!o.quiet) log_epoch(job.id, e);
      });
      const fs::path ckpt = m.checkpoint_path(job);
      ensure_parent(ckpt);
      save_bundle(ckpt, r.bundle);
      write_json(fs::path(ckpt).replace_extension(".report.json"), r.bundle.report);
      std::cerr << job.id << ": best dev perplexity " << r.report.best_dev_perplexity << " at epoch " << r.report.best_epoch
                << " -> " << ckpt.string() << '\n';
    }
    return 0;
  }

  if (o.train.empty() || o.dev.empty() || o.out.empty()) throw UsageError("--train, --dev and --out are required without --manifest");
  TrainJob job;
  job.variant = parse_variant(o.variant);
  job.id = o.id.empty() ? std::string(variant_name(job.variant)) + "@" + o.recipe : o.id;
  job.recipe = o.recipe;
  job.hidden_size = o.hidden;
  job.embedding_dim = o.embedding;
  job.copy = !o.no_copy;
  job.vocab_size = o.vocab_size;
  job.min_freq = o.min_freq;
  job.train.batch_size = o.batch;
  job.train.lr_initial = o.lr;
  job.train.lr_finetune = o.lr_finetune;
  job.train.patience = o.patience;
  job.train.max_epochs = o.max_epochs;
  job.train.finetune = !o.no_finetune;
  job.train.seed = o.seed;
  job.train.validate();
  if (!o.pretrained.empty()) job.pretrained_embeddings = o.pretrained;

  const auto train_corpus = read_corpus(o.train);
  const auto dev_corpus = read_corpus(o.dev);
  JobResult r = run_train_job(job, train_corpus, dev_corpus, maybe_entities(o.entities), [&](const EpochRecord& e) {
    if (!o.quiet) log_epoch(job.id, e);
  });
  ensure_parent(o.out);
  save_bundle(o.out, r.bundle);
  if (!o.report.empty()) write_json(o.report, r.bundle.report);
  std::cerr << job.id << ": best dev perplexity " << r.report.best_dev_perplexity << " at epoch " << r.report.best_epoch << '\n';
  return 0;
}

int run_decode(const DecodeOptions& o) {
  if (!o.manifest.empty()) {
    const PipelineManifest m = PipelineManifest::load(o.manifest);
    if (m.test_corpus.empty()) throw UsageError("manifest has no test corpus");
    const auto samples = read_corpus(o.input.empty() ? m.test_corpus : fs::path(o.input));
    const EntityMap entities = m.entities.empty() ? EntityMap{} : read_entities(m.entities);
    for (const auto& job : m.jobs) {
      ModelBundle b = load_bundle(m.checkpoint_path(job));
      apply_overrides(b.beam, o.beam);
      const auto rows = decode_corpus(b, samples, entities, o.nbest);
      ensure_parent(m.candidates_path(job));
      write_candidates(m.candidates_path(job), rows);
      std::cerr << job.id << ": " << rows.size() << " candidates -> " << m.candidates_path(job).string() << '\n';
    }
    return 0;
  }
  if (o.models.empty() || o.input.empty() || o.out.empty()) throw UsageError("--model, --input and --out are required without --manifest");
  const auto samples = read_corpus(o.input);
  const EntityMap entities = maybe_entities(o.entities);
  std::vector<CandidateResponse> rows;
  for (const auto& p : o.models) {
    ModelBundle b = load_bundle(p);
    apply_overrides(b.beam, o.beam);
    auto part = decode_corpus(b, samples, entities, o.nbest);
    rows.insert(rows.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  ensure_parent(o.out);
  write_candidates(o.out, rows);
  std::cerr << rows.size() << " candidates -> " << o.out << '\n';
  return 0;
}

int run_evaluate(const EvaluateOptions& o) {
  const auto pred = read_text_records(o.pred);
  const auto gold = read_text_records(o.gold);
  const EvalReport report = corpus_eval(pred, gold);
  if (!o.out.empty()) write_json(o.out, report.to_json());
  std::cout << report.summary() << '\n';
  return 0;
}

int run_rank_train(const RankTrainOptions& o) {
  const auto candidates = read_all_candidates(o.candidates);
  const auto gold = read_corpus(o.gold);
  const auto sim_corpus = o.similarity_corpus.empty() ? gold : read_corpus(o.similarity_corpus);

  Ranker ranker;
  ranker.options.knowledge_similarity = o.knowledge_similarity;
  ranker.aux = fit_similarity_models(sim_corpus, o.lsa_rank, o.seed);
  ranker.aux.entities = maybe_entities(o.entities);
  if (!o.embeddings.empty() && !o.embedding_model.empty()) throw UsageError("--embeddings and --embedding-model are exclusive");
  if (!o.embeddings.empty()) ranker.aux.embeddings = EmbeddingTable::load_text(o.embeddings);
  if (!o.embedding_model.empty()) {
    const ModelBundle b = load_bundle(o.embedding_model);
    ranker.aux.embeddings = embeddings_from_model(b.model, b.vocab);
  }
  if (!o.weights.empty()) {
    const json j = read_json(o.weights);
    if (!j.is_object()) throw SchemaError("weights");
    for (const auto& [k, v] : j.items()) {
      if (!v.is_number()) throw SchemaError("weights." + k);
      ranker.weights[k] = v.get<Real>();
    }
  } else {
    ranker.weights = model_scores(candidates, gold);
  }

  const auto rows = build_rank_dataset(candidates, gold, ranker.aux, ranker.weights, ranker.options);
  const auto names = feature_names(ranker.options);
  if (!o.dataset_out.empty()) {
    ensure_parent(o.dataset_out);
    write_rank_csv(o.dataset_out, rows, names);
  }
  FeatureMatrix x;
  std::vector<Real> y;
  for (const auto& r : rows) {
    x.push_row(r.features);
    y.push_back(*r.target);
  }
  GbdtConfig gc;
  gc.n_trees = o.trees;
  gc.max_depth = o.depth;
  gc.learning_rate = o.learning_rate;
  gc.min_leaf = o.min_leaf;
  ranker.model = GbdtModel::fit(x, y, gc, names);
  ensure_parent(o.out);
  ranker.save(o.out);

  const auto picked = select_responses(candidates, gold, &ranker);
  std::vector<TextRecord> pred;
  for (const auto& s : picked) pred.push_back({s.sample_id, s.tokens});
  const EvalReport fit = corpus_eval(pred, gold_records(gold));
  std::cerr << rows.size() << " rows, " << names.size() << " features, final training MSE "
            << ranker.model.training_mse().back() << "; selection on the training pools: " << fit.summary() << '\n';
  return 0;
}

int run_rank_select(const RankSelectOptions& o) {
  const auto candidates = read_all_candidates(o.candidates);
  const auto samples = read_corpus(o.input);
  std::optional<Ranker> ranker;
  if (!o.ranker.empty()) ranker = Ranker::load(o.ranker);
  const auto picked = select_responses(candidates, samples, ranker ? &*ranker : nullptr);
  ensure_parent(o.out);
  write_selections(o.out, picked);
  std::cerr << picked.size() << " selections -> " << o.out << '\n';
  return 0;
}

int run_tune_beam(const TuneBeamOptions& o) {
  ModelBundle bundle = load_bundle(o.model);
  auto samples = read_corpus(o.dev);
  if (o.limit > 0 && samples.size() > o.limit) samples.resize(o.limit);
  const auto refs = gold_records(samples);
  const EntityMap entities = maybe_entities(o.entities);
  BeamGrid grid;
  grid.beam_sizes = o.beam_sizes;
  grid.alphas.assign(o.alphas.begin(), o.alphas.end());
  grid.betas.assign(o.betas.begin(), o.betas.end());
  const auto trials = tune_beam(bundle.beam, grid, [&](const BeamConfig& c) {
    bundle.beam = c;
    std::vector<TextRecord> pred;
    for (const auto& s : samples) {
      const auto cands = decode_sample(bundle, s, entities, 1);
      pred.push_back({s.id, cands.empty() ? Tokens{} : cands.front().tokens});
    }
    const Real score = corpus_eval(pred, refs).score;
    std::fprintf(stderr, "beam %zu alpha %.2f beta %.2f: %.2f\n", c.beam_size, c.length_alpha, c.coverage_beta, score);
    return score;
  });
  json rows = json::array();
  for (const auto& t : trials) rows.push_back({{"beam", t.config.to_json()}, {"score", t.score}});
  write_json(o.out, {{"model_id", bundle.id}, {"samples", samples.size()}, {"best", trials.front().config.to_json()},
                     {"best_score", trials.front().score}, {"trials", rows}});
  bundle.beam = trials.front().config;
  if (!o.write_model.empty()) {
    ensure_parent(o.write_model);
    save_bundle(o.write_model, bundle);
  }
  std::cout << "best: beam " << trials.front().config.beam_size << " alpha " << trials.front().config.length_alpha << " beta "
            << trials.front().config.coverage_beta << " score " << trials.front().score << '\n';
  return 0;
}

int run_chat(const ChatOptions& o, std::istream& in, std::ostream& out) {
  const ChatAgent agent = load_agent(o.agent);
  ChatService service(agent);
  std::ifstream session_file(o.session);
  if (!session_file) throw IoError("cannot read session " + o.session);
  const std::string body((std::istreambuf_iterator<char>(session_file)), std::istreambuf_iterator<char>());
  const ServiceResponse created = service.create_session(body);
  if (created.status != 201) throw ValidationError("session: " + created.body.dump());
  const std::string id = created.body.at("session_id");
  out << "(empty line: let the agent speak first; Ctrl-D to quit)\n";
  std::string line;
  while (out << "> " << std::flush, std::getline(in, line)) {
    const ServiceResponse r = service.utterance(id, json{{"text", line}}.dump());
    if (r.status != 200) {
      out << "! " << r.body.value("error", "error") << '\n';
      continue;
    }
    out << "bot: " << r.body.at("reply").get<std::string>() << '\n';
    if (o.show_candidates) {
      const auto& cands = r.body.at("candidates");
      for (std::size_t i = 0; i < cands.size(); ++i) {
        char score[32];
        std::snprintf(score, sizeof(score), "%.4f", cands[i].at("score").get<double>());
        out << (i == r.body.at("chosen").get<std::size_t>() ? "  * " : "    ") << cands[i].at("model_id").get<std::string>()
            << " [" << score << "] " << cands[i].at("text").get<std::string>() << '\n';
      }
    }
  }
  out << '\n';
  return 0;
}

namespace {
std::atomic<HttpChatServer*> g_server{nullptr};
extern "C" void on_signal(int) {
  if (auto* s = g_server.load()) s->stop();
}
}  // namespace

int run_serve(const ServeOptions& o) {
  int port = o.port;
  if (const char* env = std::getenv("KGDIAL_PORT"); env && *env) {
    try {
      port = std::stoi(env);
    } catch (const std::exception&) {
      throw UsageError("KGDIAL_PORT is not a port number");
    }
  }
  if (port < 0 || port > 65535) throw UsageError("port out of range");
  const ChatAgent agent = load_agent(o.agent);
  ChatService service(agent);
  HttpChatServer server(service);
  const int bound = server.bind(o.host, port);
  g_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::cerr << "serving " << agent.models().size() << " model(s)" << (agent.has_ranker() ? " with ranker" : "") << " on http://"
            << o.host << ':' << bound << '\n';
  server.listen();
  g_server = nullptr;
  return 0;
}

}  // namespace kgdial::cli
