#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace kgdial::cli {

struct PrepareOptions {
  std::string synthetic;  // "dialogue" or "copy"
  std::string input;
  std::string out;
  std::string entities_out;
  std::string split = "train";
  std::size_t count = 200;
  std::uint64_t seed = 0;
};

struct AugmentOptions {
  std::string input;
  std::string recipe = "D-1";
  std::string entities;
  std::string out;
  std::string inverses;
  std::uint64_t seed = 0;
};

struct TrainOptions {
  std::string manifest;
  std::vector<std::string> only_jobs;
  std::string train;
  std::string dev;
  std::string entities;
  std::string out;
  std::string report;
  std::string id;
  std::string variant = "LSTM-L11";
  std::string recipe = "D-1";
  std::size_t hidden = 256;
  std::size_t embedding = 0;
  bool no_copy = false;
  std::size_t vocab_size = 30000;
  std::size_t min_freq = 1;
  std::size_t batch = 16;
  double lr = 1e-3;
  double lr_finetune = 1e-4;
  std::size_t patience = 3;
  std::size_t max_epochs = 30;
  bool no_finetune = false;
  std::uint64_t seed = 0;
  std::string pretrained;
  bool quiet = false;
};

struct BeamOverrides {
  std::optional<std::size_t> beam_size;
  std::optional<double> alpha;
  std::optional<double> beta;
  std::optional<std::size_t> max_length;
  std::string beam_config;  // tune-beam output; its best setting
};

struct DecodeOptions {
  std::string manifest;
  std::vector<std::string> models;
  std::string input;
  std::string entities;
  std::string out;
  std::size_t nbest = 1;
  BeamOverrides beam;
};

struct EvaluateOptions {
  std::string pred;
  std::string gold;
  std::string out;
};

struct RankTrainOptions {
  std::vector<std::string> candidates;
  std::string gold;
  std::string similarity_corpus;
  std::string entities;
  std::string embeddings;
  std::string embedding_model;
  std::string weights;
  std::string dataset_out;
  std::string out;
  std::size_t trees = 1900;
  std::size_t depth = 6;
  double learning_rate = 0.05;
  std::size_t min_leaf = 20;
  std::size_t lsa_rank = 64;
  bool knowledge_similarity = false;
  std::uint64_t seed = 0;
};

struct RankSelectOptions {
  std::vector<std::string> candidates;
  std::string input;
  std::string ranker;
  std::string out;
};

struct TuneBeamOptions {
  std::string model;
  std::string dev;
  std::string entities;
  std::string out;
  std::string write_model;
  std::vector<std::size_t> beam_sizes = {1, 5, 10};
  std::vector<double> alphas = {0.0, 0.6, 1.0};
  std::vector<double> betas = {0.0, 0.2, 0.4};
  std::size_t limit = 0;
};

struct AgentOptions {
  std::vector<std::string> models;
  std::string ranker;
  std::string entities;
  std::size_t nbest = 1;
};

struct ChatOptions {
  AgentOptions agent;
  std::string session;
  bool show_candidates = false;
};

struct ServeOptions {
  AgentOptions agent;
  std::string host = "127.0.0.1";
  int port = 8080;
};

int run_prepare(const PrepareOptions& o);
int run_augment(const AugmentOptions& o);
int run_train(const TrainOptions& o);
int run_decode(const DecodeOptions& o);
int run_evaluate(const EvaluateOptions& o);
int run_rank_train(const RankTrainOptions& o);
int run_rank_select(const RankSelectOptions& o);
int run_tune_beam(const TuneBeamOptions& o);
int run_chat(const ChatOptions& o, std::istream& in, std::ostream& out);
int run_serve(const ServeOptions& o);

}  // namespace kgdial::cli
