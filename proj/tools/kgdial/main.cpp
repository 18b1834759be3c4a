#include <CLI11.hpp>

#include <iostream>
#include <string>

#include "commands.hpp"
#include "kgdial/error.hpp"

namespace {

using namespace kgdial;
using namespace kgdial::cli;

const char* kind_name(ErrorKind k) {
  switch (k) {
    case ErrorKind::kUsage: return "usage";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kFormat: return "format";
    case ErrorKind::kValidation: return "validation";
    case ErrorKind::kNumeric: return "numeric";
    case ErrorKind::kAlignment: return "alignment";
  }
  return "internal";
}

std::string quoted(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    if (c == '\n') {
      out += "\\n";
      continue;
    }
    out += c;
  }
  return out + '"';
}

// Exactly one line on stderr, e.g.  error: code=io exit=3 message="cannot read x.jsonl"
int report(const char* code, int exit_code, const std::string& message) {
  std::cerr << "error: code=" << code << " exit=" << exit_code << " message=" << quoted(message) << std::endl;
  return exit_code;
}

void add_beam_flags(CLI::App* cmd, BeamOverrides& b) {
  cmd->add_option("--beam-size", b.beam_size, "Override the beam width");
  cmd->add_option("--alpha", b.alpha, "Override the length normalization exponent");
  cmd->add_option("--beta", b.beta, "Override the coverage penalty weight");
  cmd->add_option("--max-length", b.max_length, "Override the maximum reply length");
  cmd->add_option("--beam-config", b.beam_config, "Use the best setting from a tune-beam report");
}

void add_agent_flags(CLI::App* cmd, AgentOptions& a) {
  cmd->add_option("--model", a.models, "Model checkpoint (repeatable)")->required();
  cmd->add_option("--ranker", a.ranker, "Ranker dump; without it the beam score picks the reply");
  cmd->add_option("--entities", a.entities, "Entity inventory (category<TAB>surface lines)");
  cmd->add_option("--nbest", a.nbest, "Candidates per model")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Knowledge-grounded dialogue generation and reranking"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "kgdial 0.1.0");

  PrepareOptions prep;
  auto* c_prep = app.add_subcommand("prepare-data", "Generate a synthetic corpus or normalize a JSONL corpus");
  c_prep->add_option("--synthetic", prep.synthetic, "dialogue | copy");
  c_prep->add_option("--input", prep.input, "Corpus to validate and rewrite");
  c_prep->add_option("--out", prep.out, "Output corpus (JSONL)")->required();
  c_prep->add_option("--entities-out", prep.entities_out, "Write the synthetic entity inventory");
  c_prep->add_option("--split", prep.split, "Copy corpus split: train | test")->capture_default_str();
  c_prep->add_option("--count", prep.count, "Samples to generate")->capture_default_str();
  c_prep->add_option("--seed", prep.seed, "Generator seed")->capture_default_str();

  AugmentOptions aug;
  auto* c_aug = app.add_subcommand("augment", "Apply a dataset recipe");
  c_aug->add_option("--input", aug.input, "Dialogue corpus (JSONL)")->required();
  c_aug->add_option("--recipe", aug.recipe, "D-1 .. D-6 or a recipe file")->capture_default_str();
  c_aug->add_option("--entities", aug.entities, "Entity inventory");
  c_aug->add_option("--out", aug.out, "Augmented samples (JSONL)")->required();
  c_aug->add_option("--inverses", aug.inverses, "Entity restoration records (JSONL)");
  c_aug->add_option("--seed", aug.seed, "Seed for section swapping")->capture_default_str();

  TrainOptions tr;
  auto* c_train = app.add_subcommand("train", "Train one model, or every job of a manifest");
  c_train->add_option("--manifest", tr.manifest, "Pipeline manifest (JSON)");
  c_train->add_option("--job", tr.only_jobs, "Restrict to these manifest jobs (repeatable)");
  c_train->add_option("--train", tr.train, "Training corpus");
  c_train->add_option("--dev", tr.dev, "Dev corpus");
  c_train->add_option("--entities", tr.entities, "Entity inventory");
  c_train->add_option("--out", tr.out, "Checkpoint to write");
  c_train->add_option("--report", tr.report, "Training report (JSON)");
  c_train->add_option("--id", tr.id, "Model id (default: variant@recipe)");
  c_train->add_option("--variant", tr.variant, "LSTM-L11 | LSTM-L11-Embed | LSTM-L22 | LSTM-L31 | Transformer")->capture_default_str();
  c_train->add_option("--recipe", tr.recipe, "D-1 .. D-6 or a recipe file")->capture_default_str();
  c_train->add_option("--hidden", tr.hidden, "Hidden size")->capture_default_str();
  c_train->add_option("--embedding", tr.embedding, "Embedding size, 0 for the variant default")->capture_default_str();
  c_train->add_flag("--no-copy", tr.no_copy, "Disable the copy mechanism");
  c_train->add_option("--vocab-size", tr.vocab_size, "Vocabulary cap")->capture_default_str();
  c_train->add_option("--min-freq", tr.min_freq, "Minimum token frequency")->capture_default_str();
  c_train->add_option("--batch", tr.batch, "Batch size")->capture_default_str();
  c_train->add_option("--lr", tr.lr, "Initial learning rate")->capture_default_str();
  c_train->add_option("--lr-finetune", tr.lr_finetune, "Fine-tuning learning rate")->capture_default_str();
  c_train->add_option("--patience", tr.patience, "Early-stopping patience (epochs)")->capture_default_str();
  c_train->add_option("--max-epochs", tr.max_epochs, "Epoch cap per stage")->capture_default_str();
  c_train->add_flag("--no-finetune", tr.no_finetune, "Skip the fine-tuning stage");
  c_train->add_option("--seed", tr.seed, "Seed")->capture_default_str();
  c_train->add_option("--pretrained", tr.pretrained, "Pretrained word vectors (word2vec text)");
  c_train->add_flag("--quiet", tr.quiet, "No per-epoch log");

  DecodeOptions dec;
  auto* c_dec = app.add_subcommand("decode", "Beam-search candidates for every sample");
  c_dec->add_option("--manifest", dec.manifest, "Decode the test corpus with every manifest job");
  c_dec->add_option("--model", dec.models, "Model checkpoint (repeatable)");
  c_dec->add_option("--input", dec.input, "Contexts (JSONL corpus)");
  c_dec->add_option("--entities", dec.entities, "Entity inventory");
  c_dec->add_option("--out", dec.out, "Candidates (JSONL)");
  c_dec->add_option("--nbest", dec.nbest, "Candidates per model and sample")->capture_default_str();
  add_beam_flags(c_dec, dec.beam);

  EvaluateOptions ev;
  auto* c_ev = app.add_subcommand("evaluate", "Character F1, BLEU1, BLEU2 and their sum");
  c_ev->add_option("--pred", ev.pred, "Predictions (JSONL with id and response or tokens)")->required();
  c_ev->add_option("--gold", ev.gold, "References (same format, or a corpus)")->required();
  c_ev->add_option("--out", ev.out, "Report (JSON)");

  RankTrainOptions rt;
  auto* c_rt = app.add_subcommand("rank-train", "Fit the GBDT reranker on candidate pools");
  c_rt->add_option("--candidates", rt.candidates, "Candidate files (repeatable)")->required();
  c_rt->add_option("--gold", rt.gold, "Corpus with gold responses for the pooled samples")->required();
  c_rt->add_option("--similarity-corpus", rt.similarity_corpus, "Responses for TF-IDF/LSA fitting (default: --gold)");
  c_rt->add_option("--entities", rt.entities, "Entity inventory");
  c_rt->add_option("--embeddings", rt.embeddings, "Word vectors (word2vec text)");
  c_rt->add_option("--embedding-model", rt.embedding_model, "Take word vectors from a checkpoint");
  c_rt->add_option("--weights", rt.weights, "JSON object model_id -> weight (default: each model's score on --gold)");
  c_rt->add_option("--dataset-out", rt.dataset_out, "Write the rank dataset (CSV)");
  c_rt->add_option("--out", rt.out, "Ranker dump (JSON)")->required();
  c_rt->add_option("--trees", rt.trees, "Boosting rounds")->capture_default_str();
  c_rt->add_option("--depth", rt.depth, "Tree depth")->capture_default_str();
  c_rt->add_option("--learning-rate", rt.learning_rate, "Shrinkage")->capture_default_str();
  c_rt->add_option("--min-leaf", rt.min_leaf, "Minimum rows per leaf")->capture_default_str();
  c_rt->add_option("--lsa-rank", rt.lsa_rank, "LSA dimensions")->capture_default_str();
  c_rt->add_flag("--knowledge-sim", rt.knowledge_similarity, "Add response/knowledge similarity features");
  c_rt->add_option("--seed", rt.seed, "Seed for the LSA range finder")->capture_default_str();

  RankSelectOptions rs;
  auto* c_rs = app.add_subcommand("rank-select", "Pick one reply per sample");
  c_rs->add_option("--candidates", rs.candidates, "Candidate files (repeatable)")->required();
  c_rs->add_option("--input", rs.input, "The decoded contexts (JSONL corpus)")->required();
  c_rs->add_option("--ranker", rs.ranker, "Ranker dump; without it the beam score picks");
  c_rs->add_option("--out", rs.out, "Selections (JSONL)")->required();

  TuneBeamOptions tb;
  auto* c_tb = app.add_subcommand("tune-beam", "Grid-search beam size, alpha and beta on a dev set");
  c_tb->add_option("--model", tb.model, "Model checkpoint")->required();
  c_tb->add_option("--dev", tb.dev, "Dev corpus with gold responses")->required();
  c_tb->add_option("--entities", tb.entities, "Entity inventory");
  c_tb->add_option("--out", tb.out, "Tuning report (JSON)")->required();
  c_tb->add_option("--write-model", tb.write_model, "Save a copy of the checkpoint with the best setting");
  c_tb->add_option("--beam-sizes", tb.beam_sizes, "Grid of beam sizes")->delimiter(',')->capture_default_str();
  c_tb->add_option("--alphas", tb.alphas, "Grid of length exponents")->delimiter(',')->capture_default_str();
  c_tb->add_option("--betas", tb.betas, "Grid of coverage weights")->delimiter(',')->capture_default_str();
  c_tb->add_option("--limit", tb.limit, "Use only the first N dev samples (0: all)")->capture_default_str();

  ChatOptions ch;
  auto* c_chat = app.add_subcommand("chat", "Converse on the terminal");
  add_agent_flags(c_chat, ch.agent);
  c_chat->add_option("--session", ch.session, "JSON file with goal and knowledge")->required();
  c_chat->add_flag("--show-candidates", ch.show_candidates, "Print the candidate pool after each reply");

  ServeOptions sv;
  auto* c_serve = app.add_subcommand("serve", "HTTP chat service (port may be overridden by KGDIAL_PORT)");
  add_agent_flags(c_serve, sv.agent);
  c_serve->add_option("--host", sv.host, "Bind address")->capture_default_str();
  c_serve->add_option("--port", sv.port, "Port, 0 for any free port")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report("usage", static_cast<int>(ErrorKind::kUsage), e.what());
  }

  try {
    if (*c_prep) return run_prepare(prep);
    if (*c_aug) return run_augment(aug);
    if (*c_train) return run_train(tr);
    if (*c_dec) return run_decode(dec);
    if (*c_ev) return run_evaluate(ev);
    if (*c_rt) return run_rank_train(rt);
    if (*c_rs) return run_rank_select(rs);
    if (*c_tb) return run_tune_beam(tb);
    if (*c_chat) return run_chat(ch, std::cin, std::cout);
    if (*c_serve) return run_serve(sv);
  } catch (const Error& e) {
    return report(kind_name(e.kind()), e.exit_code(), e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return report("io", static_cast<int>(ErrorKind::kIo), e.what());
  } catch (const std::exception& e) {
    return report("internal", 1, e.what());
  }
  return 0;
}
