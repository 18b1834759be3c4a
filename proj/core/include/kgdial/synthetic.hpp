#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kgdial/augment.hpp"
#include "kgdial/corpus.hpp"

namespace kgdial {

// Desk-scale corpora with known structure, used by tests, benchmarks and
// `prepare-data --synthetic`.

struct CopyTaskConfig {
  std::size_t words = 50;        // in-vocabulary payload words w0 .. w{words-1}
  std::size_t max_payload = 10;  // payload lengths are uniform in [1, max_payload]
  /// Fraction of samples whose payload carries out-of-vocabulary tokens.
  double oov_sample_rate = 0.5;
  std::size_t max_oov_per_sample = 2;
  std::uint64_t seed = 0;
};

enum class CopySplit { kTrain, kTest };

/// One-turn dialogues whose response repeats the human utterance verbatim.
/// Train and test draw OOV tokens from disjoint pools ("rare*" / "unseen*").
std::vector<DialogueSample> generate_copy_corpus(std::size_t count, const CopyTaskConfig& config, CopySplit split);

/// Payload words plus the fixed goal tokens of the copy corpus.
Vocabulary copy_task_vocabulary(const CopyTaskConfig& config);

/// True if `sample`'s payload holds a token outside `vocab`.
bool has_oov_payload(const DialogueSample& sample, const Vocabulary& vocab);

struct DialogueCorpusConfig {
  std::size_t people = 12;
  std::size_t movies = 12;
  std::size_t places = 6;
  std::uint64_t seed = 0;
};

/// Templated goal-directed movie chats over a small knowledge graph: bot
/// turns mention facts from the sample's knowledge so copying pays off.
/// Every dialogue holds full history plus the final bot response.
std::vector<DialogueSample> generate_dialogue_corpus(std::size_t count, const DialogueCorpusConfig& config);

/// The entity inventory behind generate_dialogue_corpus.
EntityMap synthetic_entities(const DialogueCorpusConfig& config);

}  // namespace kgdial
