#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "kgdial/corpus.hpp"

namespace kgdial {

/// UTF-8 code points of `text` with whitespace (including U+3000) removed.
std::vector<std::string> utf8_chars(std::string_view text);

/// Character-level F1 over code-point multisets. Empty candidate or
/// reference gives 0.
double char_f1(std::string_view candidate, std::string_view reference);

/// Cumulative sentence BLEU up to order n: brevity penalty times the geometric
/// mean of clipped k-gram precisions, k = 1..n. No smoothing: any zero
/// precision, or n > |candidate|, gives 0.
double bleu_n(std::span<const std::string> candidate, std::span<const std::string> reference, int n);

/// F1 + BLEU1 + BLEU2 in percentage points, snapped to a 1e-10 grid so
/// decimal inputs add up exactly (46.2 + 41.5 + 27.6 == 115.3).
double total_score(double f1, double bleu1, double bleu2);

struct SampleMetrics {
  std::string id;
  double f1 = 0;  // fractions
  double bleu1 = 0;
  double bleu2 = 0;

  /// F1 + BLEU1 + BLEU2 as a fraction sum in [0, 3].
  double score() const { return f1 + bleu1 + bleu2; }
};

SampleMetrics sample_metrics(std::string id, std::span<const std::string> candidate,
                             std::span<const std::string> reference);

struct EvalReport {
  double f1 = 0;  // percentages
  double bleu1 = 0;
  double bleu2 = 0;
  double score = 0;
  std::vector<SampleMetrics> samples;

  nlohmann::json to_json() const;
  /// "F1/BLEU1/BLEU2/Score: 42.22/32.50/21.70/96.42"
  std::string summary() const;
};

struct TextRecord {
  std::string id;
  Tokens tokens;
};

/// Averages per-sample metrics over id-aligned streams. Throws AlignmentError
/// naming the first id that differs (or is missing on one side).
EvalReport corpus_eval(std::span<const TextRecord> candidates, std::span<const TextRecord> references);

/// JSONL rows keyed by `sample_id` or `id`, text from `tokens` (array) or
/// `response` (string). Corpus files and candidate files both qualify.
std::vector<TextRecord> read_text_records(const std::filesystem::path& path);

}  // namespace kgdial
