#pragma once

// Reference result grid: printed total and its three printed components,
// percentages. Components are shown to 2 (F1) and 1 (BLEU) decimals, the
// total to 2, so display rounding alone allows a gap of
// 0.005 + 0.05 + 0.05 + 0.005 = 0.11 between total and component sum.

#include <string>
#include <vector>

namespace kgdial::testing {

struct ScoreRow {
  std::string model;
  std::string recipe;
  double score, f1, bleu1, bleu2;
};

inline constexpr double kDisplayRoundingBound = 0.11;

inline const std::vector<ScoreRow>& reference_score_rows() {
  static const std::vector<ScoreRow> rows = {
      {"LSTM-L11", "D-1", 96.41, 42.22, 32.5, 21.7},        {"LSTM-L11-Embed", "D-1", 96.67, 42.36, 32.5, 21.8},
      {"LSTM-L22", "D-1", 97.96, 42.85, 32.9, 22.2},        {"LSTM-L31", "D-1", 97.90, 42.45, 33.2, 22.2},
      {"LSTM-L11", "D-2", 98.63, 42.79, 33.4, 22.5},        {"LSTM-L11-Embed", "D-2", 98.41, 42.88, 33.2, 22.3},
      {"LSTM-L22", "D-2", 98.51, 42.89, 33.3, 22.3},        {"LSTM-L31", "D-2", 97.83, 42.73, 33.0, 22.1},
      {"Transformer", "D-2", 98.02, 41.52, 34.1, 22.4},     {"LSTM-L11", "D-3", 98.23, 42.71, 33.3, 22.3},
      {"LSTM-L11-Embed", "D-3", 96.81, 42.26, 32.7, 21.8},  {"LSTM-L22", "D-3", 95.41, 41.81, 32.4, 21.2},
      {"Transformer", "D-3", 100.89, 42.50, 35.0, 23.4},    {"LSTM-L11", "D-4", 97.28, 42.29, 33.0, 22.0},
      {"LSTM-L11-Embed", "D-4", 96.91, 42.38, 32.7, 21.9},  {"LSTM-L22", "D-4", 97.40, 42.73, 32.7, 21.9},
      {"LSTM-L31", "D-4", 97.14, 42.25, 32.9, 22.0},        {"Transformer", "D-4", 102.00, 42.21, 36.1, 23.7},
      {"LSTM-L11", "D-5", 98.72, 42.15, 33.9, 22.6},        {"LSTM-L11-Embed", "D-5", 95.88, 41.98, 32.3, 21.7},
      {"LSTM-L22", "D-5", 97.65, 42.29, 33.2, 22.1},        {"LSTM-L31", "D-5", 97.37, 42.26, 33.0, 22.1},
      {"Transformer", "D-5", 102.82, 43.18, 35.8, 23.8},    {"LSTM-L11", "D-6", 96.99, 42.07, 33.1, 21.8},
      {"LSTM-L11-Embed", "D-6", 97.72, 42.57, 33.0, 22.1},  {"LSTM-L22", "D-6", 98.61, 42.9, 33.5, 22.3},
      {"Transformer", "D-6", 101.12, 42.04, 35.7, 23.4},
  };
  return rows;
}

inline const ScoreRow kEnsembleRow{"ensemble", "", 115.3, 46.2, 41.5, 27.6};
inline const ScoreRow kBaselineRow{"baseline", "", 79.45, 32.65, 30.0, 16.8};

}  // namespace kgdial::testing
