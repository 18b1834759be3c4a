#include "kgdial/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include "kgdial/error.hpp"

namespace kgdial {

std::vector<std::string> utf8_chars(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto lead = static_cast<unsigned char>(text[i]);
    std::size_t len = 1;
    if (lead >= 0xF0) {
      len = 4;
    } else if (lead >= 0xE0) {
      len = 3;
    } else if (lead >= 0xC0) {
      len = 2;
    }
    len = std::min(len, text.size() - i);
    std::string_view ch = text.substr(i, len);
    i += len;
    if (len == 1 && (ch[0] == ' ' || ch[0] == '\t' || ch[0] == '\n' || ch[0] == '\r' ||
                     ch[0] == '\f' || ch[0] == '\v')) {
      continue;
    }
    if (ch == "\xE3\x80\x80") continue;  // ideographic space
    out.emplace_back(ch);
  }
  return out;
}

double char_f1(std::string_view candidate, std::string_view reference) {
  const auto cand = utf8_chars(candidate);
  const auto ref = utf8_chars(reference);
  if (cand.empty() || ref.empty()) return 0.0;
  std::map<std::string, std::size_t> ref_counts;
  for (const auto& c : ref) ++ref_counts[c];
  std::size_t common = 0;
  for (const auto& c : cand) {
    auto it = ref_counts.find(c);
    if (it != ref_counts.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  if (common == 0) return 0.0;
  const double precision = static_cast<double>(common) / static_cast<double>(cand.size());
  const double recall = static_cast<double>(common) / static_cast<double>(ref.size());
  return 2.0 * precision * recall / (precision + recall);
}

namespace {

std::map<std::vector<std::string>, std::size_t> ngram_counts(std::span<const std::string> tokens,
                                                             std::size_t k) {
  std::map<std::vector<std::string>, std::size_t> counts;
  if (tokens.size() < k) return counts;
  for (std::size_t i = 0; i + k <= tokens.size(); ++i) {
    ++counts[std::vector<std::string>(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                      tokens.begin() + static_cast<std::ptrdiff_t>(i + k))];
  }
  return counts;
}

}  // namespace

double bleu_n(std::span<const std::string> candidate, std::span<const std::string> reference, int n) {
  if (n < 1) throw UsageError("bleu_n: order must be >= 1");
  const auto order = static_cast<std::size_t>(n);
  if (candidate.size() < order || reference.empty()) return 0.0;
  double log_sum = 0.0;
  for (std::size_t k = 1; k <= order; ++k) {
    const auto cand = ngram_counts(candidate, k);
    const auto ref = ngram_counts(reference, k);
    std::size_t clipped = 0;
    for (const auto& [gram, count] : cand) {
      auto it = ref.find(gram);
      if (it != ref.end()) clipped += std::min(count, it->second);
    }
    if (clipped == 0) return 0.0;
    const std::size_t total = candidate.size() - k + 1;
    log_sum += std::log(static_cast<double>(clipped) / static_cast<double>(total));
  }
  const double c = static_cast<double>(candidate.size());
  const double r = static_cast<double>(reference.size());
  const double brevity = c >= r ? 1.0 : std::exp(1.0 - r / c);
  return brevity * std::exp(log_sum / static_cast<double>(order));
}

double total_score(double f1, double bleu1, double bleu2) {
  return std::round((f1 + bleu1 + bleu2) * 1e10) / 1e10;
}

SampleMetrics sample_metrics(std::string id, std::span<const std::string> candidate,
                             std::span<const std::string> reference) {
  SampleMetrics m;
  m.id = std::move(id);
  m.f1 = char_f1(join_tokens(candidate), join_tokens(reference));
  m.bleu1 = bleu_n(candidate, reference, 1);
  m.bleu2 = bleu_n(candidate, reference, 2);
  return m;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& s : samples) {
    rows.push_back({{"id", s.id}, {"f1", s.f1}, {"bleu1", s.bleu1}, {"bleu2", s.bleu2}});
  }
  return {{"f1", f1}, {"bleu1", bleu1}, {"bleu2", bleu2}, {"score", score}, {"samples", rows}};
}

std::string EvalReport::summary() const {
  char buf[128];
  std::snprintf(buf, sizeof(buf), "F1/BLEU1/BLEU2/Score: %.2f/%.2f/%.2f/%.2f", f1, bleu1, bleu2, score);
  return buf;
}

EvalReport corpus_eval(std::span<const TextRecord> candidates, std::span<const TextRecord> references) {
  const std::size_t n = std::min(candidates.size(), references.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (candidates[i].id != references[i].id) throw AlignmentError(candidates[i].id);
  }
  if (candidates.size() != references.size()) {
    throw AlignmentError(candidates.size() > n ? candidates[n].id : references[n].id);
  }
  EvalReport report;
  for (std::size_t i = 0; i < n; ++i) {
    report.samples.push_back(sample_metrics(candidates[i].id, candidates[i].tokens, references[i].tokens));
    report.f1 += report.samples.back().f1;
    report.bleu1 += report.samples.back().bleu1;
    report.bleu2 += report.samples.back().bleu2;
  }
  if (n > 0) {
    report.f1 = 100.0 * report.f1 / static_cast<double>(n);
    report.bleu1 = 100.0 * report.bleu1 / static_cast<double>(n);
    report.bleu2 = 100.0 * report.bleu2 / static_cast<double>(n);
  }
  report.score = report.f1 + report.bleu1 + report.bleu2;
  return report;
}

std::vector<TextRecord> read_text_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<TextRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (split_whitespace(line).empty()) continue;
    nlohmann::json row;
    try {
      row = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": malformed JSON", e.byte);
    }
    TextRecord rec;
    if (row.contains("sample_id")) {
      rec.id = row["sample_id"].is_string() ? row["sample_id"].get<std::string>() : row["sample_id"].dump();
    } else if (row.contains("id")) {
      rec.id = row["id"].is_string() ? row["id"].get<std::string>() : row["id"].dump();
    } else {
      rec.id = std::to_string(out.size());
    }
    if (row.contains("tokens") && row["tokens"].is_array()) {
      for (const auto& t : row["tokens"]) rec.tokens.push_back(t.get<std::string>());
    } else if (row.contains("response") && row["response"].is_string()) {
      rec.tokens = split_whitespace(row["response"].get<std::string>());
    } else {
      throw SchemaError("response");
    }
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace kgdial
