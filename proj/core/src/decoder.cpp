#include "kgdial/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "kgdial/error.hpp"
#include "kgdial/seq2seq.hpp"

namespace kgdial {

using nlohmann::json;

namespace {
constexpr Real kCoverageFloor = 1e-12;
}

void BeamConfig::validate() const {
  if (beam_size < 1) throw ValidationError("beam: beam_size must be at least 1");
  if (max_length < 1) throw ValidationError("beam: max_length must be at least 1");
  if (min_length > max_length) throw ValidationError("beam: min_length exceeds max_length");
  if (!(length_alpha >= 0) || !(coverage_beta >= 0)) throw ValidationError("beam: alpha and beta must be non-negative");
}

json BeamConfig::to_json() const {
  return {{"beam_size", beam_size},     {"max_length", max_length},       {"min_length", min_length},
          {"length_alpha", length_alpha}, {"coverage_beta", coverage_beta}, {"end_token", end_token}};
}

BeamConfig BeamConfig::from_json(const json& j) {
  if (!j.is_object()) throw SchemaError("beam");
  BeamConfig c;
  try {
    c.beam_size = j.value("beam_size", c.beam_size);
    c.max_length = j.value("max_length", c.max_length);
    c.min_length = j.value("min_length", c.min_length);
    c.length_alpha = j.value("length_alpha", c.length_alpha);
    c.coverage_beta = j.value("coverage_beta", c.coverage_beta);
    c.end_token = j.value("end_token", c.end_token);
  } catch (const json::exception&) {
    throw SchemaError("beam");
  }
  c.validate();
  return c;
}

Real length_penalty(std::size_t length, Real alpha) {
  if (length < 1) throw UsageError("length_penalty: length must be at least 1");
  return std::pow((5.0 + static_cast<Real>(length)) / 6.0, alpha);
}

Real coverage_penalty_from_sums(std::span<const Real> sums, Real beta) {
  if (beta == 0) return 0;
  Real total = 0;
  for (Real s : sums) total += std::log(std::max(std::min(s, 1.0), kCoverageFloor));
  return beta * total;
}

Real coverage_penalty(const std::vector<std::vector<Real>>& attention, Real beta) {
  if (attention.empty()) return 0;
  std::vector<Real> sums(attention.front().size(), 0.0);
  for (const auto& row : attention) {
    if (row.size() != sums.size()) throw DimensionError("coverage_penalty", "ragged attention history");
    for (std::size_t i = 0; i < row.size(); ++i) sums[i] += row[i];
  }
  return coverage_penalty_from_sums(sums, beta);
}

namespace {

struct Live {
  std::vector<TokenId> tokens;
  Real log_prob = 0;
  DecoderState state;
  TokenId last = Vocabulary::kBos;
  std::vector<std::vector<Real>> attention;
  std::vector<Real> coverage;
};

struct Expansion {
  std::size_t parent;
  TokenId token;
  Real log_prob;
  Real score;
};

std::vector<char> banned_mask(std::size_t size, const BeamConfig& config) {
  std::vector<char> mask(size, 0);
  for (TokenId id : config.banned)
    if (id < size) mask[id] = 1;
  return mask;
}

bool hypothesis_before(const BeamHypothesis& a, const BeamHypothesis& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.tokens < b.tokens;
}

}  // namespace

std::vector<BeamHypothesis> beam_search(const StepModel& model, const BeamConfig& config) {
  config.validate();
  const std::vector<char> banned = banned_mask(model.output_size(), config);
  std::vector<BeamHypothesis> finished;

  std::vector<Live> live(1);
  live[0].state = model.start();
  live[0].coverage.assign(model.source_length(), 0.0);

  for (std::size_t t = 1; t <= config.max_length && !live.empty(); ++t) {
    const Real lp = length_penalty(t, config.length_alpha);
    std::vector<DecoderState> next_states(live.size());
    std::vector<StepOutput> outputs(live.size());
    std::vector<Expansion> expansions;
    for (std::size_t i = 0; i < live.size(); ++i) {
      outputs[i] = model.step(live[i].state, live[i].last, next_states[i]);
      const StepOutput& out = outputs[i];
      if (out.log_probs.size() != model.output_size()) throw DimensionError("beam_search", "step output size");
      std::vector<Real> coverage = live[i].coverage;
      for (std::size_t k = 0; k < std::min(coverage.size(), out.attention.size()); ++k) coverage[k] += out.attention[k];
      const Real cp = coverage_penalty_from_sums(coverage, config.coverage_beta);
      for (std::size_t v = 0; v < out.log_probs.size(); ++v) {
        if (banned[v] || !std::isfinite(out.log_probs[v])) continue;
        const auto token = static_cast<TokenId>(v);
        if (token == config.end_token && live[i].tokens.size() < config.min_length) continue;
        const Real total = live[i].log_prob + out.log_probs[v];
        expansions.push_back({i, token, total, total / lp + cp});
      }
    }
    const std::size_t keep = std::min(config.beam_size, expansions.size());
    std::partial_sort(expansions.begin(), expansions.begin() + static_cast<std::ptrdiff_t>(keep), expansions.end(),
                      [](const Expansion& a, const Expansion& b) {
                        if (a.score != b.score) return a.score > b.score;
                        if (a.parent != b.parent) return a.parent < b.parent;
                        return a.token < b.token;
                      });
    std::vector<Live> next;
    for (std::size_t e = 0; e < keep; ++e) {
      const Expansion& x = expansions[e];
      const Live& parent = live[x.parent];
      const StepOutput& out = outputs[x.parent];
      auto attention = parent.attention;
      attention.push_back(out.attention);
      if (x.token == config.end_token || t == config.max_length) {
        BeamHypothesis h;
        h.tokens = parent.tokens;
        h.forced = x.token != config.end_token;
        if (h.forced) h.tokens.push_back(x.token);
        h.log_prob = x.log_prob;
        h.score = x.score;
        h.attention = std::move(attention);
        finished.push_back(std::move(h));
        continue;
      }
      Live child;
      child.tokens = parent.tokens;
      child.tokens.push_back(x.token);
      child.log_prob = x.log_prob;
      child.state = next_states[x.parent];
      child.last = x.token;
      child.attention = std::move(attention);
      child.coverage = parent.coverage;
      for (std::size_t k = 0; k < std::min(child.coverage.size(), out.attention.size()); ++k)
        child.coverage[k] += out.attention[k];
      next.push_back(std::move(child));
    }
    live = std::move(next);
    if (finished.size() >= config.beam_size) break;
  }

  if (finished.empty()) {
    // Every continuation was banned or impossible.
    BeamHypothesis h;
    h.forced = true;
    finished.push_back(std::move(h));
  }
  std::stable_sort(finished.begin(), finished.end(), hypothesis_before);
  return finished;
}

BeamHypothesis greedy_decode(const StepModel& model, const BeamConfig& config) {
  config.validate();
  const std::vector<char> banned = banned_mask(model.output_size(), config);
  BeamHypothesis h;
  DecoderState state = model.start();
  std::vector<Real> coverage(model.source_length(), 0.0);
  TokenId last = Vocabulary::kBos;
  for (std::size_t t = 1; t <= config.max_length; ++t) {
    DecoderState next;
    const StepOutput out = model.step(state, last, next);
    std::size_t best = out.log_probs.size();
    for (std::size_t v = 0; v < out.log_probs.size(); ++v) {
      if (banned[v] || !std::isfinite(out.log_probs[v])) continue;
      if (static_cast<TokenId>(v) == config.end_token && h.tokens.size() < config.min_length) continue;
      if (best == out.log_probs.size() || out.log_probs[v] > out.log_probs[best]) best = v;
    }
    if (best == out.log_probs.size()) {
      h.forced = true;
      break;
    }
    for (std::size_t k = 0; k < std::min(coverage.size(), out.attention.size()); ++k) coverage[k] += out.attention[k];
    h.attention.push_back(out.attention);
    h.log_prob += out.log_probs[best];
    h.score = h.log_prob / length_penalty(t, config.length_alpha) +
              coverage_penalty_from_sums(coverage, config.coverage_beta);
    const auto token = static_cast<TokenId>(best);
    if (token == config.end_token) return h;
    h.tokens.push_back(token);
    state = std::move(next);
    last = token;
  }
  h.forced = true;
  return h;
}

std::vector<TokenId> control_ids(const Vocabulary& vocab) {
  std::vector<TokenId> out;
  for (std::size_t i = 0; i < Vocabulary::reserved_count(); ++i) {
    const auto id = static_cast<TokenId>(i);
    if (vocab.is_control(id)) out.push_back(id);
  }
  return out;
}

// ---------------------------------------------------------------------------

json CandidateResponse::to_json() const {
  return {{"sample_id", sample_id}, {"model_id", model_id}, {"tokens", tokens},
          {"beam_score", beam_score}, {"raw_logp", raw_logp}};
}

CandidateResponse CandidateResponse::from_json(const json& j) {
  CandidateResponse c;
  auto field = [&](const char* name) -> const json& {
    if (!j.is_object() || !j.contains(name)) throw SchemaError(name);
    return j.at(name);
  };
  try {
    c.sample_id = field("sample_id").get<std::string>();
    c.model_id = field("model_id").get<std::string>();
    c.tokens = field("tokens").get<Tokens>();
    c.beam_score = field("beam_score").get<Real>();
    c.raw_logp = j.contains("raw_logp") ? j.at("raw_logp").get<Real>() : c.beam_score;
  } catch (const json::type_error&) {
    throw FormatError("candidate row: wrong field type");
  }
  return c;
}

std::vector<CandidateResponse> decode_pair(const Seq2SeqModel& model, const LinearizedPair& pair,
                                           const Vocabulary& vocab, const BeamConfig& config,
                                           const std::string& sample_id, const std::string& model_id) {
  BeamConfig cfg = config;
  for (TokenId id : control_ids(vocab)) cfg.banned.push_back(id);
  const auto session = model.bind_source(pair);
  std::vector<CandidateResponse> out;
  for (const BeamHypothesis& h : beam_search(*session, cfg)) {
    CandidateResponse c;
    c.sample_id = sample_id;
    c.model_id = model_id;
    for (TokenId id : h.tokens) c.tokens.push_back(pair.surface(id, vocab));
    c.beam_score = h.score;
    c.raw_logp = h.log_prob;
    out.push_back(std::move(c));
  }
  return out;
}

void write_candidates(const std::filesystem::path& path, std::span<const CandidateResponse> rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write candidates " + path.string());
  for (const auto& r : rows) out << r.to_json().dump() << '\n';
  if (!out) throw IoError("failed writing candidates " + path.string());
}

std::vector<CandidateResponse> read_candidates(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read candidates " + path.string());
  std::vector<CandidateResponse> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": invalid JSON", e.byte);
    }
    out.push_back(CandidateResponse::from_json(j));
  }
  return out;
}

std::vector<BeamTrial> tune_beam(const BeamConfig& base, const BeamGrid& grid,
                                 const std::function<Real(const BeamConfig&)>& score) {
  std::vector<BeamTrial> trials;
  for (std::size_t k : grid.beam_sizes) {
    for (Real a : grid.alphas) {
      for (Real b : grid.betas) {
        BeamConfig c = base;
        c.beam_size = k;
        c.length_alpha = a;
        c.coverage_beta = b;
        c.validate();
        trials.push_back({c, score(c)});
      }
    }
  }
  if (trials.empty()) throw UsageError("tune_beam: empty grid");
  std::stable_sort(trials.begin(), trials.end(), [](const BeamTrial& x, const BeamTrial& y) { return x.score > y.score; });
  return trials;
}

}  // namespace kgdial
