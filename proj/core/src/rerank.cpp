#include "kgdial/rerank.hpp"

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>

#include "kgdial/error.hpp"
#include "kgdial/metrics.hpp"
#include "kgdial/random.hpp"
#include "kgdial/seq2seq.hpp"

namespace kgdial {

using nlohmann::json;

// ---------------------------------------------------------------------------
// TF-IDF

TfidfModel TfidfModel::fit(std::span<const Tokens> documents) {
  TfidfModel m;
  m.documents_ = documents.size();
  std::map<std::string, std::size_t> df;
  for (const auto& doc : documents) {
    const std::set<std::string> seen(doc.begin(), doc.end());
    for (const auto& t : seen) ++df[t];
  }
  const Real n = static_cast<Real>(documents.size());
  for (const auto& [term, count] : df) {
    m.index_.emplace(term, m.vocab_.size());
    m.vocab_.push_back(term);
    m.idf_.push_back(std::log((1.0 + n) / (1.0 + static_cast<Real>(count))) + 1.0);
  }
  return m;
}

std::optional<std::size_t> TfidfModel::term(const std::string& t) const {
  const auto it = index_.find(t);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

TfidfModel::SparseVector TfidfModel::vector(std::span<const std::string> tokens) const {
  std::map<std::size_t, Real> counts;
  for (const auto& t : tokens)
    if (const auto id = term(t)) counts[*id] += 1.0;
  SparseVector v;
  Real sq = 0;
  for (const auto& [id, c] : counts) {
    v.emplace_back(id, c * idf_[id]);
    sq += v.back().second * v.back().second;
  }
  if (sq > 0) {
    const Real inv = 1.0 / std::sqrt(sq);
    for (auto& e : v) e.second *= inv;
  }
  return v;
}

Real sparse_cosine(const TfidfModel::SparseVector& a, const TfidfModel::SparseVector& b) {
  Real dot = 0, na = 0, nb = 0;
  for (const auto& e : a) na += e.second * e.second;
  for (const auto& e : b) nb += e.second * e.second;
  if (na == 0 || nb == 0) return 0;
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i].first == b[j].first) {
      dot += a[i++].second * b[j++].second;
    } else if (a[i].first < b[j].first) {
      ++i;
    } else {
      ++j;
    }
  }
  return dot / std::sqrt(na * nb);
}

Real TfidfModel::similarity(std::span<const std::string> a, std::span<const std::string> b) const {
  return sparse_cosine(vector(a), vector(b));
}

json TfidfModel::to_json() const { return {{"documents", documents_}, {"terms", vocab_}, {"idf", idf_}}; }

TfidfModel TfidfModel::from_json(const json& j) {
  TfidfModel m;
  try {
    m.documents_ = j.at("documents").get<std::size_t>();
    m.vocab_ = j.at("terms").get<std::vector<std::string>>();
    m.idf_ = j.at("idf").get<std::vector<Real>>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("tfidf: ") + e.what());
  }
  if (m.vocab_.size() != m.idf_.size()) throw FormatError("tfidf: term and idf counts differ");
  for (std::size_t i = 0; i < m.vocab_.size(); ++i) m.index_.emplace(m.vocab_[i], i);
  return m;
}

// ---------------------------------------------------------------------------
// LSA

namespace {

Eigen::MatrixXd orthonormal_columns(const Eigen::MatrixXd& a) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  return qr.householderQ() * Eigen::MatrixXd::Identity(a.rows(), a.cols());
}

}  // namespace

LsaModel LsaModel::fit(const TfidfModel& tfidf, std::span<const Tokens> documents, std::size_t rank,
                       std::uint64_t seed) {
  LsaModel m;
  m.terms_ = tfidf.terms();
  const auto docs = static_cast<Eigen::Index>(documents.size());
  const auto terms = static_cast<Eigen::Index>(tfidf.terms());
  const Eigen::Index limit = std::min(docs, terms);
  if (rank == 0 || limit == 0) return m;

  std::vector<Eigen::Triplet<double>> entries;
  for (Eigen::Index d = 0; d < docs; ++d)
    for (const auto& [t, v] : tfidf.vector(documents[static_cast<std::size_t>(d)]))
      entries.emplace_back(static_cast<int>(d), static_cast<int>(t), v);
  Eigen::SparseMatrix<double> x(docs, terms);
  x.setFromTriplets(entries.begin(), entries.end());

  const Eigen::Index k = std::min<Eigen::Index>(static_cast<Eigen::Index>(rank), limit);
  const Eigen::Index l = std::min<Eigen::Index>(k + 10, limit);
  std::uint64_t state = splitmix64(seed ^ 0x15a);
  Eigen::MatrixXd omega(terms, l);
  for (Eigen::Index i = 0; i < omega.size(); ++i) {
    state = splitmix64(state);
    omega.data()[i] = static_cast<double>(state >> 11) * 0x1.0p-53 * 2.0 - 1.0;
  }
  Eigen::MatrixXd q = orthonormal_columns(x * omega);
  for (int it = 0; it < 3; ++it) {
    const Eigen::MatrixXd z = orthonormal_columns(Eigen::MatrixXd(x.transpose() * q));
    q = orthonormal_columns(Eigen::MatrixXd(x * z));
  }
  const Eigen::MatrixXd b = Eigen::MatrixXd(q.transpose() * x);  // l x terms
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(b * b.transpose());
  // Eigenvalues ascend; take the largest k.
  const Eigen::VectorXd& lambda = eig.eigenvalues();
  const double top = std::max(lambda.maxCoeff(), 0.0);
  std::vector<Eigen::VectorXd> columns;
  for (Eigen::Index i = lambda.size() - 1; i >= 0 && static_cast<Eigen::Index>(columns.size()) < k; --i) {
    const double s = std::sqrt(std::max(lambda[i], 0.0));
    if (s <= 1e-10 * std::sqrt(top) || s == 0) break;
    Eigen::VectorXd v = b.transpose() * eig.eigenvectors().col(i) / s;
    // Fix the sign so the largest-magnitude entry is positive.
    Eigen::Index at = 0;
    v.cwiseAbs().maxCoeff(&at);
    if (v[at] < 0) v = -v;
    columns.push_back(std::move(v));
    m.sigma_.push_back(s);
  }
  m.rank_ = columns.size();
  m.basis_.assign(m.terms_ * m.rank_, 0.0);
  for (std::size_t c = 0; c < m.rank_; ++c)
    for (std::size_t t = 0; t < m.terms_; ++t) m.basis_[t * m.rank_ + c] = columns[c][static_cast<Eigen::Index>(t)];
  return m;
}

std::vector<Real> LsaModel::project(const TfidfModel::SparseVector& v) const {
  std::vector<Real> z(rank_, 0.0);
  for (const auto& [t, w] : v) {
    if (t >= terms_) continue;
    for (std::size_t c = 0; c < rank_; ++c) z[c] += w * basis_[t * rank_ + c];
  }
  return z;
}

namespace {

Real dense_cosine(const std::vector<Real>& a, const std::vector<Real>& b) {
  Real dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na <= 0 || nb <= 0) return 0;
  return dot / std::sqrt(na * nb);
}

}  // namespace

Real LsaModel::similarity(const TfidfModel& tfidf, std::span<const std::string> a, std::span<const std::string> b) const {
  if (rank_ == 0) return 0;
  return dense_cosine(project(tfidf.vector(a)), project(tfidf.vector(b)));
}

json LsaModel::to_json() const {
  return {{"rank", rank_}, {"terms", terms_}, {"basis", basis_}, {"singular_values", sigma_}};
}

LsaModel LsaModel::from_json(const json& j) {
  LsaModel m;
  try {
    m.rank_ = j.at("rank").get<std::size_t>();
    m.terms_ = j.at("terms").get<std::size_t>();
    m.basis_ = j.at("basis").get<std::vector<Real>>();
    m.sigma_ = j.at("singular_values").get<std::vector<Real>>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("lsa: ") + e.what());
  }
  if (m.basis_.size() != m.rank_ * m.terms_) throw FormatError("lsa: basis size mismatch");
  return m;
}

// ---------------------------------------------------------------------------
// Embeddings

void EmbeddingTable::add(const std::string& token, std::vector<Real> vec) {
  if (table_.empty() && dim_ == 0) dim_ = vec.size();
  if (vec.size() != dim_) throw DimensionError("EmbeddingTable::add", token + " has " + std::to_string(vec.size()) + " values, table has " + std::to_string(dim_));
  table_.emplace(token, std::move(vec));
}

std::vector<Real> EmbeddingTable::mean(std::span<const std::string> tokens) const {
  std::vector<Real> sum(dim_, 0.0);
  std::size_t n = 0;
  for (const auto& t : tokens) {
    const auto it = table_.find(t);
    if (it == table_.end()) continue;
    for (std::size_t k = 0; k < dim_; ++k) sum[k] += it->second[k];
    ++n;
  }
  if (n == 0) return {};
  for (Real& v : sum) v /= static_cast<Real>(n);
  return sum;
}

Real EmbeddingTable::similarity(std::span<const std::string> a, std::span<const std::string> b) const {
  const auto ma = mean(a), mb = mean(b);
  if (ma.empty() || mb.empty()) return 0;
  return dense_cosine(ma, mb);
}

EmbeddingTable EmbeddingTable::load_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read embeddings " + path.string());
  EmbeddingTable t;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const Tokens fields = split_whitespace(line);
    if (fields.empty()) continue;
    if (line_no == 1 && fields.size() == 2) continue;
    std::vector<Real> v;
    for (std::size_t k = 1; k < fields.size(); ++k) {
      try {
        v.push_back(std::stod(fields[k]));
      } catch (const std::exception&) {
        throw FormatError(path.string() + ":" + std::to_string(line_no) + ": bad number");
      }
    }
    if (t.dim_ != 0 && v.size() != t.dim_) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected " + std::to_string(t.dim_) + " values");
    }
    if (!t.table_.count(fields[0])) t.add(fields[0], std::move(v));
  }
  return t;
}

json EmbeddingTable::to_json() const {
  json rows = json::array();
  for (const auto& [tok, vec] : table_) rows.push_back({tok, vec});
  return {{"dim", dim_}, {"vectors", rows}};
}

EmbeddingTable EmbeddingTable::from_json(const json& j) {
  EmbeddingTable t;
  try {
    t.dim_ = j.at("dim").get<std::size_t>();
    for (const json& row : j.at("vectors")) t.add(row.at(0).get<std::string>(), row.at(1).get<std::vector<Real>>());
  } catch (const json::exception& e) {
    throw FormatError(std::string("embeddings: ") + e.what());
  } catch (const DimensionError& e) {
    throw FormatError(e.what());
  }
  return t;
}

EmbeddingTable embeddings_from_model(const Seq2SeqModel& model, const Vocabulary& vocab) {
  const Tensor& e = model.params().at("embedding");
  EmbeddingTable t;
  for (std::size_t id = Vocabulary::reserved_count(); id < std::min(vocab.size(), e.dim(0)); ++id) {
    std::vector<Real> row(e.dim(1));
    for (std::size_t k = 0; k < row.size(); ++k) row[k] = e.at(id, k);
    t.add(vocab.token(static_cast<TokenId>(id)), std::move(row));
  }
  return t;
}

json SimilarityModels::to_json() const {
  json ents = json::array();
  for (const auto& [surface, cat] : entities.entries()) ents.push_back({surface, cat});
  return {{"tfidf", tfidf.to_json()}, {"lsa", lsa.to_json()}, {"embeddings", embeddings.to_json()}, {"entities", ents}};
}

SimilarityModels SimilarityModels::from_json(const json& j) {
  SimilarityModels s;
  try {
    s.tfidf = TfidfModel::from_json(j.at("tfidf"));
    s.lsa = LsaModel::from_json(j.at("lsa"));
    s.embeddings = EmbeddingTable::from_json(j.at("embeddings"));
    for (const json& e : j.at("entities")) s.entities.add(e.at(0).get<Tokens>(), e.at(1).get<std::string>());
  } catch (const json::exception& e) {
    throw FormatError(std::string("similarity models: ") + e.what());
  }
  return s;
}

SimilarityModels fit_similarity_models(std::span<const DialogueSample> training, std::size_t lsa_rank, std::uint64_t seed) {
  std::vector<Tokens> docs;
  for (const auto& s : training)
    if (s.response) docs.push_back(*s.response);
  SimilarityModels m;
  m.tfidf = TfidfModel::fit(docs);
  m.lsa = LsaModel::fit(m.tfidf, docs, lsa_rank, seed);
  return m;
}

// ---------------------------------------------------------------------------
// Features

json FeatureOptions::to_json() const { return {{"knowledge_similarity", knowledge_similarity}}; }

std::vector<std::string> feature_names(const FeatureOptions& options) {
  std::vector<std::string> names = {"model_weight", "len_words",   "len_chars",         "sim_bleu1",
                                    "sim_bleu2",    "sim_word2vec", "sim_tfidf",         "sim_lsa",
                                    "ent_freq",     "ent_cooc_possible", "ent_cooc_impossible", "fluency",
                                    "beam_score",   "raw_logp"};
  if (options.knowledge_similarity) {
    names.push_back("know_tfidf");
    names.push_back("know_bleu1");
  }
  return names;
}

Real fluency(std::span<const std::string> tokens) {
  std::size_t repeats = 0;
  for (std::size_t n : {2u, 3u}) {
    if (tokens.size() < n) continue;
    std::map<std::vector<std::string>, std::size_t> counts;
    for (std::size_t i = 0; i + n <= tokens.size(); ++i) ++counts[{tokens.begin() + i, tokens.begin() + i + n}];
    for (const auto& [gram, c] : counts) repeats += c - 1;
  }
  return 1.0 / (1.0 + static_cast<Real>(repeats));
}

namespace {

std::set<Tokens> entity_surfaces(std::span<const std::string> tokens, const EntityMap& map) {
  std::set<Tokens> out;
  for (const auto& m : match_entities(tokens, map)) out.emplace(tokens.begin() + m.start, tokens.begin() + m.start + m.length);
  return out;
}

}  // namespace

EntityCounts entity_counts(std::span<const std::string> response, const DialogueSample& sample, const EntityMap& entities) {
  EntityMap map = entities;
  map.merge(infer_entities(sample, default_predicate_table()));

  std::vector<std::set<Tokens>> triples;
  auto add_triple = [&](const SPOTriple& t) {
    std::set<Tokens> s = entity_surfaces(t.subject, map);
    const auto o = entity_surfaces(t.object, map);
    s.insert(o.begin(), o.end());
    if (map.entries().count(t.subject)) s.insert(t.subject);
    if (map.entries().count(t.object)) s.insert(t.object);
    triples.push_back(std::move(s));
  };
  for (const auto& t : sample.knowledge) add_triple(t);
  for (const auto& t : sample.goal_relations) add_triple(t);
  std::set<Tokens> known;
  for (const auto& s : triples) known.insert(s.begin(), s.end());

  EntityCounts c;
  const auto matches = match_entities(response, map);
  std::vector<Tokens> distinct;
  for (const auto& m : matches) {
    Tokens surface(response.begin() + m.start, response.begin() + m.start + m.length);
    if (known.count(surface)) ++c.in_knowledge;
    if (std::find(distinct.begin(), distinct.end(), surface) == distinct.end()) distinct.push_back(std::move(surface));
  }
  for (std::size_t i = 0; i < distinct.size(); ++i) {
    for (std::size_t j = i + 1; j < distinct.size(); ++j) {
      const bool together = std::any_of(triples.begin(), triples.end(), [&](const std::set<Tokens>& s) {
        return s.count(distinct[i]) && s.count(distinct[j]);
      });
      ++(together ? c.possible : c.impossible);
    }
  }
  return c;
}

Tokens closest_history(const DialogueSample& sample) {
  if (sample.history.empty()) return {};
  return sample.history.back().tokens;
}

namespace {

Real finite_or(Real v, Real fallback) { return std::isfinite(v) ? v : fallback; }

Tokens knowledge_text(const DialogueSample& sample) {
  Tokens out;
  for (const auto& t : sample.knowledge) {
    const Tokens f = t.flatten();
    out.insert(out.end(), f.begin(), f.end());
  }
  return out;
}

}  // namespace

std::vector<Real> extract_features(const CandidateResponse& candidate, const DialogueSample& sample,
                                   const SimilarityModels& aux, const ModelWeights& weights,
                                   const FeatureOptions& options) {
  const Tokens& r = candidate.tokens;
  const Tokens history = closest_history(sample);
  std::vector<Real> f;
  const auto w = weights.find(candidate.model_id);
  f.push_back(w == weights.end() ? 0.0 : w->second);
  f.push_back(static_cast<Real>(r.size()));
  f.push_back(static_cast<Real>(utf8_chars(join_tokens(r)).size()));
  f.push_back(bleu_n(r, history, 1));
  f.push_back(bleu_n(r, history, 2));
  f.push_back(aux.embeddings.similarity(r, history));
  f.push_back(aux.tfidf.similarity(r, history));
  f.push_back(aux.lsa.similarity(aux.tfidf, r, history));
  const EntityCounts e = entity_counts(r, sample, aux.entities);
  f.push_back(static_cast<Real>(e.in_knowledge));
  f.push_back(static_cast<Real>(e.possible));
  f.push_back(static_cast<Real>(e.impossible));
  f.push_back(fluency(r));
  f.push_back(finite_or(candidate.beam_score, -1e9));
  f.push_back(finite_or(candidate.raw_logp, -1e9));
  if (options.knowledge_similarity) {
    const Tokens k = knowledge_text(sample);
    f.push_back(aux.tfidf.similarity(r, k));
    f.push_back(bleu_n(r, k, 1));
  }
  return f;
}

// ---------------------------------------------------------------------------
// Datasets

std::vector<RankSample> build_rank_dataset(std::span<const CandidateResponse> candidates,
                                           std::span<const DialogueSample> samples, const SimilarityModels& aux,
                                           const ModelWeights& weights, const FeatureOptions& options) {
  std::map<std::string, const DialogueSample*> by_id;
  for (const auto& s : samples) by_id.emplace(s.id, &s);
  std::vector<RankSample> rows;
  rows.reserve(candidates.size());
  for (const auto& c : candidates) {
    const auto it = by_id.find(c.sample_id);
    if (it == by_id.end()) throw AlignmentError(c.sample_id);
    const DialogueSample& s = *it->second;
    if (!s.response) throw UsageError("rank dataset: sample \"" + s.id + "\" has no gold response");
    RankSample row;
    row.sample_id = c.sample_id;
    row.model_id = c.model_id;
    row.features = extract_features(c, s, aux, weights, options);
    row.target = sample_metrics(s.id, c.tokens, *s.response).score();
    rows.push_back(std::move(row));
  }
  return rows;
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string number(Real v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::vector<std::string> parse_csv_line(const std::string& line, std::size_t line_no) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  if (quoted) throw ParseError("rank csv line " + std::to_string(line_no) + ": unterminated quote", line.size());
  out.push_back(std::move(cur));
  return out;
}

Real parse_number(const std::string& s, std::size_t line_no) {
  Real v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ParseError("rank csv line " + std::to_string(line_no) + ": bad number \"" + s + "\"", 0);
  }
  return v;
}

}  // namespace

void write_rank_csv(const std::filesystem::path& path, std::span<const RankSample> rows, const std::vector<std::string>& names) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write rank dataset " + path.string());
  out << "sample_id,model_id";
  for (const auto& n : names) out << ',' << n;
  out << ",target\n";
  for (const auto& r : rows) {
    if (r.features.size() != names.size()) throw UsageError("rank csv: row arity differs from header");
    out << csv_field(r.sample_id) << ',' << csv_field(r.model_id);
    for (Real v : r.features) out << ',' << number(v);
    out << ',' << (r.target ? number(*r.target) : std::string());
    out << '\n';
  }
}

std::vector<RankSample> read_rank_csv(const std::filesystem::path& path, std::vector<std::string>* names) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read rank dataset " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError("rank csv: empty file");
  const auto header = parse_csv_line(line, 1);
  if (header.size() < 3 || header[0] != "sample_id" || header[1] != "model_id" || header.back() != "target") {
    throw FormatError("rank csv: unexpected header");
  }
  const std::size_t arity = header.size() - 3;
  if (names) names->assign(header.begin() + 2, header.end() - 1);
  std::vector<RankSample> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = parse_csv_line(line, line_no);
    if (fields.size() != header.size()) throw ParseError("rank csv line " + std::to_string(line_no) + ": wrong field count", 0);
    RankSample r;
    r.sample_id = fields[0];
    r.model_id = fields[1];
    for (std::size_t k = 0; k < arity; ++k) r.features.push_back(parse_number(fields[2 + k], line_no));
    if (!fields.back().empty()) r.target = parse_number(fields.back(), line_no);
    rows.push_back(std::move(r));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Selection

std::size_t select_by_score(std::span<const CandidateResponse> pool, std::span<const Real> scores) {
  if (pool.empty()) throw UsageError("select: empty candidate pool");
  if (scores.size() != pool.size()) throw UsageError("select: score count differs from pool size");
  std::size_t best = 0;
  for (std::size_t i = 1; i < pool.size(); ++i) {
    const auto& a = pool[i];
    const auto& b = pool[best];
    if (scores[i] != scores[best]) {
      if (scores[i] > scores[best]) best = i;
    } else if (a.beam_score != b.beam_score) {
      if (a.beam_score > b.beam_score) best = i;
    } else if (a.model_id < b.model_id) {
      best = i;
    }
  }
  return best;
}

Real Ranker::score(const CandidateResponse& c, const DialogueSample& sample) const {
  return model.predict(extract_features(c, sample, aux, weights, options));
}

std::size_t Ranker::select(std::span<const CandidateResponse> pool, const DialogueSample& sample) const {
  if (pool.empty()) throw UsageError("select: empty candidate pool");
  std::vector<Real> scores;
  for (const auto& c : pool) scores.push_back(score(c, sample));
  return select_by_score(pool, scores);
}

void Ranker::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write ranker " + path.string());
  const json j = {{"format", "kgdial-ranker"}, {"version", 1},          {"gbdt", model.to_json()},
                  {"aux", aux.to_json()},      {"weights", weights},    {"options", options.to_json()}};
  out << j.dump() << '\n';
}

Ranker Ranker::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read ranker " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ParseError("ranker " + path.string() + ": invalid JSON", e.byte);
  }
  if (!j.is_object() || j.value("format", "") != "kgdial-ranker") throw FormatError("ranker: wrong format tag");
  if (j.value("version", 0) != 1) throw FormatError("ranker: unsupported version");
  Ranker r;
  try {
    r.model = GbdtModel::from_json(j.at("gbdt"));
    r.aux = SimilarityModels::from_json(j.at("aux"));
    r.weights = j.at("weights").get<ModelWeights>();
    r.options.knowledge_similarity = j.at("options").value("knowledge_similarity", false);
  } catch (const json::exception& e) {
    throw FormatError(std::string("ranker: ") + e.what());
  }
  if (r.model.arity() != feature_names(r.options).size()) throw FormatError("ranker: feature arity does not match options");
  return r;
}

std::vector<std::pair<std::string, std::vector<CandidateResponse>>> group_by_sample(std::span<const CandidateResponse> candidates) {
  std::vector<std::pair<std::string, std::vector<CandidateResponse>>> out;
  std::map<std::string, std::size_t> where;
  for (const auto& c : candidates) {
    const auto [it, fresh] = where.emplace(c.sample_id, out.size());
    if (fresh) out.emplace_back(c.sample_id, std::vector<CandidateResponse>{});
    out[it->second].second.push_back(c);
  }
  return out;
}

}  // namespace kgdial
