#include "kgdial/seq2seq.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "kgdial/checkpoint.hpp"
#include "kgdial/error.hpp"
#include "kgdial/random.hpp"

namespace kgdial {

using nlohmann::json;

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

std::string layer(const char* prefix, std::size_t i) { return std::string(prefix) + ".l" + std::to_string(i); }

}  // namespace

std::string_view variant_name(Variant variant) {
  switch (variant) {
    case Variant::kLstmL11: return "LSTM-L11";
    case Variant::kLstmL11Embed: return "LSTM-L11-Embed";
    case Variant::kLstmL22: return "LSTM-L22";
    case Variant::kLstmL31: return "LSTM-L31";
    case Variant::kTransformer: return "Transformer";
  }
  return "?";
}

const std::vector<Variant>& all_variants() {
  static const std::vector<Variant> v = {Variant::kLstmL11, Variant::kLstmL11Embed, Variant::kLstmL22,
                                         Variant::kLstmL31, Variant::kTransformer};
  return v;
}

Variant parse_variant(std::string_view name) {
  for (Variant v : all_variants()) {
    if (lower(variant_name(v)) == lower(name)) return v;
  }
  throw UsageError("unknown model variant \"" + std::string(name) + "\"");
}

// ---------------------------------------------------------------------------
// ModelConfig

ModelConfig ModelConfig::for_variant(Variant variant, std::size_t vocab_size, std::size_t hidden_size) {
  ModelConfig c;
  c.variant = variant;
  c.vocab_size = vocab_size;
  c.hidden_size = hidden_size;
  c.embedding_dim = 128;
  switch (variant) {
    case Variant::kLstmL11: break;
    case Variant::kLstmL11Embed: c.embedding_dim = 200; break;
    case Variant::kLstmL22: c.encoder_layers = c.decoder_layers = 2; break;
    case Variant::kLstmL31: c.encoder_layers = 3; break;
    case Variant::kTransformer:
      c.encoder_layers = c.decoder_layers = 6;
      c.embedding_dim = hidden_size;
      c.ff_size = 4 * hidden_size;
      c.copy_enabled = false;
      break;
  }
  return c;
}

void ModelConfig::validate() const {
  auto fail = [&](const std::string& what) {
    throw ValidationError("model config (" + std::string(variant_name(variant)) + "): " + what);
  };
  if (vocab_size <= Vocabulary::reserved_count()) fail("vocab_size must exceed the reserved tokens");
  if (hidden_size == 0) fail("hidden_size must be positive");
  if (embedding_dim == 0) fail("embedding_dim must be positive");
  if (attention != "additive") fail("unsupported attention scoring \"" + attention + "\"");
  std::size_t enc = 1, dec = 1;
  switch (variant) {
    case Variant::kLstmL11:
    case Variant::kLstmL11Embed: break;
    case Variant::kLstmL22: enc = dec = 2; break;
    case Variant::kLstmL31: enc = 3; break;
    case Variant::kTransformer: enc = dec = 6; break;
  }
  if (encoder_layers != enc || decoder_layers != dec) fail("layer counts do not match the variant");
  if (is_transformer()) {
    if (heads == 0 || hidden_size % heads != 0) fail("hidden_size must be divisible by heads");
    if (embedding_dim != hidden_size) fail("transformer embedding_dim must equal hidden_size");
    if (ff_size == 0) fail("ff_size must be positive");
  }
}

json ModelConfig::to_json() const {
  return {{"variant", variant_name(variant)}, {"vocab_size", vocab_size},
          {"hidden_size", hidden_size},       {"embedding_dim", embedding_dim},
          {"encoder_layers", encoder_layers}, {"decoder_layers", decoder_layers},
          {"heads", heads},                   {"ff_size", ff_size},
          {"copy_enabled", copy_enabled},     {"attention", attention}};
}

ModelConfig ModelConfig::from_json(const json& j) {
  ModelConfig c;
  try {
    c.variant = parse_variant(j.at("variant").get<std::string>());
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.hidden_size = j.at("hidden_size").get<std::size_t>();
    c.embedding_dim = j.at("embedding_dim").get<std::size_t>();
    c.encoder_layers = j.at("encoder_layers").get<std::size_t>();
    c.decoder_layers = j.at("decoder_layers").get<std::size_t>();
    c.heads = j.value("heads", std::size_t{4});
    c.ff_size = j.value("ff_size", std::size_t{1024});
    c.copy_enabled = j.at("copy_enabled").get<bool>();
    c.attention = j.value("attention", std::string("additive"));
  } catch (const json::exception& e) {
    throw FormatError(std::string("model config: ") + e.what());
  } catch (const UsageError& e) {
    throw FormatError(e.what());
  }
  return c;
}

// ---------------------------------------------------------------------------
// Parameters

Seq2SeqModel::Seq2SeqModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  init_parameters(seed);
}

Seq2SeqModel::Seq2SeqModel(const ModelConfig& config, ParameterSet params)
    : config_(config), params_(std::move(params)) {
  config_.validate();
  check_parameters();
}

std::size_t Seq2SeqModel::encoder_width() const {
  return config_.is_transformer() ? config_.hidden_size : 2 * config_.hidden_size;
}

void Seq2SeqModel::init_parameters(std::uint64_t seed) {
  auto rng = make_rng(seed, 1);
  const std::size_t H = config_.hidden_size, E = config_.embedding_dim, V = config_.vocab_size;
  const std::size_t W = encoder_width();

  auto uniform = [&](Shape shape, Real range) {
    std::uniform_real_distribution<Real> dist(-range, range);
    Tensor t(std::move(shape));
    for (Real& v : t.values()) v = dist(rng);
    return t;
  };
  auto xavier = [&](std::size_t rows, std::size_t cols) {
    return uniform({rows, cols}, std::sqrt(6.0 / static_cast<Real>(rows + cols)));
  };
  auto zeros = [](std::size_t n) { return Tensor(Shape{n}, 0.0); };
  auto lstm = [&](const std::string& name, std::size_t in) {
    params_.add(name + ".W", xavier(4 * H, in + H));
    Tensor b = zeros(4 * H);
    for (std::size_t i = H; i < 2 * H; ++i) b[i] = 1.0;  // forget gate
    params_.add(name + ".b", std::move(b));
  };

  params_.add("embedding", uniform({V, E}, 0.1));
  if (!config_.is_transformer()) {
    for (std::size_t l = 0; l < config_.encoder_layers; ++l) {
      const std::size_t in = l == 0 ? E : 2 * H;
      lstm(layer("enc", l) + ".fwd", in);
      lstm(layer("enc", l) + ".bwd", in);
    }
    for (std::size_t l = 0; l < config_.decoder_layers; ++l) {
      params_.add(layer("bridge", l) + ".Wh", xavier(H, 2 * H));
      params_.add(layer("bridge", l) + ".bh", zeros(H));
      params_.add(layer("bridge", l) + ".Wc", xavier(H, 2 * H));
      params_.add(layer("bridge", l) + ".bc", zeros(H));
    }
    for (std::size_t l = 0; l < config_.decoder_layers; ++l) lstm(layer("dec", l), l == 0 ? E : H);
    params_.add("attn.Wh", xavier(W, H));
    params_.add("attn.Ws", xavier(H, H));
    params_.add("attn.b", zeros(H));
    params_.add("attn.v", uniform({H}, std::sqrt(3.0 / static_cast<Real>(H))));
  } else {
    const std::size_t dk = H / config_.heads, F = config_.ff_size;
    auto mha = [&](const std::string& name) {
      for (std::size_t k = 0; k < config_.heads; ++k) {
        const std::string head = name + ".h" + std::to_string(k);
        params_.add(head + ".wq", xavier(H, dk));
        params_.add(head + ".wk", xavier(H, dk));
        params_.add(head + ".wv", xavier(H, dk));
      }
      params_.add(name + ".wo", xavier(H, H));
      params_.add(name + ".bo", zeros(H));
    };
    auto norm = [&](const std::string& name) {
      params_.add(name + ".g", Tensor(Shape{H}, 1.0));
      params_.add(name + ".b", zeros(H));
    };
    auto ffn = [&](const std::string& name) {
      params_.add(name + ".w1", xavier(H, F));
      params_.add(name + ".b1", zeros(F));
      params_.add(name + ".w2", xavier(F, H));
      params_.add(name + ".b2", zeros(H));
    };
    for (std::size_t l = 0; l < config_.encoder_layers; ++l) {
      const std::string p = layer("enc", l);
      mha(p + ".self");
      norm(p + ".ln1");
      ffn(p + ".ff");
      norm(p + ".ln2");
    }
    for (std::size_t l = 0; l < config_.decoder_layers; ++l) {
      const std::string p = layer("dec", l);
      mha(p + ".self");
      norm(p + ".ln1");
      mha(p + ".cross");
      norm(p + ".ln2");
      ffn(p + ".ff");
      norm(p + ".ln3");
    }
  }
  params_.add("out.W1", xavier(H, H + W));
  params_.add("out.b1", zeros(H));
  params_.add("out.W2", xavier(V, H));
  params_.add("out.b2", zeros(V));
  if (config_.copy_enabled) {
    params_.add("copy.wh", uniform({W}, 0.1));
    params_.add("copy.ws", uniform({H}, 0.1));
    params_.add("copy.wx", uniform({E}, 0.1));
    params_.add("copy.b", zeros(1));
  }
}

void Seq2SeqModel::check_parameters() const {
  const Seq2SeqModel reference(config_, 0);
  const ParameterSet& want = reference.params_;
  if (want.names() != params_.names()) {
    throw FormatError("checkpoint parameters do not match " + std::string(variant_name(config_.variant)));
  }
  for (std::size_t i = 0; i < want.size(); ++i) {
    if (want[i].shape() != params_[i].shape()) {
      throw FormatError("parameter " + want.name(i) + ": expected shape " + shape_string(want[i].shape()) +
                        ", got " + shape_string(params_[i].shape()));
    }
  }
  if (!params_.all_finite()) throw FormatError("checkpoint contains non-finite parameters");
}

TokenId Seq2SeqModel::clamp_input(TokenId id) const {
  return id < config_.vocab_size ? id : Vocabulary::kUnk;
}

// ---------------------------------------------------------------------------
// Encoders

namespace {

std::pair<Var, Var> lstm_cell(Var W, Var b, Var x, Var h, Var c, std::size_t H) {
  using namespace ad;
  const Var z = add(matmul(W, concat({x, h})), b);
  const Var i = sigmoid(slice(z, 0, H));
  const Var f = sigmoid(slice(z, H, H));
  const Var g = tanh(slice(z, 2 * H, H));
  const Var o = sigmoid(slice(z, 3 * H, H));
  const Var c2 = add(mul(f, c), mul(i, g));
  return {mul(o, tanh(c2)), c2};
}

Tensor positional_encoding(std::size_t length, std::size_t width) {
  Tensor pe(Shape{length, width});
  for (std::size_t p = 0; p < length; ++p) {
    for (std::size_t i = 0; i < width; ++i) {
      const Real rate = std::pow(10000.0, static_cast<Real>(2 * (i / 2)) / static_cast<Real>(width));
      const Real angle = static_cast<Real>(p) / rate;
      pe.at(p, i) = i % 2 == 0 ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

Tensor causal_mask(std::size_t length) {
  Tensor m(Shape{length, length});
  for (std::size_t r = 0; r < length; ++r)
    for (std::size_t c = r + 1; c < length; ++c) m.at(r, c) = -1e9;
  return m;
}

}  // namespace

EncoderOutput Seq2SeqModel::encode(Binding& b, std::span<const TokenId> source_ids) const {
  if (source_ids.empty()) throw UsageError("encode: empty source");
  return config_.is_transformer() ? encode_transformer(b, source_ids) : encode_lstm(b, source_ids);
}

EncoderOutput Seq2SeqModel::encode_lstm(Binding& b, std::span<const TokenId> ids) const {
  Graph& g = b.graph();
  const std::size_t H = config_.hidden_size, N = ids.size();
  std::vector<TokenId> clamped(ids.size());
  std::transform(ids.begin(), ids.end(), clamped.begin(), [this](TokenId id) { return clamp_input(id); });
  const Var embedded = ad::embedding(b("embedding"), clamped);
  std::vector<Var> inputs(N);
  for (std::size_t i = 0; i < N; ++i) inputs[i] = ad::row(embedded, i);

  const Var zero = g.constant(Tensor(Shape{H}, 0.0));
  Var fwd_h, fwd_c, bwd_h, bwd_c;
  for (std::size_t l = 0; l < config_.encoder_layers; ++l) {
    const std::string p = layer("enc", l);
    std::vector<Var> fwd(N), bwd(N);
    Var h = zero, c = zero;
    for (std::size_t i = 0; i < N; ++i) {
      std::tie(h, c) = lstm_cell(b(p + ".fwd.W"), b(p + ".fwd.b"), inputs[i], h, c, H);
      fwd[i] = h;
    }
    fwd_h = h;
    fwd_c = c;
    h = zero;
    c = zero;
    for (std::size_t i = N; i-- > 0;) {
      std::tie(h, c) = lstm_cell(b(p + ".bwd.W"), b(p + ".bwd.b"), inputs[i], h, c, H);
      bwd[i] = h;
    }
    bwd_h = h;
    bwd_c = c;
    for (std::size_t i = 0; i < N; ++i) inputs[i] = ad::concat({fwd[i], bwd[i]});
  }

  EncoderOutput out;
  out.states = ad::stack(inputs);
  out.keys = ad::matmul(out.states, b("attn.Wh"));
  const Var final_h = ad::concat({fwd_h, bwd_h});
  const Var final_c = ad::concat({fwd_c, bwd_c});
  for (std::size_t l = 0; l < config_.decoder_layers; ++l) {
    const std::string p = layer("bridge", l);
    out.init_hidden.push_back(ad::tanh(ad::add(ad::matmul(b(p + ".Wh"), final_h), b(p + ".bh"))));
    out.init_cell.push_back(ad::tanh(ad::add(ad::matmul(b(p + ".Wc"), final_c), b(p + ".bc"))));
  }
  return out;
}

namespace {

struct TransformerBlocks {
  Binding& b;
  std::size_t heads;
  std::size_t width;

  Var attend(const std::string& name, Var queries, Var memory, const Tensor* mask, Var* mean_weights) const {
    using namespace ad;
    Graph& g = b.graph();
    const std::size_t dk = width / heads;
    const Real scale_factor = 1.0 / std::sqrt(static_cast<Real>(dk));
    std::vector<Var> outputs;
    Var weight_sum;
    const Var mask_var = mask ? g.constant(*mask) : Var();
    for (std::size_t k = 0; k < heads; ++k) {
      const std::string head = name + ".h" + std::to_string(k);
      const Var q = matmul(queries, b(head + ".wq"));
      const Var kk = matmul(memory, b(head + ".wk"));
      const Var v = matmul(memory, b(head + ".wv"));
      Var scores = scale(matmul(q, transpose(kk)), scale_factor);
      if (mask) scores = add(scores, mask_var);
      const Var w = softmax(scores);
      outputs.push_back(matmul(w, v));
      if (mean_weights) weight_sum = weight_sum.valid() ? add(weight_sum, w) : w;
    }
    if (mean_weights) *mean_weights = scale(weight_sum, 1.0 / static_cast<Real>(heads));
    return add(matmul(concat(outputs, 1), b(name + ".wo")), b(name + ".bo"));
  }

  Var norm(const std::string& name, Var x) const { return ad::layer_norm(x, b(name + ".g"), b(name + ".b")); }

  Var feed_forward(const std::string& name, Var x) const {
    using namespace ad;
    const Var hidden = relu(add(matmul(x, b(name + ".w1")), b(name + ".b1")));
    return add(matmul(hidden, b(name + ".w2")), b(name + ".b2"));
  }
};

}  // namespace

EncoderOutput Seq2SeqModel::encode_transformer(Binding& b, std::span<const TokenId> ids) const {
  Graph& g = b.graph();
  std::vector<TokenId> clamped(ids.size());
  std::transform(ids.begin(), ids.end(), clamped.begin(), [this](TokenId id) { return clamp_input(id); });
  const TransformerBlocks blocks{b, config_.heads, config_.hidden_size};
  Var x = ad::add(ad::embedding(b("embedding"), clamped),
                  g.constant(positional_encoding(ids.size(), config_.hidden_size)));
  for (std::size_t l = 0; l < config_.encoder_layers; ++l) {
    const std::string p = layer("enc", l);
    x = blocks.norm(p + ".ln1", ad::add(x, blocks.attend(p + ".self", x, x, nullptr, nullptr)));
    x = blocks.norm(p + ".ln2", ad::add(x, blocks.feed_forward(p + ".ff", x)));
  }
  EncoderOutput out;
  out.states = x;
  return out;
}

// ---------------------------------------------------------------------------
// Decoder blocks

AttentionResult Seq2SeqModel::attention(Binding& b, Var s, const EncoderOutput& enc) const {
  using namespace ad;
  const Var query = add(matmul(b("attn.Ws"), s), b("attn.b"));
  const Var energy = matmul(tanh(add(enc.keys, query)), b("attn.v"));
  AttentionResult r;
  r.weights = softmax(energy);
  r.context = matmul(r.weights, enc.states);
  return r;
}

Var Seq2SeqModel::vocab_distribution(Binding& b, Var s, Var context) const {
  using namespace ad;
  const Var hidden = add(matmul(b("out.W1"), concat({s, context})), b("out.b1"));
  return softmax(add(matmul(b("out.W2"), hidden), b("out.b2")));
}

Var Seq2SeqModel::copy_gate(Binding& b, Var context, Var s, Var x) const {
  using namespace ad;
  if (!config_.copy_enabled) throw UsageError("copy_gate: copy mechanism disabled in this model");
  const Var logit = add(add(dot(b("copy.wh"), context), dot(b("copy.ws"), s)), dot(b("copy.wx"), x));
  return sigmoid(add(reshape(logit, Shape{1}), b("copy.b")));
}

Var Seq2SeqModel::mixture_distribution(Var p_vocab, Var attention, Var p_gen,
                                       std::span<const TokenId> source_ids, std::size_t extended_size) {
  using namespace ad;
  if (attention.size() != source_ids.size()) {
    throw DimensionError("mixture_distribution", std::to_string(attention.size()) + " attention weights vs " +
                                                     std::to_string(source_ids.size()) + " source ids");
  }
  const std::size_t V = p_vocab.size();
  if (extended_size < V) throw DimensionError("mixture_distribution", "extended size below vocabulary size");
  std::vector<TokenId> identity(V);
  for (std::size_t i = 0; i < V; ++i) identity[i] = i;
  const Var generated = scale_by(scatter_add(p_vocab, identity, extended_size), p_gen);
  const Var copied = scale_by(scatter_add(attention, source_ids, extended_size), one_minus(p_gen));
  return add(generated, copied);
}

Var Seq2SeqModel::output_distribution(Binding& b, Var s, Var weights, Var context, Var x,
                                      std::span<const TokenId> source_ids, std::size_t extended_size) const {
  const Var p_vocab = vocab_distribution(b, s, context);
  if (!config_.copy_enabled) return p_vocab;
  const Var p_gen = copy_gate(b, context, s, x);
  return mixture_distribution(p_vocab, weights, p_gen, source_ids, extended_size);
}

Var Seq2SeqModel::lstm_decoder_step(Binding& b, Var x, std::vector<Var>& h, std::vector<Var>& c) const {
  Var input = x;
  for (std::size_t l = 0; l < config_.decoder_layers; ++l) {
    const std::string p = layer("dec", l);
    std::tie(h[l], c[l]) = lstm_cell(b(p + ".W"), b(p + ".b"), input, h[l], c[l], config_.hidden_size);
    input = h[l];
  }
  return input;
}

Seq2SeqModel::DecoderRun Seq2SeqModel::run_lstm_decoder(Binding& b, const EncoderOutput& enc,
                                                        std::span<const TokenId> inputs) const {
  DecoderRun run;
  std::vector<Var> h = enc.init_hidden, c = enc.init_cell;
  for (TokenId token : inputs) {
    const Var x = ad::embedding_row(b("embedding"), clamp_input(token));
    const Var s = lstm_decoder_step(b, x, h, c);
    const AttentionResult att = attention(b, s, enc);
    run.states.push_back(s);
    run.attentions.push_back(att.weights);
    run.contexts.push_back(att.context);
    run.inputs.push_back(x);
  }
  return run;
}

Seq2SeqModel::DecoderRun Seq2SeqModel::run_transformer_decoder(Binding& b, const EncoderOutput& enc,
                                                               std::span<const TokenId> inputs) const {
  Graph& g = b.graph();
  const std::size_t T = inputs.size();
  std::vector<TokenId> clamped(T);
  std::transform(inputs.begin(), inputs.end(), clamped.begin(), [this](TokenId id) { return clamp_input(id); });
  const TransformerBlocks blocks{b, config_.heads, config_.hidden_size};
  const Var embedded = ad::embedding(b("embedding"), clamped);
  Var y = ad::add(embedded, g.constant(positional_encoding(T, config_.hidden_size)));
  const Tensor mask = causal_mask(T);
  Var cross_weights;
  for (std::size_t l = 0; l < config_.decoder_layers; ++l) {
    const std::string p = layer("dec", l);
    const bool last = l + 1 == config_.decoder_layers;
    y = blocks.norm(p + ".ln1", ad::add(y, blocks.attend(p + ".self", y, y, &mask, nullptr)));
    y = blocks.norm(p + ".ln2", ad::add(y, blocks.attend(p + ".cross", y, enc.states, nullptr,
                                                         last ? &cross_weights : nullptr)));
    y = blocks.norm(p + ".ln3", ad::add(y, blocks.feed_forward(p + ".ff", y)));
  }
  const Var contexts = ad::matmul(cross_weights, enc.states);
  DecoderRun run;
  for (std::size_t t = 0; t < T; ++t) {
    run.states.push_back(ad::row(y, t));
    run.attentions.push_back(ad::row(cross_weights, t));
    run.contexts.push_back(ad::row(contexts, t));
    run.inputs.push_back(ad::row(embedded, t));
  }
  return run;
}

LossResult Seq2SeqModel::forward_loss(Binding& b, const LinearizedPair& pair, bool keep_distributions) const {
  if (!pair.target_ids || pair.target_ids->size() < 2) {
    throw UsageError("forward_loss: pair has no target");
  }
  if (pair.vocab_size != config_.vocab_size) {
    throw UsageError("forward_loss: pair encoded with vocabulary of size " + std::to_string(pair.vocab_size) +
                     ", model expects " + std::to_string(config_.vocab_size));
  }
  const std::vector<TokenId>& target = *pair.target_ids;
  const std::span<const TokenId> inputs(target.data(), target.size() - 1);
  const EncoderOutput enc = encode(b, pair.source_ids);
  const DecoderRun run = config_.is_transformer() ? run_transformer_decoder(b, enc, inputs)
                                                  : run_lstm_decoder(b, enc, inputs);
  LossResult result;
  const std::size_t extended = pair.extended_size();
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    const Var p = output_distribution(b, run.states[t], run.attentions[t], run.contexts[t], run.inputs[t],
                                      pair.source_ids, extended);
    TokenId y = target[t + 1];
    if (y >= p.size()) y = Vocabulary::kUnk;
    const Var nll = ad::scale(ad::log_floor(ad::pick(p, y), kProbabilityFloor), -1.0);
    result.total = result.total.valid() ? ad::add(result.total, nll) : nll;
    if (keep_distributions) result.distributions.push_back(p.value());
  }
  result.tokens = inputs.size();
  return result;
}

std::pair<Real, std::size_t> Seq2SeqModel::evaluate_nll(const LinearizedPair& pair) const {
  Graph g;
  Binding b(g, params_);
  const LossResult r = forward_loss(b, pair);
  return {r.total.item(), r.tokens};
}

json Seq2SeqModel::descriptor() const { return {{"kind", "seq2seq"}, {"config", config_.to_json()}}; }

// ---------------------------------------------------------------------------
// Step-wise decoding

namespace {

std::vector<Real> log_of(const Tensor& p) {
  std::vector<Real> out(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    out[i] = p[i] > 0 ? std::log(p[i]) : -std::numeric_limits<Real>::infinity();
  }
  return out;
}

std::vector<Real> values_of(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

}  // namespace

class LstmSession : public StepModel {
 public:
  LstmSession(const Seq2SeqModel& model, const LinearizedPair& pair)
      : model_(model), source_(pair.source_ids), extended_(pair.extended_size()) {
    Graph g;
    Binding b(g, model.params());
    const EncoderOutput enc = model.encode(b, source_);
    states_ = enc.states.value();
    keys_ = enc.keys.value();
    for (const Var& h : enc.init_hidden) start_.hidden.push_back(h.value());
    for (const Var& c : enc.init_cell) start_.cell.push_back(c.value());
  }

  std::size_t output_size() const override {
    return model_.config().copy_enabled ? extended_ : model_.config().vocab_size;
  }
  std::size_t source_length() const override { return source_.size(); }
  DecoderState start() const override { return start_; }

  StepOutput step(const DecoderState& state, TokenId token, DecoderState& next) const override {
    Graph g;
    Binding b(g, model_.params());
    EncoderOutput enc;
    enc.states = g.constant(states_);
    enc.keys = g.constant(keys_);
    std::vector<Var> h, c;
    for (const Tensor& t : state.hidden) h.push_back(g.constant(t));
    for (const Tensor& t : state.cell) c.push_back(g.constant(t));
    const Var x = ad::embedding_row(b("embedding"), model_.clamp_input(token));
    const Var s = model_.lstm_decoder_step(b, x, h, c);
    const AttentionResult att = model_.attention(b, s, enc);
    const Var p = model_.output_distribution(b, s, att.weights, att.context, x, source_, extended_);
    next.hidden.clear();
    next.cell.clear();
    for (const Var& v : h) next.hidden.push_back(v.value());
    for (const Var& v : c) next.cell.push_back(v.value());
    next.prefix = state.prefix;
    next.prefix.push_back(token);
    return {log_of(p.value()), values_of(att.weights.value())};
  }

 private:
  const Seq2SeqModel& model_;
  std::vector<TokenId> source_;
  std::size_t extended_;
  Tensor states_;
  Tensor keys_;
  DecoderState start_;
};

class TransformerSession : public StepModel {
 public:
  TransformerSession(const Seq2SeqModel& model, const LinearizedPair& pair)
      : model_(model), source_(pair.source_ids), extended_(pair.extended_size()) {
    Graph g;
    Binding b(g, model.params());
    states_ = model.encode(b, source_).states.value();
  }

  std::size_t output_size() const override {
    return model_.config().copy_enabled ? extended_ : model_.config().vocab_size;
  }
  std::size_t source_length() const override { return source_.size(); }
  DecoderState start() const override { return {}; }

  StepOutput step(const DecoderState& state, TokenId token, DecoderState& next) const override {
    next.prefix = state.prefix;
    next.prefix.push_back(token);
    Graph g;
    Binding b(g, model_.params());
    EncoderOutput enc;
    enc.states = g.constant(states_);
    const auto run = model_.run_transformer_decoder(b, enc, next.prefix);
    const std::size_t t = next.prefix.size() - 1;
    const Var p = model_.output_distribution(b, run.states[t], run.attentions[t], run.contexts[t],
                                             run.inputs[t], source_, extended_);
    return {log_of(p.value()), values_of(run.attentions[t].value())};
  }

 private:
  const Seq2SeqModel& model_;
  std::vector<TokenId> source_;
  std::size_t extended_;
  Tensor states_;
};

std::unique_ptr<StepModel> Seq2SeqModel::bind_source(const LinearizedPair& pair) const {
  if (pair.vocab_size != config_.vocab_size) {
    throw UsageError("bind_source: pair vocabulary size " + std::to_string(pair.vocab_size) +
                     " does not match model vocabulary " + std::to_string(config_.vocab_size));
  }
  if (config_.is_transformer()) return std::make_unique<TransformerSession>(*this, pair);
  return std::make_unique<LstmSession>(*this, pair);
}

// ---------------------------------------------------------------------------
// Persistence

void save_model(const std::filesystem::path& path, const Seq2SeqModel& model, const json& meta) {
  json descriptor = model.descriptor();
  descriptor["meta"] = meta;
  save_checkpoint(path, descriptor, model.params());
}

LoadedModel load_model(const std::filesystem::path& path, std::optional<Variant> expected) {
  Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.descriptor.value("kind", "") != "seq2seq" || !ckpt.descriptor.contains("config")) {
    throw FormatError(path.string() + ": not a seq2seq checkpoint");
  }
  const ModelConfig config = ModelConfig::from_json(ckpt.descriptor["config"]);
  if (expected && *expected != config.variant) {
    throw FormatError(path.string() + ": checkpoint holds " + std::string(variant_name(config.variant)) +
                      ", expected " + std::string(variant_name(*expected)));
  }
  json meta = ckpt.descriptor.value("meta", json::object());
  return {Seq2SeqModel(config, std::move(ckpt.params)), std::move(meta)};
}

std::size_t load_pretrained_embeddings(Seq2SeqModel& model, const Vocabulary& vocab,
                                       const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read embeddings " + path.string());
  Tensor& table = model.params().at("embedding");
  const std::size_t dim = table.dim(1);
  std::vector<bool> filled(table.dim(0), false);
  std::size_t count = 0, line_no = 0;
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    const Tokens fields = split_whitespace(line);
    if (fields.empty()) continue;
    if (line_no == 1 && fields.size() == 2) continue;  // "count dim" header
    if (fields.size() != dim + 1) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected " + std::to_string(dim) +
                        " values, got " + std::to_string(fields.size() - 1));
    }
    const auto id = vocab.find(fields[0]);
    if (!id || *id >= table.dim(0) || filled[*id]) continue;
    for (std::size_t k = 0; k < dim; ++k) {
      try {
        table.at(*id, k) = std::stod(fields[k + 1]);
      } catch (const std::exception&) {
        throw FormatError(path.string() + ":" + std::to_string(line_no) + ": bad number");
      }
    }
    filled[*id] = true;
    ++count;
  }
  return count;
}

}  // namespace kgdial
