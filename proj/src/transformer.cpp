#include "waiverlab/transformer.hpp"

#include <cmath>
#include <numeric>
#include <random>

#include "waiverlab/error.hpp"

namespace waiverlab {

using nlohmann::json;

namespace {

// mt19937_64 bits mapped to uniform(-sqrt(3)s, sqrt(3)s); avoids the
// implementation-defined std::*_distribution algorithms.
class UniformInit {
 public:
  explicit UniformInit(std::uint64_t seed) : gen_(seed) {}

  double unit() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  Tensor matrix(std::size_t rows, std::size_t cols, double stddev) {
    Tensor t({rows, cols});
    const double half_width = std::sqrt(3.0) * stddev;
    for (float& x : t.data()) x = static_cast<float>((2.0 * unit() - 1.0) * half_width);
    return t;
  }

  std::uint64_t bits() { return gen_(); }

 private:
  std::mt19937_64 gen_;
};

Tensor filled(std::size_t n, float value) {
  return Tensor({n}, std::vector<float>(n, value));
}

Tensor as_row(std::span<const float> v) {
  return Tensor({1, v.size()}, std::vector<float>(v.begin(), v.end()));
}

Tensor normalize(const ModelConfig& cfg, const Tensor& x, const Tensor& gain, const Tensor& bias) {
  return cfg.causal() ? rms_norm(x, gain, cfg.norm_eps) : layer_norm(x, gain, bias, cfg.norm_eps);
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }
double silu(double x) { return x / (1.0 + std::exp(-x)); }

void expect_shape(const Tensor& t, const Shape& shape, const std::string& what) {
  if (t.shape() != shape) {
    throw ConfigError(what + " has shape " + shape_to_string(t.shape()) + ", expected " + shape_to_string(shape));
  }
}

Tensor embed(const ModelWeights& w, std::span<const std::size_t> token_ids) {
  const auto& cfg = w.config;
  const std::size_t len = token_ids.size();
  if (len == 0) throw DimensionError("forward: empty token sequence");
  Tensor tok({len, cfg.d_model});
  for (std::size_t i = 0; i < len; ++i) {
    if (token_ids[i] >= cfg.vocab_size) {
      throw VocabularyError("token id " + std::to_string(token_ids[i]) + " at position " + std::to_string(i) +
                            " is outside vocabulary of size " + std::to_string(cfg.vocab_size));
    }
    auto src = w.token_embedding.row(token_ids[i]);
    std::copy(src.begin(), src.end(), tok.row(i).begin());
  }
  if (cfg.causal()) return tok;

  Tensor type({len, cfg.d_model});
  for (std::size_t i = 0; i < len; ++i) {
    auto src = w.type_embedding->row(0);
    std::copy(src.begin(), src.end(), type.row(i).begin());
  }
  return add_learnable_pe(tok, type, *w.pe);
}

}  // namespace

std::string to_string(Preset preset) {
  return preset == Preset::causal_rope ? "causal_rope" : "global_learnable";
}

Preset preset_from_string(const std::string& s) {
  if (s == "causal_rope" || s == "causal") return Preset::causal_rope;
  if (s == "global_learnable" || s == "global") return Preset::global_learnable;
  throw ConfigError("unknown model preset '" + s + "'");
}

void ModelConfig::validate() const {
  if (d_model == 0 || num_heads == 0 || head_dim == 0 || num_layers == 0 || ffn_hidden == 0 || vocab_size == 0 ||
      max_len == 0) {
    throw ConfigError("model dimensions must all be positive");
  }
  if (d_model != num_heads * head_dim) {
    throw ConfigError("d_model " + std::to_string(d_model) + " != num_heads " + std::to_string(num_heads) +
                      " x head_dim " + std::to_string(head_dim));
  }
  if (!(norm_eps > 0.0)) throw ConfigError("norm_eps must be positive");
  if (causal()) rotary().validate();
}

json to_json(const ModelConfig& c) {
  return json{{"d_model", c.d_model},       {"num_heads", c.num_heads},     {"head_dim", c.head_dim},
              {"num_layers", c.num_layers}, {"ffn_hidden", c.ffn_hidden},   {"vocab_size", c.vocab_size},
              {"regime", to_string(c.regime)}, {"max_len", c.max_len},      {"seed", c.seed},
              {"norm_eps", c.norm_eps},     {"rope_base", c.rope_base}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  try {
    c.d_model = j.at("d_model").get<std::size_t>();
    c.num_heads = j.at("num_heads").get<std::size_t>();
    c.head_dim = j.at("head_dim").get<std::size_t>();
    c.num_layers = j.at("num_layers").get<std::size_t>();
    c.ffn_hidden = j.at("ffn_hidden").get<std::size_t>();
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.regime = preset_from_string(j.at("regime").get<std::string>());
    c.max_len = j.at("max_len").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.norm_eps = j.at("norm_eps").get<double>();
    c.rope_base = j.value("rope_base", 10000.0);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed model_config: ") + e.what());
  }
  c.validate();
  return c;
}

void ModelWeights::validate() const {
  config.validate();
  const auto& c = config;
  expect_shape(token_embedding, {c.vocab_size, c.d_model}, "emb.token");
  if (layers.size() != c.num_layers) throw ConfigError("layer count does not match num_layers");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    const std::string p = "layer" + std::to_string(i);
    for (const auto* w : {&l.wq, &l.wk, &l.wv, &l.wo}) expect_shape(*w, {c.d_model, c.d_model}, p + " projection");
    expect_shape(l.ffn_in, {c.d_model, c.ffn_hidden}, p + ".ffn_in");
    if (c.causal()) expect_shape(l.ffn_gate, {c.d_model, c.ffn_hidden}, p + ".ffn_gate");
    expect_shape(l.ffn_out, {c.ffn_hidden, c.d_model}, p + ".ffn_out");
    for (const auto* v : {&l.norm1_gain, &l.norm1_bias, &l.norm2_gain, &l.norm2_bias})
      expect_shape(*v, {c.d_model}, p + " norm parameter");
  }
  if (!c.causal()) {
    if (!pe) throw ConfigError("global_learnable preset requires a learnable PE table");
    expect_shape(pe->table, {c.max_len, c.d_model}, "pe.table");
    if (!type_embedding) throw ConfigError("global_learnable preset requires a type embedding");
    expect_shape(*type_embedding, {1, c.d_model}, "emb.type");
  }
}

Tensor rms_norm(const Tensor& x, const Tensor& gain, double eps) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto r = x.row(i);
    double ss = 0.0;
    for (float v : r) ss += static_cast<double>(v) * v;
    const double inv = 1.0 / std::sqrt(ss / static_cast<double>(r.size()) + eps);
    auto o = out.row(i);
    for (std::size_t d = 0; d < r.size(); ++d) o[d] = static_cast<float>(r[d] * inv * gain.data()[d]);
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto r = x.row(i);
    const double n = static_cast<double>(r.size());
    double mean = 0.0;
    for (float v : r) mean += v;
    mean /= n;
    double var = 0.0;
    for (float v : r) var += (v - mean) * (v - mean);
    const double inv = 1.0 / std::sqrt(var / n + eps);
    auto o = out.row(i);
    for (std::size_t d = 0; d < r.size(); ++d)
      o[d] = static_cast<float>((r[d] - mean) * inv * gain.data()[d] + bias.data()[d]);
  }
  return out;
}

Tensor feed_forward(const LayerWeights& layer, const Tensor& x, bool gated) {
  Tensor hidden = matmul(x, layer.ffn_in);
  if (gated) {
    const Tensor gate = matmul(x, layer.ffn_gate);
    auto h = hidden.data();
    auto g = gate.data();
    for (std::size_t i = 0; i < h.size(); ++i) h[i] = static_cast<float>(silu(g[i]) * h[i]);
  } else {
    for (float& v : hidden.data()) v = static_cast<float>(gelu(v));
  }
  return matmul(hidden, layer.ffn_out);
}

ModelWeights init_random_model(const ModelConfig& config) {
  config.validate();
  UniformInit rng(config.seed);
  const std::size_t d = config.d_model;
  const double s_d = 1.0 / std::sqrt(static_cast<double>(d));
  const double s_f = 1.0 / std::sqrt(static_cast<double>(config.ffn_hidden));

  ModelWeights w;
  w.config = config;
  w.token_embedding = rng.matrix(config.vocab_size, d, 1.0);
  for (std::size_t i = 0; i < config.num_layers; ++i) {
    LayerWeights l;
    l.wq = rng.matrix(d, d, s_d);
    l.wk = rng.matrix(d, d, s_d);
    l.wv = rng.matrix(d, d, s_d);
    l.wo = rng.matrix(d, d, s_d);
    l.ffn_in = rng.matrix(d, config.ffn_hidden, s_d);
    if (config.causal()) l.ffn_gate = rng.matrix(d, config.ffn_hidden, s_d);
    l.ffn_out = rng.matrix(config.ffn_hidden, d, s_f);
    l.norm1_gain = filled(d, 1.0f);
    l.norm1_bias = filled(d, 0.0f);
    l.norm2_gain = filled(d, 1.0f);
    l.norm2_bias = filled(d, 0.0f);
    w.layers.push_back(std::move(l));
  }
  if (!config.causal()) {
    w.pe = LearnablePE(rng.matrix(config.max_len, d, 0.5));
    w.type_embedding = Tensor({1, d});
  }
  return w;
}

ForwardResult forward(const ModelWeights& weights, std::span<const std::size_t> token_ids, const MaskMatrix& mask,
                      bool capture) {
  const auto& cfg = weights.config;
  const std::size_t len = token_ids.size();
  if (!cfg.causal() && len > cfg.max_len) {
    throw SequenceTooLongError("sequence length " + std::to_string(len) + " exceeds max_len " +
                               std::to_string(cfg.max_len));
  }
  if (mask.size() != len) {
    throw DimensionError("mask length " + std::to_string(mask.size()) + " vs sequence length " + std::to_string(len));
  }

  Tensor x = embed(weights, token_ids);
  std::vector<std::size_t> positions(len);
  std::iota(positions.begin(), positions.end(), std::size_t{0});
  const std::optional<RotaryParams> rope =
      cfg.causal() ? std::optional<RotaryParams>(cfg.rotary()) : std::nullopt;

  ForwardResult result;
  Capture& cap = result.capture;
  if (capture) {
    std::vector<float> ids(token_ids.begin(), token_ids.end());
    cap.add(names::kTokenIds, Tensor::vector(std::move(ids)));
    cap.add(names::kEmbeddingOut, x);
  }

  for (std::size_t li = 0; li < cfg.num_layers; ++li) {
    const LayerWeights& layer = weights.layers[li];
    MultiHeadOutput attn =
        multi_head_attend(normalize(cfg, x, layer.norm1_gain, layer.norm1_bias), layer.projections(), cfg.num_heads,
                          mask, rope, positions);
    x = add(x, attn.out);
    Tensor ffn = feed_forward(layer, normalize(cfg, x, layer.norm2_gain, layer.norm2_bias), cfg.causal());
    x = add(x, ffn);
    result.hidden.push_back(x);

    if (capture) {
      for (std::size_t h = 0; h < cfg.num_heads; ++h) {
        auto& head = attn.heads[h];
        cap.add(names::attn_weights(li, h), std::move(head.weights));
        cap.add(names::value(li, h), std::move(head.v));
        cap.add(names::query(li, h), std::move(head.q));
        cap.add(names::key(li, h), std::move(head.k));
      }
      cap.add(names::hidden(li), x);
      cap.add(names::ffn_out(li), std::move(ffn));
    }
  }

  if (capture) {
    auto& meta = cap.metadata;
    meta.regime = cfg.attention_regime();
    meta.model_name = "toy_" + to_string(cfg.regime);
    meta.source = "toy";
    meta.model_config = to_json(cfg);
    for (std::size_t row : mask.modified_rows()) meta.interventions.push_back({"mask_row", row, std::nullopt});
    if (weights.pe) {
      for (const auto& s : weights.pe->swaps) meta.interventions.push_back({"pe_swap", s.target, s.source});
      cap.add(names::kPeTable, weights.pe->table);
    }
    meta.extra = {{"mask_regime", to_string(mask.regime())}, {"attention_scale", "1/sqrt(head_dim)"}};
    if (cfg.causal()) {
      meta.extra["rope_base"] = cfg.rope_base;
      meta.extra["rope_pairing"] = kRopePairing;
    }
  }
  return result;
}

Tensor non_mixed_path(const ModelWeights& weights, std::size_t token_id, std::size_t layer, std::size_t position) {
  const auto& cfg = weights.config;
  if (token_id >= cfg.vocab_size) {
    throw VocabularyError("token id " + std::to_string(token_id) + " is outside vocabulary of size " +
                          std::to_string(cfg.vocab_size));
  }
  if (layer >= cfg.num_layers) throw IndexError("layer " + std::to_string(layer) + " out of range");

  Tensor x = as_row(weights.token_embedding.row(token_id));
  if (!cfg.causal()) {
    if (position >= cfg.max_len) throw IndexError("position " + std::to_string(position) + " beyond max_len");
    auto p = weights.pe->table.row(position);
    auto t = weights.type_embedding->row(0);
    auto o = x.row(0);
    for (std::size_t d = 0; d < o.size(); ++d) o[d] = o[d] + t[d] + p[d];
  }
  // A self-only attention row has weight exactly 1 on itself, so each head
  // returns its own V slice and the block reduces to x W_V W_O.
  for (std::size_t li = 0; li <= layer; ++li) {
    const LayerWeights& l = weights.layers[li];
    const Tensor v = matmul(normalize(cfg, x, l.norm1_gain, l.norm1_bias), l.wv);
    x = add(x, matmul(v, l.wo));
    x = add(x, feed_forward(l, normalize(cfg, x, l.norm2_gain, l.norm2_bias), cfg.causal()));
  }
  return Tensor::vector(std::vector<float>(x.data().begin(), x.data().end()));
}

ModelWeights build_synthetic_waiver_model(const ModelConfig& config, std::size_t waiver_token) {
  config.validate();
  if (config.num_layers < 1 || config.num_layers > 2) {
    throw ConfigError("synthetic waiver model needs 1 or 2 layers, got " + std::to_string(config.num_layers));
  }
  if (config.vocab_size < 8) {
    throw ConfigError("synthetic waiver model needs vocab_size >= 8, got " + std::to_string(config.vocab_size));
  }
  if (config.d_model < 4 || config.head_dim < 2) {
    throw ConfigError("d_model too small to reserve marker and query-bias axes");
  }
  if (waiver_token >= config.vocab_size) {
    throw VocabularyError("waiver token " + std::to_string(waiver_token) + " is outside the vocabulary");
  }

  constexpr std::size_t kMarker = 0;
  constexpr std::size_t kBias = 1;
  constexpr float kMarkerMagnitude = 1.0e5f;
  constexpr float kBiasValue = 2.0f;
  constexpr float kQueryGain = 1.5f;
  constexpr float kWaiverKeyGain = 1.5f;
  constexpr float kOtherKeyGain = 1.5f;

  ModelWeights w = init_random_model(config);
  const std::size_t d = config.d_model;

  for (std::size_t t = 0; t < config.vocab_size; ++t) {
    auto row = w.token_embedding.row(t);
    if (t == waiver_token) {
      std::fill(row.begin(), row.end(), 0.0f);
      row[kMarker] = kMarkerMagnitude;
    } else {
      row[kMarker] = 0.0f;
      row[kBias] = kBiasValue;
    }
  }
  if (w.pe) {
    for (std::size_t i = 0; i < w.pe->max_len(); ++i) {
      w.pe->table.at(i, kMarker) = 0.0f;
      w.pe->table.at(i, kBias) = 0.0f;
    }
  }

  LayerWeights& l0 = w.layers[0];

  // Normalized marker direction as layer 0 sees it.
  Tensor marker({1, d});
  marker.at(0, kMarker) = kMarkerMagnitude;
  const Tensor normed = normalize(config, marker, l0.norm1_gain, l0.norm1_bias);
  const double marker_norm = l2_norm(normed.data());
  std::vector<double> u(d);
  for (std::size_t i = 0; i < d; ++i) u[i] = normed.data()[i] / marker_norm;

  // W_V <- (I - u u^T) W_V, so the normalized marker maps to a zero value.
  {
    Tensor& wv = l0.wv;
    for (std::size_t c = 0; c < d; ++c) {
      double proj = 0.0;
      for (std::size_t r = 0; r < d; ++r) proj += u[r] * wv.at(r, c);
      for (std::size_t r = 0; r < d; ++r) wv.at(r, c) = static_cast<float>(wv.at(r, c) - u[r] * proj);
    }
  }

  // Key rows fed by the marker carry only the waiver signal.
  for (std::size_t c = 0; c < d; ++c) l0.wk.at(kMarker, c) = 0.0f;

  // The signal sits in the slowest rotary pair of each head so rotation
  // leaves its sign intact over desk-scale lengths.
  const std::size_t local = config.causal() ? config.head_dim / 2 - 1 : 0;
  for (std::size_t h = 0; h < config.num_heads; ++h) {
    const std::size_t col = h * config.head_dim + local;
    for (std::size_t r = 0; r < d; ++r) {
      l0.wq.at(r, col) = 0.0f;
      l0.wk.at(r, col) = 0.0f;
    }
    l0.wq.at(kBias, col) = kQueryGain;
    l0.wk.at(kMarker, col) = kWaiverKeyGain;
    l0.wk.at(kBias, col) = -kOtherKeyGain;
  }
  return w;
}

std::vector<std::size_t> synthetic_sequence(const ModelConfig& config, std::size_t waiver_token,
                                            std::size_t waiver_position, std::size_t len, std::uint64_t seed) {
  if (waiver_position >= len) throw IndexError("waiver position outside the sequence");
  if (config.vocab_size < 2) throw ConfigError("vocabulary too small");
  UniformInit rng(seed);
  std::vector<std::size_t> ids(len);
  for (auto& id : ids) {
    id = static_cast<std::size_t>(rng.bits() % (config.vocab_size - 1));
    if (id >= waiver_token) ++id;
  }
  ids[waiver_position] = waiver_token;
  return ids;
}

Capture save_model(const ModelWeights& weights) {
  weights.validate();
  Capture cap;
  cap.add(names::kTokenEmbedding, weights.token_embedding);
  for (std::size_t i = 0; i < weights.layers.size(); ++i) {
    const auto& l = weights.layers[i];
    const std::string p = "layer" + std::to_string(i) + ".";
    cap.add(p + "wq", l.wq);
    cap.add(p + "wk", l.wk);
    cap.add(p + "wv", l.wv);
    cap.add(p + "wo", l.wo);
    cap.add(p + "ffn_in", l.ffn_in);
    if (weights.config.causal()) cap.add(p + "ffn_gate", l.ffn_gate);
    cap.add(p + "ffn_out", l.ffn_out);
    cap.add(p + "norm1_gain", l.norm1_gain);
    cap.add(p + "norm1_bias", l.norm1_bias);
    cap.add(p + "norm2_gain", l.norm2_gain);
    cap.add(p + "norm2_bias", l.norm2_bias);
  }
  auto& meta = cap.metadata;
  meta.regime = weights.config.attention_regime();
  meta.model_name = "toy_" + to_string(weights.config.regime);
  meta.source = "toy";
  meta.model_config = to_json(weights.config);
  meta.extra = {{"kind", "model_weights"}};
  if (weights.pe) {
    cap.add(names::kPeTable, weights.pe->table);
    for (const auto& s : weights.pe->swaps) meta.interventions.push_back({"pe_swap", s.target, s.source});
  }
  if (weights.type_embedding) cap.add(names::kTypeEmbedding, *weights.type_embedding);
  return cap;
}

ModelWeights load_model(const Capture& cap) {
  ModelWeights w;
  w.config = config_from_json(cap.metadata.model_config);
  w.token_embedding = cap.get(names::kTokenEmbedding);
  for (std::size_t i = 0; i < w.config.num_layers; ++i) {
    const std::string p = "layer" + std::to_string(i) + ".";
    LayerWeights l;
    l.wq = cap.get(p + "wq");
    l.wk = cap.get(p + "wk");
    l.wv = cap.get(p + "wv");
    l.wo = cap.get(p + "wo");
    l.ffn_in = cap.get(p + "ffn_in");
    if (w.config.causal()) l.ffn_gate = cap.get(p + "ffn_gate");
    l.ffn_out = cap.get(p + "ffn_out");
    l.norm1_gain = cap.get(p + "norm1_gain");
    l.norm1_bias = cap.get(p + "norm1_bias");
    l.norm2_gain = cap.get(p + "norm2_gain");
    l.norm2_bias = cap.get(p + "norm2_bias");
    w.layers.push_back(std::move(l));
  }
  if (!w.config.causal()) {
    LearnablePE pe(cap.get(names::kPeTable));
    for (const auto& iv : cap.metadata.interventions) {
      if (iv.kind == "pe_swap" && iv.source) pe.swaps.push_back({iv.position, *iv.source});
    }
    w.pe = std::move(pe);
    w.type_embedding = cap.get(names::kTypeEmbedding);
  }
  w.validate();
  return w;
}

}  // namespace waiverlab
