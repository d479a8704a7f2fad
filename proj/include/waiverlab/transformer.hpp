#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "waiverlab/attention.hpp"
#include "waiverlab/capture.hpp"
#include "waiverlab/positional.hpp"
#include "waiverlab/tensor.hpp"

namespace waiverlab {

// causal_rope: causal mask, rotary Q/K, RMS norm, gated-SiLU FFN (Llama-like).
// global_learnable: global mask, additive learnable PE, mean-variance norm
// with bias, GELU FFN (BERT-like).
enum class Preset { causal_rope, global_learnable };

std::string to_string(Preset preset);
Preset preset_from_string(const std::string& s);

struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t num_heads = 4;
  std::size_t head_dim = 16;
  std::size_t num_layers = 2;
  std::size_t ffn_hidden = 128;
  std::size_t vocab_size = 256;
  Preset regime = Preset::causal_rope;
  std::size_t max_len = 64;
  std::uint64_t seed = 0;
  double norm_eps = 1e-5;
  double rope_base = 10000.0;

  void validate() const;
  bool causal() const { return regime == Preset::causal_rope; }
  // "causal" or "global"; the attention-regime label written to captures.
  std::string attention_regime() const { return causal() ? "causal" : "global"; }
  RotaryParams rotary() const { return {head_dim, rope_base}; }
};

nlohmann::json to_json(const ModelConfig& config);
ModelConfig config_from_json(const nlohmann::json& j);

struct LayerWeights {
  Tensor wq, wk, wv, wo;  // [d_model, d_model]
  Tensor ffn_in;          // [d_model, ffn_hidden]
  Tensor ffn_gate;        // [d_model, ffn_hidden], causal preset only
  Tensor ffn_out;         // [ffn_hidden, d_model]
  Tensor norm1_gain, norm1_bias, norm2_gain, norm2_bias;  // [d_model]

  ProjectionSet projections() const { return {wq, wk, wv, wo}; }
};

struct ModelWeights {
  ModelConfig config;
  Tensor token_embedding;  // [vocab_size, d_model]
  std::vector<LayerWeights> layers;
  std::optional<LearnablePE> pe;         // global preset
  std::optional<Tensor> type_embedding;  // [1, d_model], global preset

  void validate() const;
};

// Seeded uniform init with std 1/sqrt(fan_in); bitwise reproducible per config.
ModelWeights init_random_model(const ModelConfig& config);

struct ForwardResult {
  std::vector<Tensor> hidden;  // per layer, [L, d_model]
  Capture capture;             // empty unless capture was requested
};

// Pre-norm blocks: x + Attn(Norm(x)), then x + FFN(Norm(x)). The same mask is
// applied at every layer.
ForwardResult forward(const ModelWeights& weights, std::span<const std::size_t> token_ids, const MaskMatrix& mask,
                      bool capture);

// Hidden state after `layer` for a position whose attention rows are
// self-only at every layer. `position` only matters for the learnable-PE preset.
Tensor non_mixed_path(const ModelWeights& weights, std::size_t token_id, std::size_t layer, std::size_t position = 0);

// Layer 0 is rewritten so that `waiver_token` becomes a waiver element. Axis 0
// of the embedding is the marker; axis 1 is a constant carried by every other
// token, giving all queries a shared positive component. W_V is projected
// to annihilate the normalized marker direction.
ModelWeights build_synthetic_waiver_model(const ModelConfig& config, std::size_t waiver_token);

// Random sequence of length `len` over the vocabulary minus `waiver_token`,
// with the waiver token placed at `waiver_position`.
std::vector<std::size_t> synthetic_sequence(const ModelConfig& config, std::size_t waiver_token,
                                            std::size_t waiver_position, std::size_t len, std::uint64_t seed);

// Weights <-> capture_io bundle ("emb.token", "layer{i}.wq", ...).
Capture save_model(const ModelWeights& weights);
ModelWeights load_model(const Capture& capture);

// Row-wise normalizations and activations shared by forward and non_mixed_path.
Tensor rms_norm(const Tensor& x, const Tensor& gain, double eps);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);
Tensor feed_forward(const LayerWeights& layer, const Tensor& x, bool gated);

}  // namespace waiverlab
