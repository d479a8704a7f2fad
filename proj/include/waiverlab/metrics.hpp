#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "waiverlab/capture.hpp"
#include "waiverlab/tensor.hpp"

namespace waiverlab {

enum class AttentionRegime { causal, global };

AttentionRegime regime_from_string(const std::string& s);

// Mean attention mass that key position j receives from eligible query rows:
// rows i > j under causal attention, rows i != j under global attention.
double sink_score(const Tensor& weights, std::size_t j, AttentionRegime regime);

struct VNormEntry {
  std::size_t position = 0;
  double l1 = 0.0;
  double l2 = 0.0;
  std::optional<double> l1_over_l2;  // empty when l2 < 1e-12
};

std::vector<VNormEntry> v_norm_profile(const Tensor& v);

struct CosEntry {
  double dot = 0.0;
  double q_norm = 0.0;
  double k_norm = 0.0;
  std::optional<double> cos_theta;  // empty when either norm <= 1e-12
};

// dot(q_i, k_j) = |q_i| |k_j| cos(theta_ij) for every pair.
struct CosDecomposition {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<CosEntry> entries;

  const CosEntry& at(std::size_t i, std::size_t j) const { return entries[i * cols + j]; }
};

CosDecomposition cos_decompose(const Tensor& q, const Tensor& k);

// Relative L2 change of out[i] when column j is dropped and row i is
// renormalized. Empty for i == j and for rows with weights[i][j] == 1.
std::vector<std::optional<double>> leave_one_out_delta(const Tensor& weights, const Tensor& v, std::size_t j);

// |a(i,j) v(j)| / |out[i]|: the share of row i's output carried by column j
// without renormalization. Empty for i == j or a zero output row.
std::vector<std::optional<double>> contribution_share(const Tensor& weights, const Tensor& v, std::size_t j);

// Linear interpolation between order statistics, q in [0, 1].
double quantile(std::vector<double> values, double q);

struct WaiverThresholds {
  double sink_threshold = 0.3;
  double vnorm_quantile = 0.1;
};

enum WaiverFlag : std::uint8_t {
  kAttentionSink = 1u << 0,
  kLowVNorm = 1u << 1,
  kWaiver = 1u << 2,
};

std::string flags_to_string(std::uint8_t flags);

struct WaiverRow {
  std::size_t layer = 0;
  std::size_t head = 0;
  std::size_t position = 0;
  std::optional<double> sink;  // empty when no query row is eligible
  double v_l1 = 0.0;
  double v_l2 = 0.0;
  std::optional<double> l1_over_l2;
  std::uint8_t flags = 0;
  bool intervened = false;
};

struct WaiverReport {
  WaiverThresholds thresholds;
  std::string regime;
  std::vector<std::size_t> intervened_positions;
  std::size_t num_layers = 0;
  std::size_t num_heads = 0;
  std::vector<WaiverRow> rows;  // ordered by (layer, head, position)

  // Positions flagged waiver in at least one head of `layer`, or of any
  // layer when `layer` is empty.
  std::vector<std::size_t> waiver_positions(std::optional<std::size_t> layer = std::nullopt) const;
  std::size_t heads_flagging(std::size_t layer, std::size_t position) const;
};

// Head (layer, h) pairs for which the capture holds attention weights.
std::vector<std::pair<std::size_t, std::size_t>> captured_heads(const Capture& capture);

WaiverReport detect_waivers(const Capture& capture, const WaiverThresholds& thresholds = {});

}  // namespace waiverlab
