#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "waiverlab/tensor.hpp"

namespace waiverlab {

// Rotary embedding parameters. Dimension k is paired with k + head_dim/2 and
// the pair at position m is rotated by m * base^(-2k/head_dim).
struct RotaryParams {
  std::size_t head_dim = 0;
  double base = 10000.0;

  void validate() const;
};

inline constexpr const char* kRopePairing = "half_split";

Tensor apply_rope(const Tensor& x, std::span<const std::size_t> positions, const RotaryParams& params);

struct PeSwap {
  std::size_t target = 0;
  std::size_t source = 0;
  bool operator==(const PeSwap&) const = default;
};

// Learnable additive positional table, one row per position.
struct LearnablePE {
  Tensor table;  // [max_len, d_model]
  std::vector<PeSwap> swaps;

  LearnablePE() = default;
  explicit LearnablePE(Tensor t);

  std::size_t max_len() const { return table.rows(); }
  std::size_t d_model() const { return table.cols(); }
};

// out[i] = token_emb[i] + type_emb[i] + pe.table[i]
Tensor add_learnable_pe(const Tensor& token_emb, const Tensor& type_emb, const LearnablePE& pe);

std::vector<std::pair<std::size_t, double>> pe_norm_profile(const LearnablePE& pe);

// Copies row `source` over row `target`; the source row is left intact and
// the pair is appended to the swap log.
LearnablePE swap_pe_row(const LearnablePE& pe, std::size_t target, std::size_t source);

}  // namespace waiverlab
