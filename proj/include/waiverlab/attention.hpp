#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "waiverlab/positional.hpp"
#include "waiverlab/tensor.hpp"

namespace waiverlab {

enum class MaskRegime { causal, global, custom };

std::string to_string(MaskRegime regime);

// Square attend/blocked table applied before softmax. Every row keeps at
// least one attend entry, so a fully masked query cannot be constructed.
class MaskMatrix {
 public:
  // Custom pattern, row-major; nonzero = attend.
  MaskMatrix(std::size_t len, std::vector<std::uint8_t> attend);

  std::size_t size() const { return len_; }
  bool attends(std::size_t i, std::size_t j) const { return attend_[i * len_ + j] != 0; }
  MaskRegime regime() const { return regime_; }
  // Rows rewritten by modify_mask_row, in application order.
  const std::vector<std::size_t>& modified_rows() const { return modified_rows_; }
  std::size_t attend_count(std::size_t row) const;

  friend MaskMatrix build_causal_mask(std::size_t len);
  friend MaskMatrix build_global_mask(std::size_t len);
  friend MaskMatrix modify_mask_row(const MaskMatrix& mask, std::size_t k);

 private:
  MaskMatrix() = default;
  void check_rows() const;

  std::size_t len_ = 0;
  std::vector<std::uint8_t> attend_;
  MaskRegime regime_ = MaskRegime::custom;
  std::vector<std::size_t> modified_rows_;
};

MaskMatrix build_causal_mask(std::size_t len);
MaskMatrix build_global_mask(std::size_t len);
// Row k keeps only its diagonal entry; all other rows are untouched.
MaskMatrix modify_mask_row(const MaskMatrix& mask, std::size_t k);

struct AttentionHeadOutput {
  Tensor q;        // [L, head_dim], after rotary when enabled
  Tensor k;        // [L, head_dim], after rotary when enabled
  Tensor v;        // [L, head_dim]
  Tensor weights;  // [L, L], row-stochastic, exact zeros where blocked
  Tensor out;      // [L, head_dim] = weights * v
};

// logits = scale * q k^T; blocked entries -> -inf; weights = softmax; out = weights v.
AttentionHeadOutput attend(const Tensor& q, const Tensor& k, const Tensor& v, const MaskMatrix& mask, float scale);

// Row-vector convention: projections are x * W with W of shape [d_model, d_model].
struct ProjectionSet {
  Tensor wq, wk, wv, wo;
};

struct MultiHeadOutput {
  Tensor out;  // [L, d_model]
  std::vector<AttentionHeadOutput> heads;
};

// Splits Q/K/V into num_heads column blocks, applies rotary to Q and K only
// (never V), attends each head at scale 1/sqrt(head_dim), concatenates, and
// projects by W_O. Heads run in parallel.
MultiHeadOutput multi_head_attend(const Tensor& x, const ProjectionSet& proj, std::size_t num_heads,
                                  const MaskMatrix& mask, const std::optional<RotaryParams>& rope,
                                  std::span<const std::size_t> positions);

}  // namespace waiverlab
