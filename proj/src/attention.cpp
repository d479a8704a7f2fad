#include "waiverlab/attention.hpp"

#include <cmath>
#include <exception>
#include <limits>

#include "waiverlab/error.hpp"

namespace waiverlab {

std::string to_string(MaskRegime regime) {
  switch (regime) {
    case MaskRegime::causal:
      return "causal";
    case MaskRegime::global:
      return "global";
    case MaskRegime::custom:
      return "custom";
  }
  return "custom";
}

MaskMatrix::MaskMatrix(std::size_t len, std::vector<std::uint8_t> attend)
    : len_(len), attend_(std::move(attend)), regime_(MaskRegime::custom) {
  if (len_ == 0) throw DimensionError("mask length must be at least 1");
  if (attend_.size() != len_ * len_) {
    throw DimensionError("mask of length " + std::to_string(len_) + " needs " + std::to_string(len_ * len_) +
                         " entries, got " + std::to_string(attend_.size()));
  }
  check_rows();
}

void MaskMatrix::check_rows() const {
  for (std::size_t i = 0; i < len_; ++i) {
    if (attend_count(i) == 0) throw ConfigError("mask row " + std::to_string(i) + " blocks every key");
  }
}

std::size_t MaskMatrix::attend_count(std::size_t row) const {
  std::size_t n = 0;
  for (std::size_t j = 0; j < len_; ++j) n += attends(row, j) ? 1 : 0;
  return n;
}

MaskMatrix build_causal_mask(std::size_t len) {
  if (len == 0) throw DimensionError("mask length must be at least 1");
  MaskMatrix m;
  m.len_ = len;
  m.regime_ = MaskRegime::causal;
  m.attend_.assign(len * len, 0);
  for (std::size_t i = 0; i < len; ++i)
    for (std::size_t j = 0; j <= i; ++j) m.attend_[i * len + j] = 1;
  return m;
}

MaskMatrix build_global_mask(std::size_t len) {
  if (len == 0) throw DimensionError("mask length must be at least 1");
  MaskMatrix m;
  m.len_ = len;
  m.regime_ = MaskRegime::global;
  m.attend_.assign(len * len, 1);
  return m;
}

MaskMatrix modify_mask_row(const MaskMatrix& mask, std::size_t k) {
  if (k >= mask.size()) {
    throw IndexError("modify_mask_row: row " + std::to_string(k) + " outside mask of length " +
                     std::to_string(mask.size()));
  }
  MaskMatrix m = mask;
  for (std::size_t j = 0; j < m.len_; ++j) m.attend_[k * m.len_ + j] = (j == k) ? 1 : 0;
  m.regime_ = MaskRegime::custom;
  m.modified_rows_.push_back(k);
  return m;
}

AttentionHeadOutput attend(const Tensor& q, const Tensor& k, const Tensor& v, const MaskMatrix& mask, float scale) {
  if (q.rank() != 2 || k.shape() != q.shape() || v.rank() != 2 || v.rows() != q.rows()) {
    throw DimensionError("attend: q " + shape_to_string(q.shape()) + ", k " + shape_to_string(k.shape()) + ", v " +
                         shape_to_string(v.shape()));
  }
  const std::size_t len = q.rows();
  if (mask.size() != len) {
    throw DimensionError("attend: mask length " + std::to_string(mask.size()) + " vs sequence length " +
                         std::to_string(len));
  }
  Tensor logits = matmul(q, transpose(k));
  constexpr float neg_inf = -std::numeric_limits<float>::infinity();
  for (std::size_t i = 0; i < len; ++i)
    for (std::size_t j = 0; j < len; ++j) logits.at(i, j) = mask.attends(i, j) ? logits.at(i, j) * scale : neg_inf;

  AttentionHeadOutput head;
  head.weights = softmax_rows(logits);
  head.out = matmul(head.weights, v);
  head.q = q;
  head.k = k;
  head.v = v;
  return head;
}

MultiHeadOutput multi_head_attend(const Tensor& x, const ProjectionSet& proj, std::size_t num_heads,
                                  const MaskMatrix& mask, const std::optional<RotaryParams>& rope,
                                  std::span<const std::size_t> positions) {
  if (x.rank() != 2) throw DimensionError("multi_head_attend: x must be [L, d_model]");
  const std::size_t d_model = x.cols();
  if (num_heads == 0 || d_model % num_heads != 0) {
    throw DimensionError("multi_head_attend: d_model " + std::to_string(d_model) + " not divisible by " +
                         std::to_string(num_heads) + " heads");
  }
  for (const Tensor* w : {&proj.wq, &proj.wk, &proj.wv, &proj.wo}) {
    if (w->rank() != 2 || w->rows() != d_model || w->cols() != d_model) {
      throw DimensionError("multi_head_attend: projection " + shape_to_string(w->shape()) + " does not match d_model " +
                           std::to_string(d_model));
    }
  }
  const std::size_t head_dim = d_model / num_heads;
  if (rope && rope->head_dim != head_dim) {
    throw ConfigError("multi_head_attend: rotary head_dim " + std::to_string(rope->head_dim) + " vs " +
                      std::to_string(head_dim));
  }

  const Tensor q_all = matmul(x, proj.wq);
  const Tensor k_all = matmul(x, proj.wk);
  const Tensor v_all = matmul(x, proj.wv);
  const float scale = 1.0f / std::sqrt(static_cast<float>(head_dim));

  MultiHeadOutput result;
  result.heads.resize(num_heads);
  std::exception_ptr failure;

#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t h = 0; h < static_cast<std::ptrdiff_t>(num_heads); ++h) {
    try {
      const std::size_t begin = static_cast<std::size_t>(h) * head_dim;
      Tensor qh = slice_cols(q_all, begin, head_dim);
      Tensor kh = slice_cols(k_all, begin, head_dim);
      if (rope) {
        qh = apply_rope(qh, positions, *rope);
        kh = apply_rope(kh, positions, *rope);
      }
      result.heads[h] = attend(qh, kh, slice_cols(v_all, begin, head_dim), mask, scale);
    } catch (...) {
#pragma omp critical(mha_err)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);

  Tensor concat({x.rows(), d_model});
  for (std::size_t h = 0; h < num_heads; ++h) set_cols(concat, result.heads[h].out, h * head_dim);
  result.out = matmul(concat, proj.wo);
  return result;
}

}  // namespace waiverlab
