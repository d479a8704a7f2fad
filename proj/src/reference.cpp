#include "waiverlab/reference.hpp"

#include <cmath>
#include <limits>

#include "waiverlab/error.hpp"

namespace waiverlab::reference {

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
    throw DimensionError("reference::matmul: cannot multiply " + shape_to_string(a.shape()) + " by " +
                         shape_to_string(b.shape()));
  }
  Tensor out({a.rows(), b.cols()});
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < a.cols(); ++p) acc += static_cast<double>(a.at(i, p)) * b.at(p, j);
      out.at(i, j) = static_cast<float>(acc);
    }
  }
  return out;
}

Tensor softmax_rows(const Tensor& logits) {
  const std::size_t width = logits.shape().back();
  const std::size_t nrows = logits.numel() / width;
  Tensor out(logits.shape());
  auto in = logits.data();
  auto po = out.data();
  for (std::size_t r = 0; r < nrows; ++r) {
    float mx = -std::numeric_limits<float>::infinity();
    for (std::size_t j = 0; j < width; ++j) mx = std::max(mx, in[r * width + j]);
    if (std::isinf(mx)) throw DegenerateRowError("reference::softmax_rows: fully masked row " + std::to_string(r));
    double sum = 0.0;
    for (std::size_t j = 0; j < width; ++j) sum += std::exp(static_cast<double>(in[r * width + j]) - mx);
    for (std::size_t j = 0; j < width; ++j)
      po[r * width + j] = static_cast<float>(std::exp(static_cast<double>(in[r * width + j]) - mx) / sum);
  }
  return out;
}

AttentionHeadOutput attend(const Tensor& q, const Tensor& k, const Tensor& v, const MaskMatrix& mask, float scale) {
  const std::size_t len = q.rows();
  Tensor logits({len, len});
  for (std::size_t i = 0; i < len; ++i) {
    for (std::size_t j = 0; j < len; ++j) {
      if (!mask.attends(i, j)) {
        logits.at(i, j) = -std::numeric_limits<float>::infinity();
        continue;
      }
      double acc = 0.0;
      for (std::size_t d = 0; d < q.cols(); ++d) acc += static_cast<double>(q.at(i, d)) * k.at(j, d);
      logits.at(i, j) = static_cast<float>(acc) * scale;
    }
  }
  AttentionHeadOutput head;
  head.weights = reference::softmax_rows(logits);
  head.out = reference::matmul(head.weights, v);
  head.q = q;
  head.k = k;
  head.v = v;
  return head;
}

}  // namespace waiverlab::reference
