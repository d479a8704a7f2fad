#include "waiverlab/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>

#include "waiverlab/error.hpp"

namespace waiverlab {

namespace {

std::size_t product(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void check_extents(const Shape& shape) {
  if (shape.empty()) throw DimensionError("tensor shape must have at least one axis");
  for (auto e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_to_string(shape));
  }
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected rank-2 tensor, got " + shape_to_string(t.shape()));
  }
}

}  // namespace

std::string shape_to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  check_extents(shape_);
  data_.assign(product(shape_), 0.0f);
}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
  check_extents(shape_);
  if (product(shape_) != data_.size()) {
    throw DimensionError("shape " + shape_to_string(shape_) + " needs " + std::to_string(product(shape_)) +
                         " values, got " + std::to_string(data_.size()));
  }
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0f;
  return t;
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<float>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<float> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("from_rows: ragged rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(data));
}

Tensor Tensor::vector(std::vector<float> values) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

std::span<float> Tensor::row(std::size_t i) {
  const std::size_t c = shape_.at(1);
  return std::span<float>(data_).subspan(i * c, c);
}

std::span<const float> Tensor::row(std::size_t i) const {
  const std::size_t c = shape_.at(1);
  return std::span<const float>(data_).subspan(i * c, c);
}

bool Tensor::bit_equal(const Tensor& other) const {
  if (shape_ != other.shape_) return false;
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (std::bit_cast<std::uint32_t>(data_[i]) != std::bit_cast<std::uint32_t>(other.data_[i])) return false;
  }
  return true;
}

void require_finite(const Tensor& t, const char* what) {
  for (float x : t.data()) {
    if (!std::isfinite(x)) throw NumericError(std::string(what) + ": non-finite value produced");
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: cannot multiply " + shape_to_string(a.shape()) + " by " +
                         shape_to_string(b.shape()));
  }
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  Tensor out({n, m});
  const float* pa = a.data().data();
  const float* pb = b.data().data();
  float* po = out.data().data();

#pragma omp parallel for schedule(static) if (n * k * m > 32768)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
    std::vector<double> acc(m, 0.0);
    const float* arow = pa + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const float* brow = pb + p * m;
      for (std::size_t j = 0; j < m; ++j) acc[j] += av * brow[j];
    }
    for (std::size_t j = 0; j < m; ++j) po[i * m + j] = static_cast<float>(acc[j]);
  }
  require_finite(out, "matmul");
  return out;
}

Tensor transpose(const Tensor& a) {
  require_rank2(a, "transpose");
  Tensor out({a.cols(), a.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out.at(j, i) = a.at(i, j);
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("add: shape mismatch " + shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
  }
  Tensor out(a.shape());
  auto po = out.data();
  auto pa = a.data();
  auto pb = b.data();
  for (std::size_t i = 0; i < po.size(); ++i) po[i] = pa[i] + pb[i];
  require_finite(out, "add");
  return out;
}

Tensor scale(const Tensor& a, float s) {
  Tensor out(a.shape());
  auto po = out.data();
  auto pa = a.data();
  for (std::size_t i = 0; i < po.size(); ++i) po[i] = pa[i] * s;
  require_finite(out, "scale");
  return out;
}

Tensor softmax_rows(const Tensor& logits) {
  const std::size_t width = logits.shape().back();
  const std::size_t nrows = logits.numel() / width;
  Tensor out(logits.shape());
  const float* in = logits.data().data();
  float* po = out.data().data();
  constexpr float neg_inf = -std::numeric_limits<float>::infinity();

  // Errors are collected per row and rethrown outside the parallel region.
  std::ptrdiff_t degenerate = -1;
  std::ptrdiff_t invalid = -1;

#pragma omp parallel for schedule(static) if (nrows * width > 16384)
  for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(nrows); ++r) {
    const float* x = in + r * width;
    float* y = po + r * width;
    float mx = neg_inf;
    bool bad = false;
    for (std::size_t j = 0; j < width; ++j) {
      if (std::isnan(x[j]) || x[j] == std::numeric_limits<float>::infinity()) bad = true;
      mx = std::max(mx, x[j]);
    }
    if (bad) {
#pragma omp critical(softmax_err)
      invalid = invalid < 0 ? r : std::min(invalid, r);
      continue;
    }
    if (mx == neg_inf) {
#pragma omp critical(softmax_err)
      degenerate = degenerate < 0 ? r : std::min(degenerate, r);
      continue;
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < width; ++j) sum += std::exp(static_cast<double>(x[j]) - mx);
    for (std::size_t j = 0; j < width; ++j) y[j] = static_cast<float>(std::exp(static_cast<double>(x[j]) - mx) / sum);
  }

  if (invalid >= 0) {
    throw NumericError("softmax_rows: row " + std::to_string(invalid) + " contains NaN or +inf");
  }
  if (degenerate >= 0) {
    throw DegenerateRowError("softmax_rows: row " + std::to_string(degenerate) +
                             " is fully masked (every entry is -inf)");
  }
  return out;
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count) {
  require_rank2(a, "slice_cols");
  if (begin + count > a.cols() || count == 0) {
    throw DimensionError("slice_cols: columns [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") outside " + shape_to_string(a.shape()));
  }
  Tensor out({a.rows(), count});
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto src = a.row(i).subspan(begin, count);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

void set_cols(Tensor& dst, const Tensor& src, std::size_t begin) {
  require_rank2(dst, "set_cols");
  require_rank2(src, "set_cols");
  if (src.rows() != dst.rows() || begin + src.cols() > dst.cols()) {
    throw DimensionError("set_cols: cannot place " + shape_to_string(src.shape()) + " into " +
                         shape_to_string(dst.shape()) + " at column " + std::to_string(begin));
  }
  for (std::size_t i = 0; i < src.rows(); ++i) {
    auto s = src.row(i);
    std::copy(s.begin(), s.end(), dst.row(i).begin() + static_cast<std::ptrdiff_t>(begin));
  }
}

double l1_norm(std::span<const float> v) {
  double s = 0.0;
  for (float x : v) s += std::fabs(static_cast<double>(x));
  return s;
}

double l2_norm(std::span<const float> v) {
  double s = 0.0;
  for (float x : v) s += static_cast<double>(x) * x;
  return std::sqrt(s);
}

double dot(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) {
    throw DimensionError("dot: length " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

}  // namespace waiverlab
