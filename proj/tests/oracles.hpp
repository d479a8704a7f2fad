#pragma once

// Brute-force oracles for tests. Deliberately naive and computed in long
// double; they must not call into the library kernels they check.

#include <cmath>
#include <cstddef>
#include <limits>
#include <random>
#include <vector>

#include "waiverlab/tensor.hpp"

namespace oracle {

using waiverlab::Tensor;

inline std::vector<long double> softmax(const std::vector<double>& logits) {
  long double sum = 0;
  std::vector<long double> e(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    e[i] = std::isinf(logits[i]) && logits[i] < 0 ? 0.0L : std::exp(static_cast<long double>(logits[i]));
    sum += e[i];
  }
  for (auto& x : e) x /= sum;
  return e;
}

inline long double dot(std::span<const float> a, std::span<const float> b) {
  long double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<long double>(a[i]) * b[i];
  return s;
}

inline long double l1(std::span<const float> v) {
  long double s = 0;
  for (float x : v) s += x < 0 ? -static_cast<long double>(x) : x;
  return s;
}

inline long double l2(std::span<const float> v) {
  long double s = 0;
  for (float x : v) s += static_cast<long double>(x) * x;
  return std::sqrt(s);
}

inline std::vector<std::vector<long double>> matmul(const Tensor& a, const Tensor& b) {
  std::vector<std::vector<long double>> out(a.rows(), std::vector<long double>(b.cols(), 0));
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j)
      for (std::size_t p = 0; p < a.cols(); ++p) out[i][j] += static_cast<long double>(a.at(i, p)) * b.at(p, j);
  return out;
}

// Eq. 3 as an explicit sum of scalar-times-vector terms.
inline std::vector<long double> weighted_sum(const Tensor& weights, const Tensor& v, std::size_t i) {
  std::vector<long double> acc(v.cols(), 0);
  for (std::size_t j = 0; j < v.rows(); ++j) {
    const long double a = weights.at(i, j);
    for (std::size_t d = 0; d < v.cols(); ++d) acc[d] += a * v.at(j, d);
  }
  return acc;
}

inline Tensor random_matrix(std::mt19937& rng, std::size_t r, std::size_t c, float lo = -1.0f, float hi = 1.0f) {
  std::uniform_real_distribution<float> dist(lo, hi);
  Tensor t({r, c});
  for (float& x : t.data()) x = dist(rng);
  return t;
}

inline Tensor random_vector(std::mt19937& rng, std::size_t n, float lo = -1.0f, float hi = 1.0f) {
  std::uniform_real_distribution<float> dist(lo, hi);
  std::vector<float> v(n);
  for (float& x : v) x = dist(rng);
  return Tensor::vector(std::move(v));
}

}  // namespace oracle
