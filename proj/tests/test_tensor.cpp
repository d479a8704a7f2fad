#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "oracles.hpp"
#include "waiverlab/error.hpp"
#include "waiverlab/reference.hpp"
#include "waiverlab/tensor.hpp"

using namespace waiverlab;

namespace {
constexpr float kNegInf = -std::numeric_limits<float>::infinity();
}

TEST_CASE("tensor construction enforces shape invariants") {
  CHECK_THROWS_AS(Tensor({2, 3}, std::vector<float>(5)), DimensionError);
  CHECK_THROWS_AS(Tensor(Shape{0, 3}), DimensionError);
  CHECK_THROWS_AS(Tensor(Shape{}), DimensionError);
  Tensor t({2, 3});
  CHECK(t.numel() == 6);
  CHECK(t.at(1, 2) == 0.0f);
}

TEST_CASE("matmul examples") {
  std::mt19937 rng(7);
  const Tensor m = oracle::random_matrix(rng, 3, 4);
  CHECK(matmul(Tensor::identity(3), m).bit_equal(m));

  const Tensor r = matmul(Tensor::from_rows({{1, 2}, {3, 4}}), Tensor::from_rows({{0}, {1}}));
  CHECK(r.shape() == Shape{2, 1});
  CHECK(r.at(0, 0) == 2.0f);
  CHECK(r.at(1, 0) == 4.0f);

  const Tensor z = matmul(Tensor::zeros({2, 3}), oracle::random_matrix(rng, 3, 4));
  CHECK(z.shape() == Shape{2, 4});
  for (float x : z.data()) CHECK(x == 0.0f);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  try {
    matmul(Tensor({2, 3}), Tensor({2, 3}));
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2,3]") != std::string::npos);
  }
}

TEST_CASE("matmul matches the long-double oracle and the serial reference") {
  std::mt19937 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    std::uniform_int_distribution<int> ext(1, 90);
    const std::size_t n = ext(rng), k = ext(rng), m = ext(rng);
    const Tensor a = oracle::random_matrix(rng, n, k);
    const Tensor b = oracle::random_matrix(rng, k, m);
    const Tensor c = matmul(a, b);
    const auto o = oracle::matmul(a, b);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) CHECK(std::fabs(c.at(i, j) - static_cast<double>(o[i][j])) < 1e-5);
    CHECK(c.bit_equal(reference::matmul(a, b)));
  }
}

TEST_CASE("matmul is associative within 1e-4 relative") {
  std::mt19937 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor a = oracle::random_matrix(rng, 5, 6);
    const Tensor b = oracle::random_matrix(rng, 6, 4);
    const Tensor c = oracle::random_matrix(rng, 4, 3);
    const Tensor left = matmul(matmul(a, b), c);
    const Tensor right = matmul(a, matmul(b, c));
    for (std::size_t i = 0; i < left.numel(); ++i) {
      const double scale = std::max(1.0, std::fabs(static_cast<double>(right.data()[i])));
      CHECK(std::fabs(left.data()[i] - right.data()[i]) / scale < 1e-4);
    }
  }
}

TEST_CASE("softmax examples") {
  const Tensor u = softmax_rows(Tensor::vector({0, 0, 0, 0}));
  for (float x : u.data()) CHECK(x == doctest::Approx(0.25).epsilon(1e-7));

  // Oracle: exp/sum without max subtraction.
  const auto o = oracle::softmax({0.0, std::log(3.0)});
  CHECK(static_cast<double>(o[0]) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(static_cast<double>(o[1]) == doctest::Approx(0.75).epsilon(1e-12));
  const Tensor s = softmax_rows(Tensor::vector({0.0f, static_cast<float>(std::log(3.0))}));
  CHECK(std::fabs(s.data()[0] - 0.25) < 1e-6);
  CHECK(std::fabs(s.data()[1] - 0.75) < 1e-6);

  const Tensor m = softmax_rows(Tensor::vector({5.0f, kNegInf}));
  CHECK(m.data()[0] == 1.0f);
  CHECK(m.data()[1] == 0.0f);
}

TEST_CASE("softmax rejects fully masked rows and NaN") {
  CHECK_THROWS_AS(softmax_rows(Tensor::from_rows({{1, 2}, {kNegInf, kNegInf}})), DegenerateRowError);
  CHECK_THROWS_AS(softmax_rows(Tensor::vector({1.0f, std::nanf("")})), NumericError);
  CHECK_THROWS_AS(softmax_rows(Tensor::vector({1.0f, std::numeric_limits<float>::infinity()})), NumericError);
}

TEST_CASE("property: softmax rows sum to 1 and match the oracle, masked or not") {
  std::mt19937 rng(19);
  std::uniform_real_distribution<float> logit(-30.0f, 30.0f);
  std::bernoulli_distribution masked(0.3);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t rows = 1 + trial % 7, cols = 1 + (trial * 13) % 40;
    Tensor x({rows, cols});
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j < cols; ++j) x.at(i, j) = masked(rng) ? kNegInf : logit(rng);
      x.at(i, trial % cols) = logit(rng);  // keep one finite entry
    }
    const Tensor y = softmax_rows(x);
    CHECK(y.bit_equal(reference::softmax_rows(x)));
    for (std::size_t i = 0; i < rows; ++i) {
      double sum = 0.0;
      for (float v : y.row(i)) {
        CHECK(v >= 0.0f);
        sum += v;
      }
      CHECK(std::fabs(sum - 1.0) <= 1e-6);
    }
  }
}

TEST_CASE("softmax over a rank-3 tensor normalizes the last axis") {
  std::mt19937 rng(5);
  Tensor x({2, 3, 4});
  std::uniform_real_distribution<float> d(-2, 2);
  for (float& v : x.data()) v = d(rng);
  const Tensor y = softmax_rows(x);
  for (std::size_t r = 0; r < 6; ++r) {
    double s = 0;
    for (std::size_t j = 0; j < 4; ++j) s += y.data()[r * 4 + j];
    CHECK(std::fabs(s - 1.0) < 1e-6);
  }
}

TEST_CASE("norm examples") {
  CHECK(l2_norm(Tensor::vector({3, 4})) == 5.0);
  const Tensor z = Tensor::zeros({8});
  CHECK(l2_norm(z) == 0.0);
  CHECK(l1_norm(z) == 0.0);

  std::mt19937 rng(23);
  const Tensor v = oracle::random_vector(rng, 16, -5, 5);
  CHECK(std::fabs(l1_norm(v) - static_cast<double>(oracle::l1(v.data()))) < 1e-6);
  CHECK(std::fabs(l2_norm(v) - static_cast<double>(oracle::l2(v.data()))) < 1e-6);
}

TEST_CASE("property: scalar-norm identity and norm ordering") {
  std::mt19937 rng(29);
  std::uniform_real_distribution<float> s(0.0f, 3.0f);
  for (int trial = 0; trial < 500; ++trial) {
    const Tensor v = oracle::random_vector(rng, 1 + trial % 32);
    const float c = s(rng);
    CHECK(std::fabs(l2_norm(scale(v, c)) - c * l2_norm(v)) <= 1e-6);
    CHECK(l1_norm(v) >= l2_norm(v) - 1e-12);
  }
  // Equality iff at most one nonzero component.
  CHECK(l1_norm(Tensor::vector({0, -2.5f, 0})) == l2_norm(Tensor::vector({0, -2.5f, 0})));
  CHECK(l1_norm(Tensor::vector({1, 1})) > l2_norm(Tensor::vector({1, 1})));
}

TEST_CASE("slice and set columns round trip") {
  std::mt19937 rng(31);
  const Tensor a = oracle::random_matrix(rng, 4, 8);
  Tensor b({4, 8});
  set_cols(b, slice_cols(a, 0, 3), 0);
  set_cols(b, slice_cols(a, 3, 5), 3);
  CHECK(b.bit_equal(a));
  CHECK_THROWS_AS(slice_cols(a, 6, 3), DimensionError);
}
