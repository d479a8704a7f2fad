#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "waiverlab/attention.hpp"
#include "waiverlab/error.hpp"
#include "waiverlab/metrics.hpp"
#include "waiverlab/transformer.hpp"

using namespace waiverlab;

namespace {

Tensor uniform_causal(std::size_t len) {
  Tensor w({len, len});
  for (std::size_t i = 0; i < len; ++i)
    for (std::size_t j = 0; j <= i; ++j) w.at(i, j) = 1.0f / static_cast<float>(i + 1);
  return w;
}

Capture capture_from(const std::vector<Tensor>& weights, const std::vector<Tensor>& values, const std::string& regime) {
  Capture cap;
  cap.metadata.regime = regime;
  for (std::size_t h = 0; h < weights.size(); ++h) {
    cap.add(names::attn_weights(0, h), weights[h]);
    cap.add(names::value(0, h), values[h]);
  }
  return cap;
}

}  // namespace

TEST_CASE("sink_score examples") {
  CHECK(sink_score(Tensor::identity(4), 0, AttentionRegime::causal) == 0.0);

  const Tensor w = Tensor::from_rows({{1, 0, 0}, {0.9f, 0.1f, 0}, {0.8f, 0.1f, 0.1f}});
  CHECK(sink_score(w, 0, AttentionRegime::causal) == doctest::Approx(0.85).epsilon(1e-7));

  CHECK(sink_score(uniform_causal(3), 0, AttentionRegime::causal) == doctest::Approx(5.0 / 12.0).epsilon(1e-7));

  CHECK_THROWS_AS(sink_score(uniform_causal(3), 2, AttentionRegime::causal), EmptyAverageError);
  CHECK_NOTHROW(sink_score(uniform_causal(3), 2, AttentionRegime::global));
  CHECK_THROWS_AS(sink_score(Tensor::from_rows({{0.5f, 0.2f}, {0.5f, 0.5f}}), 0, AttentionRegime::causal),
                  NumericError);
}

TEST_CASE("v_norm_profile") {
  const auto p = v_norm_profile(Tensor::from_rows({{3, 4, 0, 0}, {0, 0, -2, 0}, {0, 0, 0, 0}}));
  CHECK(p[0].l1 == 7.0);
  CHECK(p[0].l2 == 5.0);
  CHECK(*p[0].l1_over_l2 == doctest::Approx(1.4));
  CHECK(*p[1].l1_over_l2 == 1.0);
  CHECK_FALSE(p[2].l1_over_l2.has_value());

  std::mt19937 rng(1);
  const Tensor v = oracle::random_matrix(rng, 10, 16);
  const auto r = v_norm_profile(v);
  for (std::size_t i = 0; i < 10; ++i) {
    CHECK(std::fabs(r[i].l1 - static_cast<double>(oracle::l1(v.row(i)))) < 1e-6);
    CHECK(std::fabs(r[i].l2 - static_cast<double>(oracle::l2(v.row(i)))) < 1e-6);
  }
}

TEST_CASE("cos_decompose") {
  const auto orth = cos_decompose(Tensor::from_rows({{1, 0}}), Tensor::from_rows({{0, 1}}));
  CHECK(orth.at(0, 0).dot == 0.0);
  CHECK(*orth.at(0, 0).cos_theta == 0.0);

  const auto same = cos_decompose(Tensor::from_rows({{0.3f, -2, 5}}), Tensor::from_rows({{0.3f, -2, 5}}));
  CHECK(*same.at(0, 0).cos_theta == doctest::Approx(1.0).epsilon(1e-12));

  const auto zero = cos_decompose(Tensor::from_rows({{0, 0}}), Tensor::from_rows({{1, 1}}));
  CHECK_FALSE(zero.at(0, 0).cos_theta.has_value());

  std::mt19937 rng(2);
  for (int t = 0; t < 200; ++t) {
    const Tensor q = oracle::random_matrix(rng, 1, 8, -4, 4), k = oracle::random_matrix(rng, 1, 8, -4, 4);
    const auto e = cos_decompose(q, k).at(0, 0);
    const double brute = static_cast<double>(oracle::dot(q.row(0), k.row(0)));
    CHECK(std::fabs(brute - e.q_norm * e.k_norm * *e.cos_theta) <= 1e-5);
    CHECK(*e.cos_theta >= -1.0);
    CHECK(*e.cos_theta <= 1.0);
  }
}

TEST_CASE("leave_one_out_delta against brute-force recomputation") {
  std::mt19937 rng(3);
  const std::size_t len = 6;
  Tensor logits = oracle::random_matrix(rng, len, len, -2, 2);
  const Tensor w = softmax_rows(logits);
  Tensor v = oracle::random_matrix(rng, len, 4);
  const std::size_t j = 2;
  for (float& x : v.row(j)) x = 0.0f;
  const auto d = leave_one_out_delta(w, v, j);
  CHECK_FALSE(d[j].has_value());
  for (std::size_t i = 0; i < len; ++i) {
    if (i == j) continue;
    // v[j] = 0: renormalization scales the row by 1/(1-a), so delta = a/(1-a).
    const double a = w.at(i, j);
    CHECK(*d[i] == doctest::Approx(a / (1 - a)).epsilon(1e-6));
    // Brute force: explicit Eq. 3 sums with and without column j.
    const auto full = oracle::weighted_sum(w, v, i);
    long double num = 0, den = 0;
    for (std::size_t c = 0; c < 4; ++c) {
      long double dropped = 0;
      for (std::size_t k = 0; k < len; ++k)
        if (k != j) dropped += static_cast<long double>(w.at(i, k)) * v.at(k, c);
      dropped /= (1.0L - a);
      num += (full[c] - dropped) * (full[c] - dropped);
      den += full[c] * full[c];
    }
    CHECK(*d[i] == doctest::Approx(static_cast<double>(std::sqrt(num / den))).epsilon(1e-6));
  }

  const auto zero_col = leave_one_out_delta(Tensor::identity(3), oracle::random_matrix(rng, 3, 2), 1);
  CHECK(*zero_col[0] == 0.0);
  CHECK(*zero_col[2] == 0.0);

  const Tensor one_hot = Tensor::from_rows({{1, 0}, {1, 0}});
  CHECK_FALSE(leave_one_out_delta(one_hot, Tensor::from_rows({{1, 1}, {2, 2}}), 0)[1].has_value());
}

TEST_CASE("property: Eq. 5 at the metric level") {
  std::mt19937 rng(4);
  for (int t = 0; t < 100; ++t) {
    const Tensor w = softmax_rows(oracle::random_matrix(rng, 5, 5, -3, 3));
    const Tensor v = oracle::random_matrix(rng, 5, 8, -2, 2);
    for (std::size_t i = 0; i < 5; ++i) {
      for (std::size_t j = 0; j < 5; ++j) {
        std::vector<float> contrib(8);
        for (std::size_t d = 0; d < 8; ++d) contrib[d] = w.at(i, j) * v.at(j, d);
        CHECK(std::fabs(l2_norm(contrib) - w.at(i, j) * l2_norm(v.row(j))) <= 1e-6);
      }
    }
  }
}

TEST_CASE("quantile interpolates between order statistics") {
  CHECK(quantile({3, 1, 2, 4}, 0.0) == 1.0);
  CHECK(quantile({3, 1, 2, 4}, 1.0) == 4.0);
  CHECK(quantile({3, 1, 2, 4}, 0.5) == 2.5);
  CHECK(quantile({10, 20}, 0.1) == doctest::Approx(11.0));
  CHECK_THROWS_AS(quantile({}, 0.5), EmptyAverageError);
}

TEST_CASE("identity attention with equal-norm V raises no flags") {
  const std::size_t len = 8;
  Tensor v({len, 4});
  for (std::size_t i = 0; i < len; ++i) v.at(i, i % 4) = 2.0f;
  for (const char* regime : {"causal", "global"}) {
    const auto report = detect_waivers(capture_from({Tensor::identity(len)}, {v}, regime));
    for (const auto& r : report.rows) CHECK(r.flags == 0);
    CHECK(report.thresholds.sink_threshold == 0.3);
    CHECK(report.thresholds.vnorm_quantile == 0.1);
  }
}

TEST_CASE("detect_waivers flag logic") {
  // Column 0 absorbs attention and has a tiny value; column 3 absorbs
  // attention but has a large value.
  const std::size_t len = 12;
  Tensor w({len, len});
  for (std::size_t i = 0; i < len; ++i) {
    w.at(i, 0) = 0.5f;
    w.at(i, 3) = 0.3f;
    const float rest = 0.2f / static_cast<float>(len - 2);
    for (std::size_t j = 0; j < len; ++j)
      if (j != 0 && j != 3) w.at(i, j) = rest;
  }
  std::mt19937 rng(5);
  Tensor v = oracle::random_matrix(rng, len, 4, 1, 2);
  for (float& x : v.row(0)) x = 1e-4f;
  const auto report = detect_waivers(capture_from({w}, {v}, "global"));
  CHECK(report.waiver_positions() == std::vector<std::size_t>{0});
  for (const auto& r : report.rows) {
    if (r.position == 3) {
      CHECK((r.flags & kAttentionSink));
      CHECK_FALSE((r.flags & kWaiver));
    }
    CHECK(((r.flags & kWaiver) != 0) == ((r.flags & kAttentionSink) && (r.flags & kLowVNorm)));
  }

  // Deterministic, and scale-free in the V norms.
  const auto again = detect_waivers(capture_from({w}, {v}, "global"));
  Tensor v_scaled = scale(v, 37.5f);
  const auto scaled = detect_waivers(capture_from({w}, {v_scaled}, "global"));
  REQUIRE(again.rows.size() == report.rows.size());
  for (std::size_t i = 0; i < report.rows.size(); ++i) {
    CHECK(again.rows[i].flags == report.rows[i].flags);
    CHECK(again.rows[i].v_l2 == report.rows[i].v_l2);
    CHECK((scaled.rows[i].flags & kLowVNorm) == (report.rows[i].flags & kLowVNorm));
  }
}

TEST_CASE("detect_waivers requires matching V tensors") {
  Capture cap;
  cap.metadata.regime = "causal";
  cap.add(names::attn_weights(0, 0), Tensor::identity(3));
  try {
    detect_waivers(cap);
    FAIL("expected IncompleteCaptureError");
  } catch (const IncompleteCaptureError& e) {
    CHECK(std::string(e.what()).find("layer0.head0.v") != std::string::npos);
  }
  CHECK_THROWS_AS(detect_waivers(Capture{}), IncompleteCaptureError);
}

TEST_CASE("detect_waivers infers the regime when the producer omits it") {
  Capture cap;
  cap.add(names::attn_weights(0, 0), softmax_rows(Tensor({4, 4})));
  cap.add(names::value(0, 0), Tensor::identity(4));
  CHECK(detect_waivers(cap).regime == "global");
}

TEST_CASE("synthetic model: detect_waivers flags j* across heads of layer 0") {
  ModelConfig cfg;
  cfg.seed = 17;
  const auto w = build_synthetic_waiver_model(cfg, 1);
  const auto ids = synthetic_sequence(cfg, 1, 0, 64, 99);
  const auto fr = forward(w, ids, build_causal_mask(64), true);
  const auto report = detect_waivers(fr.capture);
  CHECK(report.waiver_positions(0) == std::vector<std::size_t>{0});
  CHECK(report.heads_flagging(0, 0) * 2 >= cfg.num_heads);

  // Leave-one-out follows a/(1-a) since v(j*) is exactly zero.
  const Tensor& a = fr.capture.get(names::attn_weights(0, 0));
  const auto d = leave_one_out_delta(a, fr.capture.get(names::value(0, 0)), 0);
  for (std::size_t i = 1; i < 64; ++i) {
    const double aij = a.at(i, 0);
    CHECK(*d[i] == doctest::Approx(aij / (1 - aij)).epsilon(1e-4));
  }
  for (const auto& s : contribution_share(a, fr.capture.get(names::value(0, 0)), 0))
    if (s) CHECK(*s < 0.01);
}
