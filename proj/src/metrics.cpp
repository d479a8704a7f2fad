#include "waiverlab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <regex>
#include <set>

#include "waiverlab/error.hpp"

namespace waiverlab {

namespace {

constexpr double kTiny = 1e-12;
constexpr double kStochasticTol = 1e-5;

void require_square(const Tensor& w, const char* op) {
  if (w.rank() != 2 || w.rows() != w.cols()) {
    throw DimensionError(std::string(op) + ": attention weights must be [L, L], got " + shape_to_string(w.shape()));
  }
}

void require_row_stochastic(const Tensor& w, const std::string& what) {
  for (std::size_t i = 0; i < w.rows(); ++i) {
    double s = 0.0;
    for (float x : w.row(i)) s += x;
    if (std::fabs(s - 1.0) > kStochasticTol) {
      throw NumericError(what + ": row " + std::to_string(i) + " sums to " + std::to_string(s) + ", not 1");
    }
  }
}

// Rows with their Eq. 3 weighted sum, in double.
std::vector<double> weighted_row(const Tensor& weights, const Tensor& v, std::size_t i, std::optional<std::size_t> skip) {
  std::vector<double> acc(v.cols(), 0.0);
  for (std::size_t k = 0; k < v.rows(); ++k) {
    if (skip && *skip == k) continue;
    const double a = weights.at(i, k);
    auto vr = v.row(k);
    for (std::size_t d = 0; d < acc.size(); ++d) acc[d] += a * vr[d];
  }
  return acc;
}

double norm2(const std::vector<double>& x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return std::sqrt(s);
}

void check_attention_pair(const Tensor& weights, const Tensor& v, std::size_t j, const char* op) {
  require_square(weights, op);
  if (v.rank() != 2 || v.rows() != weights.rows()) {
    throw DimensionError(std::string(op) + ": v " + shape_to_string(v.shape()) + " vs weights " +
                         shape_to_string(weights.shape()));
  }
  if (j >= weights.rows()) throw IndexError(std::string(op) + ": position " + std::to_string(j) + " out of range");
}

}  // namespace

AttentionRegime regime_from_string(const std::string& s) {
  if (s == "causal" || s == "causal_rope") return AttentionRegime::causal;
  if (s == "global" || s == "global_learnable") return AttentionRegime::global;
  throw ConfigError("unknown attention regime '" + s + "'");
}

double sink_score(const Tensor& weights, std::size_t j, AttentionRegime regime) {
  require_square(weights, "sink_score");
  const std::size_t len = weights.rows();
  if (j >= len) throw IndexError("sink_score: position " + std::to_string(j) + " out of range");
  require_row_stochastic(weights, "sink_score");
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < len; ++i) {
    const bool eligible = regime == AttentionRegime::causal ? i > j : i != j;
    if (!eligible) continue;
    sum += weights.at(i, j);
    ++n;
  }
  if (n == 0) throw EmptyAverageError("sink_score: no eligible query rows for position " + std::to_string(j));
  return sum / static_cast<double>(n);
}

std::vector<VNormEntry> v_norm_profile(const Tensor& v) {
  if (v.rank() != 2) throw DimensionError("v_norm_profile: v must be [L, head_dim]");
  std::vector<VNormEntry> out;
  out.reserve(v.rows());
  for (std::size_t i = 0; i < v.rows(); ++i) {
    VNormEntry e{i, l1_norm(v.row(i)), l2_norm(v.row(i)), std::nullopt};
    if (e.l2 >= kTiny) e.l1_over_l2 = e.l1 / e.l2;
    out.push_back(e);
  }
  return out;
}

CosDecomposition cos_decompose(const Tensor& q, const Tensor& k) {
  if (q.rank() != 2 || k.rank() != 2 || q.cols() != k.cols()) {
    throw DimensionError("cos_decompose: q " + shape_to_string(q.shape()) + " vs k " + shape_to_string(k.shape()));
  }
  CosDecomposition out;
  out.rows = q.rows();
  out.cols = k.rows();
  out.entries.resize(out.rows * out.cols);
  std::vector<double> kn(k.rows());
  for (std::size_t j = 0; j < k.rows(); ++j) kn[j] = l2_norm(k.row(j));
  for (std::size_t i = 0; i < q.rows(); ++i) {
    const double qn = l2_norm(q.row(i));
    for (std::size_t j = 0; j < k.rows(); ++j) {
      CosEntry& e = out.entries[i * out.cols + j];
      e.dot = dot(q.row(i), k.row(j));
      e.q_norm = qn;
      e.k_norm = kn[j];
      if (qn > kTiny && kn[j] > kTiny) e.cos_theta = std::clamp(e.dot / (qn * kn[j]), -1.0, 1.0);
    }
  }
  return out;
}

std::vector<std::optional<double>> leave_one_out_delta(const Tensor& weights, const Tensor& v, std::size_t j) {
  check_attention_pair(weights, v, j, "leave_one_out_delta");
  std::vector<std::optional<double>> deltas(weights.rows());
  for (std::size_t i = 0; i < weights.rows(); ++i) {
    if (i == j) continue;
    const double a = weights.at(i, j);
    if (a == 0.0) {
      deltas[i] = 0.0;
      continue;
    }
    if (a >= 1.0) continue;
    const auto full = weighted_row(weights, v, i, std::nullopt);
    auto dropped = weighted_row(weights, v, i, j);
    for (double& x : dropped) x /= (1.0 - a);
    const double base = norm2(full);
    std::vector<double> diff(full.size());
    for (std::size_t d = 0; d < diff.size(); ++d) diff[d] = full[d] - dropped[d];
    const double dn = norm2(diff);
    if (base < kTiny) {
      if (dn < kTiny) deltas[i] = 0.0;
      continue;
    }
    deltas[i] = dn / base;
  }
  return deltas;
}

std::vector<std::optional<double>> contribution_share(const Tensor& weights, const Tensor& v, std::size_t j) {
  check_attention_pair(weights, v, j, "contribution_share");
  std::vector<std::optional<double>> share(weights.rows());
  const double vj = l2_norm(v.row(j));
  for (std::size_t i = 0; i < weights.rows(); ++i) {
    if (i == j) continue;
    const double base = norm2(weighted_row(weights, v, i, std::nullopt));
    if (base < kTiny) continue;
    share[i] = weights.at(i, j) * vj / base;
  }
  return share;
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw EmptyAverageError("quantile of an empty set");
  if (q < 0.0 || q > 1.0) throw ConfigError("quantile level must lie in [0, 1]");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + (values[hi] - values[lo]) * frac;
}

std::string flags_to_string(std::uint8_t flags) {
  std::string s;
  auto append = [&](const char* name) {
    if (!s.empty()) s += "|";
    s += name;
  };
  if (flags & kAttentionSink) append("attention_sink");
  if (flags & kLowVNorm) append("low_v_norm");
  if (flags & kWaiver) append("waiver");
  return s;
}

std::vector<std::size_t> WaiverReport::waiver_positions(std::optional<std::size_t> layer) const {
  std::set<std::size_t> s;
  for (const auto& r : rows) {
    if ((r.flags & kWaiver) && (!layer || r.layer == *layer)) s.insert(r.position);
  }
  return {s.begin(), s.end()};
}

std::size_t WaiverReport::heads_flagging(std::size_t layer, std::size_t position) const {
  std::size_t n = 0;
  for (const auto& r : rows) n += (r.layer == layer && r.position == position && (r.flags & kWaiver)) ? 1 : 0;
  return n;
}

std::vector<std::pair<std::size_t, std::size_t>> captured_heads(const Capture& capture) {
  static const std::regex pattern("^layer([0-9]+)\\.head([0-9]+)\\.attn_weights$");
  std::vector<std::pair<std::size_t, std::size_t>> heads;
  std::smatch m;
  for (const auto& [name, tensor] : capture.tensors()) {
    if (std::regex_match(name, m, pattern)) heads.emplace_back(std::stoul(m[1].str()), std::stoul(m[2].str()));
  }
  std::sort(heads.begin(), heads.end());
  return heads;
}

WaiverReport detect_waivers(const Capture& capture, const WaiverThresholds& thresholds) {
  const auto heads = captured_heads(capture);
  if (heads.empty()) throw IncompleteCaptureError("capture has no layer{i}.head{h}.attn_weights tensors");
  for (const auto& [l, h] : heads) {
    if (!capture.contains(names::value(l, h))) {
      throw IncompleteCaptureError("capture is missing tensor '" + names::value(l, h) + "'");
    }
  }

  WaiverReport report;
  report.thresholds = thresholds;
  report.intervened_positions = capture.metadata.intervened_positions();
  report.regime = capture.metadata.regime;
  AttentionRegime regime;
  if (report.regime.empty()) {
    // Unlabelled producer: causal iff every head is lower-triangular.
    bool lower = true;
    for (const auto& [l, h] : heads) {
      const Tensor& w = capture.get(names::attn_weights(l, h));
      for (std::size_t i = 0; i < w.rows() && lower; ++i)
        for (std::size_t j = i + 1; j < w.cols(); ++j) lower = lower && w.at(i, j) == 0.0f;
    }
    report.regime = lower ? "causal" : "global";
  }
  regime = regime_from_string(report.regime);

  std::set<std::size_t> layer_ids, head_ids;
  for (const auto& [l, h] : heads) {
    layer_ids.insert(l);
    head_ids.insert(h);
  }
  report.num_layers = layer_ids.size();
  report.num_heads = head_ids.size();

  std::vector<std::vector<WaiverRow>> per_head(heads.size());
  std::exception_ptr failure;

#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t idx = 0; idx < static_cast<std::ptrdiff_t>(heads.size()); ++idx) {
    try {
      const auto [layer, head] = heads[idx];
      const Tensor& w = capture.get(names::attn_weights(layer, head));
      const Tensor& v = capture.get(names::value(layer, head));
      require_square(w, "detect_waivers");
      if (v.rank() != 2 || v.rows() != w.rows()) {
        throw DimensionError("detect_waivers: " + names::value(layer, head) + " has shape " +
                             shape_to_string(v.shape()) + " for attention of length " + std::to_string(w.rows()));
      }
      require_row_stochastic(w, names::attn_weights(layer, head));

      const auto profile = v_norm_profile(v);
      std::vector<double> l2s;
      for (const auto& e : profile) l2s.push_back(e.l2);
      const double cut = quantile(l2s, thresholds.vnorm_quantile);

      auto& out = per_head[idx];
      for (std::size_t j = 0; j < w.rows(); ++j) {
        WaiverRow r;
        r.layer = layer;
        r.head = head;
        r.position = j;
        try {
          r.sink = sink_score(w, j, regime);
        } catch (const EmptyAverageError&) {
        }
        r.v_l1 = profile[j].l1;
        r.v_l2 = profile[j].l2;
        r.l1_over_l2 = profile[j].l1_over_l2;
        if (r.sink && *r.sink >= thresholds.sink_threshold) r.flags |= kAttentionSink;
        if (r.v_l2 < cut) r.flags |= kLowVNorm;
        if ((r.flags & kAttentionSink) && (r.flags & kLowVNorm)) r.flags |= kWaiver;
        r.intervened = std::binary_search(report.intervened_positions.begin(), report.intervened_positions.end(), j);
        out.push_back(r);
      }
    } catch (...) {
#pragma omp critical(detect_err)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);

  for (auto& rows : per_head) report.rows.insert(report.rows.end(), rows.begin(), rows.end());
  return report;
}

}  // namespace waiverlab
