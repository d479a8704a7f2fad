#include "waiverlab/positional.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "waiverlab/error.hpp"

namespace waiverlab {

void RotaryParams::validate() const {
  if (head_dim == 0 || head_dim % 2 != 0) {
    throw ConfigError("rotary head_dim must be even and positive, got " + std::to_string(head_dim));
  }
  if (!(base > 1.0)) throw ConfigError("rotary base must exceed 1");
}

Tensor apply_rope(const Tensor& x, std::span<const std::size_t> positions, const RotaryParams& params) {
  params.validate();
  if (x.rank() != 2 || x.cols() != params.head_dim) {
    throw DimensionError("apply_rope: expected [L, " + std::to_string(params.head_dim) + "], got " +
                         shape_to_string(x.shape()));
  }
  if (positions.size() != x.rows()) {
    throw DimensionError("apply_rope: " + std::to_string(positions.size()) + " positions for " +
                         std::to_string(x.rows()) + " rows");
  }
  const std::size_t half = params.head_dim / 2;
  Tensor out(x.shape());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const double m = static_cast<double>(positions[r]);
    auto in = x.row(r);
    auto o = out.row(r);
    for (std::size_t k = 0; k < half; ++k) {
      const double inv_freq = std::pow(params.base, -2.0 * static_cast<double>(k) / params.head_dim);
      const double angle = m * inv_freq;
      const double c = std::cos(angle), s = std::sin(angle);
      const double a = in[k], b = in[k + half];
      o[k] = static_cast<float>(a * c - b * s);
      o[k + half] = static_cast<float>(a * s + b * c);
    }
  }
  return out;
}

LearnablePE::LearnablePE(Tensor t) : table(std::move(t)) {
  if (table.rank() != 2) throw DimensionError("learnable PE table must be rank-2 [max_len, d_model]");
}

Tensor add_learnable_pe(const Tensor& token_emb, const Tensor& type_emb, const LearnablePE& pe) {
  if (token_emb.rank() != 2 || token_emb.shape() != type_emb.shape()) {
    throw DimensionError("add_learnable_pe: token " + shape_to_string(token_emb.shape()) + " vs type " +
                         shape_to_string(type_emb.shape()));
  }
  const std::size_t len = token_emb.rows();
  if (len > pe.max_len()) {
    throw SequenceTooLongError("sequence length " + std::to_string(len) + " exceeds max_len " +
                               std::to_string(pe.max_len()));
  }
  if (token_emb.cols() != pe.d_model()) {
    throw DimensionError("add_learnable_pe: d_model " + std::to_string(token_emb.cols()) + " vs PE width " +
                         std::to_string(pe.d_model()));
  }
  Tensor out(token_emb.shape());
  for (std::size_t i = 0; i < len; ++i) {
    auto a = token_emb.row(i);
    auto b = type_emb.row(i);
    auto p = pe.table.row(i);
    auto o = out.row(i);
    for (std::size_t d = 0; d < o.size(); ++d) o[d] = a[d] + b[d] + p[d];
  }
  return out;
}

std::vector<std::pair<std::size_t, double>> pe_norm_profile(const LearnablePE& pe) {
  std::vector<std::pair<std::size_t, double>> profile;
  profile.reserve(pe.max_len());
  for (std::size_t i = 0; i < pe.max_len(); ++i) profile.emplace_back(i, l2_norm(pe.table.row(i)));
  return profile;
}

LearnablePE swap_pe_row(const LearnablePE& pe, std::size_t target, std::size_t source) {
  if (target >= pe.max_len() || source >= pe.max_len()) {
    throw IndexError("swap_pe_row: index out of range (target " + std::to_string(target) + ", source " +
                     std::to_string(source) + ", max_len " + std::to_string(pe.max_len()) + ")");
  }
  LearnablePE out = pe;
  auto src = pe.table.row(source);
  std::copy(src.begin(), src.end(), out.table.row(target).begin());
  out.swaps.push_back({target, source});
  return out;
}

}  // namespace waiverlab
