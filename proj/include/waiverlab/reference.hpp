#pragma once

// Serial reference kernels. Straight loops, no OpenMP; kept for tests that
// cross-check the parallel kernels and for the benchmark baseline.

#include "waiverlab/attention.hpp"
#include "waiverlab/tensor.hpp"

namespace waiverlab::reference {

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor softmax_rows(const Tensor& logits);
AttentionHeadOutput attend(const Tensor& q, const Tensor& k, const Tensor& v, const MaskMatrix& mask, float scale);

}  // namespace waiverlab::reference
