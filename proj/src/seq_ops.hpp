#pragma once

#include "tensor.hpp"

#include <vector>

namespace dmcodec::ops {

// Row gather: table [V, D], ids in [0, V) -> [N, D].
Tensor embedding(const Tensor& table, const std::vector<int>& ids);

// Normalizes each row of x [N, D], then applies gain and bias [D].
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

// Multi-head scaled dot-product attention. q [T, D], k and v [S, D].
// With causal set, query i attends to keys 0..i only (requires T == S).
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads, bool causal);

// Mean negative log-likelihood of targets under softmax(logits [N, V]).
// Rows whose target is negative are ignored.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets);

} // namespace dmcodec::ops
