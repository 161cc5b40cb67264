#pragma once

#include "tensor.hpp"

#include <span>
#include <vector>

namespace dmcodec::ops {

// Elementwise binary ops require identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor neg(const Tensor& a);

Tensor elu(const Tensor& a, double alpha = 1.0);
Tensor leaky_relu(const Tensor& a, double slope);
Tensor relu(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor log(const Tensor& a);
// log(max(a, floor)); gradient is zero where the floor is active.
Tensor log_floor(const Tensor& a, double floor);
Tensor exp(const Tensor& a);
Tensor square(const Tensor& a);
// sqrt(a + eps), eps keeps the derivative bounded at zero.
Tensor sqrt(const Tensor& a, double eps = 0.0);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// Weighted sum of scalars: sum_i w_i * t_i.
Tensor weighted_sum(std::span<const Tensor> terms, std::span<const double> weights);

Tensor reshape(const Tensor& a, Shape shape);
Tensor permute(const Tensor& a, std::vector<int> dims);
Tensor transpose2d(const Tensor& a);
Tensor slice(const Tensor& a, int dim, int64_t start, int64_t length);
Tensor concat(std::span<const Tensor> parts, int dim);
// Stacks equally shaped tensors along a new leading axis.
Tensor stack(std::span<const Tensor> parts);

// [M,K] x [K,N] -> [M,N]
Tensor matmul(const Tensor& a, const Tensor& b);
// x [N,in], weight [out,in], bias [out] (may be undefined) -> [N,out]
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);
// x [N,D] + row vector b [D]
Tensor add_row(const Tensor& x, const Tensor& b);

// Forward value of `quantized`, gradient routed to `latents` unchanged.
Tensor straight_through(const Tensor& latents, const Tensor& quantized);

// w = g * v / ||v||, with the norm taken over every axis but the first.
// v has shape [O, ...], g has shape [O].
Tensor weight_norm(const Tensor& v, const Tensor& g);

} // namespace dmcodec::ops
