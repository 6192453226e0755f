#pragma once

// Differentiable primitives. Every op checks shapes and throws
// std::invalid_argument naming both operands on mismatch. Broadcasting is
// limited to add_bias (row vector over the last axis).

#include <span>
#include <vector>

#include "infonet/tensor.hpp"

namespace infonet::ad {

// [m x k] * [k x n]; either operand may be read transposed.
template <class Real>
Var<Real> matmul(Var<Real> a, Var<Real> b, bool trans_a = false, bool trans_b = false);

// [B x m x k] * [B x k x n] (or [B x n x k] with trans_b).
template <class Real>
Var<Real> batched_matmul(Var<Real> a, Var<Real> b, bool trans_b = false);

template <class Real>
Var<Real> add(Var<Real> a, Var<Real> b);
template <class Real>
Var<Real> sub(Var<Real> a, Var<Real> b);
template <class Real>
Var<Real> mul(Var<Real> a, Var<Real> b);
template <class Real>
Var<Real> scale(Var<Real> a, Real s);

// x [.. x n] + bias [n]
template <class Real>
Var<Real> add_bias(Var<Real> x, Var<Real> bias);

template <class Real>
Var<Real> transpose(Var<Real> a);
template <class Real>
Var<Real> reshape(Var<Real> a, Shape shape);

template <class Real>
Var<Real> softmax(Var<Real> a);
template <class Real>
Var<Real> layer_norm(Var<Real> x, Var<Real> gain, Var<Real> bias, Real eps = Real(1e-5));
template <class Real>
Var<Real> gelu(Var<Real> a);
template <class Real>
Var<Real> relu(Var<Real> a);

// Mean over all elements -> scalar.
template <class Real>
Var<Real> mean(Var<Real> a);
// log-sum-exp over the last axis with max shift; rank-1 input gives a scalar.
template <class Real>
Var<Real> logsumexp(Var<Real> a);

// Rows of a [m x n] selected by index -> [k x n].
template <class Real>
Var<Real> gather_rows(Var<Real> a, std::span<const std::size_t> rows);

// Bilinear read of an [L x L] table at points (us[t], vs[t]) in [0,1]^2 -> [T].
// Cell centres sit at (i + 0.5) / L; queries beyond the outer centres clamp.
template <class Real>
Var<Real> bilinear_lookup(Var<Real> table, std::span<const double> us, std::span<const double> vs);

// 2-d correlation of an [H x W] map with a fixed odd [k x k] kernel,
// replicate padding, same-size output.
template <class Real>
Var<Real> conv2d_fixed(Var<Real> x, const Tensor<Real>& kernel);

// Concatenate along axis 0 (rank >= 1) or along the last axis of rank-2 inputs.
template <class Real>
Var<Real> concat(Var<Real> a, Var<Real> b, std::size_t axis);

// [n x H*dh] -> [H x n x dh] and back.
template <class Real>
Var<Real> split_heads(Var<Real> x, std::size_t heads);
template <class Real>
Var<Real> merge_heads(Var<Real> x);

}  // namespace infonet::ad
