#pragma once

#include <cstddef>
#include <vector>

#include "dcvlm/tensor.hpp"

namespace dcvlm {

// Elementwise binary ops broadcast by the trailing-dimension rule: shapes are
// right-aligned and each pair of dims must match or one of them must be 1.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);

template <typename T> Tensor<T> neg(const Tensor<T>& x);
template <typename T> Tensor<T> exp(const Tensor<T>& x);
/// Throws ErrorCode::domain on non-positive input.
template <typename T> Tensor<T> log(const Tensor<T>& x);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& x);
/// log(sigmoid(x)), stable for large |x|.
template <typename T> Tensor<T> log_sigmoid(const Tensor<T>& x);
/// Tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
template <typename T> Tensor<T> gelu(const Tensor<T>& x);
template <typename T> Tensor<T> scale(const Tensor<T>& x, T factor);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& x, T value);

template <typename T> Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T> Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T> Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <typename T> Tensor<T> operator-(const Tensor<T>& x) { return neg(x); }

/// (m x k) * (k x n).
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
/// x[..., in] * weight[in, out] + bias[out]; bias may be undefined.
template <typename T> Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);
/// Swaps the last two axes.
template <typename T> Tensor<T> transpose(const Tensor<T>& x);
template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);
template <typename T> Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin, std::size_t end);

/// Reduction over the listed axes (kept as size-1 dims when keep_dims).
/// An empty axis list is a degenerate reduction and throws.
template <typename T> Tensor<T> sum(const Tensor<T>& x, const std::vector<std::size_t>& axes, bool keep_dims = false);
template <typename T> Tensor<T> mean(const Tensor<T>& x, const std::vector<std::size_t>& axes, bool keep_dims = false);
template <typename T> Tensor<T> sum_all(const Tensor<T>& x);
template <typename T> Tensor<T> mean_all(const Tensor<T>& x);

/// Normalises every slice along `axis` to zero mean and unit variance, then
/// applies gamma/beta indexed by position along `axis` (both optional).
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, std::size_t axis, const Tensor<T>& gamma, const Tensor<T>& beta,
                     double eps = 1e-5);

/// For x of shape (B, C, ...): normalises each (b, c) slice over the trailing
/// axes and applies per-channel gamma/beta.
template <typename T>
Tensor<T> instance_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, double eps = 1e-5);

template <typename T> Tensor<T> log_softmax(const Tensor<T>& x, std::size_t axis);

/// Rows of the last axis scaled to unit L2 norm.
template <typename T> Tensor<T> l2_normalize(const Tensor<T>& x, double eps = 1e-12);

/// Gathers rows of table (V x d). Output shape is index_shape + (d).
template <typename T>
Tensor<T> embedding(const Tensor<T>& table, const std::vector<std::size_t>& ids, const Shape& index_shape);

/// Inverted dropout; identity when !training or p == 0.
template <typename T> Tensor<T> dropout(const Tensor<T>& x, double p, Rng& rng, bool training);

/// (B, C, ...) -> (B, C_out, ...) with a (C_out x C_in) matrix per position.
template <typename T>
Tensor<T> pointwise_conv(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

/// (B, C, S1, S2, ...) -> (B, S1*S2*..., C).
template <typename T> Tensor<T> to_tokens(const Tensor<T>& x);

}  // namespace dcvlm
