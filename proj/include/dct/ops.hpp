#pragma once

// Differentiable primitives. "Rows" always means the last axis is the
// feature axis and every leading axis is flattened into rows.

#include <cstddef>

#include "dct/autograd.hpp"

namespace dct {

inline constexpr double kLayerNormEps = 1e-6;

/// a[..., m, k] x b[k, n] (shared right operand) or a[..., m, k] x b[..., k, n]
/// with identical leading axes.
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b);

/// Elementwise a + b. b broadcasts against a (right-aligned, each axis equal or 1).
template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);

/// Elementwise a * b with the same broadcasting rule as add.
template <typename T>
Var<T> multiply(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> scale(const Var<T>& a, double factor);

/// Row softmax with per-row max subtraction. With mask_last_column the last
/// column receives exactly zero weight (its score is treated as -inf).
template <typename T>
Var<T> softmax_rows(const Var<T>& a, bool mask_last_column = false);

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                  double eps = kLayerNormEps);

/// tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
template <typename T>
Var<T> gelu(const Var<T>& x);

template <typename T>
Var<T> exp(const Var<T>& x);

/// Natural log; a non-positive input surfaces as NumericError.
template <typename T>
Var<T> log(const Var<T>& x);

/// Sum of every element, shape [1].
template <typename T>
Var<T> sum(const Var<T>& x);

/// Mean of every element, shape [1].
template <typename T>
Var<T> mean(const Var<T>& x);

/// Sum over the last axis, keeping it with length 1.
template <typename T>
Var<T> sum_rows(const Var<T>& x);

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape);

/// Swaps the last two axes.
template <typename T>
Var<T> transpose(const Var<T>& x);

/// Concatenates along the second-to-last axis; all other axes must agree.
template <typename T>
Var<T> concat_rows(const Var<T>& a, const Var<T>& b);

/// Rows [begin, end) of the second-to-last axis.
template <typename T>
Var<T> slice_rows(const Var<T>& x, std::size_t begin, std::size_t end);

/// [b, n, d] -> [b, heads, n, d / heads]
template <typename T>
Var<T> split_heads(const Var<T>& x, std::size_t heads);

/// [b, heads, n, dh] -> [b, n, heads * dh]
template <typename T>
Var<T> merge_heads(const Var<T>& x);

/// log(softmax_rows(x)) composed from primitives; the row max enters as a
/// constant shift.
template <typename T>
Var<T> log_softmax_rows(const Var<T>& x);

}  // namespace dct
