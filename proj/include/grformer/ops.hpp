#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "grformer/tensor.hpp"

namespace grf {

// Elementwise arithmetic with right-aligned broadcasting (size-1 or missing
// leading axes expand).
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T> Tensor<T> scale(const Tensor<T>& x, T factor);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& x, T value);
template <typename T> Tensor<T> neg(const Tensor<T>& x);
template <typename T> Tensor<T> exp(const Tensor<T>& x);
template <typename T> Tensor<T> abs(const Tensor<T>& x);
template <typename T> Tensor<T> relu(const Tensor<T>& x);
// Exact erf form.
template <typename T> Tensor<T> gelu(const Tensor<T>& x);
// Gradient is zero everywhere, including at 0.
template <typename T> Tensor<T> sign(const Tensor<T>& x);

template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);

// a[..., M, K] x b[..., K, N]; batch axes broadcast.
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
// Swaps the last two axes.
template <typename T> Tensor<T> transpose(const Tensor<T>& x);
template <typename T> Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& order);
template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);

// Negative axes count from the end.
template <typename T> Tensor<T> softmax(const Tensor<T>& x, int dim);
// x / max(||x||, eps) along dim.
template <typename T> Tensor<T> l2_normalize(const Tensor<T>& x, int dim, T eps = T(1e-12));
// Normalizes over the last axis with population variance, then gamma * x + beta.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5));

// Cross-correlation, stride 1, zero padding 1: x[Cin,H,W], w[Cout,Cin,3,3], b[Cout].
template <typename T>
Tensor<T> conv2d_3x3(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);

// x[..., Cin] * w[Cin, Cout] + b[Cout].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);

template <typename T>
Tensor<T> narrow(const Tensor<T>& x, int dim, std::size_t start, std::size_t length);
template <typename T>
std::vector<Tensor<T>> split(const Tensor<T>& x, int dim, std::size_t parts);
template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_half(const Tensor<T>& x, int dim);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, int dim);

// out.flat[i] = x.flat[index[i]]; gradients scatter-add back, so repeated
// indices (padding, shared bias entries) accumulate correctly.
template <typename T>
Tensor<T> gather(const Tensor<T>& x, std::vector<std::size_t> index, Shape out_shape);

template <typename T> Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T> Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T> Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }

std::size_t normalize_axis(int dim, std::size_t rank);

}  // namespace grf
