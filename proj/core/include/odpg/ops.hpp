#pragma once

#include <vector>

#include "odpg/tensor.hpp"

namespace odpg {

// Elementwise (same-shape) arithmetic.
template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b);
template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b);
template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b);
template <typename T>
TensorT<T> add_scalar(const TensorT<T>& a, double c);
template <typename T>
TensorT<T> mul_scalar(const TensorT<T>& a, double c);

// Matrix product. Accepts [m,k]x[k,n], [B,m,k]x[B,k,n], and the broadcast
// forms [B,m,k]x[k,n] / [m,k]x[B,k,n].
template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b);

// Cross-correlation convolution over [B,C,H,W] with kernel [O,C,kh,kw]
// and optional bias [O] (pass an undefined tensor for none).
template <typename T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& bias,
                  int stride, int pad);

template <typename T>
TensorT<T> upsample_nearest2(const TensorT<T>& x);

// Non-overlapping k x k mean pooling (stride == k).
template <typename T>
TensorT<T> avg_pool2d(const TensorT<T>& x, int k);

// Max-subtracted softmax along `axis`.
template <typename T>
TensorT<T> softmax(const TensorT<T>& x, int axis);

// Per (batch, group) normalization of [B,C,H,W] with affine [C] params.
template <typename T>
TensorT<T> group_norm(const TensorT<T>& x, int groups, const TensorT<T>& gamma,
                      const TensorT<T>& beta, double eps);

// Last-axis normalization with affine [d] params.
template <typename T>
TensorT<T> layer_norm(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                      double eps);

template <typename T>
TensorT<T> silu(const TensorT<T>& x);
template <typename T>
TensorT<T> exp(const TensorT<T>& x);
template <typename T>
TensorT<T> log(const TensorT<T>& x);

template <typename T>
TensorT<T> sum_all(const TensorT<T>& x);
template <typename T>
TensorT<T> mean_all(const TensorT<T>& x);
// mean((a-b)^2) as a graph.
template <typename T>
TensorT<T> mse(const TensorT<T>& a, const TensorT<T>& b);

// Layout ops (copying; gradients flow through).
template <typename T>
TensorT<T> reshape(const TensorT<T>& x, Shape shape);
template <typename T>
TensorT<T> permute(const TensorT<T>& x, const std::vector<int>& axes);
template <typename T>
TensorT<T> concat(const std::vector<TensorT<T>>& xs, int axis);
template <typename T>
TensorT<T> slice(const TensorT<T>& x, int axis, int start, int len);

// Broadcast helpers used for learned null embeddings and biases.
// [d...] -> [B, d...]; backward sums over B.
template <typename T>
TensorT<T> broadcast_batch(const TensorT<T>& x, int batch);
// [C] -> [B,C,H,W]; backward sums over B,H,W.
template <typename T>
TensorT<T> broadcast_channels(const TensorT<T>& v, int batch, int h, int w);
// x[B,...] scaled per batch item by a constant mask entry.
template <typename T>
TensorT<T> mul_batch_scalar(const TensorT<T>& x, const std::vector<double>& mask);
// x[B,C,H,W] + t[B,C] broadcast over spatial extents.
template <typename T>
TensorT<T> add_channel_map(const TensorT<T>& x, const TensorT<T>& t);
// x[...,d] + b[d] broadcast over leading extents.
template <typename T>
TensorT<T> add_bias_lastdim(const TensorT<T>& x, const TensorT<T>& b);

// Non-differentiable utilities.
template <typename T>
void clamp_inplace(TensorT<T>& x, T lo, T hi);

// Raw GEMM on row-major buffers: C = op(A) * op(B) + beta * C.
template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, const T* a, const T* b, T beta, T* c);

}  // namespace odpg
