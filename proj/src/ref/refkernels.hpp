#pragma once

#include "esdmr/tensor.hpp"

namespace esdmr::ref {

// Serial reference implementations, written as direct nested loops straight
// from the operator definitions. They are kept deliberately independent of
// the OpenMP kernels in src/ and exist so tests and the benchmark can compare
// against them. Accumulation order (bias first, then input channel, kernel
// row, kernel column) mirrors the definition so comparisons can demand exact
// equality.

template <class T>
TensorT<T> conv2d_naive(const TensorT<T>& x, const TensorT<T>& kernel,
                        const TensorT<T>& bias, int stride, int padding,
                        int groups);

/// One filter per channel: out[n,m,:,:] = kernel[m] correlated with x[n,m,:,:].
template <class T>
TensorT<T> depthwise_naive(const TensorT<T>& x, const TensorT<T>& kernel,
                           int stride, int padding);

/// Per-pixel matrix multiply over channels with a 1x1 kernel.
template <class T>
TensorT<T> pointwise_naive(const TensorT<T>& x, const TensorT<T>& kernel,
                           const TensorT<T>& bias);

/// Expands a depthwise kernel (C,1,kh,kw) to the equivalent dense
/// block-diagonal kernel (C,C,kh,kw) for cross-checking grouped convolution.
template <class T>
TensorT<T> block_diag_kernel(const TensorT<T>& depthwise_kernel);

/// 3x3 windowed mean with zero padding 1; every window divides by 9.
template <class T>
TensorT<T> avgpool3x3_naive(const TensorT<T>& x, int stride);

/// Per-pixel evaluation of the half-pixel-center bilinear formula.
template <class T>
TensorT<T> upsample2x_naive(const TensorT<T>& x);

}  // namespace esdmr::ref
