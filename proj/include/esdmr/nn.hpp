#pragma once

#include "esdmr/ops.hpp"
#include "esdmr/tape.hpp"
#include "esdmr/tensor.hpp"

namespace esdmr {

/// Parameters of a 2-d convolution. Kernel layout is
/// (out_channels, in_channels_per_group, kh, kw); bias is optional
/// (leave it undefined for conv layers feeding a batch norm).
///
/// Depthwise mode means groups == in_channels with one filter per channel;
/// pointwise mode means a 1x1 kernel with groups == 1.
template <class T>
struct ConvParamsT {
  TensorT<T> kernel;
  TensorT<T> bias;
  int stride = 1;
  int padding = 0;
  int groups = 1;

  int out_channels() const { return kernel.extent(0); }
  int in_channels() const { return kernel.extent(1) * groups; }
  int kernel_h() const { return kernel.extent(2); }
  int kernel_w() const { return kernel.extent(3); }
};

enum class BnMode { kTrain, kInfer };

template <class T>
struct BatchNormStateT {
  TensorT<T> gamma;
  TensorT<T> beta;
  TensorT<T> running_mean;
  TensorT<T> running_var;
  T eps = T(1e-5);
  T momentum = T(0.9);  // running = momentum*running + (1-momentum)*batch
  BnMode mode = BnMode::kInfer;

  int channels() const { return gamma.extent(0); }

  static BatchNormStateT identity(int channels);
};

/// Cross-correlation with zero padding;
/// H_out = floor((H + 2*padding - kh)/stride) + 1.
template <class T>
TensorT<T> conv2d(TapeT<T>* tape, const TensorT<T>& x, const ConvParamsT<T>& p);

/// One spatial filter per channel (groups == C_in). Channel m of the output
/// depends only on channel m of the input.
template <class T>
TensorT<T> depthwise_conv2d(TapeT<T>* tape, const TensorT<T>& x,
                            const ConvParamsT<T>& p);

/// 1x1 convolution: a per-pixel linear combination of the input channels.
template <class T>
TensorT<T> pointwise_conv2d(TapeT<T>* tape, const TensorT<T>& x,
                            const ConvParamsT<T>& p);

/// Depthwise stage (odd kernel 3/5/7, spatial-preserving) followed by the
/// pointwise mixing stage.
template <class T>
TensorT<T> depthwise_separable_conv2d(TapeT<T>* tape, const TensorT<T>& x,
                                      const ConvParamsT<T>& dw,
                                      const ConvParamsT<T>& pw);

/// Training mode normalizes by batch statistics and updates the running
/// stats; inference mode uses the running stats only.
template <class T>
TensorT<T> batchnorm2d(TapeT<T>* tape, const TensorT<T>& x,
                       BatchNormStateT<T>& s);

/// max(0, x). The subgradient at exactly 0 is taken as 0.
template <class T>
TensorT<T> relu(TapeT<T>* tape, const TensorT<T>& x);

/// 3x3 mean pooling with zero padding 1 and divisor 9 (padded taps count).
template <class T>
TensorT<T> avgpool2d(TapeT<T>* tape, const TensorT<T>& x, int stride);

/// 2x bilinear upsampling with half-pixel centers and edge clamping:
/// output pixel i samples the input at (i + 0.5)/2 - 0.5.
template <class T>
TensorT<T> bilinear_upsample2x(TapeT<T>* tape, const TensorT<T>& x);

/// Per-pixel softmax over the channel axis with max subtraction.
template <class T>
TensorT<T> softmax_channels(TapeT<T>* tape, const TensorT<T>& x);

using ConvParams = ConvParamsT<float>;
using BatchNormState = BatchNormStateT<float>;

}  // namespace esdmr
