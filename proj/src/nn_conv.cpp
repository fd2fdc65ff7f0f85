#include <cstddef>
#include <stdexcept>
#include <string>

#include "esdmr/nn.hpp"

namespace esdmr {

namespace {

// Work threshold below which the OpenMP kernels stay serial; the gradient
// suites run thousands of tiny convolutions where thread fork/join dominates.
constexpr std::size_t kParallelCutoff = 1 << 14;

struct ConvDims {
  int n, cin, h, w;
  int cout, cing, kh, kw;
  int stride, pad, groups;
  int hout, wout;
  int out_per_group;
};

ConvDims conv_dims(const std::vector<int>& xs, const std::vector<int>& ks,
                   int stride, int pad, int groups) {
  ConvDims d{};
  d.n = xs[0];
  d.cin = xs[1];
  d.h = xs[2];
  d.w = xs[3];
  d.cout = ks[0];
  d.cing = ks[1];
  d.kh = ks[2];
  d.kw = ks[3];
  d.stride = stride;
  d.pad = pad;
  d.groups = groups;
  d.hout = (d.h + 2 * pad - d.kh) / stride + 1;
  d.wout = (d.w + 2 * pad - d.kw) / stride + 1;
  d.out_per_group = d.cout / groups;
  return d;
}

template <class T>
void conv2d_forward_kernel(const T* x, const T* k, const T* bias, T* y,
                           const ConvDims& d) {
  const std::size_t in_plane = static_cast<std::size_t>(d.h) * d.w;
  const std::size_t out_plane = static_cast<std::size_t>(d.hout) * d.wout;
  const std::size_t ker_plane = static_cast<std::size_t>(d.kh) * d.kw;
  const bool par = static_cast<std::size_t>(d.n) * d.cout * out_plane *
                       ker_plane * d.cing >
                   kParallelCutoff;
#pragma omp parallel for collapse(2) schedule(static) if (par)
  for (int in = 0; in < d.n; ++in) {
    for (int oc = 0; oc < d.cout; ++oc) {
      const int ic0 = (oc / d.out_per_group) * d.cing;
      const T* kbase = k + static_cast<std::size_t>(oc) * d.cing * ker_plane;
      T* yp = y + (static_cast<std::size_t>(in) * d.cout + oc) * out_plane;
      for (int oh = 0; oh < d.hout; ++oh) {
        const int ih0 = oh * d.stride - d.pad;
        for (int ow = 0; ow < d.wout; ++ow) {
          const int iw0 = ow * d.stride - d.pad;
          T acc = bias ? bias[oc] : T(0);
          for (int ic = 0; ic < d.cing; ++ic) {
            const T* xp =
                x + (static_cast<std::size_t>(in) * d.cin + ic0 + ic) * in_plane;
            const T* kp = kbase + static_cast<std::size_t>(ic) * ker_plane;
            for (int r = 0; r < d.kh; ++r) {
              const int ih = ih0 + r;
              if (ih < 0 || ih >= d.h) continue;
              const T* xrow = xp + static_cast<std::size_t>(ih) * d.w;
              const T* krow = kp + static_cast<std::size_t>(r) * d.kw;
              for (int s = 0; s < d.kw; ++s) {
                const int iw = iw0 + s;
                if (iw < 0 || iw >= d.w) continue;
                acc += xrow[iw] * krow[s];
              }
            }
          }
          yp[static_cast<std::size_t>(oh) * d.wout + ow] = acc;
        }
      }
    }
  }
}

template <class T>
void conv2d_backward_input_kernel(const T* gy, const T* k, T* gx,
                                  const ConvDims& d) {
  const std::size_t in_plane = static_cast<std::size_t>(d.h) * d.w;
  const std::size_t out_plane = static_cast<std::size_t>(d.hout) * d.wout;
  const std::size_t ker_plane = static_cast<std::size_t>(d.kh) * d.kw;
  const bool par = static_cast<std::size_t>(d.n) * d.cin * in_plane *
                       ker_plane * d.out_per_group >
                   kParallelCutoff;
#pragma omp parallel for collapse(2) schedule(static) if (par)
  for (int in = 0; in < d.n; ++in) {
    for (int ci = 0; ci < d.cin; ++ci) {
      const int g = ci / d.cing;
      const int icg = ci - g * d.cing;
      const int oc0 = g * d.out_per_group;
      T* gxp = gx + (static_cast<std::size_t>(in) * d.cin + ci) * in_plane;
      for (int ih = 0; ih < d.h; ++ih) {
        for (int iw = 0; iw < d.w; ++iw) {
          T acc = 0;
          for (int oc = oc0; oc < oc0 + d.out_per_group; ++oc) {
            const T* gyp =
                gy + (static_cast<std::size_t>(in) * d.cout + oc) * out_plane;
            const T* kp = k + (static_cast<std::size_t>(oc) * d.cing + icg) *
                                  ker_plane;
            for (int r = 0; r < d.kh; ++r) {
              const int t = ih + d.pad - r;
              if (t < 0 || t % d.stride != 0) continue;
              const int oh = t / d.stride;
              if (oh >= d.hout) continue;
              for (int s = 0; s < d.kw; ++s) {
                const int u = iw + d.pad - s;
                if (u < 0 || u % d.stride != 0) continue;
                const int ow = u / d.stride;
                if (ow >= d.wout) continue;
                acc += gyp[static_cast<std::size_t>(oh) * d.wout + ow] *
                       kp[static_cast<std::size_t>(r) * d.kw + s];
              }
            }
          }
          gxp[static_cast<std::size_t>(ih) * d.w + iw] = acc;
        }
      }
    }
  }
}

template <class T>
void conv2d_backward_kernel_kernel(const T* gy, const T* x, T* gk,
                                   const ConvDims& d) {
  const std::size_t in_plane = static_cast<std::size_t>(d.h) * d.w;
  const std::size_t out_plane = static_cast<std::size_t>(d.hout) * d.wout;
  const std::size_t ker_plane = static_cast<std::size_t>(d.kh) * d.kw;
  const bool par =
      static_cast<std::size_t>(d.cout) * d.cing * ker_plane * d.n * out_plane >
      kParallelCutoff;
#pragma omp parallel for collapse(2) schedule(static) if (par)
  for (int oc = 0; oc < d.cout; ++oc) {
    for (int ic = 0; ic < d.cing; ++ic) {
      const int ci = (oc / d.out_per_group) * d.cing + ic;
      T* gkp = gk + (static_cast<std::size_t>(oc) * d.cing + ic) * ker_plane;
      for (int r = 0; r < d.kh; ++r) {
        for (int s = 0; s < d.kw; ++s) {
          T acc = 0;
          for (int in = 0; in < d.n; ++in) {
            const T* gyp =
                gy + (static_cast<std::size_t>(in) * d.cout + oc) * out_plane;
            const T* xp =
                x + (static_cast<std::size_t>(in) * d.cin + ci) * in_plane;
            for (int oh = 0; oh < d.hout; ++oh) {
              const int ih = oh * d.stride - d.pad + r;
              if (ih < 0 || ih >= d.h) continue;
              const T* xrow = xp + static_cast<std::size_t>(ih) * d.w;
              const T* gyrow = gyp + static_cast<std::size_t>(oh) * d.wout;
              for (int ow = 0; ow < d.wout; ++ow) {
                const int iw = ow * d.stride - d.pad + s;
                if (iw < 0 || iw >= d.w) continue;
                acc += gyrow[ow] * xrow[iw];
              }
            }
          }
          gkp[static_cast<std::size_t>(r) * d.kw + s] = acc;
        }
      }
    }
  }
}

template <class T>
void conv2d_backward_bias_kernel(const T* gy, T* gb, const ConvDims& d) {
  const std::size_t out_plane = static_cast<std::size_t>(d.hout) * d.wout;
#pragma omp parallel for schedule(static) if (d.cout > 4)
  for (int oc = 0; oc < d.cout; ++oc) {
    T acc = 0;
    for (int in = 0; in < d.n; ++in) {
      const T* gyp =
          gy + (static_cast<std::size_t>(in) * d.cout + oc) * out_plane;
      for (std::size_t i = 0; i < out_plane; ++i) acc += gyp[i];
    }
    gb[oc] = acc;
  }
}

template <class T>
void validate_conv(const TensorT<T>& x, const ConvParamsT<T>& p) {
  if (x.ndim() != 4) {
    throw std::invalid_argument("conv2d: input must be NCHW, got " +
                                shape_to_string(x.shape()));
  }
  if (p.kernel.ndim() != 4) {
    throw std::invalid_argument("conv2d: kernel must be 4-d, got " +
                                shape_to_string(p.kernel.shape()));
  }
  if (p.stride < 1 || p.padding < 0 || p.groups < 1) {
    throw std::invalid_argument("conv2d: stride/padding/groups out of range");
  }
  const int cin = x.extent(1);
  if (cin % p.groups != 0 || p.kernel.extent(1) != cin / p.groups) {
    throw std::invalid_argument(
        "conv2d: channels " + std::to_string(cin) + " incompatible with " +
        std::to_string(p.groups) + " groups and kernel " +
        shape_to_string(p.kernel.shape()));
  }
  if (p.kernel.extent(0) % p.groups != 0) {
    throw std::invalid_argument("conv2d: out channels not divisible by groups");
  }
  if (p.kernel.extent(2) > x.extent(2) + 2 * p.padding ||
      p.kernel.extent(3) > x.extent(3) + 2 * p.padding) {
    throw std::invalid_argument("conv2d: kernel " +
                                shape_to_string(p.kernel.shape()) +
                                " larger than padded input " +
                                shape_to_string(x.shape()));
  }
  const int hout = (x.extent(2) + 2 * p.padding - p.kernel.extent(2)) / p.stride + 1;
  const int wout = (x.extent(3) + 2 * p.padding - p.kernel.extent(3)) / p.stride + 1;
  if (hout < 1 || wout < 1) {
    throw std::invalid_argument("conv2d: output extents would be < 1");
  }
  if (p.bias.defined() &&
      (p.bias.ndim() != 1 || p.bias.extent(0) != p.kernel.extent(0))) {
    throw std::invalid_argument("conv2d: bias shape " +
                                shape_to_string(p.bias.shape()) +
                                " does not match out channels");
  }
}

}  // namespace

template <class T>
TensorT<T> conv2d(TapeT<T>* tape, const TensorT<T>& x, const ConvParamsT<T>& p) {
  validate_conv(x, p);
  const ConvDims d =
      conv_dims(x.shape(), p.kernel.shape(), p.stride, p.padding, p.groups);
  TensorT<T> out({d.n, d.cout, d.hout, d.wout});
  conv2d_forward_kernel(x.data(), p.kernel.data(),
                        p.bias.defined() ? p.bias.data() : nullptr, out.data(),
                        d);

  const bool tx = input_tracked(tape, x);
  const bool tk = input_tracked(tape, p.kernel);
  const bool tb = p.bias.defined() && input_tracked(tape, p.bias);
  if (tx || tk || tb) {
    std::vector<long long> ids;
    if (tx) ids.push_back(x.node());
    if (tk) ids.push_back(p.kernel.node());
    if (tb) ids.push_back(p.bias.node());
    TensorT<T> xv = x;
    TensorT<T> kv = p.kernel;
    auto vjp = [tx, tk, tb, xv, kv, d](const TensorT<T>& gy) {
      std::vector<TensorT<T>> gs;
      if (tx) {
        TensorT<T> gx(xv.shape());
        conv2d_backward_input_kernel(gy.data(), kv.data(), gx.data(), d);
        gs.push_back(std::move(gx));
      }
      if (tk) {
        TensorT<T> gk(kv.shape());
        conv2d_backward_kernel_kernel(gy.data(), xv.data(), gk.data(), d);
        gs.push_back(std::move(gk));
      }
      if (tb) {
        TensorT<T> gb({d.cout});
        conv2d_backward_bias_kernel(gy.data(), gb.data(), d);
        gs.push_back(std::move(gb));
      }
      return gs;
    };
    tape->bind(out, tape->record(std::move(ids), out.shape(), std::move(vjp)));
  }
  return out;
}

template <class T>
TensorT<T> depthwise_conv2d(TapeT<T>* tape, const TensorT<T>& x,
                            const ConvParamsT<T>& p) {
  const int cin = x.ndim() == 4 ? x.extent(1) : -1;
  if (p.groups != cin || p.kernel.extent(1) != 1 ||
      p.kernel.extent(0) != cin) {
    throw std::invalid_argument(
        "depthwise_conv2d: params are not depthwise (groups=" +
        std::to_string(p.groups) + ", kernel " +
        shape_to_string(p.kernel.shape()) + ", input " +
        shape_to_string(x.shape()) + ")");
  }
  return conv2d(tape, x, p);
}

template <class T>
TensorT<T> pointwise_conv2d(TapeT<T>* tape, const TensorT<T>& x,
                            const ConvParamsT<T>& p) {
  if (p.kernel.extent(2) != 1 || p.kernel.extent(3) != 1 || p.groups != 1) {
    throw std::invalid_argument(
        "pointwise_conv2d: kernel must be 1x1 ungrouped, got " +
        shape_to_string(p.kernel.shape()) + " with groups=" +
        std::to_string(p.groups));
  }
  return conv2d(tape, x, p);
}

template <class T>
TensorT<T> depthwise_separable_conv2d(TapeT<T>* tape, const TensorT<T>& x,
                                      const ConvParamsT<T>& dw,
                                      const ConvParamsT<T>& pw) {
  const int k = dw.kernel.extent(2);
  if (k != dw.kernel.extent(3) || (k != 3 && k != 5 && k != 7)) {
    throw std::invalid_argument(
        "depthwise_separable_conv2d: depthwise kernel must be 3x3, 5x5 or "
        "7x7, got " +
        shape_to_string(dw.kernel.shape()));
  }
  if (dw.stride != 1 || dw.padding != (k - 1) / 2) {
    throw std::invalid_argument(
        "depthwise_separable_conv2d: depthwise stage must preserve extents "
        "(stride 1, padding (k-1)/2)");
  }
  return pointwise_conv2d(tape, depthwise_conv2d(tape, x, dw), pw);
}

#define ESDMR_INSTANTIATE_CONV(T)                                            \
  template TensorT<T> conv2d<T>(TapeT<T>*, const TensorT<T>&,               \
                                const ConvParamsT<T>&);                      \
  template TensorT<T> depthwise_conv2d<T>(TapeT<T>*, const TensorT<T>&,     \
                                          const ConvParamsT<T>&);            \
  template TensorT<T> pointwise_conv2d<T>(TapeT<T>*, const TensorT<T>&,     \
                                          const ConvParamsT<T>&);            \
  template TensorT<T> depthwise_separable_conv2d<T>(                        \
      TapeT<T>*, const TensorT<T>&, const ConvParamsT<T>&,                  \
      const ConvParamsT<T>&);

ESDMR_INSTANTIATE_CONV(float)
ESDMR_INSTANTIATE_CONV(double)

#undef ESDMR_INSTANTIATE_CONV

}  // namespace esdmr
