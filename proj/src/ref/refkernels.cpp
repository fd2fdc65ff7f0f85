#include "refkernels.hpp"

#include <cmath>
#include <stdexcept>

namespace esdmr::ref {

template <class T>
TensorT<T> conv2d_naive(const TensorT<T>& x, const TensorT<T>& kernel,
                        const TensorT<T>& bias, int stride, int padding,
                        int groups) {
  const int n = x.extent(0), cin = x.extent(1), h = x.extent(2), w = x.extent(3);
  const int cout = kernel.extent(0), cing = kernel.extent(1);
  const int kh = kernel.extent(2), kw = kernel.extent(3);
  if (cin % groups != 0 || cing != cin / groups || cout % groups != 0) {
    throw std::invalid_argument("conv2d_naive: group mismatch");
  }
  const int hout = (h + 2 * padding - kh) / stride + 1;
  const int wout = (w + 2 * padding - kw) / stride + 1;
  const int out_per_group = cout / groups;
  TensorT<T> y({n, cout, hout, wout});
  for (int in = 0; in < n; ++in) {
    for (int oc = 0; oc < cout; ++oc) {
      const int ic0 = (oc / out_per_group) * cing;
      for (int oh = 0; oh < hout; ++oh) {
        for (int ow = 0; ow < wout; ++ow) {
          T acc = bias.defined() ? bias.value_at(static_cast<std::size_t>(oc))
                                 : T(0);
          for (int ic = 0; ic < cing; ++ic) {
            for (int r = 0; r < kh; ++r) {
              for (int s = 0; s < kw; ++s) {
                const int ih = oh * stride - padding + r;
                const int iw = ow * stride - padding + s;
                if (ih < 0 || ih >= h || iw < 0 || iw >= w) continue;
                acc += x.at4(in, ic0 + ic, ih, iw) * kernel.at4(oc, ic, r, s);
              }
            }
          }
          y.at4(in, oc, oh, ow) = acc;
        }
      }
    }
  }
  return y;
}

template <class T>
TensorT<T> depthwise_naive(const TensorT<T>& x, const TensorT<T>& kernel,
                           int stride, int padding) {
  const int n = x.extent(0), c = x.extent(1), h = x.extent(2), w = x.extent(3);
  const int kh = kernel.extent(2), kw = kernel.extent(3);
  if (kernel.extent(0) != c || kernel.extent(1) != 1) {
    throw std::invalid_argument("depthwise_naive: kernel must be (C,1,kh,kw)");
  }
  const int hout = (h + 2 * padding - kh) / stride + 1;
  const int wout = (w + 2 * padding - kw) / stride + 1;
  TensorT<T> y({n, c, hout, wout});
  for (int in = 0; in < n; ++in) {
    for (int m = 0; m < c; ++m) {
      for (int oh = 0; oh < hout; ++oh) {
        for (int ow = 0; ow < wout; ++ow) {
          T acc = 0;
          for (int r = 0; r < kh; ++r) {
            for (int s = 0; s < kw; ++s) {
              const int ih = oh * stride - padding + r;
              const int iw = ow * stride - padding + s;
              if (ih < 0 || ih >= h || iw < 0 || iw >= w) continue;
              acc += kernel.at4(m, 0, r, s) * x.at4(in, m, ih, iw);
            }
          }
          y.at4(in, m, oh, ow) = acc;
        }
      }
    }
  }
  return y;
}

template <class T>
TensorT<T> pointwise_naive(const TensorT<T>& x, const TensorT<T>& kernel,
                           const TensorT<T>& bias) {
  const int n = x.extent(0), cin = x.extent(1), h = x.extent(2), w = x.extent(3);
  const int cout = kernel.extent(0);
  if (kernel.extent(1) != cin || kernel.extent(2) != 1 || kernel.extent(3) != 1) {
    throw std::invalid_argument("pointwise_naive: kernel must be (C_out,C_in,1,1)");
  }
  TensorT<T> y({n, cout, h, w});
  for (int in = 0; in < n; ++in) {
    for (int oc = 0; oc < cout; ++oc) {
      for (int ih = 0; ih < h; ++ih) {
        for (int iw = 0; iw < w; ++iw) {
          T acc = bias.defined() ? bias.value_at(static_cast<std::size_t>(oc))
                                 : T(0);
          for (int m = 0; m < cin; ++m) {
            acc += kernel.at4(oc, m, 0, 0) * x.at4(in, m, ih, iw);
          }
          y.at4(in, oc, ih, iw) = acc;
        }
      }
    }
  }
  return y;
}

template <class T>
TensorT<T> block_diag_kernel(const TensorT<T>& depthwise_kernel) {
  const int c = depthwise_kernel.extent(0);
  const int kh = depthwise_kernel.extent(2), kw = depthwise_kernel.extent(3);
  TensorT<T> dense({c, c, kh, kw});
  for (int m = 0; m < c; ++m) {
    for (int r = 0; r < kh; ++r) {
      for (int s = 0; s < kw; ++s) {
        dense.at4(m, m, r, s) = depthwise_kernel.at4(m, 0, r, s);
      }
    }
  }
  return dense;
}

template <class T>
TensorT<T> avgpool3x3_naive(const TensorT<T>& x, int stride) {
  const int n = x.extent(0), c = x.extent(1), h = x.extent(2), w = x.extent(3);
  const int hout = (h + 2 - 3) / stride + 1;
  const int wout = (w + 2 - 3) / stride + 1;
  TensorT<T> y({n, c, hout, wout});
  for (int in = 0; in < n; ++in) {
    for (int ch = 0; ch < c; ++ch) {
      for (int oh = 0; oh < hout; ++oh) {
        for (int ow = 0; ow < wout; ++ow) {
          T acc = 0;
          for (int r = 0; r < 3; ++r) {
            for (int s = 0; s < 3; ++s) {
              const int ih = oh * stride - 1 + r;
              const int iw = ow * stride - 1 + s;
              if (ih < 0 || ih >= h || iw < 0 || iw >= w) continue;
              acc += x.at4(in, ch, ih, iw);
            }
          }
          y.at4(in, ch, oh, ow) = acc / T(9);
        }
      }
    }
  }
  return y;
}

template <class T>
TensorT<T> upsample2x_naive(const TensorT<T>& x) {
  const int n = x.extent(0), c = x.extent(1), h = x.extent(2), w = x.extent(3);
  TensorT<T> y({n, c, 2 * h, 2 * w});
  auto sample = [](const TensorT<T>& t, int in, int ch, T sy, T sx, int hh,
                   int ww) {
    if (sy < T(0)) sy = T(0);
    if (sx < T(0)) sx = T(0);
    int y0 = static_cast<int>(std::floor(sy));
    int x0 = static_cast<int>(std::floor(sx));
    if (y0 > hh - 1) y0 = hh - 1;
    if (x0 > ww - 1) x0 = ww - 1;
    const int y1 = y0 + 1 <= hh - 1 ? y0 + 1 : hh - 1;
    const int x1 = x0 + 1 <= ww - 1 ? x0 + 1 : ww - 1;
    const T fy = sy - static_cast<T>(y0);
    const T fx = sx - static_cast<T>(x0);
    return (T(1) - fy) * ((T(1) - fx) * t.at4(in, ch, y0, x0) +
                          fx * t.at4(in, ch, y0, x1)) +
           fy * ((T(1) - fx) * t.at4(in, ch, y1, x0) +
                 fx * t.at4(in, ch, y1, x1));
  };
  for (int in = 0; in < n; ++in) {
    for (int ch = 0; ch < c; ++ch) {
      for (int oh = 0; oh < 2 * h; ++oh) {
        for (int ow = 0; ow < 2 * w; ++ow) {
          const T sy = (static_cast<T>(oh) + T(0.5)) / T(2) - T(0.5);
          const T sx = (static_cast<T>(ow) + T(0.5)) / T(2) - T(0.5);
          y.at4(in, ch, oh, ow) = sample(x, in, ch, sy, sx, h, w);
        }
      }
    }
  }
  return y;
}

#define ESDMR_INSTANTIATE_REF(T)                                          \
  template TensorT<T> conv2d_naive<T>(const TensorT<T>&, const TensorT<T>&, \
                                      const TensorT<T>&, int, int, int);  \
  template TensorT<T> depthwise_naive<T>(const TensorT<T>&,               \
                                         const TensorT<T>&, int, int);    \
  template TensorT<T> pointwise_naive<T>(const TensorT<T>&,               \
                                         const TensorT<T>&,               \
                                         const TensorT<T>&);              \
  template TensorT<T> block_diag_kernel<T>(const TensorT<T>&);            \
  template TensorT<T> avgpool3x3_naive<T>(const TensorT<T>&, int);        \
  template TensorT<T> upsample2x_naive<T>(const TensorT<T>&);

ESDMR_INSTANTIATE_REF(float)
ESDMR_INSTANTIATE_REF(double)

#undef ESDMR_INSTANTIATE_REF

}  // namespace esdmr::ref
