#include <cmath>
#include <stdexcept>
#include <string>

#include "esdmr/nn.hpp"

namespace esdmr {

template <class T>
BatchNormStateT<T> BatchNormStateT<T>::identity(int channels) {
  BatchNormStateT<T> s;
  s.gamma = TensorT<T>::ones({channels});
  s.beta = TensorT<T>::zeros({channels});
  s.running_mean = TensorT<T>::zeros({channels});
  s.running_var = TensorT<T>::ones({channels});
  return s;
}

template struct BatchNormStateT<float>;
template struct BatchNormStateT<double>;

namespace {

template <class T>
void require_nchw(const char* op, const TensorT<T>& t) {
  if (t.ndim() != 4) {
    throw std::invalid_argument(std::string(op) + ": expected NCHW tensor, got " +
                                shape_to_string(t.shape()));
  }
}

}  // namespace

template <class T>
TensorT<T> batchnorm2d(TapeT<T>* tape, const TensorT<T>& x,
                       BatchNormStateT<T>& s) {
  require_nchw("batchnorm2d", x);
  const int n = x.extent(0), c = x.extent(1), h = x.extent(2), w = x.extent(3);
  if (c != s.channels()) {
    throw std::invalid_argument(
        "batchnorm2d: input channels " + std::to_string(c) +
        " do not match state channels " + std::to_string(s.channels()));
  }
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const std::size_t cnt = static_cast<std::size_t>(n) * plane;
  const bool training = s.mode == BnMode::kTrain;
  if (training && cnt < 2) {
    throw std::invalid_argument(
        "batchnorm2d: training mode needs at least 2 values per channel");
  }

  // Per-channel mean and inverse std, from the batch or the running stats.
  std::vector<T> mean(static_cast<std::size_t>(c));
  std::vector<T> inv_std(static_cast<std::size_t>(c));
  const T* px = x.data();
  if (training) {
    for (int ch = 0; ch < c; ++ch) {
      T m = 0;
      for (int in = 0; in < n; ++in) {
        const T* p = px + (static_cast<std::size_t>(in) * c + ch) * plane;
        for (std::size_t i = 0; i < plane; ++i) m += p[i];
      }
      m /= static_cast<T>(cnt);
      T v = 0;
      for (int in = 0; in < n; ++in) {
        const T* p = px + (static_cast<std::size_t>(in) * c + ch) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          const T dlt = p[i] - m;
          v += dlt * dlt;
        }
      }
      v /= static_cast<T>(cnt);  // biased variance, matching normalization
      mean[ch] = m;
      inv_std[ch] = T(1) / std::sqrt(v + s.eps);
      s.running_mean.data()[ch] =
          s.momentum * s.running_mean.data()[ch] + (T(1) - s.momentum) * m;
      s.running_var.data()[ch] =
          s.momentum * s.running_var.data()[ch] + (T(1) - s.momentum) * v;
    }
  } else {
    for (int ch = 0; ch < c; ++ch) {
      const T v = s.running_var.value_at(static_cast<std::size_t>(ch));
      if (!(v > T(0))) {
        throw std::invalid_argument(
            "batchnorm2d: running variance must be strictly positive");
      }
      mean[ch] = s.running_mean.value_at(static_cast<std::size_t>(ch));
      inv_std[ch] = T(1) / std::sqrt(v + s.eps);
    }
  }

  TensorT<T> xhat(x.shape());
  TensorT<T> out(x.shape());
  T* pxh = xhat.data();
  T* po = out.data();
  const T* pg = s.gamma.data();
  const T* pb = s.beta.data();
#pragma omp parallel for collapse(2) schedule(static) if (cnt * c > (1u << 14))
  for (int in = 0; in < n; ++in) {
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t base = (static_cast<std::size_t>(in) * c + ch) * plane;
      const T m = mean[ch], is = inv_std[ch], g = pg[ch], b = pb[ch];
      for (std::size_t i = 0; i < plane; ++i) {
        const T xh = (px[base + i] - m) * is;
        pxh[base + i] = xh;
        po[base + i] = g * xh + b;
      }
    }
  }

  const bool tx = input_tracked(tape, x);
  const bool tg = input_tracked(tape, s.gamma);
  const bool tb = input_tracked(tape, s.beta);
  if (tx || tg || tb) {
    std::vector<long long> ids;
    if (tx) ids.push_back(x.node());
    if (tg) ids.push_back(s.gamma.node());
    if (tb) ids.push_back(s.beta.node());
    TensorT<T> gamma = s.gamma;
    auto vjp = [tx, tg, tb, xhat, gamma, inv_std, training, n, c, plane,
                cnt](const TensorT<T>& gy) {
      const T* pgy = gy.data();
      const T* pxh = xhat.data();
      std::vector<T> sum_gy(static_cast<std::size_t>(c), T(0));
      std::vector<T> sum_gy_xhat(static_cast<std::size_t>(c), T(0));
      for (int ch = 0; ch < c; ++ch) {
        T a = 0, b2 = 0;
        for (int in = 0; in < n; ++in) {
          const std::size_t base =
              (static_cast<std::size_t>(in) * c + ch) * plane;
          for (std::size_t i = 0; i < plane; ++i) {
            a += pgy[base + i];
            b2 += pgy[base + i] * pxh[base + i];
          }
        }
        sum_gy[ch] = a;
        sum_gy_xhat[ch] = b2;
      }

      std::vector<TensorT<T>> gs;
      if (tx) {
        TensorT<T> gx(xhat.shape());
        T* pgx = gx.data();
        const T* pgm = gamma.data();
        for (int in = 0; in < n; ++in) {
          for (int ch = 0; ch < c; ++ch) {
            const std::size_t base =
                (static_cast<std::size_t>(in) * c + ch) * plane;
            const T gi = pgm[ch] * inv_std[ch];
            if (training) {
              const T mg = sum_gy[ch] / static_cast<T>(cnt);
              const T mgx = sum_gy_xhat[ch] / static_cast<T>(cnt);
              for (std::size_t i = 0; i < plane; ++i) {
                pgx[base + i] =
                    gi * (pgy[base + i] - mg - pxh[base + i] * mgx);
              }
            } else {
              for (std::size_t i = 0; i < plane; ++i) {
                pgx[base + i] = gi * pgy[base + i];
              }
            }
          }
        }
        gs.push_back(std::move(gx));
      }
      if (tg) {
        TensorT<T> gg({c});
        for (int ch = 0; ch < c; ++ch) gg.data()[ch] = sum_gy_xhat[ch];
        gs.push_back(std::move(gg));
      }
      if (tb) {
        TensorT<T> gb({c});
        for (int ch = 0; ch < c; ++ch) gb.data()[ch] = sum_gy[ch];
        gs.push_back(std::move(gb));
      }
      return gs;
    };
    tape->bind(out, tape->record(std::move(ids), out.shape(), std::move(vjp)));
  }
  return out;
}

template <class T>
TensorT<T> relu(TapeT<T>* tape, const TensorT<T>& x) {
  TensorT<T> out(x.shape());
  const T* px = x.data();
  T* po = out.data();
  const std::size_t n = x.numel();
  for (std::size_t i = 0; i < n; ++i) po[i] = px[i] > T(0) ? px[i] : T(0);
  if (input_tracked(tape, x)) {
    TensorT<T> xv = x;
    auto vjp = [xv](const TensorT<T>& gy) {
      TensorT<T> g(gy.shape());
      const T* pgy = gy.data();
      const T* pxv = xv.data();
      T* pg = g.data();
      for (std::size_t i = 0; i < g.numel(); ++i) {
        pg[i] = pxv[i] > T(0) ? pgy[i] : T(0);
      }
      return std::vector<TensorT<T>>{std::move(g)};
    };
    tape->bind(out, tape->record({x.node()}, out.shape(), std::move(vjp)));
  }
  return out;
}

template <class T>
TensorT<T> avgpool2d(TapeT<T>* tape, const TensorT<T>& x, int stride) {
  require_nchw("avgpool2d", x);
  if (stride != 1 && stride != 2) {
    throw std::invalid_argument("avgpool2d: stride must be 1 or 2, got " +
                                std::to_string(stride));
  }
  constexpr int kKernel = 3;
  constexpr int kPad = 1;
  constexpr T kInvDiv = T(1) / T(9);
  const int n = x.extent(0), c = x.extent(1), h = x.extent(2), w = x.extent(3);
  const int hout = (h + 2 * kPad - kKernel) / stride + 1;
  const int wout = (w + 2 * kPad - kKernel) / stride + 1;
  if (hout < 1 || wout < 1) {
    throw std::invalid_argument("avgpool2d: output extents would be < 1 for " +
                                shape_to_string(x.shape()));
  }
  const std::size_t in_plane = static_cast<std::size_t>(h) * w;
  const std::size_t out_plane = static_cast<std::size_t>(hout) * wout;
  TensorT<T> out({n, c, hout, wout});
  const T* px = x.data();
  T* po = out.data();
  const int planes = n * c;
#pragma omp parallel for schedule(static) if (planes * out_plane > (1u << 14))
  for (int pl = 0; pl < planes; ++pl) {
    const T* xp = px + static_cast<std::size_t>(pl) * in_plane;
    T* yp = po + static_cast<std::size_t>(pl) * out_plane;
    for (int oh = 0; oh < hout; ++oh) {
      for (int ow = 0; ow < wout; ++ow) {
        T acc = 0;
        for (int r = 0; r < kKernel; ++r) {
          const int ih = oh * stride - kPad + r;
          if (ih < 0 || ih >= h) continue;
          for (int s = 0; s < kKernel; ++s) {
            const int iw = ow * stride - kPad + s;
            if (iw < 0 || iw >= w) continue;
            acc += xp[static_cast<std::size_t>(ih) * w + iw];
          }
        }
        yp[static_cast<std::size_t>(oh) * wout + ow] = acc * kInvDiv;
      }
    }
  }

  if (input_tracked(tape, x)) {
    const std::vector<int> in_shape = x.shape();
    auto vjp = [in_shape, n, c, h, w, hout, wout, stride, in_plane,
                out_plane](const TensorT<T>& gy) {
      TensorT<T> gx(in_shape);
      const T* pgy = gy.data();
      T* pgx = gx.data();
      const int planes2 = n * c;
#pragma omp parallel for schedule(static) if (planes2 * in_plane > (1u << 14))
      for (int pl = 0; pl < planes2; ++pl) {
        const T* gyp = pgy + static_cast<std::size_t>(pl) * out_plane;
        T* gxp = pgx + static_cast<std::size_t>(pl) * in_plane;
        for (int ih = 0; ih < h; ++ih) {
          // windows with oh*stride-1 <= ih <= oh*stride+1
          int oh_lo = (ih - 1 + stride - 1) / stride;
          if (oh_lo < 0) oh_lo = 0;
          int oh_hi = (ih + 1) / stride;
          if (oh_hi > hout - 1) oh_hi = hout - 1;
          for (int iw = 0; iw < w; ++iw) {
            int ow_lo = (iw - 1 + stride - 1) / stride;
            if (ow_lo < 0) ow_lo = 0;
            int ow_hi = (iw + 1) / stride;
            if (ow_hi > wout - 1) ow_hi = wout - 1;
            T acc = 0;
            for (int oh = oh_lo; oh <= oh_hi; ++oh) {
              for (int ow = ow_lo; ow <= ow_hi; ++ow) {
                acc += gyp[static_cast<std::size_t>(oh) * wout + ow];
              }
            }
            gxp[static_cast<std::size_t>(ih) * w + iw] = acc * kInvDiv;
          }
        }
      }
      return std::vector<TensorT<T>>{std::move(gx)};
    };
    tape->bind(out, tape->record({x.node()}, out.shape(), std::move(vjp)));
  }
  return out;
}

namespace {

// Sampling weights of one output coordinate against the input grid.
template <class T>
struct LerpTap {
  int i0, i1;
  T w0, w1;
};

template <class T>
LerpTap<T> lerp_tap(int out_idx, int in_extent) {
  T src = (static_cast<T>(out_idx) + T(0.5)) / T(2) - T(0.5);
  if (src < T(0)) src = T(0);
  int i0 = static_cast<int>(src);
  if (i0 > in_extent - 1) i0 = in_extent - 1;
  const T f = src - static_cast<T>(i0);
  const int i1 = i0 + 1 <= in_extent - 1 ? i0 + 1 : in_extent - 1;
  return {i0, i1, T(1) - f, f};
}

}  // namespace

template <class T>
TensorT<T> bilinear_upsample2x(TapeT<T>* tape, const TensorT<T>& x) {
  require_nchw("bilinear_upsample2x", x);
  const int n = x.extent(0), c = x.extent(1), h = x.extent(2), w = x.extent(3);
  if (h < 2 || w < 2) {
    throw std::invalid_argument("bilinear_upsample2x: extents must be >= 2, got " +
                                shape_to_string(x.shape()));
  }
  const int hout = 2 * h, wout = 2 * w;
  const std::size_t in_plane = static_cast<std::size_t>(h) * w;
  const std::size_t out_plane = static_cast<std::size_t>(hout) * wout;
  std::vector<LerpTap<T>> ytap(static_cast<std::size_t>(hout));
  std::vector<LerpTap<T>> xtap(static_cast<std::size_t>(wout));
  for (int i = 0; i < hout; ++i) ytap[static_cast<std::size_t>(i)] = lerp_tap<T>(i, h);
  for (int i = 0; i < wout; ++i) xtap[static_cast<std::size_t>(i)] = lerp_tap<T>(i, w);

  TensorT<T> out({n, c, hout, wout});
  const T* px = x.data();
  T* po = out.data();
  const int planes = n * c;
#pragma omp parallel for schedule(static) if (planes * out_plane > (1u << 14))
  for (int pl = 0; pl < planes; ++pl) {
    const T* xp = px + static_cast<std::size_t>(pl) * in_plane;
    T* yp = po + static_cast<std::size_t>(pl) * out_plane;
    for (int oh = 0; oh < hout; ++oh) {
      const LerpTap<T>& ty = ytap[static_cast<std::size_t>(oh)];
      const T* row0 = xp + static_cast<std::size_t>(ty.i0) * w;
      const T* row1 = xp + static_cast<std::size_t>(ty.i1) * w;
      for (int ow = 0; ow < wout; ++ow) {
        const LerpTap<T>& tx = xtap[static_cast<std::size_t>(ow)];
        const T top = tx.w0 * row0[tx.i0] + tx.w1 * row0[tx.i1];
        const T bot = tx.w0 * row1[tx.i0] + tx.w1 * row1[tx.i1];
        yp[static_cast<std::size_t>(oh) * wout + ow] = ty.w0 * top + ty.w1 * bot;
      }
    }
  }

  if (input_tracked(tape, x)) {
    const std::vector<int> in_shape = x.shape();
    auto vjp = [in_shape, n, c, h, w, hout, wout, in_plane, out_plane, ytap,
                xtap](const TensorT<T>& gy) {
      TensorT<T> gx(in_shape);
      const T* pgy = gy.data();
      T* pgx = gx.data();
      const int planes2 = n * c;
      // Gather form: each input cell sums the weights of the output pixels
      // that sampled it, so the sweep is race-free and deterministic.
#pragma omp parallel for schedule(static) if (planes2 * in_plane > (1u << 14))
      for (int pl = 0; pl < planes2; ++pl) {
        const T* gyp = pgy + static_cast<std::size_t>(pl) * out_plane;
        T* gxp = pgx + static_cast<std::size_t>(pl) * in_plane;
        for (int ih = 0; ih < h; ++ih) {
          const int oh_lo = 2 * ih - 2 < 0 ? 0 : 2 * ih - 2;
          const int oh_hi = 2 * ih + 3 > hout - 1 ? hout - 1 : 2 * ih + 3;
          for (int iw = 0; iw < w; ++iw) {
            const int ow_lo = 2 * iw - 2 < 0 ? 0 : 2 * iw - 2;
            const int ow_hi = 2 * iw + 3 > wout - 1 ? wout - 1 : 2 * iw + 3;
            T acc = 0;
            for (int oh = oh_lo; oh <= oh_hi; ++oh) {
              const LerpTap<T>& ty = ytap[static_cast<std::size_t>(oh)];
              const T wy = (ty.i0 == ih ? ty.w0 : T(0)) +
                           (ty.i1 == ih ? ty.w1 : T(0));
              if (wy == T(0)) continue;
              for (int ow = ow_lo; ow <= ow_hi; ++ow) {
                const LerpTap<T>& tx = xtap[static_cast<std::size_t>(ow)];
                const T wx = (tx.i0 == iw ? tx.w0 : T(0)) +
                             (tx.i1 == iw ? tx.w1 : T(0));
                if (wx == T(0)) continue;
                acc += wy * wx * gyp[static_cast<std::size_t>(oh) * wout + ow];
              }
            }
            gxp[static_cast<std::size_t>(ih) * w + iw] = acc;
          }
        }
      }
      return std::vector<TensorT<T>>{std::move(gx)};
    };
    tape->bind(out, tape->record({x.node()}, out.shape(), std::move(vjp)));
  }
  return out;
}

template <class T>
TensorT<T> softmax_channels(TapeT<T>* tape, const TensorT<T>& x) {
  require_nchw("softmax_channels", x);
  const int n = x.extent(0), c = x.extent(1), h = x.extent(2), w = x.extent(3);
  if (c < 2) {
    throw std::invalid_argument("softmax_channels: need at least 2 channels");
  }
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  TensorT<T> out(x.shape());
  const T* px = x.data();
  T* po = out.data();
#pragma omp parallel for schedule(static) if (n * plane * c > (1u << 14))
  for (int in = 0; in < n; ++in) {
    const std::size_t nbase = static_cast<std::size_t>(in) * c * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      T mx = px[nbase + i];
      for (int ch = 1; ch < c; ++ch) {
        const T v = px[nbase + static_cast<std::size_t>(ch) * plane + i];
        if (v > mx) mx = v;
      }
      T denom = 0;
      for (int ch = 0; ch < c; ++ch) {
        const T e = std::exp(px[nbase + static_cast<std::size_t>(ch) * plane + i] - mx);
        po[nbase + static_cast<std::size_t>(ch) * plane + i] = e;
        denom += e;
      }
      for (int ch = 0; ch < c; ++ch) {
        po[nbase + static_cast<std::size_t>(ch) * plane + i] /= denom;
      }
    }
  }

  if (input_tracked(tape, x)) {
    TensorT<T> y = out;  // softmax backward needs only its own output
    auto vjp = [y, n, c, plane](const TensorT<T>& gy) {
      TensorT<T> gx(y.shape());
      const T* pgy = gy.data();
      const T* py = y.data();
      T* pgx = gx.data();
      for (int in = 0; in < n; ++in) {
        const std::size_t nbase = static_cast<std::size_t>(in) * c * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          T dot = 0;
          for (int ch = 0; ch < c; ++ch) {
            const std::size_t idx = nbase + static_cast<std::size_t>(ch) * plane + i;
            dot += pgy[idx] * py[idx];
          }
          for (int ch = 0; ch < c; ++ch) {
            const std::size_t idx = nbase + static_cast<std::size_t>(ch) * plane + i;
            pgx[idx] = py[idx] * (pgy[idx] - dot);
          }
        }
      }
      return std::vector<TensorT<T>>{std::move(gx)};
    };
    tape->bind(out, tape->record({x.node()}, out.shape(), std::move(vjp)));
  }
  return out;
}

#define ESDMR_INSTANTIATE_NN(T)                                          \
  template TensorT<T> batchnorm2d<T>(TapeT<T>*, const TensorT<T>&,       \
                                     BatchNormStateT<T>&);               \
  template TensorT<T> relu<T>(TapeT<T>*, const TensorT<T>&);             \
  template TensorT<T> avgpool2d<T>(TapeT<T>*, const TensorT<T>&, int);   \
  template TensorT<T> bilinear_upsample2x<T>(TapeT<T>*, const TensorT<T>&); \
  template TensorT<T> softmax_channels<T>(TapeT<T>*, const TensorT<T>&);

ESDMR_INSTANTIATE_NN(float)
ESDMR_INSTANTIATE_NN(double)

#undef ESDMR_INSTANTIATE_NN

}  // namespace esdmr
