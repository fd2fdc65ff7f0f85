#include "esdmr/ops.hpp"

#include <stdexcept>
#include <string>

namespace esdmr {

template <class T>
void require_same_shape(const char* op, const TensorT<T>& a,
                        const TensorT<T>& b) {
  if (!same_shape(a, b)) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_to_string(a.shape()) + " vs " +
                                shape_to_string(b.shape()));
  }
}

template <class T>
bool input_tracked(const TapeT<T>* tape, const TensorT<T>& t) {
  if (!tape) return false;
  if (tape->tracked(t)) return true;
  if (t.requires_grad() && t.node() >= 0) {
    throw std::logic_error(
        "tensor carries linkage to a different tape; watch it on the active "
        "tape first");
  }
  return false;
}

namespace {

template <class T, class Fwd, class VjpA, class VjpB>
TensorT<T> binary_op(const char* name, TapeT<T>* tape, const TensorT<T>& a,
                     const TensorT<T>& b, Fwd fwd, VjpA vjp_a, VjpB vjp_b) {
  require_same_shape(name, a, b);
  TensorT<T> out(a.shape());
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) po[i] = fwd(pa[i], pb[i]);

  const bool ta = input_tracked(tape, a);
  const bool tb = input_tracked(tape, b);
  if (ta || tb) {
    std::vector<long long> ids;
    if (ta) ids.push_back(a.node());
    if (tb) ids.push_back(b.node());
    auto vjp = [ta, tb, vjp_a, vjp_b](const TensorT<T>& gy) {
      std::vector<TensorT<T>> gs;
      if (ta) gs.push_back(vjp_a(gy));
      if (tb) gs.push_back(vjp_b(gy));
      return gs;
    };
    tape->bind(out, tape->record(std::move(ids), out.shape(), std::move(vjp)));
  }
  return out;
}

template <class T, class F>
TensorT<T> map_elem(const TensorT<T>& x, F f) {
  TensorT<T> out(x.shape());
  const T* px = x.data();
  T* po = out.data();
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) po[i] = f(px[i]);
  return out;
}

template <class T>
void require_nchw(const char* op, const TensorT<T>& t) {
  if (t.ndim() != 4) {
    throw std::invalid_argument(std::string(op) + ": expected NCHW tensor, got " +
                                shape_to_string(t.shape()));
  }
}

}  // namespace

template <class T>
TensorT<T> add(TapeT<T>* tape, const TensorT<T>& a, const TensorT<T>& b) {
  return binary_op(
      "add", tape, a, b, [](T x, T y) { return x + y; },
      [](const TensorT<T>& gy) { return gy; },
      [](const TensorT<T>& gy) { return gy; });
}

template <class T>
TensorT<T> sub(TapeT<T>* tape, const TensorT<T>& a, const TensorT<T>& b) {
  return binary_op(
      "sub", tape, a, b, [](T x, T y) { return x - y; },
      [](const TensorT<T>& gy) { return gy; },
      [](const TensorT<T>& gy) {
        return map_elem(gy, [](T g) { return -g; });
      });
}

template <class T>
TensorT<T> mul(TapeT<T>* tape, const TensorT<T>& a, const TensorT<T>& b) {
  return binary_op(
      "mul", tape, a, b, [](T x, T y) { return x * y; },
      [b](const TensorT<T>& gy) {
        TensorT<T> g(gy.shape());
        const T* pg = gy.data();
        const T* pb = b.data();
        T* po = g.data();
        for (std::size_t i = 0; i < g.numel(); ++i) po[i] = pg[i] * pb[i];
        return g;
      },
      [a](const TensorT<T>& gy) {
        TensorT<T> g(gy.shape());
        const T* pg = gy.data();
        const T* pa = a.data();
        T* po = g.data();
        for (std::size_t i = 0; i < g.numel(); ++i) po[i] = pg[i] * pa[i];
        return g;
      });
}

template <class T>
TensorT<T> div_elem(TapeT<T>* tape, const TensorT<T>& a, const TensorT<T>& b) {
  return binary_op(
      "div", tape, a, b, [](T x, T y) { return x / y; },
      [b](const TensorT<T>& gy) {
        TensorT<T> g(gy.shape());
        const T* pg = gy.data();
        const T* pb = b.data();
        T* po = g.data();
        for (std::size_t i = 0; i < g.numel(); ++i) po[i] = pg[i] / pb[i];
        return g;
      },
      [a, b](const TensorT<T>& gy) {
        TensorT<T> g(gy.shape());
        const T* pg = gy.data();
        const T* pa = a.data();
        const T* pb = b.data();
        T* po = g.data();
        for (std::size_t i = 0; i < g.numel(); ++i)
          po[i] = -pg[i] * pa[i] / (pb[i] * pb[i]);
        return g;
      });
}

template <class T>
TensorT<T> scale(TapeT<T>* tape, const TensorT<T>& x, T c) {
  TensorT<T> out = map_elem(x, [c](T v) { return c * v; });
  if (input_tracked(tape, x)) {
    auto vjp = [c](const TensorT<T>& gy) {
      std::vector<TensorT<T>> gs;
      gs.push_back(map_elem(gy, [c](T g) { return c * g; }));
      return gs;
    };
    tape->bind(out, tape->record({x.node()}, out.shape(), std::move(vjp)));
  }
  return out;
}

template <class T>
TensorT<T> add_scalar(TapeT<T>* tape, const TensorT<T>& x, T c) {
  TensorT<T> out = map_elem(x, [c](T v) { return v + c; });
  if (input_tracked(tape, x)) {
    auto vjp = [](const TensorT<T>& gy) {
      return std::vector<TensorT<T>>{gy};
    };
    tape->bind(out, tape->record({x.node()}, out.shape(), std::move(vjp)));
  }
  return out;
}

template <class T>
TensorT<T> sum_all(TapeT<T>* tape, const TensorT<T>& x) {
  T acc = 0;
  const T* px = x.data();
  for (std::size_t i = 0; i < x.numel(); ++i) acc += px[i];
  TensorT<T> out = TensorT<T>::scalar(acc);
  if (input_tracked(tape, x)) {
    const std::vector<int> in_shape = x.shape();
    auto vjp = [in_shape](const TensorT<T>& gy) {
      std::vector<TensorT<T>> gs;
      gs.push_back(TensorT<T>::full(in_shape, gy.value_at(0)));
      return gs;
    };
    tape->bind(out, tape->record({x.node()}, out.shape(), std::move(vjp)));
  }
  return out;
}

template <class T>
TensorT<T> sum_per_image(TapeT<T>* tape, const TensorT<T>& x) {
  const int batch = x.extent(0);
  const std::size_t per = x.numel() / static_cast<std::size_t>(batch);
  TensorT<T> out({batch});
  const T* px = x.data();
  T* po = out.data();
  for (int n = 0; n < batch; ++n) {
    T acc = 0;
    const T* p = px + static_cast<std::size_t>(n) * per;
    for (std::size_t i = 0; i < per; ++i) acc += p[i];
    po[n] = acc;
  }
  if (input_tracked(tape, x)) {
    const std::vector<int> in_shape = x.shape();
    auto vjp = [in_shape, batch, per](const TensorT<T>& gy) {
      TensorT<T> g(in_shape);
      T* pg = g.data();
      for (int n = 0; n < batch; ++n) {
        const T v = gy.value_at(static_cast<std::size_t>(n));
        T* p = pg + static_cast<std::size_t>(n) * per;
        for (std::size_t i = 0; i < per; ++i) p[i] = v;
      }
      return std::vector<TensorT<T>>{std::move(g)};
    };
    tape->bind(out, tape->record({x.node()}, out.shape(), std::move(vjp)));
  }
  return out;
}

template <class T>
TensorT<T> concat_channels(TapeT<T>* tape, const TensorT<T>& a,
                           const TensorT<T>& b) {
  require_nchw("concat_channels", a);
  require_nchw("concat_channels", b);
  if (a.extent(0) != b.extent(0) || a.extent(2) != b.extent(2) ||
      a.extent(3) != b.extent(3)) {
    throw std::invalid_argument("concat_channels: batch/spatial mismatch " +
                                shape_to_string(a.shape()) + " vs " +
                                shape_to_string(b.shape()));
  }
  const int n = a.extent(0), ca = a.extent(1), cb = b.extent(1);
  const int h = a.extent(2), w = a.extent(3);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  TensorT<T> out({n, ca + cb, h, w});
  T* po = out.data();
  const T* pa = a.data();
  const T* pb = b.data();
  for (int i = 0; i < n; ++i) {
    T* dst = po + static_cast<std::size_t>(i) * (ca + cb) * plane;
    const T* sa = pa + static_cast<std::size_t>(i) * ca * plane;
    const T* sb = pb + static_cast<std::size_t>(i) * cb * plane;
    std::copy(sa, sa + static_cast<std::size_t>(ca) * plane, dst);
    std::copy(sb, sb + static_cast<std::size_t>(cb) * plane,
              dst + static_cast<std::size_t>(ca) * plane);
  }

  const bool ta = input_tracked(tape, a);
  const bool tb = input_tracked(tape, b);
  if (ta || tb) {
    std::vector<long long> ids;
    if (ta) ids.push_back(a.node());
    if (tb) ids.push_back(b.node());
    auto split = [n, ca, cb, h, w, plane](const TensorT<T>& gy, bool first) {
      const int c = first ? ca : cb;
      const int off = first ? 0 : ca;
      TensorT<T> g({n, c, h, w});
      T* pg = g.data();
      const T* py = gy.data();
      for (int i = 0; i < n; ++i) {
        const T* src = py +
                       (static_cast<std::size_t>(i) * (ca + cb) + off) * plane;
        T* dst = pg + static_cast<std::size_t>(i) * c * plane;
        std::copy(src, src + static_cast<std::size_t>(c) * plane, dst);
      }
      return g;
    };
    auto vjp = [ta, tb, split](const TensorT<T>& gy) {
      std::vector<TensorT<T>> gs;
      if (ta) gs.push_back(split(gy, true));
      if (tb) gs.push_back(split(gy, false));
      return gs;
    };
    tape->bind(out, tape->record(std::move(ids), out.shape(), std::move(vjp)));
  }
  return out;
}

template <class T>
TensorT<T> slice_channels(TapeT<T>* tape, const TensorT<T>& x, int c0, int c1) {
  require_nchw("slice_channels", x);
  const int n = x.extent(0), c = x.extent(1), h = x.extent(2), w = x.extent(3);
  if (c0 < 0 || c1 <= c0 || c1 > c) {
    throw std::invalid_argument(
        "slice_channels: range [" + std::to_string(c0) + "," +
        std::to_string(c1) + ") invalid for " + shape_to_string(x.shape()));
  }
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const int cs = c1 - c0;
  TensorT<T> out({n, cs, h, w});
  const T* px = x.data();
  T* po = out.data();
  for (int i = 0; i < n; ++i) {
    const T* src = px + (static_cast<std::size_t>(i) * c + c0) * plane;
    T* dst = po + static_cast<std::size_t>(i) * cs * plane;
    std::copy(src, src + static_cast<std::size_t>(cs) * plane, dst);
  }
  if (input_tracked(tape, x)) {
    const std::vector<int> in_shape = x.shape();
    auto vjp = [in_shape, n, c, c0, cs, plane](const TensorT<T>& gy) {
      TensorT<T> g(in_shape);  // zero outside the slice
      T* pg = g.data();
      const T* py = gy.data();
      for (int i = 0; i < n; ++i) {
        const T* src = py + static_cast<std::size_t>(i) * cs * plane;
        T* dst = pg + (static_cast<std::size_t>(i) * c + c0) * plane;
        std::copy(src, src + static_cast<std::size_t>(cs) * plane, dst);
      }
      return std::vector<TensorT<T>>{std::move(g)};
    };
    tape->bind(out, tape->record({x.node()}, out.shape(), std::move(vjp)));
  }
  return out;
}

#define ESDMR_INSTANTIATE_OPS(T)                                              \
  template void require_same_shape<T>(const char*, const TensorT<T>&,         \
                                      const TensorT<T>&);                     \
  template bool input_tracked<T>(const TapeT<T>*, const TensorT<T>&);         \
  template TensorT<T> add<T>(TapeT<T>*, const TensorT<T>&, const TensorT<T>&); \
  template TensorT<T> sub<T>(TapeT<T>*, const TensorT<T>&, const TensorT<T>&); \
  template TensorT<T> mul<T>(TapeT<T>*, const TensorT<T>&, const TensorT<T>&); \
  template TensorT<T> div_elem<T>(TapeT<T>*, const TensorT<T>&,               \
                                  const TensorT<T>&);                         \
  template TensorT<T> scale<T>(TapeT<T>*, const TensorT<T>&, T);              \
  template TensorT<T> add_scalar<T>(TapeT<T>*, const TensorT<T>&, T);         \
  template TensorT<T> sum_all<T>(TapeT<T>*, const TensorT<T>&);               \
  template TensorT<T> sum_per_image<T>(TapeT<T>*, const TensorT<T>&);         \
  template TensorT<T> concat_channels<T>(TapeT<T>*, const TensorT<T>&,        \
                                         const TensorT<T>&);                  \
  template TensorT<T> slice_channels<T>(TapeT<T>*, const TensorT<T>&, int,    \
                                        int);

ESDMR_INSTANTIATE_OPS(float)
ESDMR_INSTANTIATE_OPS(double)

#undef ESDMR_INSTANTIATE_OPS

}  // namespace esdmr
