#include "esdmr/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "esdmr/blocks.hpp"
#include "esdmr/dice.hpp"
#include "esdmr/model.hpp"
#include "esdmr/nn.hpp"
#include "esdmr/ops.hpp"
#include "esdmr/rng.hpp"

namespace esdmr {

template <class T>
T grad_check(const ScalarFn<T>& f, const TensorT<T>& x, T eps, int max_coords,
             std::uint64_t coord_seed) {
  if (!(eps >= T(1e-7) && eps <= T(1e-2))) {
    throw std::invalid_argument("grad_check: eps must lie in [1e-7, 1e-2]");
  }

  TapeT<T> tape;
  TensorT<T> xv = x.clone();
  xv.set_requires_grad(true);
  tape.watch(xv);
  TensorT<T> loss = f(&tape, xv);
  if (loss.numel() != 1) {
    throw std::invalid_argument("grad_check: f must return a scalar, got " +
                                shape_to_string(loss.shape()));
  }
  tape.backward(loss);
  TensorT<T> analytic = tape.grad(xv);

  std::vector<std::size_t> coords;
  const std::size_t n = x.numel();
  if (max_coords < 0 || n <= static_cast<std::size_t>(max_coords)) {
    coords.resize(n);
    for (std::size_t i = 0; i < n; ++i) coords[i] = i;
  } else {
    Rng rng(coord_seed);
    std::vector<std::size_t> perm = rng.permutation(n);
    coords.assign(perm.begin(), perm.begin() + max_coords);
  }

  T worst = 0;
  for (std::size_t i : coords) {
    TensorT<T> xp = x.clone();
    xp.data()[i] += eps;
    const T lp = f(nullptr, xp).value_at(0);
    TensorT<T> xm = x.clone();
    xm.data()[i] -= eps;
    const T lm = f(nullptr, xm).value_at(0);
    const T fd = (lp - lm) / (T(2) * eps);
    const T denom = std::max(T(1), std::abs(fd));
    const T rel = std::abs(analytic.value_at(i) - fd) / denom;
    if (rel > worst) worst = rel;
  }
  // Leave any state f mutates (e.g. a model parameter slot) at the original x.
  f(nullptr, x);
  return worst;
}

template float grad_check<float>(const ScalarFn<float>&, const TensorT<float>&,
                                 float, int, std::uint64_t);
template double grad_check<double>(const ScalarFn<double>&,
                                   const TensorT<double>&, double, int,
                                   std::uint64_t);

// ---------------------------------------------------------------------------
// The 64-bit suite.
// ---------------------------------------------------------------------------

namespace {

using D = double;
using Tn = TensorT<D>;
using Tp = TapeT<D>;

Tn rand_uniform(Rng& rng, std::vector<int> shape, double lo, double hi) {
  Tn t(std::move(shape));
  D* p = t.data();
  for (std::size_t i = 0; i < t.numel(); ++i) {
    p[i] = lo + (hi - lo) * rng.uniform();
  }
  return t;
}

// Values in [-hi, -lo] U [lo, hi]; keeps relu kinks away from the FD step.
Tn rand_signed(Rng& rng, std::vector<int> shape, double lo, double hi) {
  Tn t(std::move(shape));
  D* p = t.data();
  for (std::size_t i = 0; i < t.numel(); ++i) {
    const double mag = lo + (hi - lo) * rng.uniform();
    p[i] = rng.uniform() < 0.5 ? -mag : mag;
  }
  return t;
}

Tn rand_binary(Rng& rng, std::vector<int> shape, double p_fg = 0.5) {
  Tn t(std::move(shape));
  D* p = t.data();
  for (std::size_t i = 0; i < t.numel(); ++i) {
    p[i] = rng.uniform() < p_fg ? 1.0 : 0.0;
  }
  return t;
}

// Loss head: sum(w * y) with a fixed random weighting, so constant-sum
// outputs like softmax still exercise their Jacobian.
ScalarFn<D> weighted(const Tn& w, std::function<Tn(Tp*, const Tn&)> op) {
  return [w, op](Tp* tape, const Tn& x) {
    Tn y = op(tape, x);
    return sum_all(tape, mul(tape, y, w));
  };
}

constexpr double kEps = 1e-5;

std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

struct Suite {
  int seeds;
  std::vector<GradCheckCase> cases;

  void run(const std::string& name, double threshold,
           const std::function<double(Rng&)>& one_seed) {
    double worst = 0.0;
    for (int s = 0; s < seeds; ++s) {
      Rng rng(Rng(fnv1a64(name)).fork(static_cast<std::uint64_t>(s)).seed());
      worst = std::max(worst, one_seed(rng));
    }
    cases.push_back({name, worst, threshold});
  }
};

ConvParamsT<D> rand_conv(Rng& rng, int cout, int cing, int kh, int kw,
                         int stride, int pad, int groups, bool bias) {
  ConvParamsT<D> p;
  p.kernel = rand_signed(rng, {cout, cing, kh, kw}, 0.05, 0.8);
  if (bias) p.bias = rand_signed(rng, {cout}, 0.05, 0.5);
  p.stride = stride;
  p.padding = pad;
  p.groups = groups;
  return p;
}

BatchNormStateT<D> rand_bn(Rng& rng, int c, BnMode mode) {
  BatchNormStateT<D> s = BatchNormStateT<D>::identity(c);
  s.gamma = rand_signed(rng, {c}, 0.5, 1.5);
  s.beta = rand_uniform(rng, {c}, -0.5, 0.5);
  s.running_mean = rand_uniform(rng, {c}, -0.5, 0.5);
  s.running_var = rand_uniform(rng, {c}, 0.5, 2.0);
  s.mode = mode;
  return s;
}

double check_conv_family(Rng& rng, int which) {
  const int stride = 1 + static_cast<int>(rng.uniform_index(2));
  Tn x = rand_signed(rng, {2, 3, 5, 6}, 0.05, 1.0);
  ConvParamsT<D> p = rand_conv(rng, 4, 3, 3, 3, stride, 1, 1, true);
  Tn w = rand_signed(rng, {2, 4, (5 + 2 - 3) / stride + 1, (6 + 2 - 3) / stride + 1},
                     0.5, 1.5);
  auto loss = [&p, &w](Tp* tape, const Tn& in) {
    return sum_all(tape, mul(tape, conv2d(tape, in, p), w));
  };
  if (which == 0) return grad_check<D>(loss, x, kEps);
  if (which == 1) {
    auto f = [&p, &x, &w](Tp* tape, const Tn& k) {
      ConvParamsT<D> q = p;
      q.kernel = k;
      return sum_all(tape, mul(tape, conv2d(tape, x, q), w));
    };
    return grad_check<D>(f, p.kernel, kEps);
  }
  auto f = [&p, &x, &w](Tp* tape, const Tn& b) {
    ConvParamsT<D> q = p;
    q.bias = b;
    return sum_all(tape, mul(tape, conv2d(tape, x, q), w));
  };
  return grad_check<D>(f, p.bias, kEps);
}

double check_block_params(Rng& rng, const Tn& x,
                          const std::function<Tn(Tp*, const Tn&)>& fwd,
                          std::vector<ParamRefT<D>> params, const Tn& w) {
  auto input_loss = weighted(w, fwd);
  double worst = grad_check<D>(input_loss, x, kEps, 64);
  for (ParamRefT<D>& pr : params) {
    TensorT<D>* slot = pr.tensor;
    auto f = [slot, &w, &fwd, &x](Tp* tape, const Tn& p) {
      *slot = p;
      Tn y = fwd(tape, x);
      return sum_all(tape, mul(tape, y, w));
    };
    worst = std::max(worst, grad_check<D>(f, *slot, kEps, 48));
  }
  return worst;
}

}  // namespace

std::vector<GradCheckCase> run_gradient_suite(int seeds_per_case) {
  Suite suite{seeds_per_case, {}};

  suite.run("add", 1e-4, [](Rng& rng) {
    Tn a = rand_uniform(rng, {2, 3, 4, 4}, -1, 1);
    Tn b = rand_uniform(rng, {2, 3, 4, 4}, -1, 1);
    Tn w = rand_signed(rng, {2, 3, 4, 4}, 0.5, 1.5);
    return grad_check<D>(
        weighted(w, [b](Tp* t, const Tn& x) { return add(t, x, b); }), a, kEps);
  });
  suite.run("sub", 1e-4, [](Rng& rng) {
    Tn a = rand_uniform(rng, {2, 3, 4, 4}, -1, 1);
    Tn b = rand_uniform(rng, {2, 3, 4, 4}, -1, 1);
    Tn w = rand_signed(rng, {2, 3, 4, 4}, 0.5, 1.5);
    return grad_check<D>(
        weighted(w, [a](Tp* t, const Tn& x) { return sub(t, a, x); }), b, kEps);
  });
  suite.run("mul", 1e-4, [](Rng& rng) {
    Tn a = rand_uniform(rng, {2, 3, 4, 4}, -1, 1);
    Tn b = rand_signed(rng, {2, 3, 4, 4}, 0.2, 1.0);
    Tn w = rand_signed(rng, {2, 3, 4, 4}, 0.5, 1.5);
    return grad_check<D>(
        weighted(w, [b](Tp* t, const Tn& x) { return mul(t, x, b); }), a, kEps);
  });
  suite.run("div", 1e-4, [](Rng& rng) {
    Tn a = rand_uniform(rng, {8}, -1, 1);
    Tn b = rand_uniform(rng, {8}, 0.5, 1.5);
    Tn w = rand_signed(rng, {8}, 0.5, 1.5);
    const double e1 = grad_check<D>(
        weighted(w, [b](Tp* t, const Tn& x) { return div_elem(t, x, b); }), a,
        kEps);
    const double e2 = grad_check<D>(
        weighted(w, [a](Tp* t, const Tn& x) { return div_elem(t, a, x); }), b,
        kEps);
    return std::max(e1, e2);
  });
  suite.run("scale_add_scalar", 1e-4, [](Rng& rng) {
    Tn a = rand_uniform(rng, {3, 5}, -1, 1);
    Tn w = rand_signed(rng, {3, 5}, 0.5, 1.5);
    return grad_check<D>(weighted(w,
                                  [](Tp* t, const Tn& x) {
                                    return add_scalar(t, scale(t, x, D(-1.7)),
                                                      D(0.3));
                                  }),
                         a, kEps);
  });
  suite.run("sum_per_image", 1e-4, [](Rng& rng) {
    Tn a = rand_uniform(rng, {3, 4, 4}, -1, 1);
    Tn w = rand_signed(rng, {3}, 0.5, 1.5);
    return grad_check<D>(
        weighted(w, [](Tp* t, const Tn& x) { return sum_per_image(t, x); }), a,
        kEps);
  });
  suite.run("concat_channels", 1e-4, [](Rng& rng) {
    Tn a = rand_uniform(rng, {1, 2, 3, 3}, -1, 1);
    Tn b = rand_uniform(rng, {1, 3, 3, 3}, -1, 1);
    Tn w = rand_signed(rng, {1, 5, 3, 3}, 0.5, 1.5);
    const double e1 = grad_check<D>(
        weighted(w, [b](Tp* t, const Tn& x) { return concat_channels(t, x, b); }),
        a, kEps);
    const double e2 = grad_check<D>(
        weighted(w, [a](Tp* t, const Tn& x) { return concat_channels(t, a, x); }),
        b, kEps);
    return std::max(e1, e2);
  });
  suite.run("slice_channels", 1e-4, [](Rng& rng) {
    Tn a = rand_uniform(rng, {1, 4, 3, 3}, -1, 1);
    Tn w = rand_signed(rng, {1, 2, 3, 3}, 0.5, 1.5);
    return grad_check<D>(
        weighted(w, [](Tp* t, const Tn& x) { return slice_channels(t, x, 1, 3); }),
        a, kEps);
  });
  suite.run("relu", 1e-4, [](Rng& rng) {
    Tn a = rand_signed(rng, {2, 3, 4, 4}, 0.05, 1.0);
    Tn w = rand_signed(rng, {2, 3, 4, 4}, 0.5, 1.5);
    return grad_check<D>(
        weighted(w, [](Tp* t, const Tn& x) { return relu(t, x); }), a, kEps);
  });

  suite.run("conv2d.input", 1e-4,
            [](Rng& rng) { return check_conv_family(rng, 0); });
  suite.run("conv2d.kernel", 1e-4,
            [](Rng& rng) { return check_conv_family(rng, 1); });
  suite.run("conv2d.bias", 1e-4,
            [](Rng& rng) { return check_conv_family(rng, 2); });

  suite.run("depthwise.input_kernel", 1e-4, [](Rng& rng) {
    Tn x = rand_signed(rng, {1, 3, 6, 6}, 0.05, 1.0);
    ConvParamsT<D> p = rand_conv(rng, 3, 1, 3, 3, 1, 1, 3, false);
    Tn w = rand_signed(rng, {1, 3, 6, 6}, 0.5, 1.5);
    auto fx = [&p, &w](Tp* t, const Tn& in) {
      return sum_all(t, mul(t, depthwise_conv2d(t, in, p), w));
    };
    auto fk = [&p, &x, &w](Tp* t, const Tn& k) {
      ConvParamsT<D> q = p;
      q.kernel = k;
      return sum_all(t, mul(t, depthwise_conv2d(t, x, q), w));
    };
    return std::max(grad_check<D>(fx, x, kEps),
                    grad_check<D>(fk, p.kernel, kEps));
  });

  suite.run("pointwise.input_kernel", 1e-4, [](Rng& rng) {
    Tn x = rand_signed(rng, {1, 4, 5, 5}, 0.05, 1.0);
    ConvParamsT<D> p = rand_conv(rng, 3, 4, 1, 1, 1, 0, 1, true);
    Tn w = rand_signed(rng, {1, 3, 5, 5}, 0.5, 1.5);
    auto fx = [&p, &w](Tp* t, const Tn& in) {
      return sum_all(t, mul(t, pointwise_conv2d(t, in, p), w));
    };
    auto fk = [&p, &x, &w](Tp* t, const Tn& k) {
      ConvParamsT<D> q = p;
      q.kernel = k;
      return sum_all(t, mul(t, pointwise_conv2d(t, x, q), w));
    };
    return std::max(grad_check<D>(fx, x, kEps),
                    grad_check<D>(fk, p.kernel, kEps));
  });

  suite.run("separable.all", 1e-4, [](Rng& rng) {
    const int scale = 3 + 2 * static_cast<int>(rng.uniform_index(3));
    Tn x = rand_signed(rng, {1, 3, 6, 6}, 0.05, 1.0);
    ConvParamsT<D> dw =
        rand_conv(rng, 3, 1, scale, scale, 1, (scale - 1) / 2, 3, false);
    ConvParamsT<D> pw = rand_conv(rng, 4, 3, 1, 1, 1, 0, 1, false);
    Tn w = rand_signed(rng, {1, 4, 6, 6}, 0.5, 1.5);
    auto fx = [&](Tp* t, const Tn& in) {
      return sum_all(t, mul(t, depthwise_separable_conv2d(t, in, dw, pw), w));
    };
    auto fd = [&](Tp* t, const Tn& k) {
      ConvParamsT<D> q = dw;
      q.kernel = k;
      return sum_all(t, mul(t, depthwise_separable_conv2d(t, x, q, pw), w));
    };
    auto fp = [&](Tp* t, const Tn& k) {
      ConvParamsT<D> q = pw;
      q.kernel = k;
      return sum_all(t, mul(t, depthwise_separable_conv2d(t, x, dw, q), w));
    };
    return std::max({grad_check<D>(fx, x, kEps),
                     grad_check<D>(fd, dw.kernel, kEps),
                     grad_check<D>(fp, pw.kernel, kEps)});
  });

  for (const bool training : {true, false}) {
    const std::string name =
        training ? "batchnorm.train" : "batchnorm.infer";
    const double threshold = training ? 1e-3 : 1e-4;
    suite.run(name, threshold, [training](Rng& rng) {
      Tn x = rand_uniform(rng, {2, 3, 4, 4}, -1, 1);
      BatchNormStateT<D> bn =
          rand_bn(rng, 3, training ? BnMode::kTrain : BnMode::kInfer);
      Tn w = rand_signed(rng, {2, 3, 4, 4}, 0.5, 1.5);
      auto fx = [&bn, &w](Tp* t, const Tn& in) {
        BatchNormStateT<D> local = bn;  // keep running-stat updates contained
        return sum_all(t, mul(t, batchnorm2d(t, in, local), w));
      };
      auto fg = [&bn, &x, &w](Tp* t, const Tn& g) {
        BatchNormStateT<D> local = bn;
        local.gamma = g;
        return sum_all(t, mul(t, batchnorm2d(t, x, local), w));
      };
      auto fb = [&bn, &x, &w](Tp* t, const Tn& b) {
        BatchNormStateT<D> local = bn;
        local.beta = b;
        return sum_all(t, mul(t, batchnorm2d(t, x, local), w));
      };
      return std::max({grad_check<D>(fx, x, kEps),
                       grad_check<D>(fg, bn.gamma, kEps),
                       grad_check<D>(fb, bn.beta, kEps)});
    });
  }

  for (const int stride : {1, 2}) {
    suite.run("avgpool.stride" + std::to_string(stride), 1e-4,
              [stride](Rng& rng) {
                Tn x = rand_uniform(rng, {1, 2, 6, 6}, -1, 1);
                const int ext = stride == 1 ? 6 : 3;
                Tn w = rand_signed(rng, {1, 2, ext, ext}, 0.5, 1.5);
                return grad_check<D>(
                    weighted(w,
                             [stride](Tp* t, const Tn& in) {
                               return avgpool2d(t, in, stride);
                             }),
                    x, kEps);
              });
  }

  suite.run("bilinear_upsample2x", 1e-4, [](Rng& rng) {
    Tn x = rand_uniform(rng, {1, 2, 4, 5}, -1, 1);
    Tn w = rand_signed(rng, {1, 2, 8, 10}, 0.5, 1.5);
    return grad_check<D>(
        weighted(w, [](Tp* t, const Tn& in) { return bilinear_upsample2x(t, in); }),
        x, kEps);
  });

  suite.run("softmax_channels", 1e-4, [](Rng& rng) {
    Tn x = rand_uniform(rng, {1, 3, 4, 4}, -2, 2);
    Tn w = rand_signed(rng, {1, 3, 4, 4}, 0.5, 1.5);
    return grad_check<D>(
        weighted(w, [](Tp* t, const Tn& in) { return softmax_channels(t, in); }),
        x, kEps);
  });

  suite.run("es_block", 1e-4, [](Rng& rng) {
    const int scale = 3 + 2 * static_cast<int>(rng.uniform_index(3));
    EsBlockParamsT<D> p;
    p.scale = scale;
    p.dw = rand_conv(rng, 3, 1, scale, scale, 1, (scale - 1) / 2, 3, false);
    p.squeeze = rand_conv(rng, 4, 3, 1, 1, 1, 0, 1, false);
    p.bn = rand_bn(rng, 4, BnMode::kTrain);
    Tn x = rand_signed(rng, {2, 3, 6, 6}, 0.05, 1.0);
    Tn w = rand_signed(rng, {2, 4, 6, 6}, 0.5, 1.5);
    std::vector<ParamRefT<D>> params;
    collect_params(p, "es", params);
    std::vector<ParamRefT<D>> trainable;
    for (auto& pr : params) {
      if (pr.kind == ParamKind::kTrainable) trainable.push_back(pr);
    }
    auto fwd = [&p](Tp* t, const Tn& in) { return es_block(t, in, p); };
    return check_block_params(rng, x, fwd, trainable, w);
  });

  suite.run("dmr_block", 1e-4, [](Rng& rng) {
    const int c = 4;
    DmrBlockParamsT<D> p;
    p.f3_1 = rand_conv(rng, 2, c, 3, 3, 1, 1, 1, false);
    p.f5_1 = rand_conv(rng, 2, c, 5, 5, 1, 2, 1, false);
    p.f3_2 = rand_conv(rng, 2, 4, 3, 3, 1, 1, 1, false);
    p.f5_2 = rand_conv(rng, 2, 4, 5, 5, 1, 2, 1, false);
    p.f1_3 = rand_conv(rng, c, 4, 1, 1, 1, 0, 1, true);
    p.f1_2 = rand_conv(rng, c, c, 1, 1, 1, 0, 1, false);
    p.bn_t1 = rand_bn(rng, 2, BnMode::kTrain);
    p.bn_t2 = rand_bn(rng, 2, BnMode::kTrain);
    p.bn_t3 = rand_bn(rng, 2, BnMode::kTrain);
    p.bn_t4 = rand_bn(rng, 2, BnMode::kTrain);
    p.bn_shortcut = rand_bn(rng, c, BnMode::kTrain);
    Tn x = rand_signed(rng, {2, c, 6, 6}, 0.05, 1.0);
    Tn w = rand_signed(rng, {2, c, 6, 6}, 0.5, 1.5);
    std::vector<ParamRefT<D>> params;
    collect_params(p, "dmr", params);
    std::vector<ParamRefT<D>> trainable;
    for (auto& pr : params) {
      if (pr.kind == ParamKind::kTrainable) trainable.push_back(pr);
    }
    auto fwd = [&p](Tp* t, const Tn& in) { return dmr_block(t, in, p); };
    return check_block_params(rng, x, fwd, trainable, w);
  });

  suite.run("dice_loss", 1e-4, [](Rng& rng) {
    Tn pred = rand_uniform(rng, {2, 8, 8}, 0.1, 0.9);
    Tn ref = rand_binary(rng, {2, 8, 8});
    auto f = [&ref](Tp* t, const Tn& p) {
      return dice_loss_autodiff(t, p, ref);
    };
    return grad_check<D>(f, pred, kEps);
  });

  suite.run("model_end_to_end", 1e-3, [](Rng& rng) {
    ModelConfig cfg;
    cfg.input_channels = 3;
    cfg.stem_width = 4;
    cfg.stage_widths = {4, 4, 8, 8};
    cfg.repeat = 1;
    cfg.input_h = 32;
    cfg.input_w = 32;
    cfg.seed = rng.next_u64();
    Model64 model = Model64::build(cfg);
    Tn image = rand_uniform(rng, {2, 3, 32, 32}, 0.1, 0.9);
    Tn ref = rand_binary(rng, {2, 1, 32, 32}, 0.4);

    auto loss_for = [&model, &ref](Tp* tape, const Tn& img) {
      Tn probs = model.forward(tape, img, Mode::kTrain);
      Tn fg = slice_channels(tape, probs, 1, 2);
      return dice_loss_autodiff(tape, fg, ref);
    };
    double worst = grad_check<D>(loss_for, image, kEps, 16);

    // A handful of parameter tensors spread through the net.
    std::vector<ParamRefT<D>> params = model.parameters();
    std::vector<std::size_t> picks = {0, params.size() / 3,
                                      2 * params.size() / 3,
                                      params.size() - 2};
    for (std::size_t pi : picks) {
      TensorT<D>* slot = params[pi].tensor;
      auto f = [slot, &loss_for, &image](Tp* tape, const Tn& p) {
        *slot = p;
        return loss_for(tape, image);
      };
      worst = std::max(worst, grad_check<D>(f, *slot, kEps, 8));
    }
    return worst;
  });

  return suite.cases;
}

}  // namespace esdmr
