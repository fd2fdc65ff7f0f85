#include "esdmr/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>

#include "esdmr/dice.hpp"
#include "esdmr/ops.hpp"
#include "esdmr/rng.hpp"

namespace esdmr {

void validate_train_config(const TrainConfig& cfg) {
  if (cfg.lr <= 0) throw std::invalid_argument("train config: lr must be > 0");
  if (cfg.batch_size < 1) {
    throw std::invalid_argument("train config: batch_size must be >= 1");
  }
  if (cfg.max_epochs < 1) {
    throw std::invalid_argument("train config: max_epochs must be >= 1");
  }
  if (cfg.clip_norm <= 0) {
    throw std::invalid_argument("train config: clip_norm must be > 0");
  }
  if (cfg.patience < 1 || cfg.patience >= cfg.max_epochs) {
    throw std::invalid_argument(
        "train config: patience must be >= 1 and < max_epochs");
  }
  if (cfg.beta1 <= 0 || cfg.beta1 >= 1 || cfg.beta2 <= 0 || cfg.beta2 >= 1) {
    throw std::invalid_argument("train config: adam betas must lie in (0,1)");
  }
  if (cfg.adam_eps <= 0) {
    throw std::invalid_argument("train config: adam_eps must be > 0");
  }
}

template <class T>
T clip_global_norm(std::vector<TensorT<T>>& grads, T threshold) {
  if (threshold <= T(0)) {
    throw std::invalid_argument("clip_global_norm: threshold must be > 0");
  }
  double sq = 0;
  for (const TensorT<T>& g : grads) {
    const T* p = g.data();
    for (std::size_t i = 0; i < g.numel(); ++i) {
      sq += static_cast<double>(p[i]) * static_cast<double>(p[i]);
    }
  }
  const T norm = static_cast<T>(std::sqrt(sq));
  if (norm > threshold) {
    const T s = threshold / norm;
    for (TensorT<T>& g : grads) {
      T* p = g.data();
      for (std::size_t i = 0; i < g.numel(); ++i) p[i] *= s;
    }
  }
  return norm;
}

template <class T>
void adam_step(std::vector<ParamRefT<T>>& params,
               const std::vector<TensorT<T>>& grads, AdamStateT<T>& state,
               const TrainConfig& cfg) {
  if (params.size() != grads.size()) {
    throw std::invalid_argument("adam_step: parameter/gradient count mismatch");
  }
  if (state.m.empty()) {
    state.m.reserve(params.size());
    state.v.reserve(params.size());
    for (const ParamRefT<T>& p : params) {
      state.m.push_back(TensorT<T>::zeros(p.tensor->shape()));
      state.v.push_back(TensorT<T>::zeros(p.tensor->shape()));
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!grads[i].all_finite()) throw NanGradientError(params[i].name);
  }

  ++state.step;
  const T b1 = static_cast<T>(cfg.beta1);
  const T b2 = static_cast<T>(cfg.beta2);
  const T lr = static_cast<T>(cfg.lr);
  const T eps = static_cast<T>(cfg.adam_eps);
  const T bc1 = T(1) - static_cast<T>(std::pow(cfg.beta1, state.step));
  const T bc2 = T(1) - static_cast<T>(std::pow(cfg.beta2, state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    T* p = params[i].tensor->data();
    const T* g = grads[i].data();
    T* m = state.m[i].data();
    T* v = state.v[i].data();
    const std::size_t n = params[i].tensor->numel();
    for (std::size_t k = 0; k < n; ++k) {
      m[k] = b1 * m[k] + (T(1) - b1) * g[k];
      v[k] = b2 * v[k] + (T(1) - b2) * g[k] * g[k];
      const T mhat = m[k] / bc1;
      const T vhat = v[k] / bc2;
      p[k] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

std::string epoch_tsv_line(const EpochStat& s) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%d\t%.6g\t%.6f\t%g\t%.3f", s.epoch,
                s.mean_train_loss, s.val_dsc, s.lr, s.seconds);
  return std::string(buf);
}

namespace {

template <class T>
std::vector<TensorT<T>> snapshot_state(ModelT<T>& model) {
  std::vector<TensorT<T>> out;
  for (ParamRefT<T>& e : model.state_entries()) out.push_back(e.tensor->clone());
  return out;
}

template <class T>
void restore_state(ModelT<T>& model, const std::vector<TensorT<T>>& snap) {
  std::vector<ParamRefT<T>> entries = model.state_entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    T* dst = entries[i].tensor->data();
    const T* src = snap[i].data();
    for (std::size_t k = 0; k < snap[i].numel(); ++k) dst[k] = src[k];
  }
}

template <class T>
void stack_batch(const std::vector<TrainSampleT<T>>& samples,
                 const std::vector<std::size_t>& indices, TensorT<T>& images,
                 TensorT<T>& masks) {
  const TensorT<T>& first = samples[indices[0]].image;
  const int c = first.extent(0), h = first.extent(1), w = first.extent(2);
  const int n = static_cast<int>(indices.size());
  images = TensorT<T>({n, c, h, w});
  masks = TensorT<T>({n, 1, h, w});
  const std::size_t img_sz = static_cast<std::size_t>(c) * h * w;
  const std::size_t msk_sz = static_cast<std::size_t>(h) * w;
  for (int i = 0; i < n; ++i) {
    const TrainSampleT<T>& s = samples[indices[static_cast<std::size_t>(i)]];
    if (s.image.extent(0) != c || s.image.extent(1) != h ||
        s.image.extent(2) != w) {
      throw std::invalid_argument(
          "train: samples must share one shape; got " +
          shape_to_string(s.image.shape()) + " and " +
          shape_to_string(first.shape()));
    }
    std::copy(s.image.data(), s.image.data() + img_sz,
              images.data() + static_cast<std::size_t>(i) * img_sz);
    std::copy(s.mask.data(), s.mask.data() + msk_sz,
              masks.data() + static_cast<std::size_t>(i) * msk_sz);
  }
}

template <class T>
TensorT<T> forward_single(ModelT<T>& model, const TrainSampleT<T>& s) {
  const int c = s.image.extent(0), h = s.image.extent(1), w = s.image.extent(2);
  TensorT<T> batch({1, c, h, w});
  std::copy(s.image.data(), s.image.data() + s.image.numel(), batch.data());
  TensorT<T> probs = model.forward(nullptr, batch, Mode::kInfer);
  return slice_channels<T>(nullptr, probs, 1, 2);  // (1,1,H,W) foreground
}

template <class T>
Tensor to_float_plane(const TensorT<T>& t, int h, int w) {
  Tensor out({h, w});
  const T* src = t.data();
  float* dst = out.data();
  for (std::size_t i = 0; i < out.numel(); ++i) {
    dst[i] = static_cast<float>(src[i]);
  }
  return out;
}

}  // namespace

template <class T>
double mean_soft_dsc(ModelT<T>& model,
                     const std::vector<TrainSampleT<T>>& samples) {
  double acc = 0;
  for (const TrainSampleT<T>& s : samples) {
    TensorT<T> fg = forward_single(model, s);
    TensorT<T> ref(fg.shape());
    std::copy(s.mask.data(), s.mask.data() + s.mask.numel(), ref.data());
    acc += static_cast<double>(dsc(fg, ref));
  }
  return acc / static_cast<double>(samples.size());
}

template <class T>
TrainResult train(ModelT<T>& model,
                  const std::vector<TrainSampleT<T>>& train_set,
                  const std::vector<TrainSampleT<T>>& val_set,
                  const TrainConfig& cfg,
                  const std::function<void(const EpochStat&)>& on_epoch) {
  validate_train_config(cfg);
  if (train_set.empty()) {
    throw std::invalid_argument("train: empty training set");
  }

  TrainResult result;
  AdamStateT<T> adam;
  std::vector<TensorT<T>> best_state = snapshot_state(model);
  int since_improve = 0;
  const std::size_t n = train_set.size();

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<TensorT<T>> epoch_start = snapshot_state(model);

    Rng shuffle_rng = Rng(cfg.seed).fork(static_cast<std::uint64_t>(epoch) + 1);
    std::vector<std::size_t> perm = shuffle_rng.permutation(n);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t i = 0; i < n; i += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(n, i + static_cast<std::size_t>(cfg.batch_size));
      batches.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(i),
                           perm.begin() + static_cast<std::ptrdiff_t>(end));
    }
    if (batches.size() > 1 && batches.back().size() == 1) {
      // batch norm wants more than one sample; fold the orphan in
      batches[batches.size() - 2].push_back(batches.back()[0]);
      batches.pop_back();
    }

    double epoch_loss = 0;
    bool aborted = false;
    for (const std::vector<std::size_t>& batch : batches) {
      TensorT<T> images, masks;
      stack_batch(train_set, batch, images, masks);
      TapeT<T> tape;
      TensorT<T> probs = model.forward(&tape, images, Mode::kTrain);
      TensorT<T> fg = slice_channels(&tape, probs, 1, 2);
      TensorT<T> loss_t = dice_loss_autodiff(&tape, fg, masks);
      const double loss = static_cast<double>(loss_t.value_at(0));
      if (!std::isfinite(loss)) {
        restore_state(model, epoch_start);
        result.diverged = true;
        result.divergence_reason = "non-finite loss at epoch " +
                                   std::to_string(epoch);
        aborted = true;
        break;
      }
      tape.backward(loss_t);
      std::vector<ParamRefT<T>> params = model.parameters();
      std::vector<TensorT<T>> grads;
      grads.reserve(params.size());
      for (const ParamRefT<T>& p : params) grads.push_back(tape.grad(*p.tensor));
      clip_global_norm(grads, static_cast<T>(cfg.clip_norm));
      try {
        adam_step(params, grads, adam, cfg);
      } catch (const NanGradientError& e) {
        restore_state(model, epoch_start);
        result.diverged = true;
        result.divergence_reason = e.what();
        aborted = true;
        break;
      }
      result.step_losses.push_back(loss);
      epoch_loss += loss;
    }
    if (aborted) break;

    const std::vector<TrainSampleT<T>>& monitor =
        val_set.empty() ? train_set : val_set;
    const double val_dsc = mean_soft_dsc(model, monitor);

    EpochStat stat;
    stat.epoch = epoch;
    stat.mean_train_loss = epoch_loss / static_cast<double>(n);
    stat.val_dsc = val_dsc;
    stat.lr = cfg.lr;
    stat.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    result.history.push_back(stat);
    if (on_epoch) on_epoch(stat);

    if (val_dsc > result.best_val_dsc + cfg.min_improvement) {
      result.best_val_dsc = val_dsc;
      result.best_epoch = epoch;
      best_state = snapshot_state(model);
      since_improve = 0;
    } else {
      ++since_improve;
      if (since_improve >= cfg.patience) break;
    }
  }

  if (!result.diverged) restore_state(model, best_state);
  return result;
}

template <class T>
EvalResult evaluate(ModelT<T>& model,
                    const std::vector<TrainSampleT<T>>& samples) {
  if (samples.empty()) {
    throw std::invalid_argument("evaluate: empty dataset");
  }
  EvalResult out;
  out.per_image.reserve(samples.size());
  for (const TrainSampleT<T>& s : samples) {
    TensorT<T> fg = forward_single(model, s);
    const int h = fg.extent(2), w = fg.extent(3);
    const Tensor probs = to_float_plane(fg, h, w);
    const Tensor ref = to_float_plane(s.mask, h, w);
    out.per_image.push_back(compute_report(probs, ref, 0.5));
  }
  out.mean = mean_report(out.per_image);
  return out;
}

#define ESDMR_INSTANTIATE_TRAIN(T)                                           \
  template T clip_global_norm<T>(std::vector<TensorT<T>>&, T);               \
  template void adam_step<T>(std::vector<ParamRefT<T>>&,                     \
                             const std::vector<TensorT<T>>&, AdamStateT<T>&, \
                             const TrainConfig&);                            \
  template TrainResult train<T>(ModelT<T>&,                                  \
                                const std::vector<TrainSampleT<T>>&,         \
                                const std::vector<TrainSampleT<T>>&,         \
                                const TrainConfig&,                          \
                                const std::function<void(const EpochStat&)>&); \
  template EvalResult evaluate<T>(ModelT<T>&,                                \
                                  const std::vector<TrainSampleT<T>>&);      \
  template double mean_soft_dsc<T>(ModelT<T>&,                               \
                                   const std::vector<TrainSampleT<T>>&);

ESDMR_INSTANTIATE_TRAIN(float)
ESDMR_INSTANTIATE_TRAIN(double)

#undef ESDMR_INSTANTIATE_TRAIN

}  // namespace esdmr
