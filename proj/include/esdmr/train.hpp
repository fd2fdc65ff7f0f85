#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "esdmr/metrics.hpp"
#include "esdmr/model.hpp"

namespace esdmr {

struct TrainConfig {
  double lr = 1e-3;
  int batch_size = 8;
  int max_epochs = 15;
  double clip_norm = 3.0;  // global l2-norm threshold
  int patience = 3;
  std::uint64_t seed = 42;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double min_improvement = 1e-4;  // validation DSC must beat best by this
};

void validate_train_config(const TrainConfig& cfg);

template <class T>
struct TrainSampleT {
  TensorT<T> image;  // (C,H,W), values in [0,1]
  TensorT<T> mask;   // (1,H,W), binary
};

template <class T>
struct AdamStateT {
  std::vector<TensorT<T>> m;
  std::vector<TensorT<T>> v;
  long long step = 0;
};

struct NanGradientError : std::runtime_error {
  explicit NanGradientError(const std::string& param)
      : std::runtime_error("non-finite gradient for parameter '" + param + "'"),
        param_name(param) {}
  std::string param_name;
};

/// Rescales all gradients by threshold/norm when their joint l2 norm exceeds
/// the threshold; otherwise leaves them untouched. Returns the pre-clip norm.
template <class T>
T clip_global_norm(std::vector<TensorT<T>>& grads, T threshold);

/// Bias-corrected Adam update over a parameter list. Moments are lazily
/// allocated on the first call. Throws NanGradientError naming the parameter
/// if a gradient is non-finite.
template <class T>
void adam_step(std::vector<ParamRefT<T>>& params,
               const std::vector<TensorT<T>>& grads, AdamStateT<T>& state,
               const TrainConfig& cfg);

struct EpochStat {
  int epoch = 0;
  double mean_train_loss = 0;
  double val_dsc = 0;
  double lr = 0;
  double seconds = 0;
};

/// epoch<TAB>mean_train_loss<TAB>val_dsc<TAB>lr<TAB>seconds
std::string epoch_tsv_line(const EpochStat& s);

struct TrainResult {
  std::vector<EpochStat> history;
  std::vector<double> step_losses;  // Dice loss sum per optimizer step
  int best_epoch = -1;
  double best_val_dsc = -1.0;
  bool diverged = false;
  std::string divergence_reason;
};

/// Runs the optimization protocol: seeded shuffle, mini-batches (a trailing
/// batch of one is merged into its predecessor), forward in training mode,
/// Dice loss, backward, global-norm clipping, Adam. After each epoch the
/// mean soft DSC on the validation set (or the training set when none is
/// given) decides early stopping; the model is left at the best-scoring
/// parameters. A non-finite loss or gradient aborts at the last finite
/// state.
template <class T>
TrainResult train(ModelT<T>& model, const std::vector<TrainSampleT<T>>& train_set,
                  const std::vector<TrainSampleT<T>>& val_set,
                  const TrainConfig& cfg,
                  const std::function<void(const EpochStat&)>& on_epoch = {});

struct EvalResult {
  MetricsReport mean;
  std::vector<MetricsReport> per_image;
};

/// Inference-mode evaluation: per image, foreground probabilities binarized
/// at 0.5, full metric report, arithmetic mean across images.
template <class T>
EvalResult evaluate(ModelT<T>& model,
                    const std::vector<TrainSampleT<T>>& samples);

/// Mean soft DSC of the foreground probabilities over a sample set.
template <class T>
double mean_soft_dsc(ModelT<T>& model,
                     const std::vector<TrainSampleT<T>>& samples);

using TrainSample = TrainSampleT<float>;

}  // namespace esdmr
