#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "esdmr/blocks.hpp"

namespace esdmr {

struct ModelConfig {
  int input_channels = 3;  // 1 or 3
  int stem_width = 16;
  std::array<int, 4> stage_widths{16, 32, 64, 72};
  int repeat = 2;  // ES groups per stage
  bool use_dmr = true;
  int num_classes = 2;
  int input_h = 256;  // divisible by 16, >= 32
  int input_w = 256;
  std::uint64_t seed = 42;
};

/// Throws std::invalid_argument naming the offending field.
void validate_config(const ModelConfig& cfg);

/// Canonical one-line rendering of the config; stored in checkpoints so every
/// file is self-describing (including the init seed).
std::string config_digest(const ModelConfig& cfg);

enum class Mode { kTrain, kInfer };

/// Checkpoint format version written after the "ESDM" magic.
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <class T>
class ModelT {
 public:
  /// Deterministic construction: He fan-in normal kernels, identity batch
  /// norms, everything derived from cfg.seed.
  static ModelT build(const ModelConfig& cfg);

  /// Runs the network. Any NCHW input whose extents are divisible by 16 (and
  /// >= 32) is accepted; output is (N, 2, H, W) softmax probabilities with
  /// channel 1 the foreground.
  TensorT<T> forward(TapeT<T>* tape, const TensorT<T>& image, Mode mode);

  long long param_count();
  long long layer_count() const;
  std::vector<std::pair<std::string, long long>> param_breakdown();

  /// Trainable parameters, in fixed traversal order.
  std::vector<ParamRefT<T>> parameters();
  /// Trainable parameters plus running statistics; checkpoint order.
  std::vector<ParamRefT<T>> state_entries();

  const ModelConfig& config() const { return cfg_; }

  void set_mode(Mode m);

  void save(const std::string& path);
  static ModelT load(const std::string& path, const ModelConfig& cfg);

 private:
  ModelConfig cfg_;
  InputBlockParamsT<T> input_;
  std::array<StageParamsT<T>, 4> encoder_;
  std::array<DmrBlockParamsT<T>, 5> dmr_;  // [0..3] stage skips, [4] stem skip
  std::array<StageParamsT<T>, 4> decoder_;
  OutputBlockParamsT<T> output_;
};

using Model = ModelT<float>;
using Model64 = ModelT<double>;

extern template class ModelT<float>;
extern template class ModelT<double>;

}  // namespace esdmr
