#include "esdmr/blocks.hpp"

#include <stdexcept>

namespace esdmr {

template <class T>
TensorT<T> es_block(TapeT<T>* tape, const TensorT<T>& x, EsBlockParamsT<T>& p) {
  if (x.ndim() != 4 || x.extent(1) != p.dw.in_channels()) {
    throw std::invalid_argument(
        "es_block: input " + shape_to_string(x.shape()) +
        " does not match block channels " +
        std::to_string(p.dw.in_channels()));
  }
  TensorT<T> a = relu(tape, x);
  TensorT<T> b = depthwise_separable_conv2d(tape, a, p.dw, p.squeeze);
  return batchnorm2d(tape, b, p.bn);
}

template <class T>
TensorT<T> es_group(TapeT<T>* tape, const TensorT<T>& x, EsGroupParamsT<T>& p) {
  TensorT<T> b3 = es_block(tape, x, p.branches[0]);
  TensorT<T> b5 = es_block(tape, x, p.branches[1]);
  TensorT<T> b7 = es_block(tape, x, p.branches[2]);
  TensorT<T> cat = concat_channels(tape, concat_channels(tape, b3, b5), b7);
  return pointwise_conv2d(tape, cat, p.fuse);
}

template <class T>
TensorT<T> dmr_block(TapeT<T>* tape, const TensorT<T>& f_in,
                     DmrBlockParamsT<T>& p) {
  if (f_in.ndim() != 4 || f_in.extent(1) != p.f3_1.in_channels()) {
    throw std::invalid_argument(
        "dmr_block: input " + shape_to_string(f_in.shape()) +
        " does not match block channels " +
        std::to_string(p.f3_1.in_channels()));
  }
  TensorT<T> t1 = batchnorm2d(tape, conv2d(tape, f_in, p.f3_1), p.bn_t1);
  TensorT<T> t2 = batchnorm2d(tape, conv2d(tape, f_in, p.f5_1), p.bn_t2);
  TensorT<T> t3 = relu(
      tape,
      batchnorm2d(tape, conv2d(tape, concat_channels(tape, t1, t2), p.f3_2),
                  p.bn_t3));
  TensorT<T> t4 = relu(
      tape,
      batchnorm2d(tape, conv2d(tape, concat_channels(tape, t2, t1), p.f5_2),
                  p.bn_t4));
  TensorT<T> tprime =
      conv2d(tape, concat_channels(tape, t4, t3), p.f1_3);
  TensorT<T> shortcut =
      relu(tape, batchnorm2d(tape, conv2d(tape, f_in, p.f1_2), p.bn_shortcut));
  return add(tape, tprime, shortcut);
}

template <class T>
EncoderStageOut<T> encoder_stage(TapeT<T>* tape, const TensorT<T>& x,
                                 StageParamsT<T>& p) {
  if (p.resample != Resample::kDown) {
    throw std::invalid_argument("encoder_stage: stage is not a downsampling stage");
  }
  if (x.extent(2) % 2 != 0 || x.extent(3) % 2 != 0) {
    throw std::invalid_argument(
        "encoder_stage: spatial extents must be even to halve cleanly, got " +
        shape_to_string(x.shape()));
  }
  TensorT<T> cur = x;
  for (EsGroupParamsT<T>& unit : p.units) {
    cur = es_group(tape, cur, unit);
  }
  EncoderStageOut<T> out;
  out.skip = cur;
  out.features = avgpool2d(tape, cur, /*stride=*/2);
  return out;
}

template <class T>
TensorT<T> decoder_stage(TapeT<T>* tape, const TensorT<T>& x,
                         const TensorT<T>& skip_processed, StageParamsT<T>& p) {
  if (p.resample != Resample::kUp) {
    throw std::invalid_argument("decoder_stage: stage is not an upsampling stage");
  }
  TensorT<T> up = bilinear_upsample2x(tape, x);
  if (up.extent(2) != skip_processed.extent(2) ||
      up.extent(3) != skip_processed.extent(3)) {
    throw std::invalid_argument(
        "decoder_stage: upsampled input " + shape_to_string(up.shape()) +
        " does not spatially match skip " +
        shape_to_string(skip_processed.shape()));
  }
  TensorT<T> cur = pointwise_conv2d(
      tape, concat_channels(tape, up, skip_processed), p.merge);
  for (EsGroupParamsT<T>& unit : p.units) {
    cur = es_group(tape, cur, unit);
  }
  return cur;
}

template <class T>
TensorT<T> input_block(TapeT<T>* tape, const TensorT<T>& image,
                       InputBlockParamsT<T>& p) {
  if (image.ndim() != 4 ||
      (image.extent(1) != 1 && image.extent(1) != 3) ||
      image.extent(1) != p.conv.in_channels()) {
    throw std::invalid_argument(
        "input_block: unsupported channel count in " +
        shape_to_string(image.shape()) + " (block expects " +
        std::to_string(p.conv.in_channels()) + ")");
  }
  return relu(tape, batchnorm2d(tape, conv2d(tape, image, p.conv), p.bn));
}

template <class T>
TensorT<T> output_block(TapeT<T>* tape, const TensorT<T>& features,
                        OutputBlockParamsT<T>& p) {
  return softmax_channels(
      tape, batchnorm2d(tape, conv2d(tape, features, p.conv), p.bn));
}

// --- parameter traversal ---

template <class T>
void collect_params(ConvParamsT<T>& p, const std::string& prefix,
                    std::vector<ParamRefT<T>>& out) {
  out.push_back({prefix + ".kernel", &p.kernel, ParamKind::kTrainable});
  if (p.bias.defined()) {
    out.push_back({prefix + ".bias", &p.bias, ParamKind::kTrainable});
  }
}

template <class T>
void collect_params(BatchNormStateT<T>& s, const std::string& prefix,
                    std::vector<ParamRefT<T>>& out) {
  out.push_back({prefix + ".gamma", &s.gamma, ParamKind::kTrainable});
  out.push_back({prefix + ".beta", &s.beta, ParamKind::kTrainable});
  out.push_back({prefix + ".running_mean", &s.running_mean,
                 ParamKind::kRunningStat});
  out.push_back({prefix + ".running_var", &s.running_var,
                 ParamKind::kRunningStat});
}

template <class T>
void collect_params(EsBlockParamsT<T>& p, const std::string& prefix,
                    std::vector<ParamRefT<T>>& out) {
  collect_params(p.dw, prefix + ".dw", out);
  collect_params(p.squeeze, prefix + ".squeeze", out);
  collect_params(p.bn, prefix + ".bn", out);
}

template <class T>
void collect_params(EsGroupParamsT<T>& p, const std::string& prefix,
                    std::vector<ParamRefT<T>>& out) {
  static const char* kBranchNames[3] = {".es3", ".es5", ".es7"};
  for (int i = 0; i < 3; ++i) {
    collect_params(p.branches[static_cast<std::size_t>(i)],
                   prefix + kBranchNames[i], out);
  }
  collect_params(p.fuse, prefix + ".fuse", out);
}

template <class T>
void collect_params(StageParamsT<T>& p, const std::string& prefix,
                    std::vector<ParamRefT<T>>& out) {
  if (p.resample == Resample::kUp) {
    collect_params(p.merge, prefix + ".merge", out);
  }
  for (std::size_t i = 0; i < p.units.size(); ++i) {
    collect_params(p.units[i], prefix + ".unit" + std::to_string(i + 1), out);
  }
}

template <class T>
void collect_params(DmrBlockParamsT<T>& p, const std::string& prefix,
                    std::vector<ParamRefT<T>>& out) {
  collect_params(p.f3_1, prefix + ".f3_1", out);
  collect_params(p.f5_1, prefix + ".f5_1", out);
  collect_params(p.f3_2, prefix + ".f3_2", out);
  collect_params(p.f5_2, prefix + ".f5_2", out);
  collect_params(p.f1_3, prefix + ".f1_3", out);
  collect_params(p.f1_2, prefix + ".f1_2", out);
  collect_params(p.bn_t1, prefix + ".bn_t1", out);
  collect_params(p.bn_t2, prefix + ".bn_t2", out);
  collect_params(p.bn_t3, prefix + ".bn_t3", out);
  collect_params(p.bn_t4, prefix + ".bn_t4", out);
  collect_params(p.bn_shortcut, prefix + ".bn_shortcut", out);
}

template <class T>
void collect_params(InputBlockParamsT<T>& p, const std::string& prefix,
                    std::vector<ParamRefT<T>>& out) {
  collect_params(p.conv, prefix + ".conv", out);
  collect_params(p.bn, prefix + ".bn", out);
}

template <class T>
void collect_params(OutputBlockParamsT<T>& p, const std::string& prefix,
                    std::vector<ParamRefT<T>>& out) {
  collect_params(p.conv, prefix + ".conv", out);
  collect_params(p.bn, prefix + ".bn", out);
}

template <class T>
void collect_bn_states(StageParamsT<T>& p,
                       std::vector<BatchNormStateT<T>*>& out) {
  for (EsGroupParamsT<T>& unit : p.units) {
    for (EsBlockParamsT<T>& b : unit.branches) out.push_back(&b.bn);
  }
}

template <class T>
void collect_bn_states(DmrBlockParamsT<T>& p,
                       std::vector<BatchNormStateT<T>*>& out) {
  out.push_back(&p.bn_t1);
  out.push_back(&p.bn_t2);
  out.push_back(&p.bn_t3);
  out.push_back(&p.bn_t4);
  out.push_back(&p.bn_shortcut);
}

#define ESDMR_INSTANTIATE_BLOCKS(T)                                           \
  template TensorT<T> es_block<T>(TapeT<T>*, const TensorT<T>&,               \
                                  EsBlockParamsT<T>&);                        \
  template TensorT<T> es_group<T>(TapeT<T>*, const TensorT<T>&,               \
                                  EsGroupParamsT<T>&);                        \
  template TensorT<T> dmr_block<T>(TapeT<T>*, const TensorT<T>&,              \
                                   DmrBlockParamsT<T>&);                      \
  template EncoderStageOut<T> encoder_stage<T>(TapeT<T>*, const TensorT<T>&,  \
                                               StageParamsT<T>&);             \
  template TensorT<T> decoder_stage<T>(TapeT<T>*, const TensorT<T>&,          \
                                       const TensorT<T>&, StageParamsT<T>&);  \
  template TensorT<T> input_block<T>(TapeT<T>*, const TensorT<T>&,            \
                                     InputBlockParamsT<T>&);                  \
  template TensorT<T> output_block<T>(TapeT<T>*, const TensorT<T>&,           \
                                      OutputBlockParamsT<T>&);                \
  template void collect_params<T>(ConvParamsT<T>&, const std::string&,        \
                                  std::vector<ParamRefT<T>>&);                \
  template void collect_params<T>(BatchNormStateT<T>&, const std::string&,    \
                                  std::vector<ParamRefT<T>>&);                \
  template void collect_params<T>(EsBlockParamsT<T>&, const std::string&,     \
                                  std::vector<ParamRefT<T>>&);                \
  template void collect_params<T>(EsGroupParamsT<T>&, const std::string&,     \
                                  std::vector<ParamRefT<T>>&);                \
  template void collect_params<T>(StageParamsT<T>&, const std::string&,       \
                                  std::vector<ParamRefT<T>>&);                \
  template void collect_params<T>(DmrBlockParamsT<T>&, const std::string&,    \
                                  std::vector<ParamRefT<T>>&);                \
  template void collect_params<T>(InputBlockParamsT<T>&, const std::string&,  \
                                  std::vector<ParamRefT<T>>&);                \
  template void collect_params<T>(OutputBlockParamsT<T>&, const std::string&, \
                                  std::vector<ParamRefT<T>>&);                \
  template void collect_bn_states<T>(StageParamsT<T>&,                        \
                                     std::vector<BatchNormStateT<T>*>&);      \
  template void collect_bn_states<T>(DmrBlockParamsT<T>&,                     \
                                     std::vector<BatchNormStateT<T>*>&);

ESDMR_INSTANTIATE_BLOCKS(float)
ESDMR_INSTANTIATE_BLOCKS(double)

#undef ESDMR_INSTANTIATE_BLOCKS

}  // namespace esdmr
