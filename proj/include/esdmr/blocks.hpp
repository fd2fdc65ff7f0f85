#pragma once

#include <array>
#include <string>
#include <vector>

#include "esdmr/nn.hpp"

namespace esdmr {

enum class ParamKind { kTrainable, kRunningStat };

template <class T>
struct ParamRefT {
  std::string name;
  TensorT<T>* tensor;
  ParamKind kind;
};

/// Expand-squeeze unit: relu -> depthwise WxW (spatial stage of the separable
/// expansion) -> 1x1 squeeze -> batch norm.
template <class T>
struct EsBlockParamsT {
  int scale = 3;  // 3, 5 or 7
  ConvParamsT<T> dw;
  ConvParamsT<T> squeeze;
  BatchNormStateT<T> bn;
};

/// Three parallel ES branches at scales 3/5/7 on a shared input,
/// channel-concatenated and fused back to the stage width by a 1x1 conv.
template <class T>
struct EsGroupParamsT {
  std::array<EsBlockParamsT<T>, 3> branches;
  ConvParamsT<T> fuse;
};

enum class Resample { kNone, kDown, kUp };

template <class T>
struct StageParamsT {
  ConvParamsT<T> merge;  // decoder stages only: 1x1 on concat(up, skip)
  std::vector<EsGroupParamsT<T>> units;
  Resample resample = Resample::kNone;

  int repeat() const { return static_cast<int>(units.size()); }
};

/// Dual multiscale residual block. Two first-layer scales (3x3 / 5x5) whose
/// outputs cross-concatenate into the second layer, a 1x1 third layer, and a
/// normalized 1x1 shortcut added to the result.
template <class T>
struct DmrBlockParamsT {
  ConvParamsT<T> f3_1, f5_1;  // layer 1: C -> b
  ConvParamsT<T> f3_2, f5_2;  // layer 2: 2b -> b
  ConvParamsT<T> f1_3;        // layer 3: 2b -> C
  ConvParamsT<T> f1_2;        // shortcut: C -> C
  BatchNormStateT<T> bn_t1, bn_t2, bn_t3, bn_t4, bn_shortcut;
};

template <class T>
struct InputBlockParamsT {
  ConvParamsT<T> conv;
  BatchNormStateT<T> bn;
};

template <class T>
struct OutputBlockParamsT {
  ConvParamsT<T> conv;
  BatchNormStateT<T> bn;
};

template <class T>
TensorT<T> es_block(TapeT<T>* tape, const TensorT<T>& x, EsBlockParamsT<T>& p);

template <class T>
TensorT<T> es_group(TapeT<T>* tape, const TensorT<T>& x, EsGroupParamsT<T>& p);

/// T1 = bn(f3_1*F), T2 = bn(f5_1*F), T3 = relu(bn(f3_2*{T1,T2})),
/// T4 = relu(bn(f5_2*{T2,T1})), T' = f1_3*{T4,T3},
/// out = T' + relu(bn(f1_2*F)). Concatenation orders are load-bearing.
template <class T>
TensorT<T> dmr_block(TapeT<T>* tape, const TensorT<T>& f_in,
                     DmrBlockParamsT<T>& p);

template <class T>
struct EncoderStageOut {
  TensorT<T> features;  // downsampled, feeds the next stage
  TensorT<T> skip;      // pre-pooling resolution, feeds the skip path
};

template <class T>
EncoderStageOut<T> encoder_stage(TapeT<T>* tape, const TensorT<T>& x,
                                 StageParamsT<T>& p);

template <class T>
TensorT<T> decoder_stage(TapeT<T>* tape, const TensorT<T>& x,
                         const TensorT<T>& skip_processed, StageParamsT<T>& p);

template <class T>
TensorT<T> input_block(TapeT<T>* tape, const TensorT<T>& image,
                       InputBlockParamsT<T>& p);

template <class T>
TensorT<T> output_block(TapeT<T>* tape, const TensorT<T>& features,
                        OutputBlockParamsT<T>& p);

// Named-parameter traversal. Order is fixed and doubles as the checkpoint
// tensor order.
template <class T>
void collect_params(ConvParamsT<T>& p, const std::string& prefix,
                    std::vector<ParamRefT<T>>& out);
template <class T>
void collect_params(BatchNormStateT<T>& s, const std::string& prefix,
                    std::vector<ParamRefT<T>>& out);
template <class T>
void collect_params(EsBlockParamsT<T>& p, const std::string& prefix,
                    std::vector<ParamRefT<T>>& out);
template <class T>
void collect_params(EsGroupParamsT<T>& p, const std::string& prefix,
                    std::vector<ParamRefT<T>>& out);
template <class T>
void collect_params(StageParamsT<T>& p, const std::string& prefix,
                    std::vector<ParamRefT<T>>& out);
template <class T>
void collect_params(DmrBlockParamsT<T>& p, const std::string& prefix,
                    std::vector<ParamRefT<T>>& out);
template <class T>
void collect_params(InputBlockParamsT<T>& p, const std::string& prefix,
                    std::vector<ParamRefT<T>>& out);
template <class T>
void collect_params(OutputBlockParamsT<T>& p, const std::string& prefix,
                    std::vector<ParamRefT<T>>& out);

template <class T>
void collect_bn_states(StageParamsT<T>& p, std::vector<BatchNormStateT<T>*>& out);
template <class T>
void collect_bn_states(DmrBlockParamsT<T>& p, std::vector<BatchNormStateT<T>*>& out);

}  // namespace esdmr
