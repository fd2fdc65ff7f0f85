#pragma once

#include <vector>

#include "esdmr/tape.hpp"
#include "esdmr/tensor.hpp"

namespace esdmr {

/// Stabilizer added to the DSC denominator; when prediction and reference
/// are both empty the coefficient is defined as 1 (perfect agreement on
/// absence).
inline constexpr double kDiceEps = 1e-6;

template <class T>
struct LossReportT {
  T loss = 0;
  std::vector<T> per_image_dsc;
};

/// Soft Dice similarity coefficient over the whole tensor:
/// 2*sum(p*g) / (sum(p^2) + sum(g^2) + eps). The reference must be binary.
template <class T>
T dsc(const TensorT<T>& pred, const TensorT<T>& ref);

/// Sum over the batch (leading axis) of the squared per-image Dice
/// complements: sum_i (1 - DSC_i)^2.
template <class T>
LossReportT<T> dice_loss(const TensorT<T>& batch_pred,
                         const TensorT<T>& batch_ref);

/// Closed-form gradient of (1 - DSC)^2 with respect to the prediction,
/// treating the whole tensor as one image. Used as an oracle against the
/// autodiff route.
template <class T>
TensorT<T> dice_loss_grad(const TensorT<T>& pred, const TensorT<T>& ref);

/// The same loss expressed through tape primitives, for training.
/// `fg_probs` is the foreground-probability tensor (N, ...); `ref` is the
/// binary reference of identical shape.
template <class T>
TensorT<T> dice_loss_autodiff(TapeT<T>* tape, const TensorT<T>& fg_probs,
                              const TensorT<T>& ref);

using LossReport = LossReportT<float>;

}  // namespace esdmr
