#include "esdmr/dice.hpp"

#include <stdexcept>

#include "esdmr/ops.hpp"

namespace esdmr {

namespace {

template <class T>
void require_binary_ref(const TensorT<T>& ref) {
  const T* p = ref.data();
  for (std::size_t i = 0; i < ref.numel(); ++i) {
    if (p[i] != T(0) && p[i] != T(1)) {
      throw std::invalid_argument("dice: reference must be binary {0,1}");
    }
  }
}

template <class T>
struct DiceSums {
  T s_pg = 0;   // sum p*g
  T s_pp = 0;   // sum p^2
  T s_gg = 0;   // sum g^2
};

template <class T>
DiceSums<T> dice_sums(const T* p, const T* g, std::size_t n) {
  DiceSums<T> s;
  for (std::size_t i = 0; i < n; ++i) {
    s.s_pg += p[i] * g[i];
    s.s_pp += p[i] * p[i];
    s.s_gg += g[i] * g[i];
  }
  return s;
}

}  // namespace

template <class T>
T dsc(const TensorT<T>& pred, const TensorT<T>& ref) {
  require_same_shape("dsc", pred, ref);
  require_binary_ref(ref);
  const DiceSums<T> s = dice_sums(pred.data(), ref.data(), pred.numel());
  if (s.s_pp + s.s_gg == T(0)) return T(1);
  return T(2) * s.s_pg / (s.s_pp + s.s_gg + T(kDiceEps));
}

template <class T>
LossReportT<T> dice_loss(const TensorT<T>& batch_pred,
                         const TensorT<T>& batch_ref) {
  require_same_shape("dice_loss", batch_pred, batch_ref);
  require_binary_ref(batch_ref);
  const int batch = batch_pred.extent(0);
  if (batch < 1) throw std::invalid_argument("dice_loss: empty batch");
  const std::size_t per = batch_pred.numel() / static_cast<std::size_t>(batch);
  LossReportT<T> report;
  report.per_image_dsc.reserve(static_cast<std::size_t>(batch));
  for (int i = 0; i < batch; ++i) {
    const T* p = batch_pred.data() + static_cast<std::size_t>(i) * per;
    const T* g = batch_ref.data() + static_cast<std::size_t>(i) * per;
    const DiceSums<T> s = dice_sums(p, g, per);
    const T d = (s.s_pp + s.s_gg == T(0))
                    ? T(1)
                    : T(2) * s.s_pg / (s.s_pp + s.s_gg + T(kDiceEps));
    report.per_image_dsc.push_back(d);
    report.loss += (T(1) - d) * (T(1) - d);
  }
  return report;
}

template <class T>
TensorT<T> dice_loss_grad(const TensorT<T>& pred, const TensorT<T>& ref) {
  require_same_shape("dice_loss_grad", pred, ref);
  require_binary_ref(ref);
  const std::size_t n = pred.numel();
  const T* p = pred.data();
  const T* g = ref.data();
  const DiceSums<T> s = dice_sums(p, g, n);
  TensorT<T> grad(pred.shape());
  if (s.s_pp + s.s_gg == T(0)) return grad;  // defined optimum, zero gradient
  const T den = s.s_pp + s.s_gg + T(kDiceEps);
  const T d = T(2) * s.s_pg / den;
  T* out = grad.data();
  // d/dp_q of (1 - DSC)^2 = 2(1 - DSC) * (-dDSC/dp_q), with
  // dDSC/dp_q = (2*g_q*den - 4*p_q*sum(p*g)) / den^2.
  const T outer = T(-2) * (T(1) - d);
  for (std::size_t q = 0; q < n; ++q) {
    const T ddsc = (T(2) * g[q] * den - T(4) * p[q] * s.s_pg) / (den * den);
    out[q] = outer * ddsc;
  }
  return grad;
}

template <class T>
TensorT<T> dice_loss_autodiff(TapeT<T>* tape, const TensorT<T>& fg_probs,
                              const TensorT<T>& ref) {
  require_same_shape("dice_loss_autodiff", fg_probs, ref);
  TensorT<T> s_pg = sum_per_image(tape, mul(tape, fg_probs, ref));
  TensorT<T> s_pp = sum_per_image(tape, mul(tape, fg_probs, fg_probs));
  TensorT<T> s_gg = sum_per_image(tape, mul(tape, ref, ref));
  TensorT<T> den = add_scalar(tape, add(tape, s_pp, s_gg), T(kDiceEps));
  TensorT<T> d = div_elem(tape, scale(tape, s_pg, T(2)), den);
  TensorT<T> comp = add_scalar(tape, scale(tape, d, T(-1)), T(1));
  return sum_all(tape, mul(tape, comp, comp));
}

#define ESDMR_INSTANTIATE_DICE(T)                                         \
  template T dsc<T>(const TensorT<T>&, const TensorT<T>&);                \
  template LossReportT<T> dice_loss<T>(const TensorT<T>&,                 \
                                       const TensorT<T>&);                \
  template TensorT<T> dice_loss_grad<T>(const TensorT<T>&,                \
                                        const TensorT<T>&);               \
  template TensorT<T> dice_loss_autodiff<T>(TapeT<T>*, const TensorT<T>&, \
                                            const TensorT<T>&);

ESDMR_INSTANTIATE_DICE(float)
ESDMR_INSTANTIATE_DICE(double)

#undef ESDMR_INSTANTIATE_DICE

}  // namespace esdmr
