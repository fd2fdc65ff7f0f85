#include "esdmr/tape.hpp"

#include <atomic>
#include <stdexcept>

namespace esdmr {

namespace {
std::uint64_t next_serial() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1);
}
}  // namespace

template <class T>
TapeT<T>::TapeT() : serial_(next_serial()) {}

template <class T>
void TapeT<T>::watch(TensorT<T>& t) {
  if (!t.defined()) {
    throw std::invalid_argument("cannot watch an undefined tensor");
  }
  if (tracked(t)) return;
  t.tape_serial_ = serial_;
  t.node_ = static_cast<long long>(nodes_.size());
  nodes_.push_back(Node{{}, t.shape(), Vjp{}});
  grads_.emplace_back();
}

template <class T>
long long TapeT<T>::record(std::vector<long long> inputs,
                           std::vector<int> out_shape, Vjp vjp) {
  const long long id = static_cast<long long>(nodes_.size());
  for (long long in : inputs) {
    if (in < 0 || in >= id) {
      throw std::logic_error("tape node input out of order");
    }
  }
  nodes_.push_back(Node{std::move(inputs), std::move(out_shape), std::move(vjp)});
  grads_.emplace_back();
  return id;
}

template <class T>
void TapeT<T>::bind(TensorT<T>& out, long long id) const {
  out.tape_serial_ = serial_;
  out.node_ = id;
  out.requires_grad_ = true;
}

template <class T>
void TapeT<T>::accumulate(long long id, TensorT<T>&& g) {
  TensorT<T>& slot = grads_[static_cast<std::size_t>(id)];
  if (!slot.defined()) {
    // Take ownership; clone when the vjp handed us a shared handle (e.g. a
    // pass-through of the incoming gradient) so later in-place adds are safe.
    slot = g.use_count() > 1 ? g.clone() : std::move(g);
    return;
  }
  T* dst = slot.data();
  const T* src = g.data();
  const std::size_t n = slot.numel();
  for (std::size_t i = 0; i < n; ++i) dst[i] += src[i];
}

template <class T>
void TapeT<T>::backward(const TensorT<T>& loss) {
  if (loss.numel() != 1) {
    throw std::invalid_argument("backward requires a scalar loss, got shape " +
                                shape_to_string(loss.shape()));
  }
  if (!tracked(loss)) {
    throw std::invalid_argument("loss was not produced on this tape");
  }
  const long long root = loss.node();
  grads_[static_cast<std::size_t>(root)] = TensorT<T>::ones(loss.shape());

  for (long long i = root; i >= 0; --i) {
    Node& node = nodes_[static_cast<std::size_t>(i)];
    TensorT<T>& gy = grads_[static_cast<std::size_t>(i)];
    if (!gy.defined() || !node.vjp) continue;
    std::vector<TensorT<T>> gs = node.vjp(gy);
    if (gs.size() != node.inputs.size()) {
      throw std::logic_error("vjp returned wrong number of gradients");
    }
    for (std::size_t k = 0; k < gs.size(); ++k) {
      accumulate(node.inputs[k], std::move(gs[k]));
    }
    // Interior gradients are not queried again; free them eagerly.
    gy = TensorT<T>();
  }
}

template <class T>
TensorT<T> TapeT<T>::grad(const TensorT<T>& t) const {
  if (!tracked(t)) {
    throw std::invalid_argument("tensor is not watched on this tape");
  }
  const TensorT<T>& g = grads_[static_cast<std::size_t>(t.node())];
  if (!g.defined()) return TensorT<T>::zeros(t.shape());
  return g;
}

template <class T>
void TapeT<T>::reset() {
  nodes_.clear();
  grads_.clear();
  serial_ = next_serial();
}

template class TapeT<float>;
template class TapeT<double>;

}  // namespace esdmr
