#pragma once

#include <functional>
#include <vector>

#include "esdmr/tensor.hpp"

namespace esdmr {

/// Reverse-mode differentiation tape (Wengert list).
///
/// Operations append nodes in execution order, so every node's inputs precede
/// it and the reverse sweep visits consumers before producers. Each node
/// stores the ids of its differentiable inputs plus a vector-Jacobian-product
/// closure that maps the gradient of the node's output to gradients of those
/// inputs. Gradients of tensors feeding several consumers accumulate by
/// summation.
///
/// A tape is confined to a single thread; independent runs use independent
/// tapes.
template <class T>
class TapeT {
 public:
  using Vjp = std::function<std::vector<TensorT<T>>(const TensorT<T>&)>;

  TapeT();
  TapeT(const TapeT&) = delete;
  TapeT& operator=(const TapeT&) = delete;

  /// Registers a leaf variable. Idempotent: re-watching a tensor already on
  /// this tape keeps its node id (parameters can be assigned around freely).
  void watch(TensorT<T>& t);

  /// Appends an interior node; `inputs` are tape node ids. Returns the id.
  long long record(std::vector<long long> inputs, std::vector<int> out_shape,
                   Vjp vjp);

  /// Marks `out` as the value produced by node `id`.
  void bind(TensorT<T>& out, long long id) const;

  /// True when `t` participates in differentiation on this tape.
  bool tracked(const TensorT<T>& t) const {
    return t.node() >= 0 && t.tape_serial() == serial_;
  }

  /// Runs the reverse sweep from a scalar loss recorded on this tape.
  /// Every watched leaf afterwards has a gradient (zero if disconnected).
  void backward(const TensorT<T>& loss);

  /// Gradient of the loss w.r.t. a watched tensor; zeros if none reached it.
  TensorT<T> grad(const TensorT<T>& t) const;

  std::uint64_t serial() const { return serial_; }
  std::size_t node_count() const { return nodes_.size(); }

  /// Drops all nodes and gradients and adopts a fresh serial, so tensors
  /// linked to the previous contents are no longer considered tracked.
  void reset();

 private:
  struct Node {
    std::vector<long long> inputs;
    std::vector<int> shape;
    Vjp vjp;  // empty for leaves
  };

  void accumulate(long long id, TensorT<T>&& g);

  std::uint64_t serial_;
  std::vector<Node> nodes_;
  std::vector<TensorT<T>> grads_;
};

using Tape = TapeT<float>;
using Tape64 = TapeT<double>;

extern template class TapeT<float>;
extern template class TapeT<double>;

}  // namespace esdmr
