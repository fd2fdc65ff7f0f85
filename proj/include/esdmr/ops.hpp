#pragma once

#include "esdmr/tape.hpp"
#include "esdmr/tensor.hpp"

namespace esdmr {

// Primitive tensor algebra. Every op takes the recording tape first; pass
// nullptr for plain evaluation. Elementwise ops require identical shapes
// (there is no broadcasting in this engine).

template <class T>
TensorT<T> add(TapeT<T>* tape, const TensorT<T>& a, const TensorT<T>& b);

template <class T>
TensorT<T> sub(TapeT<T>* tape, const TensorT<T>& a, const TensorT<T>& b);

template <class T>
TensorT<T> mul(TapeT<T>* tape, const TensorT<T>& a, const TensorT<T>& b);

template <class T>
TensorT<T> div_elem(TapeT<T>* tape, const TensorT<T>& a, const TensorT<T>& b);

template <class T>
TensorT<T> scale(TapeT<T>* tape, const TensorT<T>& x, T c);

template <class T>
TensorT<T> add_scalar(TapeT<T>* tape, const TensorT<T>& x, T c);

/// Sum of all elements, returned as a single-element tensor.
template <class T>
TensorT<T> sum_all(TapeT<T>* tape, const TensorT<T>& x);

/// Reduces every axis but the leading (batch) one: (N, ...) -> (N).
template <class T>
TensorT<T> sum_per_image(TapeT<T>* tape, const TensorT<T>& x);

/// Concatenates two NCHW tensors along the channel axis, `a` first.
template <class T>
TensorT<T> concat_channels(TapeT<T>* tape, const TensorT<T>& a,
                           const TensorT<T>& b);

/// Copies channels [c0, c1) of an NCHW tensor.
template <class T>
TensorT<T> slice_channels(TapeT<T>* tape, const TensorT<T>& x, int c0, int c1);

// --- recording helpers shared by the nn ops ---

/// True when `t` should receive gradients through `tape`. Rejects tensors
/// carrying linkage to a different (stale) tape.
template <class T>
bool input_tracked(const TapeT<T>* tape, const TensorT<T>& t);

template <class T>
void require_same_shape(const char* op, const TensorT<T>& a,
                        const TensorT<T>& b);

}  // namespace esdmr
