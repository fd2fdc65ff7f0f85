#pragma once

#include <functional>
#include <string>
#include <vector>

#include "esdmr/tape.hpp"
#include "esdmr/tensor.hpp"

namespace esdmr {

/// A scalar-valued function of one tensor. Called with a tape for the
/// analytic pass and with nullptr for plain (finite-difference) evaluations.
template <class T>
using ScalarFn = std::function<TensorT<T>(TapeT<T>*, const TensorT<T>&)>;

/// Central finite-difference check of the tape gradient of f at x.
/// Returns max over checked coordinates of
///   |analytic - central| / max(1, |central|).
/// eps must lie in [1e-7, 1e-2]. When max_coords >= 0 and the tensor is
/// larger, a deterministic random subset of coordinates is checked.
template <class T>
T grad_check(const ScalarFn<T>& f, const TensorT<T>& x, T eps,
             int max_coords = -1, std::uint64_t coord_seed = 17);

struct GradCheckCase {
  std::string name;
  double max_rel_err = 0.0;
  double threshold = 0.0;

  bool pass() const { return max_rel_err < threshold; }
};

/// The 64-bit finite-difference suite: every primitive's backward rule, the
/// composite blocks, and the end-to-end network + Dice loss, each over
/// `seeds_per_case` random draws.
std::vector<GradCheckCase> run_gradient_suite(int seeds_per_case);

}  // namespace esdmr
