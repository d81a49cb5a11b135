#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "glam/tensor.hpp"

namespace glam {

using ScalarFunction = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-6;
  /// Inputs with more elements are checked on a seeded random subset.
  std::size_t max_coordinates = 10000;
  std::uint64_t seed = 0;
};

struct InputCheck {
  std::size_t checked = 0;
  /// ||analytic - numeric|| / max(||analytic||, ||numeric||, 1e-8) over the
  /// checked coordinates.
  double rel_err = 0;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<InputCheck> inputs;
  double max_rel_err = 0;
  bool passed = true;
};

/// Compares reverse-mode gradients of the scalar `f` at `inputs` (leaf
/// tensors) against central differences (f(x+h) - f(x-h)) / 2h.
GradCheckReport grad_check(const ScalarFunction& f, std::vector<Tensor<double>> inputs,
                           const GradCheckOptions& options = {});

}  // namespace glam
