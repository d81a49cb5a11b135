#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "glam/grad_check.hpp"

namespace glam {

struct GradCheckCase {
  std::string name;
  double tolerance = 1e-6;
  /// Builds seeded float64 inputs and checks them at `tolerance`.
  std::function<GradCheckReport(std::uint64_t seed, double tolerance)> run;
};

/// Every differentiable op, the model blocks, and a small full model.
std::vector<GradCheckCase> default_gradcheck_cases();

struct GradCheckRow {
  std::string name;
  double max_rel_err = 0;  // over all seeds and inputs
  double tolerance = 0;
  std::size_t seeds = 0;
  bool passed = true;
  std::string error;  // set when the case threw
};

struct GradCheckSuiteReport {
  std::vector<GradCheckRow> rows;
  bool passed = true;

  std::string to_text() const;
};

GradCheckSuiteReport run_gradcheck_suite(const std::vector<GradCheckCase>& cases, std::size_t n_seeds = 1,
                                         std::uint64_t base_seed = 0);

}  // namespace glam
