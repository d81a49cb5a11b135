#include "glam/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "glam/error.hpp"

namespace glam {
namespace {

std::vector<std::size_t> pick_coordinates(std::size_t size, std::size_t limit, std::uint64_t seed) {
  std::vector<std::size_t> idx(size);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (size <= limit) return idx;
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < limit; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, size - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(limit);
  std::sort(idx.begin(), idx.end());
  return idx;
}

double evaluate(const ScalarFunction& f, const std::vector<Tensor<double>>& inputs) {
  const Tensor<double> out = f(inputs);
  if (out.size() != 1) throw ShapeError("grad_check needs a scalar function, got " + to_string(out.shape()));
  return out.item();
}

}  // namespace

GradCheckReport grad_check(const ScalarFunction& f, std::vector<Tensor<double>> inputs,
                           const GradCheckOptions& options) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  const Tensor<double> out = f(inputs);
  if (out.size() != 1) throw ShapeError("grad_check needs a scalar function, got " + to_string(out.shape()));
  out.backward();

  std::vector<std::vector<double>> analytic;
  for (auto& t : inputs) {
    analytic.emplace_back(t.size(), 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.back().begin());
    t.set_requires_grad(false);
  }

  GradCheckReport report;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto data = inputs[k].mutable_data();
    InputCheck check;
    double diff2 = 0, a2 = 0, n2 = 0;
    for (std::size_t i : pick_coordinates(data.size(), options.max_coordinates, options.seed + k)) {
      const double saved = data[i];
      data[i] = saved + options.step;
      const double plus = evaluate(f, inputs);
      data[i] = saved - options.step;
      const double minus = evaluate(f, inputs);
      data[i] = saved;
      const double numeric = (plus - minus) / (2.0 * options.step);
      const double a = analytic[k][i];
      diff2 += (a - numeric) * (a - numeric);
      a2 += a * a;
      n2 += numeric * numeric;
      ++check.checked;
    }
    const double scale = std::max({std::sqrt(a2), std::sqrt(n2), 1e-8});
    check.rel_err = std::sqrt(diff2) / scale;
    check.passed = check.rel_err < options.tolerance;
    report.max_rel_err = std::max(report.max_rel_err, check.rel_err);
    report.passed = report.passed && check.passed;
    report.inputs.push_back(check);
  }
  for (auto& t : inputs) t.set_requires_grad(true);
  return report;
}

}  // namespace glam
