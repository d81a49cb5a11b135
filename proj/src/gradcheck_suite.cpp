#include "glam/gradcheck_suite.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "glam/model.hpp"
#include "glam/ops.hpp"

namespace glam {
namespace {

using T = Tensor<double>;
using Inputs = std::vector<T>;

struct Gen {
  std::mt19937_64 rng;
  explicit Gen(std::uint64_t seed) : rng(seed) {}

  T normal(Shape shape, bool requires_grad = true, double scale = 1.0) {
    std::normal_distribution<double> d(0.0, scale);
    Buffer<double> v(element_count(shape));
    for (auto& x : v) x = d(rng);
    return T(std::move(shape), std::move(v), requires_grad);
  }
  // Magnitudes in [0.2, 1.2] with random sign: keeps relu and maxpool away
  // from their kinks at finite-difference scale.
  T away_from_zero(Shape shape) {
    std::uniform_real_distribution<double> d(0.2, 1.2);
    std::bernoulli_distribution sign;
    Buffer<double> v(element_count(shape));
    for (auto& x : v) x = sign(rng) ? d(rng) : -d(rng);
    return T(std::move(shape), std::move(v), true);
  }
  T probabilities(std::size_t rows, std::size_t k) {
    std::uniform_real_distribution<double> d(0.05, 1.0);
    Buffer<double> v(rows * k);
    for (std::size_t r = 0; r < rows; ++r) {
      double total = 0;
      for (std::size_t j = 0; j < k; ++j) total += v[r * k + j] = d(rng);
      for (std::size_t j = 0; j < k; ++j) v[r * k + j] /= total;
    }
    return T({rows, k}, std::move(v));
  }
};

// sum(y * w) for a fixed random w, so every output coordinate carries a
// distinct weight in the checked gradient.
struct Projector {
  T weights;
  T operator()(const T& y) {
    if (!weights.defined() || weights.shape() != y.shape()) {
      Gen g(0x5eed ^ y.size());
      weights = g.normal(y.shape(), false);
    }
    return sum(y * weights);
  }
};

GradCheckCase make_case(std::string name, double tol,
                        std::function<std::pair<ScalarFunction, Inputs>(Gen&)> build) {
  return {std::move(name), tol, [build](std::uint64_t seed, double tolerance) {
            Gen gen(seed);
            auto [f, inputs] = build(gen);
            GradCheckOptions opt;
            opt.tolerance = tolerance;
            opt.seed = seed;
            return grad_check(f, std::move(inputs), opt);
          }};
}

ParameterSet<double> randomized(const ModelConfig& cfg, Gen& gen) {
  auto params = init_parameters<double>(cfg, gen.rng());
  for (auto& e : params.entries()) {
    if (e.kind == ParamKind::buffer) continue;
    auto d = e.tensor.mutable_data();
    std::normal_distribution<double> n(0.0, 0.3);
    for (auto& v : d) v += n(gen.rng);
  }
  return params;
}

// Rebuilds a ParameterSet whose trainable tensors are the checked inputs.
ParameterSet<double> bind_params(const ParameterSet<double>& templ, const Inputs& trainable) {
  ParameterSet<double> out;
  std::size_t k = 0;
  for (const auto& e : templ.entries()) {
    out.add(e.name, e.kind == ParamKind::buffer ? e.tensor.clone() : trainable[k++], e.kind);
  }
  return out;
}

Inputs trainable_of(const ParameterSet<double>& params) {
  Inputs out;
  for (const auto& e : params.entries()) {
    if (e.kind != ParamKind::buffer) out.push_back(e.tensor.clone());
  }
  return out;
}

ModelConfig small_model() {
  ModelConfig cfg;
  cfg.in_height = 8;
  cfg.in_width = 10;
  cfg.n_multiscale_blocks = 1;
  cfg.branch_channels = 3;
  cfg.final_kernel = 5;
  cfg.final_channels = 4;
  cfg.head_hidden = 6;
  return cfg;
}

}  // namespace

std::vector<GradCheckCase> default_gradcheck_cases() {
  std::vector<GradCheckCase> cases;
  auto proj = std::make_shared<Projector>();

  cases.push_back(make_case("add", 1e-6, [proj](Gen& g) {
    return std::pair{ScalarFunction([proj](const Inputs& in) { return (*proj)(in[0] + in[1]); }),
                     Inputs{g.normal({3, 4}), g.normal({3, 4})}};
  }));
  cases.push_back(make_case("mul", 1e-6, [proj](Gen& g) {
    return std::pair{ScalarFunction([proj](const Inputs& in) { return (*proj)(in[0] * in[1]); }),
                     Inputs{g.normal({3, 4}), g.normal({3, 4})}};
  }));
  cases.push_back(make_case("mul_scalar_broadcast", 1e-6, [proj](Gen& g) {
    return std::pair{ScalarFunction([proj](const Inputs& in) { return (*proj)(in[0] * in[1]); }),
                     Inputs{g.normal({2, 5}), g.normal({1})}};
  }));
  cases.push_back(make_case("sum", 1e-6, [](Gen& g) {
    return std::pair{ScalarFunction([](const Inputs& in) { return sum(in[0]); }), Inputs{g.normal({4, 3})}};
  }));
  cases.push_back(make_case("matmul", 1e-6, [proj](Gen& g) {
    return std::pair{ScalarFunction([proj](const Inputs& in) { return (*proj)(matmul(in[0], in[1])); }),
                     Inputs{g.normal({4, 5}), g.normal({5, 3})}};
  }));
  cases.push_back(make_case("linear", 1e-6, [proj](Gen& g) {
    return std::pair{ScalarFunction([proj](const Inputs& in) { return (*proj)(linear(in[0], in[1], in[2])); }),
                     Inputs{g.normal({2, 3}), g.normal({3, 4}), g.normal({4})}};
  }));
  cases.push_back(make_case("conv2d_same_3x1", 1e-6, [proj](Gen& g) {
    return std::pair{ScalarFunction([proj](const Inputs& in) { return (*proj)(conv2d_same(in[0], in[1], in[2])); }),
                     Inputs{g.normal({2, 3, 5, 4}), g.normal({4, 3, 3, 1}), g.normal({4})}};
  }));
  cases.push_back(make_case("conv2d_same_1x3", 1e-6, [proj](Gen& g) {
    return std::pair{ScalarFunction([proj](const Inputs& in) { return (*proj)(conv2d_same(in[0], in[1], in[2])); }),
                     Inputs{g.normal({2, 2, 4, 5}), g.normal({3, 2, 1, 3}), g.normal({3})}};
  }));
  cases.push_back(make_case("conv2d_same_5x5", 1e-6, [proj](Gen& g) {
    return std::pair{ScalarFunction([proj](const Inputs& in) { return (*proj)(conv2d_same(in[0], in[1], in[2])); }),
                     Inputs{g.normal({2, 2, 6, 5}), g.normal({2, 2, 5, 5}), g.normal({2})}};
  }));
  cases.push_back(make_case("batchnorm2d_train", 1e-6, [proj](Gen& g) {
    return std::pair{ScalarFunction([proj](const Inputs& in) {
                       auto state = BatchNormState<double>::fresh(3);
                       return (*proj)(batchnorm2d(in[0], in[1], in[2], state, Mode::train));
                     }),
                     Inputs{g.normal({2, 3, 4, 3}), g.normal({3}), g.normal({3})}};
  }));
  cases.push_back(make_case("batchnorm2d_eval", 1e-6, [proj](Gen& g) {
    auto state = std::make_shared<BatchNormState<double>>(BatchNormState<double>::fresh(3));
    state->running_mean = g.normal({3}, false);
    state->running_var = g.away_from_zero({3}).detach();
    for (auto& v : state->running_var.mutable_data()) v = std::abs(v);
    return std::pair{ScalarFunction([proj, state](const Inputs& in) {
                       return (*proj)(batchnorm2d(in[0], in[1], in[2], *state, Mode::eval));
                     }),
                     Inputs{g.normal({2, 3, 4, 3}), g.normal({3}), g.normal({3})}};
  }));
  cases.push_back(make_case("layer_norm", 1e-6, [proj](Gen& g) {
    return std::pair{ScalarFunction([proj](const Inputs& in) { return (*proj)(layer_norm(in[0], in[1], in[2])); }),
                     Inputs{g.normal({2, 3, 6}), g.normal({6}), g.normal({6})}};
  }));
  cases.push_back(make_case("relu", 1e-6, [proj](Gen& g) {
    return std::pair{ScalarFunction([proj](const Inputs& in) { return (*proj)(relu(in[0])); }),
                     Inputs{g.away_from_zero({64})}};
  }));
  cases.push_back(make_case("gelu", 1e-6, [proj](Gen& g) {
    return std::pair{ScalarFunction([proj](const Inputs& in) { return (*proj)(gelu(in[0])); }),
                     Inputs{g.normal({64}, true, 2.0)}};
  }));
  cases.push_back(make_case("maxpool2d", 1e-6, [proj](Gen& g) {
    return std::pair{ScalarFunction([proj](const Inputs& in) { return (*proj)(maxpool2d(in[0], 2, 2)); }),
                     Inputs{g.normal({1, 2, 6, 5})}};
  }));
  cases.push_back(make_case("concat", 1e-6, [proj](Gen& g) {
    return std::pair{ScalarFunction([proj](const Inputs& in) { return (*proj)(concat({in[0], in[1]}, 1)); }),
                     Inputs{g.normal({2, 3, 2}), g.normal({2, 1, 2})}};
  }));
  cases.push_back(make_case("slice", 1e-6, [proj](Gen& g) {
    return std::pair{ScalarFunction([proj](const Inputs& in) { return (*proj)(slice(in[0], 1, 1, 2)); }),
                     Inputs{g.normal({2, 4, 3})}};
  }));
  cases.push_back(make_case("split_half", 1e-6, [proj](Gen& g) {
    return std::pair{ScalarFunction([proj](const Inputs& in) {
                       const auto [a, b] = split_half(in[0], 1);
                       return (*proj)(a * b + a);
                     }),
                     Inputs{g.normal({2, 6})}};
  }));
  cases.push_back(make_case("reshape", 1e-6, [proj](Gen& g) {
    return std::pair{ScalarFunction([proj](const Inputs& in) { return (*proj)(reshape(in[0], {3, 4})); }),
                     Inputs{g.normal({2, 6})}};
  }));
  cases.push_back(make_case("softmax_cross_entropy", 1e-6, [](Gen& g) {
    const auto target = g.probabilities(3, 4);
    return std::pair{ScalarFunction([target](const Inputs& in) { return softmax_cross_entropy(in[0], target); }),
                     Inputs{g.normal({3, 4}, true, 2.0)}};
  }));
  cases.push_back(make_case("linear_cross_entropy", 1e-6, [](Gen& g) {
    const auto target = g.probabilities(5, 4);
    return std::pair{ScalarFunction([target](const Inputs& in) {
                       return softmax_cross_entropy(linear(in[0], in[1], in[2]), target);
                     }),
                     Inputs{g.normal({5, 3}), g.normal({3, 4}), g.normal({4})}};
  }));

  // Composites. Tolerance 1e-4 wherever batch normalization takes part.
  cases.push_back(make_case("multiscale_block_first", 1e-4, [proj](Gen& g) {
    auto cfg = small_model();
    auto templ = std::make_shared<ParameterSet<double>>(randomized(cfg, g));
    Inputs in{g.normal({2, 1, 8, 10})};
    for (auto& t : trainable_of(*templ)) in.push_back(t);
    return std::pair{ScalarFunction([proj, templ](const Inputs& in) {
                       auto p = bind_params(*templ, Inputs(in.begin() + 1, in.end()));
                       return (*proj)(multiscale_block_forward(in[0], p, "ms0", BlockPosition::first, Mode::train));
                     }),
                     in};
  }));
  cases.push_back(make_case("multiscale_block_rest", 1e-4, [proj](Gen& g) {
    auto cfg = small_model();
    cfg.n_multiscale_blocks = 2;
    auto templ = std::make_shared<ParameterSet<double>>(randomized(cfg, g));
    Inputs in{g.normal({2, 3, 4, 6})};
    for (auto& t : trainable_of(*templ)) in.push_back(t);
    return std::pair{ScalarFunction([proj, templ](const Inputs& in) {
                       auto p = bind_params(*templ, Inputs(in.begin() + 1, in.end()));
                       return (*proj)(multiscale_block_forward(in[0], p, "ms1", BlockPosition::rest, Mode::train));
                     }),
                     in};
  }));
  cases.push_back(make_case("final_conv", 1e-4, [proj](Gen& g) {
    auto cfg = small_model();
    auto templ = std::make_shared<ParameterSet<double>>(randomized(cfg, g));
    Inputs in{g.normal({2, 3, 4, 5})};
    for (auto& t : trainable_of(*templ)) in.push_back(t);
    return std::pair{ScalarFunction([proj, templ](const Inputs& in) {
                       auto p = bind_params(*templ, Inputs(in.begin() + 1, in.end()));
                       return (*proj)(final_conv_forward(in[0], p, Mode::train));
                     }),
                     in};
  }));
  cases.push_back(make_case("global_aware_block", 1e-4, [proj](Gen& g) {
    // C = 4 channels and d_f = 10 features entering the block.
    ModelConfig cfg;
    cfg.in_height = 4;
    cfg.in_width = 5;
    cfg.n_multiscale_blocks = 1;
    cfg.branch_channels = 2;
    cfg.final_channels = 4;
    cfg.final_kernel = 3;
    cfg.head_hidden = 3;
    auto templ = std::make_shared<ParameterSet<double>>(randomized(cfg, g));
    Inputs in{g.normal({2, 4, 10})};
    for (auto& t : trainable_of(*templ)) in.push_back(t);
    return std::pair{ScalarFunction([proj, templ](const Inputs& in) {
                       auto p = bind_params(*templ, Inputs(in.begin() + 1, in.end()));
                       return (*proj)(global_aware_forward(in[0], p));
                     }),
                     in};
  }));
  for (auto fusion : {FusionMode::global_aware, FusionMode::none}) {
    cases.push_back(make_case("full_model_" + to_string(fusion), 1e-4, [fusion](Gen& g) {
      auto cfg = small_model();
      cfg.fusion_mode = fusion;
      auto templ = std::make_shared<ParameterSet<double>>(randomized(cfg, g));
      const auto target = g.probabilities(2, cfg.n_classes);
      Inputs in{g.normal({2, 1, cfg.in_height, cfg.in_width})};
      for (auto& t : trainable_of(*templ)) in.push_back(t);
      return std::pair{ScalarFunction([cfg, templ, target](const Inputs& in) {
                         auto p = bind_params(*templ, Inputs(in.begin() + 1, in.end()));
                         return softmax_cross_entropy(glam_forward(in[0], p, cfg, Mode::train), target);
                       }),
                       in};
    }));
  }
  return cases;
}

std::string GradCheckSuiteReport::to_text() const {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof line, "%-28s %14s %10s %6s  %s\n", "case", "max_rel_err", "tolerance", "seeds", "status");
  out += line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%-28s %14.3e %10.1e %6zu  %s\n", r.name.c_str(), r.max_rel_err, r.tolerance,
                  r.seeds, r.passed ? "ok" : "FAIL");
    out += line;
    if (!r.error.empty()) out += "    error: " + r.error + "\n";
  }
  out += passed ? "all cases passed\n" : "FAILED\n";
  return out;
}

GradCheckSuiteReport run_gradcheck_suite(const std::vector<GradCheckCase>& cases, std::size_t n_seeds,
                                         std::uint64_t base_seed) {
  GradCheckSuiteReport report;
  for (const auto& c : cases) {
    GradCheckRow row;
    row.name = c.name;
    row.tolerance = c.tolerance;
    for (std::size_t s = 0; s < n_seeds; ++s) {
      try {
        const auto r = c.run(base_seed + s, c.tolerance);
        row.max_rel_err = std::max(row.max_rel_err, r.max_rel_err);
        row.passed = row.passed && r.passed;
      } catch (const std::exception& e) {
        row.passed = false;
        row.error = e.what();
        break;
      }
      ++row.seeds;
    }
    report.passed = report.passed && row.passed;
    report.rows.push_back(std::move(row));
  }
  return report;
}

}  // namespace glam
