#include <cmath>

#include "doctest.h"
#include "glam/checkpoint.hpp"
#include "glam/error.hpp"
#include "glam/gradcheck_suite.hpp"
#include "glam/model.hpp"
#include "glam/serialize.hpp"
#include "test_util.hpp"

using namespace glam;
using glam::testing::random_tensor;

namespace {

template <typename S>
std::vector<S> values(const Tensor<S>& t) {
  return {t.data().begin(), t.data().end()};
}

ModelConfig small_cfg() {
  ModelConfig cfg;
  cfg.in_height = 12;
  cfg.in_width = 8;
  cfg.n_multiscale_blocks = 2;
  cfg.branch_channels = 3;
  cfg.final_channels = 5;
  cfg.head_hidden = 6;
  return cfg;
}

// Conv stack output (H', W') by walking the pooling schedule: the first block
// doubles W before its pool.
std::pair<std::size_t, std::size_t> pooled_extent(const ModelConfig& cfg) {
  std::size_t h = cfg.in_height, w = 2 * cfg.in_width;
  for (std::size_t b = 0; b < cfg.n_multiscale_blocks; ++b) {
    h /= cfg.pool;
    w /= cfg.pool;
  }
  return {h, w};
}

}  // namespace

TEST_CASE("default configuration shape contract") {
  const ModelConfig cfg;
  const auto [h, w] = pooled_extent(cfg);
  CHECK(h == 24);
  CHECK(w == 10);
  CHECK(cfg.channels() == 32);
  CHECK(cfg.feature_length() == h * w);
  CHECK(cfg.block_output_shape(0) == Shape{16, 99, 40});
  CHECK(cfg.block_output_shape(1) == Shape{32, 49, 20});
  CHECK(cfg.block_output_shape(2) == Shape{32, 24, 10});

  auto params = init_parameters<float>(cfg, 1);
  const auto x = random_tensor<float>({1, 1, 198, 40}, 2, false);
  const auto logits = glam_forward(x, params, cfg, Mode::eval);
  CHECK(logits.shape() == Shape{1, 4});

  const auto h0 = multiscale_block_forward(x, params, "ms0", BlockPosition::first, Mode::eval);
  CHECK(h0.shape() == Shape{1, 16, 99, 40});
  const auto h1 = multiscale_block_forward(h0, params, "ms1", BlockPosition::rest, Mode::eval);
  CHECK(h1.shape() == Shape{1, 32, 49, 20});
  const auto h2 = multiscale_block_forward(h1, params, "ms2", BlockPosition::rest, Mode::eval);
  CHECK(h2.shape() == Shape{1, 32, 24, 10});
  CHECK(final_conv_forward(h2, params, Mode::eval).shape() == Shape{1, 32, 24, 10});
  CHECK(export_embeddings(x, params, cfg).shape() == Shape{1, 64});

  CHECK_THROWS_AS(glam_forward(random_tensor<float>({1, 1, 198, 41}, 3, false), params, cfg, Mode::eval), ShapeError);
  CHECK_THROWS_AS(glam_forward(random_tensor<float>({1, 2, 198, 40}, 3, false), params, cfg, Mode::eval), ShapeError);
}

TEST_CASE("closed-form shapes across configurations") {
  for (std::size_t blocks = 1; blocks <= 3; ++blocks)
    for (std::size_t height : {16, 23, 40}) {
      ModelConfig cfg = small_cfg();
      cfg.n_multiscale_blocks = blocks;
      cfg.in_height = height;
      const auto [h, w] = pooled_extent(cfg);
      CHECK(cfg.feature_length() == h * w);
      auto params = init_parameters<double>(cfg, 4);
      const auto y = glam_forward(random_tensor({3, 1, height, 8}, 5, false), params, cfg, Mode::train);
      CHECK(y.shape() == Shape{3, cfg.n_classes});
    }
  ModelConfig tiny = small_cfg();
  tiny.in_height = 3;
  CHECK_THROWS_AS(tiny.validate(), ConfigError);
}

TEST_CASE("parameter count matches an enumeration of the layer shapes") {
  const ModelConfig cfg;
  const std::size_t b = 16, c = 32, df = 240;
  std::size_t expected = 0;
  expected += 2 * (b * 1 * 3) + 4 * b;      // ms0: two 1-channel branches, gamma and beta each
  expected += 2 * (b * b * 3) + 4 * b;      // ms1 reads 16 channels
  expected += 2 * (b * 2 * b * 3) + 4 * b;  // ms2 reads the 32-channel concat
  expected += c * c * 25 + 2 * c;           // final 5x5
  expected += 2 * df + df * 4 * df + 4 * df + c * c * 3 + c + 2 * df * df + df;  // fusion
  expected += c * df * 64 + 64 + 64 * 4 + 4;                                    // head
  const auto params = init_parameters<float>(cfg, 0);
  CHECK(params.trainable_scalars() == expected);
  CHECK(expected == 872788);

  std::size_t from_specs = 0;
  for (const auto& s : parameter_specs(cfg))
    if (s.kind != ParamKind::buffer) from_specs += element_count(s.shape);
  CHECK(from_specs == expected);

  ModelConfig off = cfg;
  off.fusion_mode = FusionMode::none;
  CHECK(init_parameters<float>(off, 0).trainable_scalars() ==
        expected - (2 * df + df * 4 * df + 4 * df + c * c * 3 + c + 2 * df * df + df));
}

TEST_CASE("init_parameters") {
  const ModelConfig cfg = small_cfg();
  const auto a = init_parameters<double>(cfg, 11), b = init_parameters<double>(cfg, 11);
  const auto other = init_parameters<double>(cfg, 12);
  REQUIRE(a.size() == b.size());
  bool any_differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& e = a.entries()[i];
    CHECK(e.name == b.entries()[i].name);
    CHECK(values(e.tensor) == values(b.entries()[i].tensor));
    any_differs = any_differs || values(e.tensor) != values(other.entries()[i].tensor);
    for (double v : e.tensor.data()) CHECK(std::isfinite(v));
    const auto& n = e.name;
    if (n.ends_with(".gamma") || n.ends_with("running_var") || n == "fusion.gate.bias") {
      for (double v : e.tensor.data()) CHECK(v == 1);
    } else if (n.ends_with(".beta") || n.ends_with(".bias") || n.ends_with("running_mean") ||
               n == "fusion.gate.weight" || n == "fusion.fc2.weight") {
      for (double v : e.tensor.data()) CHECK(v == 0);
    } else {
      const auto& s = e.tensor.shape();
      const std::size_t fan_in = s.size() == 4 ? s[1] * s[2] * s[3] : s[0];
      const double gain = std::sqrt(2.0 / (1 + 5.0));
      const double bound = gain * std::sqrt(3.0 / static_cast<double>(fan_in));
      double max_abs = 0;
      for (double v : e.tensor.data()) max_abs = std::max(max_abs, std::abs(v));
      CHECK(max_abs <= bound);
      CHECK(max_abs > (e.tensor.size() >= 50 ? 0.8 * bound : 0.0));
    }
  }
  CHECK(any_differs);
  for (const auto& e : a.entries()) CHECK(e.tensor.requires_grad() == (e.kind != ParamKind::buffer));
}

TEST_CASE("global-aware block is the identity at initialization") {
  ModelConfig cfg;
  const auto params = init_parameters<float>(cfg, 3);
  const auto x = random_tensor<float>({2, 32, 240}, 6, false);
  CHECK(values(global_aware_forward(x, params)) == values(x));

  const auto xd = random_tensor({2, 32, 240}, 7, false);
  CHECK(values(global_aware_forward(xd, init_parameters<double>(cfg, 9))) == values(xd));

  CHECK_THROWS_AS(global_aware_forward(random_tensor<float>({2, 32, 239}, 6, false), params), ShapeError);
  CHECK_THROWS_AS(global_aware_forward(random_tensor<float>({2, 31, 240}, 6, false), params), ShapeError);
}

TEST_CASE("with the gate at init, the block reduces to x + fc2(u)") {
  ModelConfig cfg = small_cfg();
  auto params = init_parameters<double>(cfg, 4);
  const std::size_t c = cfg.channels(), df = cfg.feature_length();
  auto w2 = params.at("fusion.fc2.weight").mutable_data();
  std::mt19937_64 rng(8);
  std::normal_distribution<double> d;
  for (auto& v : w2) v = d(rng);
  const auto x = random_tensor({2, c, df}, 9, false);
  const auto normed = layer_norm(x, params.at("fusion.norm.gamma"), params.at("fusion.norm.beta"));
  const auto z = gelu(linear(reshape(normed, {2 * c, df}), params.at("fusion.fc1.weight"), params.at("fusion.fc1.bias")));
  const auto u = split_half(z, 1).first;
  const auto expected = x + reshape(linear(u, params.at("fusion.fc2.weight"), params.at("fusion.fc2.bias")), {2, c, df});
  CHECK(values(global_aware_forward(x, params)) == values(expected));
}

TEST_CASE("fusion on and off give identical logits at initialization") {
  ModelConfig on;
  ModelConfig off = on;
  off.fusion_mode = FusionMode::none;
  auto p_on = init_parameters<float>(on, 21);
  auto p_off = init_parameters<float>(off, 21);
  const auto x = random_tensor<float>({3, 1, 198, 40}, 10, false);
  CHECK(values(glam_forward(x, p_on, on, Mode::eval)) == values(glam_forward(x, p_off, off, Mode::eval)));
  CHECK(values(glam_forward(x, p_on, on, Mode::train)) == values(glam_forward(x, p_off, off, Mode::train)));
}

TEST_CASE("multiscale block on zero input in eval mode is zero") {
  ModelConfig cfg = small_cfg();
  auto params = init_parameters<double>(cfg, 5);
  const auto y = multiscale_block_forward(Tensor<double>::zeros({2, 1, 12, 8}), params, "ms0", BlockPosition::first,
                                          Mode::eval);
  CHECK(y.shape() == Shape{2, 3, 6, 8});
  for (double v : y.data()) CHECK(v == 0);
  CHECK_THROWS_AS(
      multiscale_block_forward(Tensor<double>::zeros({2, 2, 12, 8}), params, "ms0", BlockPosition::first, Mode::eval),
      ShapeError);
}

TEST_CASE("final conv with an identity kernel is relu of its input") {
  ModelConfig cfg = small_cfg();
  cfg.final_channels = 2 * cfg.branch_channels;
  auto params = init_parameters<double>(cfg, 6);
  auto k = params.at("final.weight");
  const std::size_t ch = k.dim(0), ks = cfg.final_kernel;
  auto kd = k.mutable_data();
  std::fill(kd.begin(), kd.end(), 0.0);
  for (std::size_t o = 0; o < ch; ++o) kd[((o * ch + o) * ks + ks / 2) * ks + ks / 2] = 1.0;
  const auto x = random_tensor({2, ch, 3, 4}, 11, false);
  const auto y = final_conv_forward(x, params, Mode::eval);
  const double scale = 1 / std::sqrt(1 + 1e-5);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(y.at(i) == doctest::Approx(std::max(0.0, x.at(i)) * scale));
}

TEST_CASE("eval forward is pure and batch-size independent") {
  ModelConfig cfg;
  auto params = init_parameters<float>(cfg, 7);
  // Non-trivial running statistics.
  for (auto& e : params.entries()) {
    if (e.name.ends_with("running_mean")) std::fill(e.tensor.mutable_data().begin(), e.tensor.mutable_data().end(), 0.1f);
    if (e.name.ends_with("running_var")) std::fill(e.tensor.mutable_data().begin(), e.tensor.mutable_data().end(), 2.0f);
  }
  const auto before = params.clone();
  const auto batch = random_tensor<float>({3, 1, 198, 40}, 12, false);
  const auto all = glam_forward(batch, params, cfg, Mode::eval);
  const auto one = glam_forward(slice(batch, 0, 1, 1), params, cfg, Mode::eval);
  for (std::size_t k = 0; k < 4; ++k) CHECK(std::abs(one.at(k) - all.at(4 + k)) < 1e-6);
  for (std::size_t i = 0; i < params.size(); ++i)
    CHECK(values(params.entries()[i].tensor) == values(before.entries()[i].tensor));

  const auto twin = concat({slice(batch, 0, 1, 1), slice(batch, 0, 1, 1)}, 0);
  const auto out = glam_forward(twin, params, cfg, Mode::eval);
  for (std::size_t k = 0; k < 4; ++k) CHECK(out.at(k) == out.at(4 + k));
  const auto emb = export_embeddings(twin, params, cfg);
  for (std::size_t k = 0; k < 64; ++k) CHECK(emb.at(k) == emb.at(64 + k));

  glam_forward(batch, params, cfg, Mode::train);
  CHECK(values(params.at("ms0.spatial.bn.running_mean")) != values(before.at("ms0.spatial.bn.running_mean")));
}

TEST_CASE("logits are the output layer applied to the embeddings") {
  ModelConfig cfg = small_cfg();
  auto params = init_parameters<float>(cfg, 8);
  const auto x = random_tensor<float>({4, 1, 12, 8}, 13, false);
  const auto emb = export_embeddings(x, params, cfg);
  const auto logits = glam_forward(x, params, cfg, Mode::eval);
  CHECK(values(logits) == values(linear(emb, params.at("head.out.weight"), params.at("head.out.bias"))));
}

TEST_CASE("model blocks pass central differences") {
  std::vector<GradCheckCase> composites;
  for (auto& c : default_gradcheck_cases())
    if (c.tolerance > 1e-6) composites.push_back(c);
  REQUIRE(composites.size() >= 5);
  const auto report = run_gradcheck_suite(composites, 5, 100);
  for (const auto& row : report.rows) {
    INFO(row.name << " " << row.max_rel_err << " " << row.error);
    CHECK(row.passed);
    CHECK(row.max_rel_err < 1e-4);
  }
}

TEST_CASE("make_batch and predict_probabilities") {
  ModelConfig cfg = small_cfg();
  std::vector<FeatureSegment> segs(5);
  for (std::size_t i = 0; i < segs.size(); ++i) {
    segs[i].features = FeatureMatrix::Random(12, 8);
    segs[i].label = static_cast<int>(i % 4);
  }
  const std::vector<std::size_t> idx{4, 1};
  const auto batch = make_batch<float>(segs, idx);
  CHECK(batch.shape() == Shape{2, 1, 12, 8});
  CHECK(batch.at(0) == segs[4].features(0, 0));
  CHECK(batch.at(96 + 9) == segs[1].features(1, 1));

  auto params = init_parameters<float>(cfg, 14);
  const auto probs = predict_probabilities(params, cfg, segs, 2);
  REQUIRE(probs.size() == 5);
  const auto whole = predict_probabilities(params, cfg, segs, 64);
  for (std::size_t i = 0; i < 5; ++i) {
    double total = 0;
    for (std::size_t k = 0; k < 4; ++k) {
      total += probs[i][k];
      CHECK(std::abs(probs[i][k] - whole[i][k]) < 1e-6);
    }
    CHECK(total == doctest::Approx(1.0));
  }
}

TEST_CASE("checkpoint round-trip") {
  glam::testing::TempDir dir("ckpt");
  ModelConfig cfg = small_cfg();
  Checkpoint ck;
  ck.config = cfg;
  ck.params = init_parameters<float>(cfg, 15);
  ck.params.at("ms0.spatial.bn.running_var").mutable_data()[1] = 3.5f;
  ck.step = 42;
  ck.feature_stats = FeatureStats{{1.0, 2.0}, {0.5, 0.25}};
  ck.metadata["note"] = "x";
  save_checkpoint(dir.path() / "m.ckpt", ck);
  const auto back = load_checkpoint(dir.path() / "m.ckpt");
  CHECK(back.step == 42);
  CHECK(back.metadata["note"] == "x");
  CHECK(to_json(back.config) == to_json(cfg));
  REQUIRE(back.feature_stats.has_value());
  CHECK(back.feature_stats->stddev == std::vector<double>{0.5, 0.25});
  REQUIRE(back.params.size() == ck.params.size());
  for (std::size_t i = 0; i < ck.params.size(); ++i) {
    CHECK(back.params.entries()[i].name == ck.params.entries()[i].name);
    CHECK(back.params.entries()[i].kind == ck.params.entries()[i].kind);
    CHECK(values(back.params.entries()[i].tensor) == values(ck.params.entries()[i].tensor));
  }
  const auto x = random_tensor<float>({2, 1, 12, 8}, 16, false);
  auto p1 = ck.params.clone();
  auto p2 = back.params.clone();
  CHECK(values(glam_forward(x, p1, cfg, Mode::eval)) == values(glam_forward(x, p2, back.config, Mode::eval)));

  Checkpoint wrong = ck;
  wrong.config.final_channels = 7;
  bool rejected = false;
  try {
    save_checkpoint(dir.path() / "bad.ckpt", wrong);
    load_checkpoint(dir.path() / "bad.ckpt");
  } catch (const Error&) {
    rejected = true;
  }
  CHECK(rejected);
  write_file_atomic(dir.path() / "junk.ckpt", "GCKPxxxx");
  CHECK_THROWS_AS(load_checkpoint(dir.path() / "junk.ckpt"), Error);
}
