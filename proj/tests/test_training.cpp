#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "doctest.h"
#include "glam/error.hpp"
#include "glam/metrics.hpp"
#include "glam/training.hpp"
#include "json.hpp"
#include "test_util.hpp"

using namespace glam;
using glam::testing::random_tensor;

namespace {

template <typename S>
std::vector<S> values(const Tensor<S>& t) {
  return {t.data().begin(), t.data().end()};
}

std::pair<double, double> moments(const std::vector<double>& v) {
  const double n = static_cast<double>(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double var = 0;
  for (double x : v) var += (x - mean) * (x - mean);
  return {mean, var / (n - 1)};
}

ModelConfig tiny_model() {
  ModelConfig cfg;
  cfg.in_height = 8;
  cfg.in_width = 6;
  cfg.n_multiscale_blocks = 1;
  cfg.branch_channels = 4;
  cfg.final_channels = 4;
  cfg.final_kernel = 3;
  cfg.head_hidden = 16;
  return cfg;
}

// Class-dependent offsets on noise so a small model can separate them.
std::vector<FeatureSegment> toy_segments(std::size_t n, std::size_t h, std::size_t w, std::uint64_t seed,
                                         double noise = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> d(0.0f, static_cast<float>(noise));
  std::vector<FeatureSegment> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i].label = static_cast<int>(i % 4);
    out[i].utterance_id = "u" + std::to_string(i);
    out[i].features = FeatureMatrix(h, w);
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < w; ++c)
        out[i].features(r, c) = d(rng) + (c % 4 == static_cast<std::size_t>(out[i].label) ? 1.5f : 0.0f);
  }
  return out;
}

ParameterSet<double> scalar_param(double w, ParamKind kind = ParamKind::weight) {
  ParameterSet<double> p;
  p.add("w", Tensor<double>::scalar(w, true), kind);
  return p;
}

void set_grad(ParameterSet<double>& p, const std::string& name, double g) {
  auto& t = p.at(name);
  t.zero_grad();
  t.grad_buffer()[0] = g;
}

}  // namespace

TEST_CASE("gamma sampler moments") {
  for (double k : {0.5, 1.0, 2.5}) {
    Rng rng(1);
    std::vector<double> draws(100000);
    for (auto& d : draws) d = sample_gamma(k, rng);
    const auto [mean, var] = moments(draws);
    CHECK(std::abs(mean - k) < 0.03 * std::max(k, 1.0));
    CHECK(std::abs(var - k) < 0.06 * std::max(k, 1.0));
    CHECK(*std::min_element(draws.begin(), draws.end()) > 0);
  }
  Rng rng(0);
  CHECK_THROWS_AS(sample_gamma(0.0, rng), ConfigError);
}

TEST_CASE("Beta(alpha, alpha) moments") {
  for (double alpha : {0.5, 1.0, 2.0}) {
    Rng rng(7);
    std::vector<double> draws(100000);
    for (auto& d : draws) d = sample_beta(alpha, rng);
    const auto [mean, var] = moments(draws);
    const double expected_var = 1.0 / (4.0 * (2.0 * alpha + 1.0));
    CHECK(std::abs(mean - 0.5) < 0.01);
    CHECK(std::abs(var - expected_var) < 0.005);
    for (double d : draws) {
      CHECK(d > 0);
      CHECK(d < 1);
    }
    // Symmetry: lambda and 1 - lambda share a distribution.
    const auto low = std::count_if(draws.begin(), draws.end(), [](double d) { return d < 0.2; });
    const auto high = std::count_if(draws.begin(), draws.end(), [](double d) { return d > 0.8; });
    CHECK(std::abs(static_cast<double>(low - high)) < 0.01 * 100000);
  }
  CHECK(std::abs(1.0 / 12 - 1.0 / (4.0 * 3.0)) < 1e-15);

  Rng a(3), b(3);
  for (int i = 0; i < 100; ++i) CHECK(sample_beta(0.5, a) == sample_beta(0.5, b));
  Rng rng(0);
  CHECK_THROWS_AS(sample_beta(0.0, rng), ConfigError);
  CHECK_THROWS_AS(sample_beta(-1.0, rng), ConfigError);
}

TEST_CASE("mixup") {
  const auto x = random_tensor({4, 2, 3}, 1, false);
  Tensor<double> y({4, 4}, Buffer<double>{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1});
  const std::vector<std::size_t> perm{2, 0, 3, 1};

  const auto [x1, y1] = mix_pairs(x, y, 1.0, perm);
  CHECK(values(x1) == values(x));
  CHECK(values(y1) == values(y));

  const auto [x0, y0] = mix_pairs(x, y, 0.0, perm);
  for (std::size_t j = 0; j < 6; ++j) CHECK(x0.at(j) == x.at(2 * 6 + j));

  Buffer<double> twin(24);
  for (std::size_t i = 0; i < 24; ++i) twin[i] = x.at(i % 6);
  const Tensor<double> same({4, 2, 3}, twin);
  for (double lambda : {0.1, 0.37, 0.9}) {
    const auto [mixed, labels] = mix_pairs(same, y, lambda, perm);
    for (std::size_t i = 0; i < 24; ++i) CHECK(mixed.at(i) == same.at(i));
  }

  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const auto [mx, my] = mixup_batch(x, y, 0.5, rng);
    for (std::size_t r = 0; r < 4; ++r) {
      double total = 0;
      for (std::size_t k = 0; k < 4; ++k) total += my.at(r * 4 + k);
      CHECK(std::abs(total - 1) < 1e-6);
    }
  }

  CHECK_THROWS_AS(mixup_batch(x, y, 0.0, rng), ConfigError);
  CHECK_THROWS_AS(mixup_batch(random_tensor({1, 3}, 2, false), Tensor<double>({1, 2}, Buffer<double>{1, 0}), 0.5, rng),
                  ShapeError);
}

TEST_CASE("mixup outputs are convex combinations of their pair") {
  Rng rng(11);
  for (int trial = 0; trial < 2000; ++trial) {
    const auto x = random_tensor({3, 5}, 1000 + trial, false);
    const auto y = softmax(random_tensor({3, 4}, 5000 + trial, false));
    // Replay the draw to learn the pairing.
    Rng replay = rng;
    const double lambda = sample_beta(0.5, replay);
    std::vector<std::size_t> perm{0, 1, 2};
    std::shuffle(perm.begin(), perm.end(), replay);
    const auto [mx, my] = mixup_batch(x, y, 0.5, rng);
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t j = 0; j < 5; ++j) {
        const double a = x.at(i * 5 + j), b = x.at(perm[i] * 5 + j);
        CHECK(mx.at(i * 5 + j) >= std::min(a, b) - 1e-12);
        CHECK(mx.at(i * 5 + j) <= std::max(a, b) + 1e-12);
        CHECK(mx.at(i * 5 + j) == doctest::Approx(lambda * a + (1 - lambda) * b));
      }
    }
  }
}

TEST_CASE("learning-rate schedule") {
  const TrainConfig cfg;
  CHECK(lr_at_epoch(0, cfg) == doctest::Approx(1e-4).epsilon(1e-15));
  CHECK(std::abs(lr_at_epoch(10, cfg) - 5.9874e-5) < 1e-9);
  CHECK(lr_at_epoch(120, cfg) == 1e-6);
  double prev = lr_at_epoch(0, cfg);
  for (std::size_t e = 1; e < 300; ++e) {
    const double lr = lr_at_epoch(e, cfg);
    CHECK(lr <= prev);
    CHECK(lr >= cfg.lr_floor);
    prev = lr;
  }
  TrainConfig bad;
  bad.lr_floor = 1e-3;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = TrainConfig{};
  bad.alpha = -0.1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = TrainConfig{};
  bad.batch_size = 1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad.alpha = 0;
  CHECK_NOTHROW(bad.validate());
}

TEST_CASE("adam_step") {
  TrainConfig cfg;
  cfg.weight_decay = 0;
  SUBCASE("first step moves by about lr in the gradient's sign") {
    for (double g : {0.5, -2.0, 1e-3}) {
      auto p = scalar_param(1.0);
      AdamState<double> s;
      set_grad(p, "w", g);
      adam_step(p, s, 0.01, cfg);
      CHECK(s.step == 1);
      const double expected = 1.0 - 0.01 * g / (std::abs(g) + cfg.adam_eps);
      CHECK(p.at("w").item() == doctest::Approx(expected).epsilon(1e-12));
      CHECK(std::abs(p.at("w").item() - (1.0 - 0.01 * (g > 0 ? 1 : -1))) < 1e-7);
    }
  }
  SUBCASE("zero gradient without decay is a fixed point") {
    auto p = scalar_param(2.5);
    AdamState<double> s;
    for (int i = 0; i < 5; ++i) {
      set_grad(p, "w", 0.0);
      adam_step(p, s, 0.1, cfg);
    }
    CHECK(p.at("w").item() == 2.5);
    CHECK(s.step == 5);
  }
  SUBCASE("minimizes (w - 3)^2") {
    auto p = scalar_param(0.0);
    AdamState<double> s;
    for (int i = 0; i < 200; ++i) {
      auto& w = p.at("w");
      w.zero_grad();
      const auto d = w + Tensor<double>::scalar(-3.0);
      sum(d * d).backward();
      adam_step(p, s, 0.1, cfg);
    }
    CHECK(std::abs(p.at("w").item() - 3) < 0.05);
  }
  SUBCASE("lr = 0 leaves parameters unchanged even with weight decay") {
    cfg.weight_decay = 0.5;
    auto p = scalar_param(1.25);
    AdamState<double> s;
    set_grad(p, "w", 3.0);
    adam_step(p, s, 0.0, cfg);
    CHECK(p.at("w").item() == 1.25);
  }
  SUBCASE("decay is lr-scaled and only hits weights") {
    cfg.weight_decay = 0.1;
    ParameterSet<double> p;
    p.add("w", Tensor<double>::scalar(2.0, true), ParamKind::weight);
    p.add("gamma", Tensor<double>::scalar(2.0, true), ParamKind::norm);
    p.add("running", Tensor<double>::scalar(2.0, false), ParamKind::buffer);
    AdamState<double> s;
    set_grad(p, "w", 0.0);
    set_grad(p, "gamma", 0.0);
    adam_step(p, s, 0.5, cfg);
    CHECK(p.at("w").item() == doctest::Approx(2.0 * (1 - 0.5 * 0.1)).epsilon(1e-15));
    CHECK(p.at("gamma").item() == 2.0);
    CHECK(p.at("running").item() == 2.0);
    CHECK(s.first_moment.count("running") == 0);
  }
  SUBCASE("missing gradient names the parameter") {
    ParameterSet<double> p;
    p.add("layer.weight", Tensor<double>::scalar(1.0, true), ParamKind::weight);
    AdamState<double> s;
    try {
      adam_step(p, s, 0.1, cfg);
      FAIL("expected StateError");
    } catch (const StateError& e) {
      CHECK(std::string(e.what()).find("layer.weight") != std::string::npos);
    }
    CHECK(s.step == 0);
  }
}

TEST_CASE("initial loss is near chance level") {
  const ModelConfig cfg;
  auto params = init_parameters<float>(cfg, 3);
  std::vector<float> onehot(32 * 4, 0.0f);
  for (std::size_t i = 0; i < 32; ++i) onehot[i * 4 + i % 4] = 1;
  const auto x = random_tensor<float>({32, 1, 198, 40}, 4, false);
  const double loss =
      softmax_cross_entropy(glam_forward(x, params, cfg, Mode::train), Tensor<float>({32, 4}, onehot)).item();
  CHECK(std::abs(loss - std::log(4.0)) < 0.15);

  TrainConfig tc;
  tc.epochs = 1;
  tc.seed = 3;
  const auto segs = toy_segments(64, 198, 40, 5);
  const auto r = train<float>(cfg, segs, {}, tc);
  CHECK(std::abs(r.history[0].loss - std::log(4.0)) < 0.15);
}

TEST_CASE("a small model overfits a small set") {
  const ModelConfig cfg = tiny_model();
  const auto segs = toy_segments(32, 8, 6, 6);
  TrainConfig tc;
  tc.alpha = 0;
  tc.epochs = 200;
  tc.lr0 = 3e-3;
  tc.seed = 1;
  auto r = train<float>(cfg, segs, {}, tc);
  const auto probs = predict_probabilities(r.params, cfg, segs);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < segs.size(); ++i) correct += argmax(probs[i]) == static_cast<std::size_t>(segs[i].label);
  CHECK(correct == segs.size());
  CHECK(r.history.back().loss < r.history.front().loss);
  CHECK(r.steps == 200);
}

TEST_CASE("training is bitwise reproducible") {
  const ModelConfig cfg = tiny_model();
  const auto segs = toy_segments(20, 8, 6, 7);
  TrainConfig tc;
  tc.epochs = 4;
  tc.batch_size = 8;
  tc.seed = 9;
  auto a = train<float>(cfg, segs, {}, tc);
  auto b = train<float>(cfg, segs, {}, tc);
  REQUIRE(a.history.size() == 4);
  CHECK(history_to_jsonl(a.history) == history_to_jsonl(b.history));
  for (std::size_t i = 0; i < a.params.size(); ++i)
    CHECK(values(a.params.entries()[i].tensor) == values(b.params.entries()[i].tensor));
  tc.seed = 10;
  auto c = train<float>(cfg, segs, {}, tc);
  CHECK(values(c.params.at("head.out.weight")) != values(a.params.at("head.out.weight")));
}

TEST_CASE("alpha = 0 follows the plain training path") {
  const ModelConfig cfg = tiny_model();
  const auto segs = toy_segments(16, 8, 6, 8);
  TrainConfig tc;
  tc.alpha = 0;
  tc.epochs = 3;
  tc.batch_size = 8;
  tc.seed = 4;
  const auto trained = train<double>(cfg, segs, {}, tc);

  // Shuffle, one-hot, forward, cross-entropy, Adam; nothing else draws from the stream.
  auto params = init_parameters<double>(cfg, tc.seed);
  AdamState<double> adam;
  Rng rng(tc.seed);
  std::vector<std::size_t> order(segs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += tc.batch_size) {
      const std::span<const std::size_t> idx(order.data() + start, tc.batch_size);
      std::vector<double> onehot(idx.size() * 4, 0.0);
      for (std::size_t i = 0; i < idx.size(); ++i) onehot[i * 4 + static_cast<std::size_t>(segs[idx[i]].label)] = 1;
      params.zero_grad();
      softmax_cross_entropy(glam_forward(make_batch<double>(segs, idx), params, cfg, Mode::train),
                            Tensor<double>({idx.size(), 4}, onehot))
          .backward();
      adam_step(params, adam, lr_at_epoch(epoch, tc), tc);
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    INFO(params.entries()[i].name);
    CHECK(values(params.entries()[i].tensor) == values(trained.params.entries()[i].tensor));
  }
}

TEST_CASE("validation snapshots keep the best mean of WA and UA") {
  const ModelConfig cfg = tiny_model();
  const auto segs = toy_segments(24, 8, 6, 9, 2.0);
  const auto val = toy_segments(12, 8, 6, 10, 2.0);
  TrainConfig tc;
  tc.epochs = 12;
  tc.batch_size = 8;
  tc.lr0 = 2e-3;
  tc.seed = 2;
  std::vector<EpochRecord> seen;
  auto r = train<float>(cfg, segs, val, tc, [&](const EpochRecord& e) { seen.push_back(e); });
  REQUIRE(seen.size() == 12);
  REQUIRE(r.best_epoch.has_value());
  std::size_t best = 0;
  for (std::size_t e = 0; e < seen.size(); ++e) {
    REQUIRE(seen[e].val_wa.has_value());
    const double score = 0.5 * (*seen[e].val_wa + *seen[e].val_ua);
    if (score > 0.5 * (*seen[best].val_wa + *seen[best].val_ua)) best = e;
    CHECK(seen[e].snapshot == (e == 0 || score > [&] {
            double m = -1;
            for (std::size_t k = 0; k < e; ++k) m = std::max(m, 0.5 * (*seen[k].val_wa + *seen[k].val_ua));
            return m;
          }()));
  }
  CHECK(*r.best_epoch == best);
  const auto probs = predict_probabilities(r.params, cfg, val);
  const auto report = evaluate_predictions(aggregate_predictions(val, probs), 4);
  CHECK(report.wa == *seen[best].val_wa);
  CHECK(report.ua == *seen[best].val_ua);
}

TEST_CASE("train errors") {
  const ModelConfig cfg = tiny_model();
  TrainConfig tc;
  tc.epochs = 1;
  CHECK_THROWS_AS(train<float>(cfg, {}, {}, tc), ConfigError);
  auto segs = toy_segments(8, 8, 6, 11);
  segs[3].features(2, 2) = std::numeric_limits<float>::quiet_NaN();
  try {
    train<float>(cfg, segs, {}, tc);
    FAIL("expected DivergenceError");
  } catch (const DivergenceError& e) {
    CHECK(std::string(e.what()).find("epoch 0") != std::string::npos);
  }
  auto bad_label = toy_segments(8, 8, 6, 12);
  bad_label[0].label = 4;
  CHECK_THROWS_AS(train<float>(cfg, bad_label, {}, tc), ValidationError);
}

TEST_CASE("history is written as JSON lines") {
  std::vector<EpochRecord> h(2);
  h[0] = {0, 1.5, 1e-4, 0.5, 0.25, true};
  h[1] = {1, 1.25, 9.5e-5, std::nullopt, std::nullopt, false};
  std::istringstream in(history_to_jsonl(h));
  std::string line;
  std::vector<nlohmann::json> rows;
  while (std::getline(in, line)) rows.push_back(nlohmann::json::parse(line));
  REQUIRE(rows.size() == 2);
  CHECK(rows[0]["epoch"] == 0);
  CHECK(rows[0]["loss"] == 1.5);
  CHECK(rows[0]["val_wa"] == 0.5);
  CHECK(rows[0]["snapshot"] == true);
  CHECK(rows[1]["val_ua"].is_null());
  CHECK(rows[1]["lr"] == 9.5e-5);
}
