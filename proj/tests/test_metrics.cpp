#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "doctest.h"
#include "glam/error.hpp"
#include "glam/metrics.hpp"

using namespace glam;

namespace {

struct Oracle {
  double wa, ua, macro_f1, micro_f1;
  std::vector<std::vector<std::uint64_t>> counts;
};

// Counts straight from the label lists; F1 as 2TP / (2TP + FP + FN).
Oracle brute_force(const std::vector<int>& truth, const std::vector<int>& pred, int k) {
  Oracle o{};
  o.counts.assign(k, std::vector<std::uint64_t>(k, 0));
  std::uint64_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    ++o.counts[truth[i]][pred[i]];
    correct += truth[i] == pred[i];
  }
  const double n = static_cast<double>(truth.size());
  o.wa = static_cast<double>(correct) / n;
  double recall_sum = 0, f1_sum = 0;
  int present = 0, seen = 0;
  std::uint64_t tp_all = 0, fp_all = 0, fn_all = 0;
  for (int c = 0; c < k; ++c) {
    std::uint64_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      if (truth[i] == c && pred[i] == c) ++tp;
      if (truth[i] != c && pred[i] == c) ++fp;
      if (truth[i] == c && pred[i] != c) ++fn;
    }
    tp_all += tp;
    fp_all += fp;
    fn_all += fn;
    if (tp + fn > 0) {
      ++present;
      recall_sum += static_cast<double>(tp) / static_cast<double>(tp + fn);
    }
    if (tp + fn + fp > 0) {
      ++seen;
      f1_sum += 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
    }
  }
  o.ua = recall_sum / present;
  o.macro_f1 = f1_sum / seen;
  o.micro_f1 = 2.0 * static_cast<double>(tp_all) / static_cast<double>(2 * tp_all + fp_all + fn_all);
  return o;
}

}  // namespace

TEST_CASE("aggregate_utterance") {
  const std::vector<std::vector<double>> two{{0.6, 0.4}, {0.2, 0.8}};
  const auto mean = aggregate_utterance(two);
  CHECK(mean[0] == doctest::Approx(0.4));
  CHECK(mean[1] == doctest::Approx(0.6));
  CHECK(argmax(mean) == 1);

  const std::vector<std::vector<double>> one{{0.1, 0.7, 0.2}};
  CHECK(aggregate_utterance(one) == one[0]);

  std::vector<std::vector<double>> many{{0.1, 0.2, 0.3, 0.4}, {0.5, 0.25, 0.125, 0.125}, {0.7, 0.1, 0.1, 0.1}};
  const auto before = aggregate_utterance(many);
  std::reverse(many.begin(), many.end());
  const auto after = aggregate_utterance(many);
  for (std::size_t k = 0; k < 4; ++k) CHECK(after[k] == doctest::Approx(before[k]).epsilon(1e-15));
  double total = 0;
  for (double v : after) total += v;
  CHECK(total == doctest::Approx(1.0));

  CHECK_THROWS_AS(aggregate_utterance(std::vector<std::vector<double>>{}), ValidationError);
  CHECK(argmax(std::vector<double>{0.3, 0.3, 0.2}) == 0);
  CHECK(argmax(std::vector<double>{0.2, 0.4, 0.4}) == 1);
}

TEST_CASE("aggregation argmax survives a shared positive rescaling") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::vector<double>> segs(1 + trial % 5, std::vector<double>(4));
    for (auto& s : segs) {
      double t = 0;
      for (auto& v : s) t += v = u(rng);
      for (auto& v : s) v /= t;
    }
    const double c = 0.1 + u(rng) * 10;
    auto scaled = segs;
    for (auto& s : scaled)
      for (auto& v : s) v *= c;
    CHECK(argmax(aggregate_utterance(scaled)) == argmax(aggregate_utterance(segs)));
  }
}

TEST_CASE("compute_metrics hand-counted examples") {
  const std::vector<int> t{0, 1, 2, 3, 0, 1};
  const auto perfect = compute_metrics(t, t, 4);
  CHECK(perfect.wa == 1.0);
  CHECK(perfect.ua == 1.0);
  CHECK(perfect.macro_f1 == 1.0);
  CHECK(perfect.micro_f1 == 1.0);

  // Confusion [[2,0],[1,1]].
  const auto two = compute_metrics(std::vector<int>{0, 0, 1, 1}, std::vector<int>{0, 0, 0, 1}, 2);
  CHECK(two.wa == 0.75);
  CHECK(two.ua == 0.75);
  CHECK(two.micro_f1 == 0.75);
  CHECK(two.macro_f1 == doctest::Approx((0.8 + 2.0 / 3.0) / 2).epsilon(1e-12));
  CHECK(two.confusion(1, 0) == 1);

  const std::vector<int> balanced{0, 1, 2, 3, 0, 1, 2, 3};
  const auto all_zero = compute_metrics(balanced, std::vector<int>(8, 0), 4);
  CHECK(all_zero.wa == 0.25);
  CHECK(all_zero.ua == 0.25);
  CHECK(all_zero.macro_f1 == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(all_zero.n_utterances == 8);

  CHECK_THROWS_AS(compute_metrics(std::vector<int>{0, 1}, std::vector<int>{0}, 4), ValidationError);
  CHECK_THROWS_AS(compute_metrics(std::vector<int>{0, 4}, std::vector<int>{0, 1}, 4), ValidationError);
  CHECK_THROWS_AS(compute_metrics(std::vector<int>{0, -1}, std::vector<int>{0, 1}, 4), ValidationError);
}

TEST_CASE("compute_metrics agrees with brute-force counting on random labels") {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> len(1, 200), label(0, 3);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = len(rng);
    std::vector<int> truth(n), pred(n);
    for (auto& v : truth) v = label(rng);
    for (auto& v : pred) v = label(rng);
    const auto r = compute_metrics(truth, pred, 4);
    const auto o = brute_force(truth, pred, 4);
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) REQUIRE(r.confusion(i, j) == o.counts[i][j]);
    CHECK(r.confusion.total() == static_cast<std::uint64_t>(n));
    CHECK(std::abs(r.wa - o.wa) <= 1e-12);
    CHECK(std::abs(r.ua - o.ua) <= 1e-12);
    CHECK(std::abs(r.macro_f1 - o.macro_f1) <= 1e-12);
    CHECK(std::abs(r.micro_f1 - o.micro_f1) <= 1e-12);
    CHECK(r.micro_f1 == r.wa);
    for (double m : {r.wa, r.ua, r.macro_f1, r.micro_f1}) {
      CHECK(m >= 0);
      CHECK(m <= 1);
    }
    const auto from_cm = metrics_from_confusion(r.confusion);
    CHECK(from_cm.wa == r.wa);
    CHECK(from_cm.ua == r.ua);
    CHECK(from_cm.macro_f1 == r.macro_f1);
    CHECK(from_cm.micro_f1 == r.micro_f1);
  }
}

TEST_CASE("WA equals UA for a uniform true-label distribution") {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> label(0, 3);
  for (int trial = 0; trial < 200; ++trial) {
    const int per_class = 1 + trial % 7;
    std::vector<int> truth, pred;
    for (int c = 0; c < 4; ++c)
      for (int i = 0; i < per_class; ++i) truth.push_back(c);
    for (std::size_t i = 0; i < truth.size(); ++i) pred.push_back(label(rng));
    const auto r = compute_metrics(truth, pred, 4);
    CHECK(std::abs(r.wa - r.ua) <= 1e-12);
  }
}

TEST_CASE("UA skips absent classes and macro-F1 counts predicted-only classes") {
  const auto r = compute_metrics(std::vector<int>{0, 0, 1}, std::vector<int>{0, 2, 1}, 4);
  CHECK(r.ua == doctest::Approx((0.5 + 1.0) / 2));
  CHECK(r.macro_f1 == doctest::Approx((2.0 / 3.0 + 1.0 + 0.0) / 3));
}

TEST_CASE("aggregate_predictions groups segments by utterance") {
  std::vector<FeatureSegment> segs(5);
  const char* ids[] = {"b", "a", "b", "a", "c"};
  const int labels[] = {1, 0, 1, 0, 2};
  for (int i = 0; i < 5; ++i) {
    segs[i].utterance_id = ids[i];
    segs[i].label = labels[i];
  }
  const std::vector<std::vector<double>> probs{
      {0.1, 0.6, 0.2, 0.1}, {0.7, 0.1, 0.1, 0.1}, {0.1, 0.2, 0.6, 0.1}, {0.1, 0.5, 0.2, 0.2}, {0.0, 0.0, 1.0, 0.0}};
  const auto preds = aggregate_predictions(segs, probs);
  REQUIRE(preds.size() == 3);
  CHECK(preds[0].utterance_id == "b");
  CHECK(preds[0].probs[1] == doctest::Approx(0.4));
  CHECK(preds[0].probs[2] == preds[0].probs[1]);
  CHECK(preds[0].predicted == 1);  // tie goes to the lower index
  CHECK(preds[1].utterance_id == "a");
  CHECK(preds[1].predicted == 0);
  CHECK(preds[2].predicted == 2);
  const auto report = evaluate_predictions(preds, 4);
  CHECK(report.n_utterances == 3);
}

TEST_CASE("make_splits") {
  const auto holdout = make_splits(10, SplitMode::holdout_80_20, 3, 42);
  REQUIRE(holdout.size() == 3);
  for (const auto& s : holdout) {
    CHECK(s.train.size() == 8);
    CHECK(s.val.empty());
    CHECK(s.test.size() == 2);
    std::set<std::size_t> all(s.train.begin(), s.train.end());
    all.insert(s.test.begin(), s.test.end());
    CHECK(all.size() == 10);
    CHECK(*all.rbegin() == 9);
  }
  const auto ratio = make_splits(10, SplitMode::ratio_8_1_1, 2, 42);
  for (const auto& s : ratio) {
    CHECK(s.train.size() == 8);
    CHECK(s.val.size() == 1);
    CHECK(s.test.size() == 1);
    std::set<std::size_t> all(s.train.begin(), s.train.end());
    all.insert(s.val.begin(), s.val.end());
    all.insert(s.test.begin(), s.test.end());
    CHECK(all.size() == 10);
  }
  const auto again = make_splits(10, SplitMode::holdout_80_20, 3, 42);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(again[i].train == holdout[i].train);
    CHECK(again[i].test == holdout[i].test);
    // Run i is seeded with seed + i.
    CHECK(make_splits(10, SplitMode::holdout_80_20, 1, 42 + i)[0].train == holdout[i].train);
  }
  CHECK(holdout[0].train != holdout[1].train);
  for (std::size_t n : {10, 37, 100, 101}) {
    const auto s = make_splits(n, SplitMode::ratio_8_1_1, 1, 0)[0];
    CHECK(s.train.size() + s.val.size() + s.test.size() == n);
  }
  CHECK_THROWS_AS(make_splits(1, SplitMode::holdout_80_20, 1, 0), ConfigError);
  CHECK_THROWS_AS(make_splits(0, SplitMode::holdout_80_20, 1, 0), ConfigError);
  CHECK_THROWS_AS(make_splits(3, SplitMode::ratio_8_1_1, 1, 0), ConfigError);
  CHECK_THROWS_AS(make_splits(5, SplitMode::ratio_8_1_1, 1, 0), ConfigError);  // 4 / 1 / 0
  CHECK(parse_split_mode("holdout") == SplitMode::holdout_80_20);
  CHECK(parse_split_mode("ratio811") == SplitMode::ratio_8_1_1);
  CHECK_THROWS_AS(parse_split_mode("kfold"), ConfigError);
}

TEST_CASE("summarize") {
  std::vector<MetricsReport> runs(1);
  runs[0].wa = 0.8;
  const auto single = summarize(runs);
  CHECK(single.n_runs == 1);
  CHECK(single.degenerate);
  CHECK(single.wa.stddev == 0);
  CHECK(single.wa.mean == 0.8);

  runs.resize(4);
  const double was[] = {0.8, 0.9, 0.7, 0.6};
  for (int i = 0; i < 4; ++i) {
    runs[i].wa = was[i];
    runs[i].ua = 1.0 - was[i];
  }
  const auto s = summarize(runs);
  CHECK(s.n_runs == 4);
  CHECK(!s.degenerate);
  const double mean = (0.8 + 0.9 + 0.7 + 0.6) / 4;
  double ss = 0;
  for (double w : was) ss += (w - mean) * (w - mean);
  CHECK(s.wa.mean == doctest::Approx(mean).epsilon(1e-15));
  CHECK(s.wa.stddev == doctest::Approx(std::sqrt(ss / 3)).epsilon(1e-12));
  CHECK(s.wa.min == 0.6);
  CHECK(s.wa.max == 0.9);
  for (const auto* m : {&s.wa, &s.ua, &s.macro_f1, &s.micro_f1}) {
    CHECK(m->mean >= m->min);
    CHECK(m->mean <= m->max);
    CHECK(m->stddev >= 0);
  }
  const auto j = s.to_json();
  CHECK(j["n_runs"] == 4);
  CHECK(j["wa"]["mean"].get<double>() == s.wa.mean);
}

TEST_CASE("confusion matrix output") {
  ConfusionMatrix cm(2, {"angry", "sad"});
  cm.add(0, 0);
  cm.add(0, 1);
  cm.add(1, 1);
  CHECK(cm.total() == 3);
  const auto j = cm.to_json();
  CHECK(j["classes"][1] == "sad");
  CHECK(j["counts"][0][1] == 1);
  const std::string text = cm.to_text();
  CHECK(text.find("angry") != std::string::npos);
  CHECK(std::count(text.begin(), text.end(), '\n') == 3);
  CHECK_THROWS_AS(cm.add(2, 0), ValidationError);
  CHECK_THROWS_AS(ConfusionMatrix(3, {"a"}), ValidationError);
}
