#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "xmodal/metrics.hpp"
#include "xmodal/rng.hpp"

#include "test_util.hpp"

using namespace xmodal;
using testutil::randn_vec;

namespace {

// O(n^2) Mann-Whitney AUROC with half-credit for tied scores.
double pairwise_auroc(const std::vector<double>& s,
                      const std::vector<int>& y) {
  double wins = 0.0;
  int64_t pairs = 0;
  for (size_t i = 0; i < s.size(); ++i)
    for (size_t j = 0; j < s.size(); ++j) {
      if (y[i] != 1 || y[j] != 0) continue;
      ++pairs;
      if (s[i] > s[j]) wins += 1.0;
      else if (s[i] == s[j]) wins += 0.5;
    }
  return wins / pairs;
}

// Macro F1 from an explicitly built confusion matrix.
double confusion_f1(const std::vector<int64_t>& pred,
                    const std::vector<int64_t>& truth, int64_t K) {
  std::vector<std::vector<int64_t>> cm(K, std::vector<int64_t>(K, 0));
  for (size_t i = 0; i < pred.size(); ++i) ++cm[truth[i]][pred[i]];
  double acc = 0.0;
  for (int64_t k = 0; k < K; ++k) {
    int64_t tp = cm[k][k], row = 0, col = 0;
    for (int64_t j = 0; j < K; ++j) {
      row += cm[k][j];
      col += cm[j][k];
    }
    double denom = static_cast<double>(row + col);
    acc += denom > 0 ? 2.0 * tp / denom : 0.0;
  }
  return acc / K;
}

} // namespace

TEST_CASE("zero_one_error basics") {
  CHECK(zero_one_error({1, 2, 3}, {1, 2, 3}).value == 0.0);
  CHECK(zero_one_error({0, 0, 0}, {1, 2, 3}).value == 1.0);
  MetricResult r = zero_one_error({0, 1, 1, 0, 2, 2, 0, 1},
                                  {0, 1, 0, 0, 1, 2, 2, 1});
  CHECK(r.value == doctest::Approx(3.0 / 8.0));
  CHECK(r.count == 8);
  CHECK_THROWS(zero_one_error({}, {}));
  CHECK_THROWS(zero_one_error({1}, {1, 2}));
}

TEST_CASE("one_minus_auroc: perfect, chance, and exact pairwise agreement") {
  // perfectly separated scores
  MetricResult perfect = one_minus_auroc({0.1, 0.2, 0.8, 0.9},
                                         {0, 0, 1, 1}, 4, 1);
  CHECK(perfect.value == doctest::Approx(0.0));

  // random scores against random labels hover near 0.5
  Rng rng(11);
  int64_t n = 2000;
  std::vector<double> scores = randn_vec(n, rng);
  std::vector<double> labels(n);
  for (auto& v : labels) v = rng.uniform() < 0.5 ? 1.0 : 0.0;
  CHECK(std::fabs(one_minus_auroc(scores, labels, n, 1).value - 0.5) < 0.05);

  // exact match with the O(n^2) oracle, including deliberate ties
  for (uint64_t seed : {1u, 2u, 3u}) {
    Rng r2(seed);
    int64_t m = 60;
    std::vector<double> s(m);
    std::vector<int> y(m);
    std::vector<double> yd(m);
    for (int64_t i = 0; i < m; ++i) {
      s[i] = std::floor(r2.uniform() * 10) / 10.0; // quantized => tie-heavy
      y[i] = r2.uniform() < 0.4 ? 1 : 0;
      yd[i] = y[i];
    }
    double fast = 1.0 - one_minus_auroc(s, yd, m, 1).value;
    CHECK(fast == doctest::Approx(pairwise_auroc(s, y)).epsilon(1e-12));
  }
}

TEST_CASE("one_minus_auroc: degenerate labels skipped, all-degenerate error") {
  // two labels; second has positives only and must be skipped
  std::vector<double> scores = {0.1, 0.9, 0.5, 0.2, 0.4, 0.6};
  std::vector<double> labels = {0, 1, 1, 1, 0, 1};
  MetricResult r = one_minus_auroc(scores, labels, 3, 2);
  CHECK(r.degenerate_labels == 1);
  MetricResult only = one_minus_auroc({0.1, 0.9, 0.5}, {0, 1, 1}, 3, 1);
  CHECK(r.value == doctest::Approx(only.value));

  CHECK_THROWS(one_minus_auroc({0.1, 0.9}, {1, 1}, 2, 1));
}

TEST_CASE("one_minus_auroc is invariant under monotone score transforms") {
  Rng rng(5);
  int64_t n = 100;
  std::vector<double> s = randn_vec(n, rng);
  std::vector<double> y(n);
  for (auto& v : y) v = rng.uniform() < 0.5 ? 1.0 : 0.0;
  double base = one_minus_auroc(s, y, n, 1).value;
  std::vector<double> warped(n);
  for (int64_t i = 0; i < n; ++i) warped[i] = std::exp(3.0 * s[i]) - 7.0;
  CHECK(one_minus_auroc(warped, y, n, 1).value ==
        doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("one_minus_f1: perfect, collapsed, and confusion-matrix oracle") {
  CHECK(one_minus_f1({0, 1, 2, 0}, {0, 1, 2, 0}, 3).value ==
        doctest::Approx(0.0));

  // predicting class 0 always, truth balanced over 2 classes of 2 each:
  // class 0: P = 1/2, R = 1, F1 = 2/3; class 1: F1 = 0; macro = 1/3
  CHECK(one_minus_f1({0, 0, 0, 0}, {0, 1, 0, 1}, 2).value ==
        doctest::Approx(1.0 - 1.0 / 3.0));

  Rng rng(7);
  for (int rep = 0; rep < 5; ++rep) {
    int64_t n = 80, K = 4;
    std::vector<int64_t> pred(n), truth(n);
    for (int64_t i = 0; i < n; ++i) {
      pred[i] = rng.uniform_int(K);
      truth[i] = rng.uniform_int(K);
    }
    CHECK(one_minus_f1(pred, truth, K).value ==
          doctest::Approx(1.0 - confusion_f1(pred, truth, K)).epsilon(1e-12));
  }
}

TEST_CASE("one_minus_f1 is invariant under class relabeling") {
  Rng rng(9);
  int64_t n = 60, K = 3;
  std::vector<int64_t> pred(n), truth(n);
  for (int64_t i = 0; i < n; ++i) {
    pred[i] = rng.uniform_int(K);
    truth[i] = rng.uniform_int(K);
  }
  double base = one_minus_f1(pred, truth, K).value;
  std::vector<int64_t> perm = {2, 0, 1};
  std::vector<int64_t> pred2(n), truth2(n);
  for (int64_t i = 0; i < n; ++i) {
    pred2[i] = perm[pred[i]];
    truth2[i] = perm[truth[i]];
  }
  CHECK(one_minus_f1(pred2, truth2, K).value ==
        doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("relative_l2: exact values and formula oracle") {
  CHECK(relative_l2({1, 2, 3}, {1, 2, 3}, 1).value == doctest::Approx(0.0));
  CHECK(relative_l2({0, 0}, {3, 4}, 1).value == doctest::Approx(1.0));

  Rng rng(13);
  std::vector<double> pred = randn_vec(8, rng), tgt = randn_vec(8, rng);
  double expect = 0.0;
  for (int b = 0; b < 2; ++b) {
    double num = 0.0, den = 0.0;
    for (int t = 0; t < 4; ++t) {
      double d = pred[b * 4 + t] - tgt[b * 4 + t];
      num += d * d;
      den += tgt[b * 4 + t] * tgt[b * 4 + t];
    }
    expect += std::sqrt(num / den);
  }
  CHECK(relative_l2(pred, tgt, 2).value ==
        doctest::Approx(expect / 2.0).epsilon(1e-12));

  CHECK_THROWS(relative_l2({1, 1}, {0, 0}, 1)); // zero-norm target
}
