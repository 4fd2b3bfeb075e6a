#include "xmodal/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace xmodal {

MetricResult zero_one_error(const std::vector<int64_t>& pred,
                            const std::vector<int64_t>& truth) {
  if (pred.empty()) throw std::invalid_argument("zero_one_error: empty input");
  if (pred.size() != truth.size())
    throw std::invalid_argument("zero_one_error: length mismatch");
  int64_t wrong = 0;
  for (size_t i = 0; i < pred.size(); ++i)
    if (pred[i] != truth[i]) ++wrong;
  return {"zero_one_error", static_cast<double>(wrong) / pred.size(),
          static_cast<int64_t>(pred.size()), 0};
}

namespace {

// AUROC of one label via midranks: (R_pos - n_pos(n_pos+1)/2) / (n_pos*n_neg).
double auroc_one(const double* scores, const double* labels, int64_t n,
                 int64_t stride, int64_t offset, bool* degenerate) {
  std::vector<int64_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  auto score_at = [&](int64_t i) { return scores[i * stride + offset]; };
  std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
    return score_at(a) < score_at(b);
  });
  int64_t n_pos = 0;
  for (int64_t i = 0; i < n; ++i)
    if (labels[i * stride + offset] > 0.5) ++n_pos;
  int64_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    *degenerate = true;
    return 0.0;
  }
  *degenerate = false;
  double rank_sum_pos = 0.0;
  int64_t i = 0;
  while (i < n) {
    int64_t j = i;
    while (j < n && score_at(order[j]) == score_at(order[i])) ++j;
    double midrank = 0.5 * (i + 1 + j); // average of ranks i+1 .. j
    for (int64_t t = i; t < j; ++t)
      if (labels[order[t] * stride + offset] > 0.5) rank_sum_pos += midrank;
    i = j;
  }
  double u = rank_sum_pos - 0.5 * n_pos * (n_pos + 1);
  return u / (static_cast<double>(n_pos) * n_neg);
}

} // namespace

MetricResult one_minus_auroc(const std::vector<double>& scores,
                             const std::vector<double>& labels, int64_t n,
                             int64_t L) {
  if (n < 2) throw std::invalid_argument("one_minus_auroc: need n >= 2");
  if (static_cast<int64_t>(scores.size()) != n * L ||
      static_cast<int64_t>(labels.size()) != n * L)
    throw std::invalid_argument("one_minus_auroc: size mismatch");
  double acc = 0.0;
  int64_t used = 0, degenerate = 0;
  for (int64_t l = 0; l < L; ++l) {
    bool degen = false;
    double a = auroc_one(scores.data(), labels.data(), n, L, l, &degen);
    if (degen) {
      ++degenerate;
    } else {
      acc += a;
      ++used;
    }
  }
  if (used == 0)
    throw std::invalid_argument("one_minus_auroc: all labels degenerate");
  return {"one_minus_auroc", 1.0 - acc / used, n, degenerate};
}

MetricResult one_minus_f1(const std::vector<int64_t>& pred,
                          const std::vector<int64_t>& truth, int64_t K) {
  if (pred.empty()) throw std::invalid_argument("one_minus_f1: empty input");
  if (pred.size() != truth.size())
    throw std::invalid_argument("one_minus_f1: length mismatch");
  std::vector<int64_t> tp(static_cast<size_t>(K), 0),
      fp(static_cast<size_t>(K), 0), fn(static_cast<size_t>(K), 0);
  for (size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] == truth[i]) ++tp[pred[i]];
    else {
      ++fp[pred[i]];
      ++fn[truth[i]];
    }
  }
  double macro = 0.0;
  for (int64_t k = 0; k < K; ++k) {
    double denom = 2.0 * tp[k] + fp[k] + fn[k];
    macro += denom > 0.0 ? 2.0 * tp[k] / denom : 0.0;
  }
  macro /= K;
  return {"one_minus_f1", 1.0 - macro, static_cast<int64_t>(pred.size()), 0};
}

MetricResult relative_l2(const std::vector<double>& pred,
                         const std::vector<double>& target, int64_t batch) {
  if (pred.size() != target.size() || pred.empty() || batch < 1)
    throw std::invalid_argument("relative_l2: size mismatch or empty");
  int64_t per = static_cast<int64_t>(pred.size()) / batch;
  double acc = 0.0;
  for (int64_t b = 0; b < batch; ++b) {
    double num = 0.0, den = 0.0;
    for (int64_t t = 0; t < per; ++t) {
      double d = pred[b * per + t] - target[b * per + t];
      num += d * d;
      den += target[b * per + t] * target[b * per + t];
    }
    if (den == 0.0)
      throw std::invalid_argument("relative_l2: zero-norm target sample");
    acc += std::sqrt(num) / std::sqrt(den);
  }
  return {"relative_l2", acc / batch, batch, 0};
}

} // namespace xmodal
