#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace xmodal {

// All task metrics are oriented so lower is better.
struct MetricResult {
  std::string name;
  double value = 0.0;
  int64_t count = 0;
  int64_t degenerate_labels = 0; // AUROC labels lacking both classes
};

MetricResult zero_one_error(const std::vector<int64_t>& pred,
                            const std::vector<int64_t>& truth);

// Macro 1 - AUROC over labels; ties count 1/2 (Mann-Whitney). Labels with
// only positives or only negatives are skipped and counted as degenerate.
MetricResult one_minus_auroc(const std::vector<double>& scores,
                             const std::vector<double>& labels, int64_t n,
                             int64_t L);

// 1 - macro F1 over K classes; per-class F1 is 0 when P + R = 0.
MetricResult one_minus_f1(const std::vector<int64_t>& pred,
                          const std::vector<int64_t>& truth, int64_t K);

// Mean over batch of ||pred - target||_2 / ||target||_2.
MetricResult relative_l2(const std::vector<double>& pred,
                         const std::vector<double>& target, int64_t batch);

} // namespace xmodal
