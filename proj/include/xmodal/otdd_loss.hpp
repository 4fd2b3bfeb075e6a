#pragma once

#include <cstdint>
#include <vector>

#include "xmodal/otdd.hpp"
#include "xmodal/tensor.hpp"

namespace xmodal {

class Rng;

// Differentiable entropic OTDD used as the stage-2 training loss.
struct SinkhornLossConfig {
  double eps_rel = 0.05; // regularization relative to median ground cost
  int64_t max_iter = 300;
  double tol = 1e-6;
  int64_t subsample_size = 20; // b, applied within the minibatch
  int64_t rounds = 1;          // R for the in-step loss
  double var_floor = 1e-6;
};

// Entropic OT cost node with uniform marginals. Backward applies the
// fixed-plan envelope rule: dC = upstream * plan.
Tensor sinkhorn_cost(const Tensor& cost_matrix, double eps, int64_t max_iter,
                     double tol);

// C2[p,q] = C[p,q] + row[0, source_labels[q]].
Tensor add_label_row(const Tensor& feat_cost, const Tensor& label_row,
                     const std::vector<int64_t>& source_labels);

// Class-wise entropic OTDD between minibatch features [B x d] (on the graph)
// and a fixed proxy cloud. Gradients reach the features through both the
// feature cost and the target-side gaussian moments; proxy features are
// constants.
Tensor otdd_entropic_loss(const Tensor& features,
                          const std::vector<int64_t>& labels,
                          const FeatureCloud& proxy,
                          const SinkhornLossConfig& cfg, Rng& rng);

} // namespace xmodal
