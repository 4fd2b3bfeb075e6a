#include "xmodal/otdd_loss.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <stdexcept>

#include "xmodal/rng.hpp"

namespace xmodal {

Tensor sinkhorn_cost(const Tensor& cost_matrix, double eps, int64_t max_iter,
                     double tol) {
  if (cost_matrix.rank() != 2)
    throw std::invalid_argument("sinkhorn_cost expects a cost matrix");
  int64_t n = cost_matrix.dim(0), m = cost_matrix.dim(1);
  std::vector<double> mu(static_cast<size_t>(n), 1.0 / n);
  std::vector<double> nu(static_cast<size_t>(m), 1.0 / m);
  auto res = ot_entropic(cost_matrix.data(), mu, nu, n, m, eps, max_iter, tol);
  auto plan = std::make_shared<std::vector<double>>(std::move(res.plan));
  auto* ci = cost_matrix.impl().get();
  return detail::make_node({1}, {res.cost}, {cost_matrix},
                           [ci, plan](TensorImpl& self) {
                             if (!ci->requires_grad) return;
                             ci->ensure_grad();
                             double g = self.grad[0];
                             for (size_t i = 0; i < plan->size(); ++i)
                               ci->grad[i] += g * (*plan)[i];
                           });
}

Tensor add_label_row(const Tensor& feat_cost, const Tensor& label_row,
                     const std::vector<int64_t>& source_labels) {
  int64_t n = feat_cost.dim(0), m = feat_cost.dim(1);
  if (static_cast<int64_t>(source_labels.size()) != m)
    throw std::invalid_argument("add_label_row: source label count mismatch");
  int64_t Ks = label_row.numel();
  std::vector<double> out(feat_cost.data());
  for (int64_t p = 0; p < n; ++p)
    for (int64_t q = 0; q < m; ++q)
      out[p * m + q] += label_row.data()[source_labels[q]];
  auto* fi = feat_cost.impl().get();
  auto* li = label_row.impl().get();
  auto sl = std::make_shared<std::vector<int64_t>>(source_labels);
  return detail::make_node(
      feat_cost.shape(), std::move(out), {feat_cost, label_row},
      [fi, li, sl, n, m, Ks](TensorImpl& self) {
        if (fi->requires_grad) {
          fi->ensure_grad();
          for (size_t i = 0; i < self.grad.size(); ++i)
            fi->grad[i] += self.grad[i];
        }
        if (li->requires_grad) {
          li->ensure_grad();
          for (int64_t p = 0; p < n; ++p)
            for (int64_t q = 0; q < m; ++q)
              li->grad[(*sl)[q]] += self.grad[p * m + q];
        }
      });
}

Tensor otdd_entropic_loss(const Tensor& features,
                          const std::vector<int64_t>& labels,
                          const FeatureCloud& proxy,
                          const SinkhornLossConfig& cfg, Rng& rng) {
  if (features.rank() != 2)
    throw std::invalid_argument("otdd_entropic_loss expects [batch x d]");
  int64_t B = features.dim(0);
  if (static_cast<int64_t>(labels.size()) != B)
    throw std::invalid_argument("otdd_entropic_loss: label count mismatch");
  proxy.validate();

  auto pm = class_moments(proxy, cfg.var_floor);
  std::map<int64_t, std::vector<int64_t>> by_class;
  for (int64_t i = 0; i < B; ++i) by_class[labels[i]].push_back(i);

  Tensor loss = Tensor::scalar(0.0);
  for (const auto& [cls, idx] : by_class) {
    double w = static_cast<double>(idx.size()) / static_cast<double>(B);
    int64_t b = std::min<int64_t>(cfg.subsample_size,
                                  static_cast<int64_t>(idx.size()));
    Tensor class_loss = Tensor::scalar(0.0);
    for (int64_t r = 0; r < cfg.rounds; ++r) {
      std::vector<int64_t> pick;
      if (b == static_cast<int64_t>(idx.size())) {
        pick = idx;
      } else {
        for (int64_t t :
             rng.sample_without_replacement(static_cast<int64_t>(idx.size()), b))
          pick.push_back(idx[t]);
      }
      Tensor sub = gather_rows(features, pick);
      Tensor mu = col_mean(sub);
      Tensor sig = col_sigma(sub, cfg.var_floor);
      Tensor label_row = add(pairwise_sqdist_const(mu, pm.mu, pm.K),
                             pairwise_sqdist_const(sig, pm.sigma, pm.K));
      Tensor feat_cost =
          pairwise_sqdist_const(sub, proxy.features, proxy.n);
      Tensor C = add_label_row(feat_cost, label_row, proxy.labels);
      double eps = std::max(cfg.eps_rel * median_of(C.data()), 1e-9);
      class_loss = add(class_loss, sinkhorn_cost(C, eps, cfg.max_iter, cfg.tol));
    }
    loss = add(loss, scale(class_loss, w / cfg.rounds));
  }
  return loss;
}

} // namespace xmodal
