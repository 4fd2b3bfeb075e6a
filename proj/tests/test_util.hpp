#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "xmodal/rng.hpp"
#include "xmodal/tensor.hpp"

namespace xmodal::testutil {

inline std::vector<double> randn_vec(int64_t n, Rng& rng, double scale = 1.0) {
  std::vector<double> v(static_cast<size_t>(n));
  for (auto& x : v) x = scale * rng.normal();
  return v;
}

struct FdReport {
  double max_rel = 0.0;
  int64_t worst_index = -1;
  double analytic = 0.0, numeric = 0.0;
};

// Central finite differences on each element of every tensor in `leaves`
// against the grads populated by backward(loss_fn()). loss_fn must rebuild
// the graph from the leaves' current data on every call.
inline FdReport fd_check(const std::function<Tensor()>& loss_fn,
                         const std::vector<Tensor>& leaves, double h = 1e-5,
                         double abs_floor = 1e-8) {
  for (const Tensor& leaf : leaves) {
    Tensor mut = leaf;
    mut.zero_grad();
  }
  Tensor loss = loss_fn();
  backward(loss);
  FdReport rep;
  for (const Tensor& leaf : leaves) {
    std::vector<double> grad = leaf.grad();
    if (grad.empty()) grad.assign(leaf.data().size(), 0.0);
    Tensor mut = leaf;
    for (size_t i = 0; i < mut.data().size(); ++i) {
      double orig = mut.data()[i];
      mut.data()[i] = orig + h;
      double up;
      {
        NoGradGuard ng;
        up = loss_fn().item();
      }
      mut.data()[i] = orig - h;
      double dn;
      {
        NoGradGuard ng;
        dn = loss_fn().item();
      }
      mut.data()[i] = orig;
      double numeric = (up - dn) / (2 * h);
      double denom = std::max({std::fabs(numeric), std::fabs(grad[i]), abs_floor});
      double rel = std::fabs(numeric - grad[i]) / denom;
      if (std::fabs(numeric - grad[i]) <= abs_floor) rel = 0.0;
      if (rel > rep.max_rel) {
        rep.max_rel = rel;
        rep.worst_index = static_cast<int64_t>(i);
        rep.analytic = grad[i];
        rep.numeric = numeric;
      }
    }
  }
  return rep;
}

} // namespace xmodal::testutil
