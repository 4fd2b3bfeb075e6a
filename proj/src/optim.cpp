#include "xmodal/optim.hpp"

#include <cmath>
#include <cstring>

namespace xmodal {

AdamW::AdamW(std::vector<Parameter*> params, AdamWConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  state_.resize(params_.size());
  for (size_t i = 0; i < params_.size(); ++i) {
    size_t n = params_[i]->tensor.data().size();
    state_[i].m.assign(n, 0.0);
    state_[i].v.assign(n, 0.0);
  }
}

void AdamW::step() {
  ++t_;
  double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (size_t p = 0; p < params_.size(); ++p) {
    Parameter* param = params_[p];
    if (param->frozen) continue;
    auto& g = param->tensor.grad();
    if (g.empty()) continue;
    auto& x = param->tensor.data();
    auto& st = state_[p];
    for (size_t i = 0; i < x.size(); ++i) {
      st.m[i] = cfg_.beta1 * st.m[i] + (1.0 - cfg_.beta1) * g[i];
      st.v[i] = cfg_.beta2 * st.v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      double mhat = st.m[i] / bc1;
      double vhat = st.v[i] / bc2;
      x[i] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) +
                         cfg_.weight_decay * x[i]);
    }
  }
}

void AdamW::zero_grad() {
  for (Parameter* p : params_) p->tensor.zero_grad();
}

uint64_t checksum(const std::vector<const Parameter*>& params) {
  uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const void* bytes, size_t n) {
    const auto* b = static_cast<const uint8_t*>(bytes);
    for (size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ull;
    }
  };
  for (const Parameter* p : params) {
    mix(p->name.data(), p->name.size());
    mix(p->tensor.data().data(), p->tensor.data().size() * sizeof(double));
  }
  return h;
}

} // namespace xmodal
