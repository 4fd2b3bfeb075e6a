#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xmodal/tensor.hpp"

namespace xmodal {

// Named trainable tensor. frozen=true excludes it from optimizer updates
// (gradients still flow through it).
struct Parameter {
  std::string name;
  Tensor tensor;
  bool frozen = false;
};

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

// Adam with decoupled weight decay. Moments are owned per parameter slot.
class AdamW {
 public:
  AdamW(std::vector<Parameter*> params, AdamWConfig cfg);

  void step();
  void zero_grad();
  const AdamWConfig& config() const { return cfg_; }

 private:
  struct State {
    std::vector<double> m;
    std::vector<double> v;
  };
  std::vector<Parameter*> params_;
  std::vector<State> state_;
  AdamWConfig cfg_;
  int64_t t_ = 0;
};

// FNV-1a over the raw little-endian bit patterns; bit-exact change detector.
uint64_t checksum(const std::vector<const Parameter*>& params);

} // namespace xmodal
