#pragma once

#include <vector>

#include "cqsched/nncore/param.hpp"

namespace cqsched::nn {

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Standard Adam over a fixed set of parameters.  First/second moment state
// lives with the optimizer, so separate optimization phases over overlapping
// parameter sets keep independent state.
class Adam {
 public:
  Adam(std::vector<Param*> params, AdamConfig cfg = {});

  // One update from the gradients currently stored on the parameters.
  void step();
  void set_lr(double lr) { cfg_.lr = lr; }
  double lr() const { return cfg_.lr; }
  int64_t steps_taken() const { return t_; }

 private:
  std::vector<Param*> params_;
  std::vector<Tensor> m_, v_;
  AdamConfig cfg_;
  int64_t t_ = 0;
};

}  // namespace cqsched::nn
