#pragma once

#include <map>
#include <string>
#include <vector>

#include "ptee/param_store.hpp"

namespace ptee {

// Momentum SGD over a ParameterStore:
//   v <- momentum * v + grad
//   w <- w - lr * v
// Frozen entries and buffers are never touched. A NaN in any gradient aborts
// the step before a single parameter has been written.
class SgdOptimizer {
 public:
  SgdOptimizer(float learning_rate, float momentum)
      : learning_rate_(learning_rate), momentum_(momentum) {}

  void step(ParameterStore& params);
  static void zero_grads(ParameterStore& params) { params.zero_grads(); }

  float learning_rate() const { return learning_rate_; }
  float momentum() const { return momentum_; }

 private:
  float learning_rate_;
  float momentum_;
  std::map<std::string, std::vector<float>> velocity_;
};

}  // namespace ptee
