#include "ptee/sgd.hpp"

#include <cmath>

namespace ptee {

void SgdOptimizer::step(ParameterStore& params) {
  // Validation pass first: the step must leave every parameter untouched if
  // any gradient is not finite.
  for (const auto& [name, e] : params.entries()) {
    if (e.frozen || e.buffer || !e.tensor.has_grad()) continue;
    for (float g : e.tensor.grad())
      if (!std::isfinite(g))
        throw Error("optimizer", "non-finite gradient in '" + name + "'; step aborted");
  }

  for (auto& [name, e] : params.entries()) {
    if (e.frozen || e.buffer || !e.tensor.has_grad()) continue;
    auto& v = velocity_[name];
    if (v.empty()) v.assign(static_cast<std::size_t>(e.tensor.numel()), 0.0f);
    const auto g = e.tensor.grad();
    auto w = e.tensor.values_mut();
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] = momentum_ * v[i] + g[i];
      w[i] -= learning_rate_ * v[i];
    }
  }
}

}  // namespace ptee
