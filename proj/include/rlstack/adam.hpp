#pragma once

#include <cmath>
#include <cstdint>

#include "rlstack/tensor.hpp"

namespace rlstack {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::uint64_t step = 0;
  ParamSet m;
  ParamSet v;
};

/// Adam with bias correction.
class Adam {
 public:
  Adam() = default;
  Adam(const ParamSet& params, AdamConfig cfg) : cfg_(cfg) {
    state_.m = params.zeros_like();
    state_.v = params.zeros_like();
  }

  void step(ParamSet& params, const GradSet& grads) {
    if (!params.same_shapes(grads) || !params.same_shapes(state_.m))
      throw NumericError("adam: parameter/gradient shape mismatch");
    if (!grads.all_finite()) throw NumericError("adam: non-finite gradient");
    ++state_.step;
    double t = static_cast<double>(state_.step);
    double c1 = 1.0 - std::pow(cfg_.beta1, t);
    double c2 = 1.0 - std::pow(cfg_.beta2, t);
    for (std::size_t k = 0; k < params.count(); ++k) {
      auto& p = params.tensors[k].data;
      const auto& g = grads.tensors[k].data;
      auto& m = state_.m.tensors[k].data;
      auto& v = state_.v.tensors[k].data;
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        double mhat = m[i] / c1;
        double vhat = v[i] / c2;
        p[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

  const AdamState& state() const { return state_; }
  const AdamConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }

 private:
  AdamConfig cfg_;
  AdamState state_;
};

}  // namespace rlstack
