#pragma once

#include <cmath>
#include <functional>
#include <string>

#include "rlstack/tensor.hpp"

namespace rlstack {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_tensor;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Compares analytic gradients with central differences.
///
/// Relative error per element is |a - n| / max(|a|, |n|, floor); the floor
/// keeps exactly-zero gradients from dividing by zero.
inline GradCheckResult finite_diff_check(const std::function<double(const ParamSet&)>& loss, ParamSet params,
                                         const GradSet& analytic, double step = 1e-5, double floor = 1e-6) {
  if (!params.same_shapes(analytic)) throw NumericError("finite_diff_check: shape mismatch");
  GradCheckResult res;
  for (std::size_t k = 0; k < params.count(); ++k) {
    auto& data = params.tensors[k].data;
    for (std::size_t i = 0; i < data.size(); ++i) {
      double orig = data[i];
      data[i] = orig + step;
      double up = loss(params);
      data[i] = orig - step;
      double down = loss(params);
      data[i] = orig;
      double num = (up - down) / (2.0 * step);
      double a = analytic.tensors[k].data[i];
      double rel = std::abs(a - num) / std::max({std::abs(a), std::abs(num), floor});
      if (rel > res.max_rel_error || res.worst_tensor.empty()) {
        if (rel >= res.max_rel_error) {
          res.max_rel_error = rel;
          res.worst_tensor = params.names[k];
          res.worst_index = i;
          res.analytic = a;
          res.numeric = num;
        }
      }
    }
  }
  return res;
}

}  // namespace rlstack
