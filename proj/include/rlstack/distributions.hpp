#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "rlstack/tensor.hpp"

namespace rlstack {

// Categorical over logits -------------------------------------------------

inline void softmax(std::span<const double> logits, std::span<double> probs) {
  double mx = *std::max_element(logits.begin(), logits.end());
  if (!std::isfinite(mx)) throw NumericError("softmax: non-finite logits");
  double s = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) s += (probs[i] = std::exp(logits[i] - mx));
  for (auto& p : probs) p /= s;
}

inline std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.size());
  softmax(logits, p);
  return p;
}

inline void log_softmax(std::span<const double> logits, std::span<double> out) {
  double mx = *std::max_element(logits.begin(), logits.end());
  if (!std::isfinite(mx)) throw NumericError("log_softmax: non-finite logits");
  double s = 0.0;
  for (double l : logits) s += std::exp(l - mx);
  double lse = mx + std::log(s);
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
}

struct Categorical {
  std::vector<double> probs;
  std::vector<double> log_probs;

  static Categorical from_logits(std::span<const double> logits) {
    Categorical c{std::vector<double>(logits.size()), std::vector<double>(logits.size())};
    for (double l : logits)
      if (!std::isfinite(l)) throw NumericError("categorical: non-finite logit");
    softmax(logits, c.probs);
    log_softmax(logits, c.log_probs);
    return c;
  }

  std::size_t size() const { return probs.size(); }

  /// Inverse-CDF draw from a uniform in [0, 1).
  std::size_t sample(double u) const {
    double c = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      c += probs[i];
      if (u < c) return i;
    }
    for (std::size_t i = probs.size(); i-- > 0;)
      if (probs[i] > 0.0) return i;
    return probs.size() - 1;
  }
  template <class Rng>
  std::size_t sample(Rng& rng) const { return sample(rng.uniform()); }

  double log_prob(std::size_t a) const { return log_probs.at(a); }

  double entropy() const {
    double h = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i)
      if (probs[i] > 0.0) h -= probs[i] * log_probs[i];
    return h;
  }

  std::size_t argmax() const {
    return static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
  }

  /// d log p(a) / d logits = onehot(a) - p
  void grad_log_prob(std::size_t a, std::span<double> out, double scale = 1.0) const {
    for (std::size_t i = 0; i < probs.size(); ++i) out[i] += scale * ((i == a ? 1.0 : 0.0) - probs[i]);
  }

  /// d H / d logits_j = -p_j (log p_j + H)
  void grad_entropy(std::span<double> out, double scale = 1.0) const {
    double h = entropy();
    for (std::size_t i = 0; i < probs.size(); ++i) out[i] += scale * (-probs[i] * (log_probs[i] + h));
  }
};

// Diagonal Gaussian --------------------------------------------------------

inline constexpr double kLogStdMin = -20.0;
inline constexpr double kLogStdMax = 2.0;

inline double clamp_log_std(double s) { return std::clamp(s, kLogStdMin, kLogStdMax); }

struct DiagGaussian {
  std::vector<double> mean;
  std::vector<double> log_std;  // clamped

  DiagGaussian(std::span<const double> m, std::span<const double> ls) : mean(m.begin(), m.end()) {
    if (m.size() != ls.size()) throw NumericError("gaussian: mean/log_std size mismatch");
    for (double v : m)
      if (!std::isfinite(v)) throw NumericError("gaussian: non-finite mean");
    for (double v : ls) {
      if (std::isnan(v)) throw NumericError("gaussian: NaN log_std");
      log_std.push_back(clamp_log_std(v));
    }
  }

  std::size_t dim() const { return mean.size(); }

  template <class Rng>
  std::vector<double> sample(Rng& rng) const {
    std::vector<double> x(dim());
    for (std::size_t i = 0; i < dim(); ++i) x[i] = mean[i] + std::exp(log_std[i]) * rng.normal();
    return x;
  }

  double log_prob(std::span<const double> x) const {
    double lp = 0.0;
    for (std::size_t i = 0; i < dim(); ++i) {
      double z = (x[i] - mean[i]) / std::exp(log_std[i]);
      lp += -0.5 * z * z - log_std[i] - 0.5 * std::log(2.0 * std::numbers::pi);
    }
    return lp;
  }

  double entropy() const {
    double h = 0.0;
    for (double s : log_std) h += s + 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e);
    return h;
  }
};

}  // namespace rlstack
