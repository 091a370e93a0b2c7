#pragma once

// Losses, gradients and update loops for the DQN family (double, dueling,
// categorical, prioritized, n-step, recurrent), A2C/PPO with GAE, and
// DDPG/TD3. Loss functions are pure; the Algorithm classes own parameters,
// target parameters, optimizers and (for off-policy methods) replay.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rlstack/adam.hpp"
#include "rlstack/agents.hpp"
#include "rlstack/distributions.hpp"
#include "rlstack/replay.hpp"
#include "rlstack/struct_array.hpp"
#include "rlstack/tensor.hpp"

namespace rlstack {

class AlgorithmError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct OptInfo {
  double loss = 0.0;
  double grad_norm = 0.0;
  double td_abs_mean = 0.0;
  double td_abs_max = 0.0;
  double entropy = 0.0;
  double kl = 0.0;
  double clip_fraction = 0.0;
  std::size_t updates = 0;
  std::size_t samples = 0;
  std::size_t checksum_failures = 0;

  /// Averages per-update statistics weighted by update count; sums counters.
  void merge(const OptInfo& o) {
    if (o.updates == 0) {
      checksum_failures += o.checksum_failures;
      return;
    }
    double a = static_cast<double>(updates), b = static_cast<double>(o.updates), n = a + b;
    auto mix = [&](double& x, double y) { x = (x * a + y * b) / n; };
    mix(loss, o.loss);
    mix(grad_norm, o.grad_norm);
    mix(td_abs_mean, o.td_abs_mean);
    mix(entropy, o.entropy);
    mix(kl, o.kl);
    mix(clip_fraction, o.clip_fraction);
    td_abs_max = std::max(td_abs_max, o.td_abs_max);
    updates += o.updates;
    samples += o.samples;
    checksum_failures += o.checksum_failures;
  }
};

// ---------------------------------------------------------------------------
// Small helpers.

inline double huber(double x, double kappa = 1.0) {
  double a = std::abs(x);
  return a <= kappa ? 0.5 * x * x : kappa * (a - 0.5 * kappa);
}

inline double huber_grad(double x, double kappa = 1.0) {
  return std::abs(x) <= kappa ? x : (x > 0.0 ? kappa : -kappa);
}

/// Float leaf of a struct array as a [rows, trailing] tensor.
inline Tensor leaf_tensor(const StructArray& a, std::string_view path) {
  std::size_t i = a.spec().require_leaf(path);
  const auto& info = a.spec().leaves()[i];
  std::size_t rows = a.leading_count(), w = info.trailing_count;
  Tensor t({rows, w});
  if (info.kind == ElementKind::float32) {
    auto s = a.leaf<float>(i);
    for (std::size_t k = 0; k < s.size(); ++k) t.data[k] = s[k];
  } else if (info.kind == ElementKind::float64) {
    auto s = a.leaf<double>(i);
    std::copy(s.begin(), s.end(), t.data.begin());
  } else {
    throw AlgorithmError(std::string("leaf '") + std::string(path) + "' is not floating point");
  }
  return t;
}

inline std::vector<double> leaf_values(const StructArray& a, std::string_view path) {
  std::size_t i = a.spec().require_leaf(path);
  const auto& info = a.spec().leaves()[i];
  std::vector<double> out(a.leading_count() * info.trailing_count);
  for (std::size_t k = 0; k < out.size(); ++k) {
    const std::byte* p = a.leaf_bytes(i) + k * element_size(info.kind);
    switch (info.kind) {
      case ElementKind::float32: out[k] = *reinterpret_cast<const float*>(p); break;
      case ElementKind::float64: out[k] = *reinterpret_cast<const double*>(p); break;
      case ElementKind::int64: out[k] = static_cast<double>(*reinterpret_cast<const std::int64_t*>(p)); break;
      case ElementKind::boolean: out[k] = *reinterpret_cast<const bool*>(p) ? 1.0 : 0.0; break;
      case ElementKind::uint8: out[k] = *reinterpret_cast<const std::uint8_t*>(p); break;
    }
  }
  return out;
}

inline ParamSet take_params(const ParamSet& p, std::size_t begin, std::size_t n) {
  ParamSet out;
  for (std::size_t i = begin; i < begin + n; ++i) out.add(p.names[i], p.tensors[i]);
  return out;
}

inline void put_params(ParamSet& p, std::size_t begin, const ParamSet& part) {
  for (std::size_t i = 0; i < part.count(); ++i) p.tensors[begin + i] = part.tensors[i];
}

// ---------------------------------------------------------------------------
// Target networks.

struct TargetUpdate {
  /// Hard copy every `period` calls when positive; otherwise soft blend with tau.
  std::size_t period = 0;
  double tau = 1.0;
};

/// target <- tau * online + (1 - tau) * target
inline void soft_update(ParamSet& target, const ParamSet& online, double tau) {
  if (!target.same_shapes(online)) throw AlgorithmError("soft_update: shape mismatch");
  if (!(tau > 0.0 && tau <= 1.0)) throw AlgorithmError("soft_update: tau must be in (0, 1]");
  for (std::size_t k = 0; k < target.count(); ++k) {
    auto& t = target.tensors[k].data;
    const auto& o = online.tensors[k].data;
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = tau == 1.0 ? o[i] : tau * o[i] + (1.0 - tau) * t[i];
  }
}

/// Returns true when the target changed.
inline bool target_sync(const ParamSet& online, ParamSet& target, const TargetUpdate& u, std::size_t step) {
  if (u.period > 0) {
    if (step % u.period != 0) return false;
    target = online;
    return true;
  }
  soft_update(target, online, u.tau);
  return true;
}

// ---------------------------------------------------------------------------
// DQN family.

/// q = v + a - mean(a), rows of `a` have n entries.
inline std::vector<double> dueling_aggregate(std::span<const double> v, std::span<const double> a, std::size_t n) {
  std::vector<double> q(a.size());
  for (std::size_t r = 0; r < v.size(); ++r) {
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += a[r * n + j];
    mean /= static_cast<double>(n);
    for (std::size_t j = 0; j < n; ++j) q[r * n + j] = v[r] + a[r * n + j] - mean;
  }
  return q;
}

/// Bootstrap values per row: max_a q_target, or q_target at argmax of q_online (double).
inline std::vector<double> bootstrap_values(const Tensor& q_target, const Tensor* q_online) {
  std::size_t n = q_target.rows(), A = q_target.cols();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto sel = std::span<const double>(q_online ? q_online->data : q_target.data).subspan(i * A, A);
    out[i] = q_target.data[i * A + argmax_lowest(sel)];
  }
  return out;
}

inline std::vector<double> categorical_support(std::size_t atoms, double v_min, double v_max) {
  if (atoms < 2 || !(v_min < v_max)) throw AlgorithmError("categorical support needs atoms >= 2 and v_min < v_max");
  std::vector<double> z(atoms);
  for (std::size_t i = 0; i < atoms; ++i)
    z[i] = v_min + (v_max - v_min) * static_cast<double>(i) / static_cast<double>(atoms - 1);
  return z;
}

/// Projects the distribution of (ret + discount * z) onto the fixed support z.
inline std::vector<double> categorical_projection(std::span<const double> probs, double ret, double discount,
                                                  std::span<const double> z) {
  std::size_t Z = z.size();
  double v_min = z.front(), v_max = z.back(), dz = (v_max - v_min) / static_cast<double>(Z - 1);
  std::vector<double> m(Z, 0.0);
  for (std::size_t j = 0; j < Z; ++j) {
    double tz = std::clamp(ret + discount * z[j], v_min, v_max);
    double b = (tz - v_min) / dz;
    double lf = std::floor(b), uf = std::ceil(b);
    auto l = static_cast<std::size_t>(std::max(0.0, lf));
    auto u = std::min(Z - 1, static_cast<std::size_t>(std::max(0.0, uf)));
    if (l == u) {
      m[l] += probs[j];
    } else {
      m[l] += probs[j] * (uf - b);
      m[u] += probs[j] * (b - lf);
    }
  }
  return m;
}

struct DqnBatch {
  Tensor observation;  // [n, obs_dim]
  std::vector<std::int64_t> action;
  std::vector<double> returns;
  /// gamma^k for the bootstrap, 0 when the n-step window terminated.
  std::vector<double> bootstrap_discount;
  Tensor next_observation;
  std::vector<double> weights;

  std::size_t size() const { return action.size(); }

  static DqnBatch from(const TransitionBatch& t) {
    DqnBatch b;
    b.observation = leaf_tensor(t.rows, "observation");
    auto a = t.rows.leaf<std::int64_t>("action");
    b.action.assign(a.begin(), a.end());
    b.returns = t.returns;
    b.bootstrap_discount = t.bootstrap_discounts;
    b.next_observation = t.next_observation;
    b.weights = t.weights;
    return b;
  }
};

struct DqnLossConfig {
  bool double_q = true;
  double huber_delta = 1.0;
  /// Categorical head when atoms > 0.
  std::size_t atoms = 0;
  double v_min = -10.0, v_max = 10.0;
};

struct LossResult {
  double loss = 0.0;
  GradSet grads;
  /// Per-sample |TD error| (cross-entropy for categorical heads).
  std::vector<double> td_abs;
  double entropy = 0.0, kl = 0.0, clip_fraction = 0.0;
};

/// Expected values [n, A] of a categorical head's logits [n, A * Z].
inline Tensor categorical_expectation(const Tensor& logits, std::size_t A, std::span<const double> z) {
  std::size_t Z = z.size(), n = logits.size() / (A * Z);
  Tensor q({n, A});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t a = 0; a < A; ++a) {
      auto p = softmax(std::span<const double>(logits.data).subspan((r * A + a) * Z, Z));
      double v = 0.0;
      for (std::size_t k = 0; k < Z; ++k) v += p[k] * z[k];
      q.data[r * A + a] = v;
    }
  return q;
}

/// DQN loss mean_i w_i * Huber(y_i - q(s_i, a_i)) with y = R + disc * bootstrap,
/// or the categorical cross-entropy against the projected target distribution.
inline LossResult dqn_loss(const Mlp& net, const ParamSet& params, const ParamSet& target_params, const DqnBatch& b,
                           const DqnLossConfig& cfg) {
  std::size_t n = b.size(), A = net.config().output_dim;
  if (n == 0) throw AlgorithmError("dqn_loss: empty batch");
  LossResult res;
  res.grads = params.zeros_like();
  res.td_abs.resize(n);
  Mlp::Cache cache;
  Tensor out = net.forward(params.tensors, b.observation, &cache);
  Tensor next_t = net.forward(target_params.tensors, b.next_observation);
  Tensor dy(out.shape);
  double inv_n = 1.0 / static_cast<double>(n);

  if (cfg.atoms == 0) {
    Tensor next_o;
    if (cfg.double_q) next_o = net.forward(params.tensors, b.next_observation);
    auto boot = bootstrap_values(next_t, cfg.double_q ? &next_o : nullptr);
    for (std::size_t i = 0; i < n; ++i) {
      auto a = static_cast<std::size_t>(b.action[i]);
      if (a >= A) throw AlgorithmError("dqn_loss: action out of range");
      double y = b.returns[i] + b.bootstrap_discount[i] * boot[i];
      double delta = y - out.data[i * A + a];
      res.loss += b.weights[i] * huber(delta, cfg.huber_delta) * inv_n;
      dy.data[i * A + a] = -b.weights[i] * huber_grad(delta, cfg.huber_delta) * inv_n;
      res.td_abs[i] = std::abs(delta);
    }
  } else {
    std::size_t Z = cfg.atoms;
    auto z = categorical_support(Z, cfg.v_min, cfg.v_max);
    Tensor q_sel = cfg.double_q ? categorical_expectation(net.forward(params.tensors, b.next_observation), A, z)
                                : categorical_expectation(next_t, A, z);
    for (std::size_t i = 0; i < n; ++i) {
      auto a = static_cast<std::size_t>(b.action[i]);
      if (a >= A) throw AlgorithmError("dqn_loss: action out of range");
      std::size_t a_star = argmax_lowest(std::span<const double>(q_sel.data).subspan(i * A, A));
      auto p_next = softmax(std::span<const double>(next_t.data).subspan((i * A + a_star) * Z, Z));
      auto m = categorical_projection(p_next, b.returns[i], b.bootstrap_discount[i], z);
      std::vector<double> logp(Z);
      auto logits = std::span<const double>(out.data).subspan((i * A + a) * Z, Z);
      log_softmax(logits, logp);
      double ce = 0.0;
      for (std::size_t k = 0; k < Z; ++k) ce -= m[k] * logp[k];
      res.loss += b.weights[i] * ce * inv_n;
      for (std::size_t k = 0; k < Z; ++k)
        dy.data[(i * A + a) * Z + k] = b.weights[i] * (std::exp(logp[k]) - m[k]) * inv_n;
      res.td_abs[i] = ce;
    }
  }
  if (!std::isfinite(res.loss)) throw AlgorithmError("dqn_loss: non-finite loss");
  net.backward(params.tensors, cache, dy, res.grads.tensors);
  return res;
}

// ---------------------------------------------------------------------------
// Policy gradient.

struct GaeResult {
  std::vector<double> advantages, returns;
};

/// GAE over [T, B] (row-major t * B + b). next_values[t, b] is the value of
/// the state reached after step t: it bootstraps unless the step terminated
/// (done and not timeout). The advantage recursion is cut at every done.
inline GaeResult compute_gae_next(std::span<const double> rewards, std::span<const double> values,
                                  std::span<const double> next_values, std::span<const std::uint8_t> dones,
                                  std::span<const std::uint8_t> timeouts, double gamma, double lambda, std::size_t T,
                                  std::size_t B) {
  std::size_t N = T * B;
  if (rewards.size() != N || values.size() != N || next_values.size() != N || dones.size() != N ||
      (!timeouts.empty() && timeouts.size() != N))
    throw AlgorithmError("compute_gae: shape mismatch");
  if (lambda < 0.0 || lambda > 1.0) throw AlgorithmError("compute_gae: lambda outside [0, 1]");
  GaeResult r{std::vector<double>(N), std::vector<double>(N)};
  for (std::size_t b = 0; b < B; ++b) {
    double next_adv = 0.0;
    for (std::size_t t = T; t-- > 0;) {
      std::size_t i = t * B + b;
      bool done = dones[i] != 0;
      bool timeout = !timeouts.empty() && timeouts[i] != 0;
      double boot = done && !timeout ? 0.0 : next_values[i];
      double delta = rewards[i] + gamma * boot - values[i];
      double adv = delta + (done ? 0.0 : gamma * lambda * next_adv);
      r.advantages[i] = adv;
      r.returns[i] = adv + values[i];
      next_adv = adv;
    }
  }
  return r;
}

/// GAE with values of the following row and a bootstrap value per column for
/// the final row. Timeout rows bootstrap from `timeout_values` when given.
inline GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values,
                             std::span<const std::uint8_t> dones, std::span<const double> bootstrap_value, double gamma,
                             double lambda, std::size_t T, std::size_t B, std::span<const std::uint8_t> timeouts = {},
                             std::span<const double> timeout_values = {}) {
  if (bootstrap_value.size() != B) throw AlgorithmError("compute_gae: bootstrap size mismatch");
  std::vector<double> next(T * B);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t b = 0; b < B; ++b) {
      std::size_t i = t * B + b;
      if (!timeouts.empty() && timeouts[i] && !timeout_values.empty()) next[i] = timeout_values[i];
      else next[i] = t + 1 < T ? values[i + B] : bootstrap_value[b];
    }
  return compute_gae_next(rewards, values, next, dones, timeouts, gamma, lambda, T, B);
}

struct PgBatch {
  Tensor observation;
  std::vector<std::int64_t> action;
  std::vector<double> advantages, returns, old_log_probs;
  std::size_t size() const { return action.size(); }
};

struct PgLossConfig {
  double value_coef = 0.5;
  double entropy_coef = 0.01;
  bool ppo = false;
  double clip_eps = 0.2;
};

/// A2C: -mean(log pi * A) + c_v mean((V - R)^2) - c_e mean(H).
/// PPO: the policy term becomes -mean(min(rho A, clip(rho, 1 - eps, 1 + eps) A)).
inline LossResult pg_loss(const PgAgent& agent, const ParamSet& params, const PgBatch& b, const PgLossConfig& cfg) {
  std::size_t n = b.size(), A = agent.config().n_actions, np = agent.pi_tensors();
  if (n == 0) throw AlgorithmError("pg_loss: empty batch");
  if (cfg.ppo && !(cfg.clip_eps > 0.0)) throw AlgorithmError("pg_loss: clip epsilon must be positive");
  LossResult res;
  res.grads = params.zeros_like();
  Mlp::Cache pc, vc;
  Tensor logits = agent.pi().forward(agent.pi_params(params), b.observation, &pc);
  Tensor value = agent.v().forward(agent.v_params(params), b.observation, &vc);
  Tensor dlogits(logits.shape), dv(value.shape);
  double inv_n = 1.0 / static_cast<double>(n);
  double clipped = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    auto d = Categorical::from_logits(std::span<const double>(logits.data).subspan(i * A, A));
    auto a = static_cast<std::size_t>(b.action[i]);
    if (a >= A) throw AlgorithmError("pg_loss: action out of range");
    double adv = b.advantages[i];
    double logp = d.log_prob(a);
    auto g = std::span(dlogits.data).subspan(i * A, A);
    if (!cfg.ppo) {
      res.loss -= logp * adv * inv_n;
      d.grad_log_prob(a, g, -adv * inv_n);
    } else {
      double ratio = std::exp(logp - b.old_log_probs[i]);
      double clip_r = std::clamp(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
      double unclipped = ratio * adv, clipped_obj = clip_r * adv;
      bool use_unclipped = unclipped <= clipped_obj;
      res.loss -= std::min(unclipped, clipped_obj) * inv_n;
      if (use_unclipped) d.grad_log_prob(a, g, -ratio * adv * inv_n);
      if (std::abs(ratio - 1.0) > cfg.clip_eps) clipped += 1.0;
      res.kl += (b.old_log_probs[i] - logp) * inv_n;
    }
    double h = d.entropy();
    res.entropy += h * inv_n;
    res.loss -= cfg.entropy_coef * h * inv_n;
    d.grad_entropy(g, -cfg.entropy_coef * inv_n);
    double err = value.data[i] - b.returns[i];
    res.loss += cfg.value_coef * err * err * inv_n;
    dv.data[i] = 2.0 * cfg.value_coef * err * inv_n;
  }
  res.clip_fraction = clipped * inv_n;
  if (!std::isfinite(res.loss)) throw AlgorithmError("pg_loss: non-finite loss");
  auto g = std::span(res.grads.tensors);
  agent.pi().backward(agent.pi_params(params), pc, dlogits, g.subspan(0, np));
  agent.v().backward(agent.v_params(params), vc, dv, g.subspan(np, agent.v().num_tensors()));
  return res;
}

// ---------------------------------------------------------------------------
// DDPG / TD3.

struct DdpgBatch {
  Tensor observation;  // [n, obs_dim]
  Tensor action;       // [n, action_dim]
  std::vector<double> returns, bootstrap_discount, weights;
  Tensor next_observation;
  std::size_t size() const { return returns.size(); }

  static DdpgBatch from(const TransitionBatch& t) {
    DdpgBatch b;
    b.observation = leaf_tensor(t.rows, "observation");
    b.action = leaf_tensor(t.rows, "action");
    b.returns = t.returns;
    b.bootstrap_discount = t.bootstrap_discounts;
    b.next_observation = t.next_observation;
    b.weights = t.weights;
    return b;
  }
};

inline Tensor concat_cols(const Tensor& a, const Tensor& b) {
  std::size_t n = a.rows(), ca = a.cols(), cb = b.cols();
  Tensor out({n, ca + cb});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(a.data.begin() + static_cast<std::ptrdiff_t>(i * ca), ca,
                out.data.begin() + static_cast<std::ptrdiff_t>(i * (ca + cb)));
    std::copy_n(b.data.begin() + static_cast<std::ptrdiff_t>(i * cb), cb,
                out.data.begin() + static_cast<std::ptrdiff_t>(i * (ca + cb) + ca));
  }
  return out;
}

/// Critic loss sum_k mean_i w_i (Q_k(s, a) - y)^2 with
/// y = R + disc * min_k Q'_k(s', clamp(mu'(s') + noise)). `target_noise` is
/// [n, action_dim] (already clipped) or empty. Gradients touch critic tensors only.
inline LossResult ddpg_critic_loss(const DdpgAgent& agent, const ParamSet& params, const ParamSet& target_params,
                                   const DdpgBatch& b, const Tensor& target_noise = {}) {
  const auto& c = agent.config();
  std::size_t n = b.size(), critics = c.twin_critic ? 2 : 1;
  if (n == 0) throw AlgorithmError("ddpg_critic_loss: empty batch");
  LossResult res;
  res.grads = params.zeros_like();
  res.td_abs.assign(n, 0.0);
  Tensor next_a = agent.mu(agent.mu_params(target_params), b.next_observation);
  if (!target_noise.data.empty())
    for (std::size_t i = 0; i < next_a.size(); ++i)
      next_a.data[i] = std::clamp(next_a.data[i] + target_noise.data[i], c.action_low, c.action_high);
  Tensor next_in = concat_cols(b.next_observation, next_a);
  std::vector<double> q_next(n, std::numeric_limits<double>::infinity());
  for (std::size_t k = 0; k < critics; ++k) {
    Tensor q = agent.critic().forward(agent.q_params(target_params, k), next_in);
    for (std::size_t i = 0; i < n; ++i) q_next[i] = std::min(q_next[i], q.data[i]);
  }
  Tensor in = concat_cols(b.observation, b.action);
  double inv_n = 1.0 / static_cast<double>(n);
  auto g = std::span(res.grads.tensors);
  for (std::size_t k = 0; k < critics; ++k) {
    Mlp::Cache cache;
    Tensor q = agent.critic().forward(agent.q_params(params, k), in, &cache);
    Tensor dq(q.shape);
    for (std::size_t i = 0; i < n; ++i) {
      double y = b.returns[i] + b.bootstrap_discount[i] * q_next[i];
      double e = q.data[i] - y;
      res.loss += b.weights[i] * e * e * inv_n;
      dq.data[i] = 2.0 * b.weights[i] * e * inv_n;
      if (k == 0) res.td_abs[i] = std::abs(e);
    }
    agent.critic().backward(agent.q_params(params, k), cache, dq,
                            g.subspan(agent.actor_tensors() + k * agent.critic_tensors(), agent.critic_tensors()));
  }
  if (!std::isfinite(res.loss)) throw AlgorithmError("ddpg_critic_loss: non-finite loss");
  return res;
}

/// Actor loss -mean Q_1(s, mu(s)); gradients touch actor tensors only.
inline LossResult ddpg_actor_loss(const DdpgAgent& agent, const ParamSet& params, const Tensor& obs) {
  std::size_t n = obs.rows(), od = obs.cols(), D = agent.config().action_dim;
  if (n == 0) throw AlgorithmError("ddpg_actor_loss: empty batch");
  LossResult res;
  res.grads = params.zeros_like();
  Mlp::Cache acache, ccache;
  Tensor pre;
  Tensor act = agent.mu(agent.mu_params(params), obs, &pre, &acache);
  Tensor in = concat_cols(obs, act);
  Tensor q = agent.critic().forward(agent.q_params(params, 0), in, &ccache);
  double inv_n = 1.0 / static_cast<double>(n);
  Tensor dq(q.shape);
  for (std::size_t i = 0; i < n; ++i) {
    res.loss -= q.data[i] * inv_n;
    dq.data[i] = -inv_n;
  }
  // critic parameters are held fixed: backprop into a scratch gradient set
  std::vector<Tensor> scratch;
  for (const auto& t : agent.q_params(params, 0)) scratch.emplace_back(t.shape);
  Tensor din = agent.critic().backward(agent.q_params(params, 0), ccache, dq, scratch);
  Tensor dpre({n, D});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < D; ++k) {
      double th = std::tanh(pre.data[i * D + k]);
      dpre.data[i * D + k] = din.data[i * (od + D) + od + k] * agent.scale() * (1.0 - th * th);
    }
  agent.actor().backward(agent.mu_params(params), acache, dpre,
                         std::span(res.grads.tensors).subspan(0, agent.actor_tensors()));
  if (!std::isfinite(res.loss)) throw AlgorithmError("ddpg_actor_loss: non-finite loss");
  return res;
}

// ---------------------------------------------------------------------------
// Recurrent (R2D1-style) sequence loss.

/// h(x) = sign(x)(sqrt(|x| + 1) - 1) + eps x
inline double value_rescale(double x, double eps = 1e-3) {
  return (x < 0 ? -1.0 : 1.0) * (std::sqrt(std::abs(x) + 1.0) - 1.0) + eps * x;
}

inline double value_rescale_inv(double x, double eps = 1e-3) {
  double s = x < 0 ? -1.0 : 1.0;
  double r = (std::sqrt(1.0 + 4.0 * eps * (std::abs(x) + 1.0 + eps)) - 1.0) / (2.0 * eps);
  return s * (r * r - 1.0);
}

enum class PrioritySegment { full, second_half };

struct R2d1LossConfig {
  double gamma = 0.99;
  std::size_t n_step = 1;
  std::size_t warmup_T = 0;
  std::size_t train_T = 1;
  bool double_q = true;
  bool value_rescaling = false;
  double rescale_eps = 1e-3;
  double huber_delta = 1.0;
  PrioritySegment priority_segment = PrioritySegment::full;
};

struct SequenceLossResult {
  double loss = 0.0;
  GradSet grads;
  /// Per sequence: |TD errors| over the priority segment.
  std::vector<std::vector<double>> td_abs;
};

/// Model inputs [L, n, D] for a replayed sequence.
inline Tensor recurrent_inputs(const RecurrentQAgentConfig& c, const StructArray& rows) {
  auto ld = rows.leading_dims();
  std::size_t L = ld[0], n = ld[1], D = RecurrentQAgent::input_dim(c);
  Tensor x({L, n, D});
  auto obs_leaf = rows.spec().require_leaf("observation");
  auto pa = rows.leaf<std::int64_t>("prev_action");
  auto pr = rows.leaf<float>("prev_reward");
  for (std::size_t f = 0; f < L * n; ++f)
    RecurrentQAgent::encode(c, rows.row<float>(obs_leaf, f), pa[f], pr[f], std::span(x.data).subspan(f * D, D));
  return x;
}

/// Runs the whole sequence from the stored state (the first warmup_T rows
/// only refresh the state), then applies an n-step double-DQN loss on the
/// training rows. Episode ends inside the sequence terminate the n-step
/// return; the lookahead rows after the training segment supply bootstraps.
inline SequenceLossResult r2d1_loss(const RecurrentQAgent& agent, const ParamSet& params,
                                    const ParamSet& target_params, const SequenceBatch& sb, const R2d1LossConfig& cfg) {
  const auto& rc = agent.config();
  auto ld = sb.rows.leading_dims();
  std::size_t L = ld[0], n = ld[1], A = rc.n_actions, H = rc.hidden;
  if (cfg.warmup_T + cfg.train_T + cfg.n_step > L)
    throw AlgorithmError("r2d1_loss: sequence shorter than warmup + train + n_step");
  Tensor x = recurrent_inputs(rc, sb.rows);
  RnnState h0 = RnnState::zeros(n, H);
  if (sb.init_state.size() != n * H) throw AlgorithmError("r2d1_loss: stored state width mismatch");
  h0.hidden.data = sb.init_state.data;
  Rnn::Cache cache;
  auto on = agent.rnn().forward(params.tensors, x, h0, sb.resets, &cache);
  auto tg = agent.rnn().forward(target_params.tensors, x, h0, sb.resets);
  auto reward = sb.rows.leaf<float>("reward");
  auto done = sb.rows.leaf<bool>("done");
  auto action = sb.rows.leaf<std::int64_t>("action");

  SequenceLossResult res;
  res.grads = params.zeros_like();
  res.td_abs.resize(n);
  Tensor dy(on.y.shape);
  double norm = 1.0 / static_cast<double>(n * cfg.train_T);
  std::size_t seg_begin = cfg.priority_segment == PrioritySegment::second_half ? cfg.train_T / 2 : 0;
  auto qrow = [&](const Tensor& y, std::size_t t, std::size_t i) {
    return std::span<const double>(y.data).subspan((t * n + i) * A, A);
  };
  for (std::size_t i = 0; i < n; ++i) {
    double w = sb.weights.empty() ? 1.0 : sb.weights[i];
    for (std::size_t j = 0; j < cfg.train_T; ++j) {
      std::size_t t = cfg.warmup_T + j;
      double ret = 0.0, disc = 1.0;
      bool terminal = false;
      for (std::size_t k = 0; k < cfg.n_step; ++k) {
        std::size_t f = (t + k) * n + i;
        ret += disc * reward[f];
        disc *= cfg.gamma;
        if (done[f]) {
          terminal = true;
          break;
        }
      }
      double y = ret;
      if (!terminal) {
        std::size_t tb = t + cfg.n_step;
        auto sel = cfg.double_q ? qrow(on.y, tb, i) : qrow(tg.y, tb, i);
        double boot = qrow(tg.y, tb, i)[argmax_lowest(sel)];
        y = cfg.value_rescaling
                ? value_rescale(ret + disc * value_rescale_inv(boot, cfg.rescale_eps), cfg.rescale_eps)
                : ret + disc * boot;
      } else if (cfg.value_rescaling) {
        y = value_rescale(ret, cfg.rescale_eps);
      }
      auto a = static_cast<std::size_t>(action[t * n + i]);
      if (a >= A) throw AlgorithmError("r2d1_loss: action out of range");
      double delta = y - on.y.data[(t * n + i) * A + a];
      res.loss += w * huber(delta, cfg.huber_delta) * norm;
      dy.data[(t * n + i) * A + a] = -w * huber_grad(delta, cfg.huber_delta) * norm;
      if (j >= seg_begin) res.td_abs[i].push_back(std::abs(delta));
    }
  }
  if (!std::isfinite(res.loss)) throw AlgorithmError("r2d1_loss: non-finite loss");
  agent.rnn().backward(params.tensors, cache, dy, res.grads.tensors);
  return res;
}

// ---------------------------------------------------------------------------
// Algorithm drivers.

/// Called on every gradient set before it is clipped and applied; `group`
/// distinguishes optimizers (0: main / critic, 1: actor).
using GradHook = std::function<void(GradSet&, std::size_t group)>;

/// Lock wrappers used by off-policy updates for replay access.
struct ReplayAccess {
  std::function<void(const std::function<void()>&)> read = [](const std::function<void()>& f) { f(); };
  std::function<void(const std::function<void()>&)> write = [](const std::function<void()>& f) { f(); };
};

class Algorithm {
 public:
  virtual ~Algorithm() = default;
  virtual std::string name() const = 0;
  virtual bool off_policy() const = 0;

  const ParamSet& params() const { return params_; }
  void set_params(const ParamSet& p) { params_ = p; }
  void set_grad_hook(GradHook h) { hook_ = std::move(h); }
  std::size_t update_count() const { return updates_; }

  /// Serial path: consume one sampler batch [T, B] and run the due updates.
  virtual OptInfo process_batch(const StructArray& batch, std::size_t env_steps) = 0;

  // Off-policy split path (async runner).
  virtual void store(const StructArray&) { throw AlgorithmError(name() + " has no replay"); }
  virtual bool ready(std::size_t) const { return false; }
  virtual OptInfo update(const ReplayAccess&) { throw AlgorithmError(name() + " has no replay"); }
  /// Transitions consumed by one update, for replay-ratio accounting.
  virtual std::size_t samples_per_update() const { return 0; }

 protected:
  double apply(GradSet& g, Adam& opt, ParamSet& p, std::size_t group, double clip) {
    if (hook_) hook_(g, group);
    double norm = clip_grad_norm(g, clip);
    opt.step(p, g);
    return norm;
  }

  ParamSet params_;
  GradHook hook_;
  std::size_t updates_ = 0;
};

/// Fractional update credit: ratio * generated / batch updates per sampler batch.
class UpdateCredit {
 public:
  std::size_t add(double ratio, std::size_t generated, std::size_t batch) {
    credit_ += ratio * static_cast<double>(generated) / static_cast<double>(batch);
    auto n = static_cast<std::size_t>(std::floor(credit_ + 1e-9));
    credit_ -= static_cast<double>(n);
    return n;
  }

 private:
  double credit_ = 0.0;
};

struct DqnConfig {
  double gamma = 0.99;
  std::size_t n_step = 1;
  bool double_q = true;
  double huber_delta = 1.0;
  double lr = 1e-4;
  std::size_t batch_size = 32;
  std::size_t min_steps_learn = 1000;
  std::size_t replay_size = 100000;
  /// Transitions consumed per transition generated.
  double replay_ratio = 8.0;
  TargetUpdate target{500, 1.0};
  bool prioritized = false;
  PrioritySpec priority;
  double grad_clip = 10.0;
  std::uint64_t seed = 0;
};

/// Replay capacity in rows of B columns, rounded down to at least n_step + 1.
inline std::size_t replay_rows(std::size_t transitions, std::size_t B, std::size_t min_rows) {
  return std::max(min_rows, transitions / std::max<std::size_t>(B, 1));
}

class DqnAlgorithm final : public Algorithm {
 public:
  DqnAlgorithm(const QAgent& agent, DqnConfig cfg, const StructSpec& batch_spec, std::size_t B)
      : agent_(agent), cfg_(cfg), rng_(SlotRng::for_slot(cfg.seed, 0, StreamKind::replay)) {
    if (cfg.target.period == 0 && !(cfg.target.tau > 0.0 && cfg.target.tau <= 1.0))
      throw AlgorithmError("dqn: need a hard period >= 1 or 0 < tau <= 1");
    params_ = agent.params();
    target_ = params_;
    opt_ = Adam(params_, AdamConfig{.lr = cfg.lr});
    std::size_t rows = replay_rows(cfg.replay_size, B, cfg.n_step + 2);
    if (cfg.prioritized) replay_ = std::make_unique<PrioritizedReplay>(batch_spec, rows, B, cfg.gamma, cfg.n_step, cfg.priority);
    else replay_ = std::make_unique<NStepReplay>(batch_spec, rows, B, cfg.gamma, cfg.n_step);
    loss_cfg_.double_q = cfg.double_q;
    loss_cfg_.huber_delta = cfg.huber_delta;
    loss_cfg_.atoms = agent.config().atoms;
    loss_cfg_.v_min = agent.config().v_min;
    loss_cfg_.v_max = agent.config().v_max;
  }

  std::string name() const override { return "dqn"; }
  bool off_policy() const override { return true; }
  const ParamSet& target_params() const { return target_; }
  NStepReplay& replay() { return *replay_; }
  std::size_t samples_per_update() const override { return cfg_.batch_size; }

  void store(const StructArray& batch) override { replay_->append(batch); }
  bool ready(std::size_t env_steps) const override {
    return env_steps >= cfg_.min_steps_learn && replay_->valid_T() > 0;
  }

  OptInfo update(const ReplayAccess& access) override {
    TransitionBatch tb;
    access.read([&] { tb = replay_->sample(cfg_.batch_size, rng_); });
    auto batch = DqnBatch::from(tb);
    auto res = dqn_loss(agent_.net(), params_, target_, batch, loss_cfg_);
    OptInfo info;
    info.grad_norm = apply(res.grads, opt_, params_, 0, cfg_.grad_clip);
    if (cfg_.prioritized)
      access.write([&] { static_cast<PrioritizedReplay&>(*replay_).update_priorities(tb.t, tb.b, res.td_abs); });
    ++updates_;
    target_sync(params_, target_, cfg_.target, updates_);
    info.loss = res.loss;
    fill_td(info, res.td_abs);
    info.updates = 1;
    info.samples = cfg_.batch_size;
    info.checksum_failures = tb.checksum_failures;
    return info;
  }

  OptInfo process_batch(const StructArray& batch, std::size_t env_steps) override {
    store(batch);
    OptInfo info;
    std::size_t due = credit_.add(cfg_.replay_ratio, batch.leading_count(), cfg_.batch_size);
    if (!ready(env_steps)) return info;
    ReplayAccess direct;
    for (std::size_t k = 0; k < due; ++k) info.merge(update(direct));
    return info;
  }

  static void fill_td(OptInfo& info, const std::vector<double>& td) {
    if (td.empty()) return;
    double s = 0.0, m = 0.0;
    for (double d : td) {
      s += d;
      m = std::max(m, d);
    }
    info.td_abs_mean = s / static_cast<double>(td.size());
    info.td_abs_max = m;
  }

 private:
  QAgent agent_;
  DqnConfig cfg_;
  DqnLossConfig loss_cfg_;
  ParamSet target_;
  Adam opt_;
  std::unique_ptr<NStepReplay> replay_;
  SlotRng rng_;
  UpdateCredit credit_;
};

struct PgConfig {
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double value_coef = 0.5;
  double entropy_coef = 0.01;
  double lr = 3e-4;
  bool ppo = true;
  double clip_eps = 0.2;
  std::size_t epochs = 4;
  std::size_t minibatches = 4;
  bool normalize_advantages = true;
  double grad_clip = 0.5;
  std::uint64_t seed = 0;
};

/// A2C (one full-batch step per sampler batch) or PPO (epochs x minibatches).
class PgAlgorithm final : public Algorithm {
 public:
  PgAlgorithm(const PgAgent& agent, PgConfig cfg)
      : agent_(agent), cfg_(cfg), rng_(SlotRng::for_slot(cfg.seed, 0, StreamKind::init)) {
    if (cfg.gae_lambda < 0.0 || cfg.gae_lambda > 1.0) throw AlgorithmError("pg: gae_lambda outside [0, 1]");
    if (cfg.ppo && !(cfg.clip_eps > 0.0)) throw AlgorithmError("pg: clip epsilon must be positive");
    if (cfg.ppo && (cfg.epochs == 0 || cfg.minibatches == 0)) throw AlgorithmError("pg: epochs and minibatches must be positive");
    params_ = agent.params();
    opt_ = Adam(params_, AdamConfig{.lr = cfg.lr});
  }

  std::string name() const override { return cfg_.ppo ? "ppo" : "a2c"; }
  bool off_policy() const override { return false; }

  /// Advantages and returns for a [T, B] sample batch under the current parameters.
  GaeResult advantages(const StructArray& batch) const {
    auto ld = batch.leading_dims();
    std::size_t T = ld[0], B = ld[1];
    Tensor obs = leaf_tensor(batch, "observation"), next = leaf_tensor(batch, "next_observation");
    Tensor v = agent_.v().forward(agent_.v_params(params_), obs);
    Tensor nv = agent_.v().forward(agent_.v_params(params_), next);
    auto rewards = leaf_values(batch, "reward");
    auto dones = batch.leaf<bool>("done");
    auto timeouts = batch.leaf<bool>("env_info.timeout");
    std::vector<std::uint8_t> d(dones.begin(), dones.end()), to(timeouts.begin(), timeouts.end());
    return compute_gae_next(rewards, v.data, nv.data, d, to, cfg_.gamma, cfg_.gae_lambda, T, B);
  }

  OptInfo process_batch(const StructArray& batch, std::size_t) override {
    auto gae = advantages(batch);
    PgBatch pb;
    pb.observation = leaf_tensor(batch, "observation");
    auto act = batch.leaf<std::int64_t>("action");
    pb.action.assign(act.begin(), act.end());
    pb.returns = gae.returns;
    pb.advantages = gae.advantages;
    std::size_t N = pb.size(), A = agent_.config().n_actions;
    if (cfg_.normalize_advantages && N > 1) {
      double mean = 0.0, var = 0.0;
      for (double a : pb.advantages) mean += a;
      mean /= static_cast<double>(N);
      for (double a : pb.advantages) var += (a - mean) * (a - mean);
      double sd = std::sqrt(var / static_cast<double>(N));
      for (double& a : pb.advantages) a = (a - mean) / (sd + 1e-8);
    }
    Tensor logits = agent_.pi().forward(agent_.pi_params(params_), pb.observation);
    pb.old_log_probs.resize(N);
    for (std::size_t i = 0; i < N; ++i)
      pb.old_log_probs[i] = Categorical::from_logits(std::span<const double>(logits.data).subspan(i * A, A))
                                .log_prob(static_cast<std::size_t>(pb.action[i]));
    PgLossConfig lc{cfg_.value_coef, cfg_.entropy_coef, cfg_.ppo, cfg_.clip_eps};
    OptInfo info;
    if (!cfg_.ppo) {
      info.merge(step(pb, lc));
      return info;
    }
    std::vector<std::size_t> idx(N);
    for (std::size_t i = 0; i < N; ++i) idx[i] = i;
    std::size_t mb = std::max<std::size_t>(1, N / cfg_.minibatches);
    for (std::size_t e = 0; e < cfg_.epochs; ++e) {
      for (std::size_t i = N; i > 1; --i) std::swap(idx[i - 1], idx[rng_.below(i)]);
      for (std::size_t m = 0; m < cfg_.minibatches; ++m) {
        std::size_t lo = m * mb, hi = m + 1 == cfg_.minibatches ? N : std::min(N, lo + mb);
        if (lo >= hi) continue;
        info.merge(step(subset(pb, std::span(idx).subspan(lo, hi - lo)), lc));
      }
    }
    return info;
  }

 private:
  OptInfo step(const PgBatch& pb, const PgLossConfig& lc) {
    auto res = pg_loss(agent_, params_, pb, lc);
    OptInfo info;
    info.grad_norm = apply(res.grads, opt_, params_, 0, cfg_.grad_clip);
    ++updates_;
    info.loss = res.loss;
    info.entropy = res.entropy;
    info.kl = res.kl;
    info.clip_fraction = res.clip_fraction;
    info.updates = 1;
    info.samples = pb.size();
    return info;
  }

  PgBatch subset(const PgBatch& b, std::span<const std::size_t> idx) const {
    PgBatch s;
    std::size_t od = b.observation.cols();
    s.observation = Tensor({idx.size(), od});
    for (std::size_t k = 0; k < idx.size(); ++k) {
      std::size_t i = idx[k];
      std::copy_n(b.observation.data.begin() + static_cast<std::ptrdiff_t>(i * od), od,
                  s.observation.data.begin() + static_cast<std::ptrdiff_t>(k * od));
      s.action.push_back(b.action[i]);
      s.advantages.push_back(b.advantages[i]);
      s.returns.push_back(b.returns[i]);
      s.old_log_probs.push_back(b.old_log_probs[i]);
    }
    return s;
  }

  PgAgent agent_;
  PgConfig cfg_;
  Adam opt_;
  SlotRng rng_;
};

struct DdpgConfig {
  double gamma = 0.99;
  std::size_t n_step = 1;
  double actor_lr = 1e-3;
  double critic_lr = 1e-3;
  double tau = 0.005;
  std::size_t batch_size = 64;
  std::size_t min_steps_learn = 1000;
  std::size_t replay_size = 100000;
  double replay_ratio = 64.0;
  /// TD3 options: target smoothing noise, its clip, and the policy delay.
  double target_noise = 0.0;
  double noise_clip = 0.5;
  std::size_t policy_delay = 1;
  double grad_clip = 0.0;
  std::uint64_t seed = 0;
};

class DdpgAlgorithm final : public Algorithm {
 public:
  DdpgAlgorithm(const DdpgAgent& agent, DdpgConfig cfg, const StructSpec& batch_spec, std::size_t B)
      : agent_(agent), cfg_(cfg), rng_(SlotRng::for_slot(cfg.seed, 0, StreamKind::replay)),
        noise_rng_(SlotRng::for_slot(cfg.seed, 1, StreamKind::replay)) {
    if (!(cfg.tau > 0.0 && cfg.tau <= 1.0)) throw AlgorithmError("ddpg: tau must be in (0, 1]");
    if (cfg.policy_delay == 0) throw AlgorithmError("ddpg: policy delay must be >= 1");
    if ((cfg.target_noise > 0.0 || cfg.policy_delay > 1) && !agent.config().twin_critic)
      throw AlgorithmError("ddpg: TD3 options need the twin critic");
    params_ = agent.params();
    target_ = params_;
    na_ = agent.actor_tensors();
    nc_ = params_.count() - na_;
    actor_opt_ = Adam(take_params(params_, 0, na_), AdamConfig{.lr = cfg.actor_lr});
    critic_opt_ = Adam(take_params(params_, na_, nc_), AdamConfig{.lr = cfg.critic_lr});
    replay_ = std::make_unique<NStepReplay>(batch_spec, replay_rows(cfg.replay_size, B, cfg.n_step + 2), B, cfg.gamma,
                                            cfg.n_step);
  }

  std::string name() const override { return agent_.config().twin_critic ? "td3" : "ddpg"; }
  bool off_policy() const override { return true; }
  const ParamSet& target_params() const { return target_; }
  std::size_t samples_per_update() const override { return cfg_.batch_size; }
  void store(const StructArray& batch) override { replay_->append(batch); }
  bool ready(std::size_t env_steps) const override {
    return env_steps >= cfg_.min_steps_learn && replay_->valid_T() > 0;
  }

  OptInfo update(const ReplayAccess& access) override {
    TransitionBatch tb;
    access.read([&] { tb = replay_->sample(cfg_.batch_size, rng_); });
    auto batch = DdpgBatch::from(tb);
    Tensor noise;
    if (cfg_.target_noise > 0.0) {
      noise = Tensor(batch.action.shape);
      double s = agent_.scale();
      for (auto& v : noise.data)
        v = std::clamp(cfg_.target_noise * s * noise_rng_.normal(), -cfg_.noise_clip * s, cfg_.noise_clip * s);
    }
    auto cr = ddpg_critic_loss(agent_, params_, target_, batch, noise);
    OptInfo info;
    auto cg = take_params(cr.grads, na_, nc_);
    auto cp = take_params(params_, na_, nc_);
    info.grad_norm = apply(cg, critic_opt_, cp, 0, cfg_.grad_clip);
    put_params(params_, na_, cp);
    ++updates_;
    if (updates_ % cfg_.policy_delay == 0) {
      auto ar = actor_loss(batch.observation);
      auto ag = take_params(ar.grads, 0, na_);
      auto ap = take_params(params_, 0, na_);
      apply(ag, actor_opt_, ap, 1, cfg_.grad_clip);
      put_params(params_, 0, ap);
      soft_update(target_, params_, cfg_.tau);
    }
    info.loss = cr.loss;
    DqnAlgorithm::fill_td(info, cr.td_abs);
    info.updates = 1;
    info.samples = cfg_.batch_size;
    info.checksum_failures = tb.checksum_failures;
    return info;
  }

  OptInfo process_batch(const StructArray& batch, std::size_t env_steps) override {
    store(batch);
    OptInfo info;
    std::size_t due = credit_.add(cfg_.replay_ratio, batch.leading_count(), cfg_.batch_size);
    if (!ready(env_steps)) return info;
    ReplayAccess direct;
    for (std::size_t k = 0; k < due; ++k) info.merge(update(direct));
    return info;
  }

 private:
  LossResult actor_loss(const Tensor& obs) const { return ddpg_actor_loss(agent_, params_, obs); }

  DdpgAgent agent_;
  DdpgConfig cfg_;
  ParamSet target_;
  std::size_t na_ = 0, nc_ = 0;
  Adam actor_opt_, critic_opt_;
  std::unique_ptr<NStepReplay> replay_;
  SlotRng rng_, noise_rng_;
  UpdateCredit credit_;
};

struct R2d1Config {
  double gamma = 0.99;
  std::size_t n_step = 1;
  bool double_q = true;
  bool value_rescaling = false;
  double huber_delta = 1.0;
  double lr = 1e-3;
  std::size_t batch_size = 16;
  std::size_t min_steps_learn = 1000;
  std::size_t replay_size = 50000;
  double replay_ratio = 4.0;
  SequenceSpec sequence{0, 8, 4, 1};
  bool prioritized = true;
  PrioritySpec priority{0.6, 0.4, 0, 1e-3};
  double priority_eta = 0.9;
  PrioritySegment priority_segment = PrioritySegment::full;
  TargetUpdate target{250, 1.0};
  double grad_clip = 10.0;
  std::uint64_t seed = 0;
};

class R2d1Algorithm final : public Algorithm {
 public:
  R2d1Algorithm(const RecurrentQAgent& agent, R2d1Config cfg, const StructSpec& batch_spec, std::size_t B)
      : agent_(agent), cfg_(cfg), rng_(SlotRng::for_slot(cfg.seed, 0, StreamKind::replay)) {
    if (cfg.sequence.lookahead_T < cfg.n_step) throw AlgorithmError("r2d1: lookahead rows must cover n_step");
    params_ = agent.params();
    target_ = params_;
    opt_ = Adam(params_, AdamConfig{.lr = cfg.lr});
    std::size_t rows = replay_rows(cfg.replay_size, B, cfg.sequence.length());
    rows = std::max(cfg.sequence.period, rows / cfg.sequence.period * cfg.sequence.period);
    std::optional<PrioritySpec> ps;
    if (cfg.prioritized) ps = cfg.priority;
    replay_ = std::make_unique<SequenceReplay>(batch_spec, rows, B, cfg.sequence, ps, cfg.priority_eta);
    loss_cfg_ = {cfg.gamma,      cfg.n_step,          cfg.sequence.warmup_T, cfg.sequence.train_T, cfg.double_q,
                 cfg.value_rescaling, 1e-3, cfg.huber_delta, cfg.priority_segment};
  }

  std::string name() const override { return "r2d1"; }
  bool off_policy() const override { return true; }
  SequenceReplay& replay() { return *replay_; }
  std::size_t samples_per_update() const override { return cfg_.batch_size * cfg_.sequence.train_T; }
  void store(const StructArray& batch) override { replay_->append(batch); }
  bool ready(std::size_t env_steps) const override {
    return env_steps >= cfg_.min_steps_learn && replay_->valid_starts() > 0;
  }

  OptInfo update(const ReplayAccess& access) override {
    SequenceBatch sb;
    access.read([&] { sb = replay_->sample(cfg_.batch_size, rng_); });
    auto res = r2d1_loss(agent_, params_, target_, sb, loss_cfg_);
    OptInfo info;
    info.grad_norm = apply(res.grads, opt_, params_, 0, cfg_.grad_clip);
    std::vector<double> prio(sb.b.size());
    std::vector<double> all;
    for (std::size_t i = 0; i < prio.size(); ++i) {
      prio[i] = replay_->aggregate_priority(res.td_abs[i]);
      all.insert(all.end(), res.td_abs[i].begin(), res.td_abs[i].end());
    }
    access.write([&] { replay_->update_priorities(sb.start_t, sb.b, prio); });
    ++updates_;
    target_sync(params_, target_, cfg_.target, updates_);
    info.loss = res.loss;
    DqnAlgorithm::fill_td(info, all);
    info.updates = 1;
    info.samples = samples_per_update();
    info.checksum_failures = sb.checksum_failures;
    return info;
  }

  OptInfo process_batch(const StructArray& batch, std::size_t env_steps) override {
    store(batch);
    OptInfo info;
    std::size_t due = credit_.add(cfg_.replay_ratio, batch.leading_count(), samples_per_update());
    if (!ready(env_steps)) return info;
    ReplayAccess direct;
    for (std::size_t k = 0; k < due; ++k) info.merge(update(direct));
    return info;
  }

 private:
  RecurrentQAgent agent_;
  R2d1Config cfg_;
  R2d1LossConfig loss_cfg_;
  ParamSet target_;
  Adam opt_;
  std::unique_ptr<SequenceReplay> replay_;
  SlotRng rng_;
  UpdateCredit credit_;
};

}  // namespace rlstack
