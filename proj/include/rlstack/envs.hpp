#pragma once

// Built-in toy environments with known solutions.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <numbers>
#include <thread>

#include "rlstack/env.hpp"

namespace rlstack {

/// Chain of N states; start at 0, actions {0: left, 1: right}. Reaching state
/// N-1 pays 1 and terminates; all other steps pay 0.
class ChainMdp final : public Env {
 public:
  explicit ChainMdp(std::size_t n = 10, std::size_t max_steps = 100) : n_(n), max_steps_(max_steps) {
    if (n < 2) throw EnvError("chain needs N >= 2");
  }

  std::string name() const override { return "chain"; }
  Space observation_space() const override {
    return Space::box(std::vector<double>(n_, 0.0), std::vector<double>(n_, 1.0));
  }
  Space action_space() const override { return Space::discrete(2); }

  std::vector<float> reset() override {
    state_ = 0;
    steps_ = 0;
    return observe();
  }

  EnvStep step(const Action& a) override {
    check_action(a);
    if (a.index == 1) ++state_;
    else if (state_ > 0) --state_;
    ++steps_;
    EnvStep s;
    bool terminal = state_ == n_ - 1;
    bool timeout = !terminal && steps_ >= max_steps_;
    s.reward = terminal ? 1.0 : 0.0;
    s.done = terminal || timeout;
    s.env_info = {timeout ? 1.0 : 0.0};
    s.observation = observe();
    return s;
  }

  std::size_t state() const { return state_; }

 private:
  std::vector<float> observe() const {
    std::vector<float> o(n_, 0.0f);
    o[state_] = 1.0f;
    return o;
  }
  std::size_t n_, max_steps_;
  std::size_t state_ = 0, steps_ = 0;
};

/// Optimal action values of the chain by value iteration; row N-1 (terminal) is zero.
inline std::vector<std::array<double, 2>> chain_optimal_q(std::size_t n, double gamma) {
  if (n < 2 || !(gamma > 0.0 && gamma < 1.0)) throw EnvError("chain_optimal_q: need N >= 2 and 0 < gamma < 1");
  std::vector<std::array<double, 2>> q(n, {0.0, 0.0});
  auto value = [&](std::size_t s) { return s == n - 1 ? 0.0 : std::max(q[s][0], q[s][1]); };
  for (int iter = 0; iter < 100000; ++iter) {
    double residual = 0.0;
    for (std::size_t s = 0; s + 1 < n; ++s) {
      double left = gamma * value(s == 0 ? 0 : s - 1);
      double right = s + 1 == n - 1 ? 1.0 : gamma * value(s + 1);
      residual = std::max({residual, std::abs(left - q[s][0]), std::abs(right - q[s][1])});
      q[s] = {left, right};
    }
    if (residual < 1e-12) break;
  }
  return q;
}

/// Classic cart-pole balancing task (Euler integration, 500-step limit).
class CartPole final : public Env {
 public:
  static constexpr double kGravity = 9.8;
  static constexpr double kMassCart = 1.0;
  static constexpr double kMassPole = 0.1;
  static constexpr double kHalfLength = 0.5;
  static constexpr double kForce = 10.0;
  static constexpr double kTau = 0.02;
  static constexpr double kXLimit = 2.4;
  static constexpr double kThetaLimit = 12.0 * 2.0 * std::numbers::pi / 360.0;

  explicit CartPole(std::size_t max_steps = 500) : max_steps_(max_steps) {}

  std::string name() const override { return "cartpole"; }
  Space observation_space() const override {
    double inf = 1e9;
    return Space::box({-4.8, -inf, -0.42, -inf}, {4.8, inf, 0.42, inf});
  }
  Space action_space() const override { return Space::discrete(2); }

  std::vector<float> reset() override {
    for (auto& v : s_) v = -0.05 + 0.1 * rng_.uniform();
    steps_ = 0;
    return observe();
  }

  EnvStep step(const Action& a) override {
    check_action(a);
    auto& [x, x_dot, theta, theta_dot] = s_;
    double force = a.index == 1 ? kForce : -kForce;
    double total = kMassCart + kMassPole;
    double pml = kMassPole * kHalfLength;
    double c = std::cos(theta), sn = std::sin(theta);
    double temp = (force + pml * theta_dot * theta_dot * sn) / total;
    double theta_acc = (kGravity * sn - c * temp) / (kHalfLength * (4.0 / 3.0 - kMassPole * c * c / total));
    double x_acc = temp - pml * theta_acc * c / total;
    x += kTau * x_dot;
    x_dot += kTau * x_acc;
    theta += kTau * theta_dot;
    theta_dot += kTau * theta_acc;
    ++steps_;
    bool terminal = std::abs(x) > kXLimit || std::abs(theta) > kThetaLimit;
    bool timeout = !terminal && steps_ >= max_steps_;
    EnvStep s;
    s.reward = 1.0;
    s.done = terminal || timeout;
    s.env_info = {timeout ? 1.0 : 0.0};
    s.observation = observe();
    return s;
  }

  const std::array<double, 4>& state() const { return s_; }
  void set_state(const std::array<double, 4>& s) { s_ = s; }

 private:
  std::vector<float> observe() const {
    return {static_cast<float>(s_[0]), static_cast<float>(s_[1]), static_cast<float>(s_[2]), static_cast<float>(s_[3])};
  }
  std::size_t max_steps_;
  std::array<double, 4> s_{};
  std::size_t steps_ = 0;
};

/// 1-D point navigation: x' = clamp(x + 0.1 a), reward -|x'|, done at |x'| < 0.01.
class PointNav1d final : public Env {
 public:
  static constexpr double kGain = 0.1;
  static constexpr double kGoal = 0.01;

  explicit PointNav1d(std::size_t max_steps = 200) : max_steps_(max_steps) {}

  std::string name() const override { return "pointnav"; }
  Space observation_space() const override { return Space::box({-1.0}, {1.0}); }
  Space action_space() const override { return Space::box({-1.0}, {1.0}); }

  std::vector<float> reset() override {
    x_ = -1.0 + 2.0 * rng_.uniform();
    steps_ = 0;
    return {static_cast<float>(x_)};
  }

  EnvStep step(const Action& a) override {
    check_action(a);
    x_ = std::clamp(x_ + kGain * static_cast<double>(a.value[0]), -1.0, 1.0);
    ++steps_;
    bool terminal = std::abs(x_) < kGoal;
    bool timeout = !terminal && steps_ >= max_steps_;
    EnvStep s;
    s.reward = -std::abs(x_);
    s.done = terminal || timeout;
    s.env_info = {timeout ? 1.0 : 0.0};
    s.observation = {static_cast<float>(x_)};
    return s;
  }

  double position() const { return x_; }

  /// Saturated proportional controller: full thrust toward the goal, exact landing on the last step.
  static double optimal_action(double x) { return std::clamp(-x / kGain, -1.0, 1.0); }

 private:
  std::size_t max_steps_;
  double x_ = 0.0;
  std::size_t steps_ = 0;
};

/// Memory task: a cue bit is shown only on the first observation, followed by
/// blank corridor observations; on the final (flagged) step the action that
/// matches the cue pays 1. Observation: [cue==0, cue==1, final].
class MaskedChain final : public Env {
 public:
  explicit MaskedChain(std::size_t corridor = 6) : corridor_(corridor) {
    if (corridor == 0) throw EnvError("masked chain corridor must be positive");
  }

  std::string name() const override { return "masked_chain"; }
  Space observation_space() const override { return Space::box({0, 0, 0}, {1, 1, 1}); }
  Space action_space() const override { return Space::discrete(2); }

  std::vector<float> reset() override {
    cue_ = static_cast<int>(rng_.below(2));
    t_ = 0;
    return observe();
  }

  EnvStep step(const Action& a) override {
    check_action(a);
    EnvStep s;
    s.env_info = {0.0};
    if (t_ < corridor_) {
      ++t_;
      s.observation = observe();
      return s;
    }
    s.reward = a.index == cue_ ? 1.0 : 0.0;
    s.done = true;
    s.observation = {0.0f, 0.0f, 0.0f};
    return s;
  }

  int cue() const { return cue_; }

 private:
  std::vector<float> observe() const {
    if (t_ == 0) return {cue_ == 0 ? 1.0f : 0.0f, cue_ == 1 ? 1.0f : 0.0f, 0.0f};
    return {0.0f, 0.0f, t_ == corridor_ ? 1.0f : 0.0f};
  }
  std::size_t corridor_;
  int cue_ = 0;
  std::size_t t_ = 0;
};

/// Adds a fixed wall-clock cost to every step of the wrapped environment.
class DelayedEnv final : public Env {
 public:
  DelayedEnv(std::unique_ptr<Env> inner, std::chrono::microseconds cost) : inner_(std::move(inner)), cost_(cost) {}

  std::string name() const override { return inner_->name(); }
  Space observation_space() const override { return inner_->observation_space(); }
  Space action_space() const override { return inner_->action_space(); }
  StructSpec info_spec() const override { return inner_->info_spec(); }
  void seed(SlotRng rng) override { inner_->seed(rng); }
  std::vector<float> reset() override { return inner_->reset(); }
  EnvStep step(const Action& a) override {
    std::this_thread::sleep_for(cost_);
    return inner_->step(a);
  }

 private:
  std::unique_ptr<Env> inner_;
  std::chrono::microseconds cost_;
};

}  // namespace rlstack
