#pragma once

// Agents: model input assembly, per-slot exploration and recurrent state,
// action selection, and parameter refresh.
//
// Every per-slot random draw comes from that slot's own counter-based stream,
// and every model evaluation is row-independent, so an agent's output for a
// slot never depends on which other slots share the call.

#include <chrono>
#include <cmath>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "rlstack/distributions.hpp"
#include "rlstack/env.hpp"
#include "rlstack/mlp.hpp"
#include "rlstack/rng.hpp"
#include "rlstack/rnn.hpp"
#include "rlstack/struct_array.hpp"

namespace rlstack {

class AgentError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Leading-dimension bookkeeping.

struct LeadingDims {
  bool has_T = false, has_B = false;
  std::size_t T = 1, B = 1;
  std::vector<std::size_t> trailing;

  /// Shape [T*B, trailing...] used by the model.
  std::vector<std::size_t> flat_shape() const {
    std::vector<std::size_t> s{T * B};
    s.insert(s.end(), trailing.begin(), trailing.end());
    return s;
  }
};

inline LeadingDims infer_leading_dims(std::span<const std::size_t> shape, std::size_t trailing_rank) {
  if (shape.size() < trailing_rank || shape.size() > trailing_rank + 2)
    throw AgentError("input rank " + std::to_string(shape.size()) + " incompatible with trailing rank " +
                     std::to_string(trailing_rank));
  LeadingDims d;
  std::size_t lead = shape.size() - trailing_rank;
  d.trailing.assign(shape.begin() + static_cast<std::ptrdiff_t>(lead), shape.end());
  if (lead == 2) {
    d.has_T = d.has_B = true;
    d.T = shape[0];
    d.B = shape[1];
  } else if (lead == 1) {
    d.has_B = true;
    d.B = shape[0];
  }
  return d;
}

/// Reshapes a model output [T*B, out...] back to the caller's leading layout.
inline Tensor restore_leading_dims(Tensor y, const LeadingDims& d) {
  std::vector<std::size_t> out_trailing(y.shape.begin() + 1, y.shape.end());
  std::vector<std::size_t> shape;
  if (d.has_T) shape.push_back(d.T);
  if (d.has_B) shape.push_back(d.B);
  shape.insert(shape.end(), out_trailing.begin(), out_trailing.end());
  if (detail::product(shape) != y.size()) throw AgentError("restore_leading_dims: size mismatch");
  y.shape = std::move(shape);
  return y;
}

// ---------------------------------------------------------------------------
// Exploration.

/// argmax with ties broken toward the lowest index.
inline std::size_t argmax_lowest(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

/// Per slot: with probability eps a uniform action, else the greedy one.
inline std::size_t epsilon_greedy_one(std::span<const double> q, double eps, SlotRng& rng) {
  if (eps < 0.0 || eps > 1.0) throw AgentError("epsilon outside [0, 1]");
  double u = rng.uniform();
  if (u < eps) return static_cast<std::size_t>(rng.below(q.size()));
  return argmax_lowest(q);
}

inline std::vector<std::size_t> epsilon_greedy(const Tensor& q, std::span<const double> eps,
                                               std::span<SlotRng> rngs) {
  std::size_t B = q.rows(), n = q.cols();
  if (eps.size() != B || rngs.size() != B) throw AgentError("epsilon_greedy: shape mismatch");
  std::vector<std::size_t> a(B);
  for (std::size_t b = 0; b < B; ++b)
    a[b] = epsilon_greedy_one(std::span(q.data).subspan(b * n, n), eps[b], rngs[b]);
  return a;
}

/// eps_i = base^(1 + 7 i / (B - 1)).
inline double apex_epsilon(std::size_t slot, std::size_t total_slots, double base = 0.4) {
  if (total_slots <= 1) return base;
  return std::pow(base, 1.0 + 7.0 * static_cast<double>(slot) / static_cast<double>(total_slots - 1));
}

struct EpsilonConfig {
  double initial = 1.0;
  double final = 0.01;
  std::size_t anneal_steps = 10000;
  /// When positive, each slot uses the fixed per-slot vector apex_epsilon(slot, B, vector_base).
  double vector_base = 0.0;
  double eval = 0.0;

  double at(std::size_t step, std::size_t slot, std::size_t total_slots) const {
    if (vector_base > 0.0) return apex_epsilon(slot, total_slots, vector_base);
    if (anneal_steps == 0 || step >= anneal_steps) return final;
    double f = static_cast<double>(step) / static_cast<double>(anneal_steps);
    return initial + f * (final - initial);
  }
};

// ---------------------------------------------------------------------------
// Parameter publishing.

/// Latest published parameters plus a version counter.
class ParamMailbox {
 public:
  std::uint64_t publish(const ParamSet& p) {
    auto snap = std::make_shared<const ParamSet>(p);
    std::lock_guard lock(mu_);
    latest_ = std::move(snap);
    return ++version_;
  }

  /// The latest snapshot if newer than `have`.
  std::optional<std::pair<std::shared_ptr<const ParamSet>, std::uint64_t>> fetch(std::uint64_t have) const {
    std::lock_guard lock(mu_);
    if (version_ <= have || !latest_) return std::nullopt;
    return std::make_pair(latest_, version_);
  }

  std::uint64_t version() const {
    std::lock_guard lock(mu_);
    return version_;
  }

 private:
  mutable std::mutex mu_;
  std::shared_ptr<const ParamSet> latest_;
  std::uint64_t version_ = 0;
};

// ---------------------------------------------------------------------------

struct AgentInputs {
  Tensor observation;               // [n, obs_dim]
  std::vector<Action> prev_action;  // [n]
  std::vector<double> prev_reward;  // [n]
};

struct AgentStep {
  std::vector<Action> action;
  StructArray info;  // [n] with the agent's info spec
};

class Agent {
 public:
  virtual ~Agent() = default;

  virtual std::string name() const = 0;
  virtual StructSpec info_spec() const = 0;
  virtual std::unique_ptr<Agent> clone() const = 0;
  virtual bool recurrent() const { return false; }

  /// Sets up per-slot streams and state for `total_slots` global slots.
  virtual void initialize(std::size_t total_slots, std::uint64_t seed, StreamKind kind = StreamKind::agent) {
    total_slots_ = total_slots;
    rngs_.clear();
    for (std::size_t s = 0; s < total_slots; ++s) rngs_.push_back(SlotRng::for_slot(seed, s, kind));
  }

  /// Acts for the listed global slots; rows of `in` correspond to `slots`.
  virtual AgentStep act(const AgentInputs& in, std::span<const std::size_t> slots) = 0;

  /// Clears per-slot episode state (recurrent state).
  virtual void reset_slot(std::size_t) {}

  const ParamSet& params() const { return params_; }
  virtual void set_params(const ParamSet& p, std::uint64_t version = 0) {
    if (!params_.same_shapes(p)) throw AgentError("set_params: shape mismatch");
    params_ = p;
    version_ = version;
  }
  std::uint64_t param_version() const { return version_; }

  /// Pulls newer parameters from the mailbox; returns true when refreshed.
  bool refresh_params(const ParamMailbox& box) {
    auto got = box.fetch(version_);
    if (!got) return false;
    set_params(*got->first, got->second);
    return true;
  }

  void set_eval(bool e) { eval_ = e; }
  bool eval_mode() const { return eval_; }
  void set_sample_step(std::size_t s) { sample_step_ = s; }
  std::size_t total_slots() const { return total_slots_; }
  const SlotRng& slot_rng(std::size_t slot) const { return rngs_.at(slot); }

 protected:
  void check_inputs(const AgentInputs& in, std::span<const std::size_t> slots, std::size_t obs_dim) const {
    if (in.observation.cols() != obs_dim || in.observation.rows() != slots.size() ||
        in.prev_action.size() != slots.size() || in.prev_reward.size() != slots.size())
      throw AgentError(name() + ": input shape mismatch");
    for (auto s : slots)
      if (s >= rngs_.size()) throw AgentError(name() + ": slot " + std::to_string(s) + " not initialized");
  }

  ParamSet params_;
  std::uint64_t version_ = 0;
  std::vector<SlotRng> rngs_;
  std::size_t total_slots_ = 0;
  std::size_t sample_step_ = 0;
  bool eval_ = false;
};

// ---------------------------------------------------------------------------

struct QAgentConfig {
  std::size_t obs_dim = 1;
  std::size_t n_actions = 2;
  std::vector<std::size_t> hidden{64, 64};
  Activation activation = Activation::relu;
  bool dueling = false;
  /// Distributional head when positive.
  std::size_t atoms = 0;
  double v_min = -10.0, v_max = 10.0;
  EpsilonConfig epsilon;
};

/// Feed-forward Q agent (plain, dueling or categorical head) with epsilon-greedy selection.
class QAgent final : public Agent {
 public:
  QAgent(QAgentConfig cfg, std::uint64_t init_seed)
      : cfg_(std::move(cfg)),
        net_(MlpConfig{cfg_.obs_dim, cfg_.hidden, cfg_.n_actions, cfg_.activation, cfg_.dueling, cfg_.atoms}) {
    if (cfg_.atoms && !(cfg_.v_min < cfg_.v_max)) throw AgentError("categorical support needs v_min < v_max");
    std::mt19937_64 rng(init_seed);
    params_ = net_.init(rng);
  }

  std::string name() const override { return "q_agent"; }
  const QAgentConfig& config() const { return cfg_; }
  const Mlp& net() const { return net_; }
  std::unique_ptr<Agent> clone() const override { return std::make_unique<QAgent>(*this); }

  StructSpec info_spec() const override {
    StructSpec s;
    s.add_leaf("q", ElementKind::float32, {cfg_.n_actions});
    return s;
  }

  std::vector<double> support() const {
    std::vector<double> z(cfg_.atoms);
    for (std::size_t i = 0; i < cfg_.atoms; ++i)
      z[i] = cfg_.v_min + (cfg_.v_max - cfg_.v_min) * static_cast<double>(i) / static_cast<double>(cfg_.atoms - 1);
    return z;
  }

  /// Q values [rows, n_actions] for any parameter set with this layout.
  Tensor q_values(std::span<const Tensor> p, const Tensor& obs) const {
    Tensor out = net_.forward(p, obs);
    if (!cfg_.atoms) return out;
    std::size_t A = cfg_.n_actions, Z = cfg_.atoms;
    std::size_t rows = out.size() / (A * Z);
    Tensor q({rows, A});
    auto z = support();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t a = 0; a < A; ++a) {
        auto p_a = softmax(std::span<const double>(out.data).subspan((r * A + a) * Z, Z));
        double v = 0.0;
        for (std::size_t k = 0; k < Z; ++k) v += p_a[k] * z[k];
        q.data[r * A + a] = v;
      }
    return q;
  }

  double epsilon_for(std::size_t slot) const {
    return eval_ ? cfg_.epsilon.eval : cfg_.epsilon.at(sample_step_, slot, total_slots_);
  }

  AgentStep act(const AgentInputs& in, std::span<const std::size_t> slots) override {
    check_inputs(in, slots, cfg_.obs_dim);
    Tensor q = q_values(params_.tensors, in.observation);
    AgentStep step{{}, StructArray::allocate(info_spec(), {slots.size()})};
    auto qinfo = step.info.leaf<float>(0);
    std::size_t A = cfg_.n_actions;
    for (std::size_t i = 0; i < slots.size(); ++i) {
      auto row = std::span<const double>(q.data).subspan(i * A, A);
      std::size_t a = epsilon_greedy_one(row, epsilon_for(slots[i]), rngs_[slots[i]]);
      step.action.push_back(Action{static_cast<std::int64_t>(a), {}});
      for (std::size_t k = 0; k < A; ++k) qinfo[i * A + k] = static_cast<float>(row[k]);
    }
    return step;
  }

 private:
  QAgentConfig cfg_;
  Mlp net_;
};

// ---------------------------------------------------------------------------

struct RecurrentQAgentConfig {
  std::size_t obs_dim = 1;
  std::size_t n_actions = 2;
  std::size_t hidden = 32;
  EpsilonConfig epsilon;
};

/// Recurrent Q agent. Model input per step is [observation, one-hot previous
/// action, previous reward]; the pre-step hidden state is recorded in agent_info.
class RecurrentQAgent final : public Agent {
 public:
  RecurrentQAgent(RecurrentQAgentConfig cfg, std::uint64_t init_seed)
      : cfg_(std::move(cfg)), rnn_(RnnConfig{input_dim(cfg_), cfg_.hidden, cfg_.n_actions}) {
    std::mt19937_64 rng(init_seed);
    params_ = rnn_.init(rng);
  }

  static std::size_t input_dim(const RecurrentQAgentConfig& c) { return c.obs_dim + c.n_actions + 1; }

  std::string name() const override { return "recurrent_q_agent"; }
  bool recurrent() const override { return true; }
  const RecurrentQAgentConfig& config() const { return cfg_; }
  const Rnn& rnn() const { return rnn_; }
  std::unique_ptr<Agent> clone() const override { return std::make_unique<RecurrentQAgent>(*this); }

  StructSpec info_spec() const override {
    StructSpec s;
    s.add_leaf("q", ElementKind::float32, {cfg_.n_actions});
    s.add_leaf("prev_rnn_state", ElementKind::float64, {cfg_.hidden});
    return s;
  }

  void initialize(std::size_t total_slots, std::uint64_t seed, StreamKind kind = StreamKind::agent) override {
    Agent::initialize(total_slots, seed, kind);
    state_.assign(total_slots * cfg_.hidden, 0.0);
  }

  void reset_slot(std::size_t slot) override {
    std::fill_n(state_.begin() + static_cast<std::ptrdiff_t>(slot * cfg_.hidden), cfg_.hidden, 0.0);
  }

  std::span<const double> slot_state(std::size_t slot) const {
    return std::span(state_).subspan(slot * cfg_.hidden, cfg_.hidden);
  }

  /// Builds one model input row into `dst`.
  static void encode(const RecurrentQAgentConfig& c, std::span<const float> obs, std::int64_t prev_action,
                     double prev_reward, std::span<double> dst) {
    for (std::size_t k = 0; k < c.obs_dim; ++k) dst[k] = obs[k];
    for (std::size_t k = 0; k < c.n_actions; ++k) dst[c.obs_dim + k] = 0.0;
    if (prev_action >= 0 && static_cast<std::size_t>(prev_action) < c.n_actions)
      dst[c.obs_dim + static_cast<std::size_t>(prev_action)] = 1.0;
    dst[c.obs_dim + c.n_actions] = prev_reward;
  }

  AgentStep act(const AgentInputs& in, std::span<const std::size_t> slots) override {
    check_inputs(in, slots, cfg_.obs_dim);
    std::size_t n = slots.size(), H = cfg_.hidden, A = cfg_.n_actions, D = input_dim(cfg_);
    Tensor x({1, n, D});
    RnnState h0 = RnnState::zeros(n, H);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<float> obs(in.observation.data.begin() + static_cast<std::ptrdiff_t>(i * cfg_.obs_dim),
                             in.observation.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * cfg_.obs_dim));
      encode(cfg_, obs, in.prev_action[i].index, in.prev_reward[i], std::span(x.data).subspan(i * D, D));
      auto st = slot_state(slots[i]);
      std::copy(st.begin(), st.end(), h0.hidden.data.begin() + static_cast<std::ptrdiff_t>(i * H));
    }
    auto res = rnn_.forward(params_.tensors, x, h0);
    AgentStep step{{}, StructArray::allocate(info_spec(), {n})};
    auto qinfo = step.info.leaf<float>("q");
    auto hinfo = step.info.leaf<double>("prev_rnn_state");
    for (std::size_t i = 0; i < n; ++i) {
      auto row = std::span<const double>(res.y.data).subspan(i * A, A);
      double eps = eval_ ? cfg_.epsilon.eval : cfg_.epsilon.at(sample_step_, slots[i], total_slots_);
      std::size_t a = epsilon_greedy_one(row, eps, rngs_[slots[i]]);
      step.action.push_back(Action{static_cast<std::int64_t>(a), {}});
      for (std::size_t k = 0; k < A; ++k) qinfo[i * A + k] = static_cast<float>(row[k]);
      for (std::size_t k = 0; k < H; ++k) {
        hinfo[i * H + k] = h0.hidden.data[i * H + k];
        state_[slots[i] * H + k] = res.final_state.hidden.data[i * H + k];
      }
    }
    return step;
  }

 private:
  RecurrentQAgentConfig cfg_;
  Rnn rnn_;
  std::vector<double> state_;
};

// ---------------------------------------------------------------------------

struct PgAgentConfig {
  std::size_t obs_dim = 1;
  std::size_t n_actions = 2;
  std::vector<std::size_t> hidden{64, 64};
  Activation activation = Activation::tanh;
};

/// Discrete stochastic policy with a separate value network. Parameters are
/// the policy tensors followed by the value tensors.
class PgAgent final : public Agent {
 public:
  PgAgent(PgAgentConfig cfg, std::uint64_t init_seed)
      : cfg_(std::move(cfg)), pi_(MlpConfig{cfg_.obs_dim, cfg_.hidden, cfg_.n_actions, cfg_.activation}),
        v_(MlpConfig{cfg_.obs_dim, cfg_.hidden, 1, cfg_.activation}) {
    std::mt19937_64 rng(init_seed);
    params_ = pi_.init(rng, "pi.", 0.01);
    params_.append(v_.init(rng, "v."));
  }

  std::string name() const override { return "pg_agent"; }
  const PgAgentConfig& config() const { return cfg_; }
  const Mlp& pi() const { return pi_; }
  const Mlp& v() const { return v_; }
  std::size_t pi_tensors() const { return pi_.num_tensors(); }
  std::unique_ptr<Agent> clone() const override { return std::make_unique<PgAgent>(*this); }

  StructSpec info_spec() const override {
    StructSpec s;
    s.add_leaf("value", ElementKind::float64);
    s.add_leaf("log_prob", ElementKind::float64);
    return s;
  }

  std::span<const Tensor> pi_params(const ParamSet& p) const { return std::span(p.tensors).subspan(0, pi_tensors()); }
  std::span<const Tensor> v_params(const ParamSet& p) const {
    return std::span(p.tensors).subspan(pi_tensors(), v_.num_tensors());
  }

  AgentStep act(const AgentInputs& in, std::span<const std::size_t> slots) override {
    check_inputs(in, slots, cfg_.obs_dim);
    Tensor logits = pi_.forward(pi_params(params_), in.observation);
    Tensor value = v_.forward(v_params(params_), in.observation);
    AgentStep step{{}, StructArray::allocate(info_spec(), {slots.size()})};
    std::size_t A = cfg_.n_actions;
    for (std::size_t i = 0; i < slots.size(); ++i) {
      auto dist = Categorical::from_logits(std::span<const double>(logits.data).subspan(i * A, A));
      std::size_t a = eval_ ? dist.argmax() : dist.sample(rngs_[slots[i]]);
      step.action.push_back(Action{static_cast<std::int64_t>(a), {}});
      step.info.leaf<double>("value")[i] = value.data[i];
      step.info.leaf<double>("log_prob")[i] = dist.log_prob(a);
    }
    return step;
  }

 private:
  PgAgentConfig cfg_;
  Mlp pi_, v_;
};

// ---------------------------------------------------------------------------

struct DdpgAgentConfig {
  std::size_t obs_dim = 1;
  std::size_t action_dim = 1;
  std::vector<std::size_t> hidden{64, 64};
  double action_low = -1.0, action_high = 1.0;
  double exploration_sigma = 0.1;
  bool twin_critic = false;
  /// Uniform random actions for this many sampler steps before using the actor.
  std::size_t random_steps = 0;
};

/// Deterministic tanh actor with Gaussian exploration noise, plus critic(s).
/// Parameters: actor tensors, then q1 tensors, then q2 tensors when twin.
class DdpgAgent final : public Agent {
 public:
  DdpgAgent(DdpgAgentConfig cfg, std::uint64_t init_seed)
      : cfg_(std::move(cfg)), actor_(MlpConfig{cfg_.obs_dim, cfg_.hidden, cfg_.action_dim, Activation::relu}),
        critic_(MlpConfig{cfg_.obs_dim + cfg_.action_dim, cfg_.hidden, 1, Activation::relu}) {
    std::mt19937_64 rng(init_seed);
    params_ = actor_.init(rng, "mu.", 0.1);
    params_.append(critic_.init(rng, "q1."));
    if (cfg_.twin_critic) params_.append(critic_.init(rng, "q2."));
  }

  std::string name() const override { return "ddpg_agent"; }
  const DdpgAgentConfig& config() const { return cfg_; }
  const Mlp& actor() const { return actor_; }
  const Mlp& critic() const { return critic_; }
  std::unique_ptr<Agent> clone() const override { return std::make_unique<DdpgAgent>(*this); }

  std::size_t actor_tensors() const { return actor_.num_tensors(); }
  std::size_t critic_tensors() const { return critic_.num_tensors(); }
  std::span<const Tensor> mu_params(const ParamSet& p) const { return std::span(p.tensors).subspan(0, actor_tensors()); }
  std::span<const Tensor> q_params(const ParamSet& p, std::size_t which) const {
    return std::span(p.tensors).subspan(actor_tensors() + which * critic_tensors(), critic_tensors());
  }

  double scale() const { return 0.5 * (cfg_.action_high - cfg_.action_low); }
  double center() const { return 0.5 * (cfg_.action_high + cfg_.action_low); }

  /// Actor output mapped into the action box: center + scale * tanh(net(obs)).
  Tensor mu(std::span<const Tensor> actor_params, const Tensor& obs, Tensor* pre = nullptr,
            Mlp::Cache* cache = nullptr) const {
    Tensor raw = actor_.forward(actor_params, obs, cache);
    Tensor out = raw;
    for (auto& v : out.data) v = center() + scale() * std::tanh(v);
    if (pre) *pre = std::move(raw);
    return out;
  }

  StructSpec info_spec() const override {
    StructSpec s;
    s.add_leaf("mu", ElementKind::float32, {cfg_.action_dim});
    return s;
  }

  AgentStep act(const AgentInputs& in, std::span<const std::size_t> slots) override {
    check_inputs(in, slots, cfg_.obs_dim);
    Tensor m = mu(mu_params(params_), in.observation);
    AgentStep step{{}, StructArray::allocate(info_spec(), {slots.size()})};
    std::size_t D = cfg_.action_dim;
    bool random = !eval_ && sample_step_ < cfg_.random_steps;
    for (std::size_t i = 0; i < slots.size(); ++i) {
      Action a;
      auto& rng = rngs_[slots[i]];
      for (std::size_t k = 0; k < D; ++k) {
        double v = m.data[i * D + k];
        if (random) v = cfg_.action_low + (cfg_.action_high - cfg_.action_low) * rng.uniform();
        else if (!eval_) v += cfg_.exploration_sigma * scale() * rng.normal();
        v = std::clamp(v, cfg_.action_low, cfg_.action_high);
        a.value.push_back(static_cast<float>(v));
        step.info.leaf<float>(0)[i * D + k] = static_cast<float>(m.data[i * D + k]);
      }
      step.action.push_back(std::move(a));
    }
    return step;
  }

 private:
  DdpgAgentConfig cfg_;
  Mlp actor_, critic_;
};

// ---------------------------------------------------------------------------

/// Adds a fixed wall-clock cost per acted slot to a wrapped agent.
class DelayedAgent final : public Agent {
 public:
  DelayedAgent(std::unique_ptr<Agent> inner, std::chrono::microseconds per_slot)
      : inner_(std::move(inner)), per_slot_(per_slot) {
    params_ = inner_->params();
  }
  DelayedAgent(const DelayedAgent& o) : Agent(o), inner_(o.inner_->clone()), per_slot_(o.per_slot_) {}

  std::string name() const override { return inner_->name(); }
  StructSpec info_spec() const override { return inner_->info_spec(); }
  bool recurrent() const override { return inner_->recurrent(); }
  std::unique_ptr<Agent> clone() const override { return std::make_unique<DelayedAgent>(*this); }
  void initialize(std::size_t total_slots, std::uint64_t seed, StreamKind kind = StreamKind::agent) override {
    Agent::initialize(total_slots, seed, kind);
    inner_->initialize(total_slots, seed, kind);
  }
  void reset_slot(std::size_t slot) override { inner_->reset_slot(slot); }
  void set_params(const ParamSet& p, std::uint64_t version = 0) override {
    Agent::set_params(p, version);
    inner_->set_params(p, version);
  }
  AgentStep act(const AgentInputs& in, std::span<const std::size_t> slots) override {
    std::this_thread::sleep_for(per_slot_ * static_cast<long>(slots.size()));
    inner_->set_eval(eval_);
    inner_->set_sample_step(sample_step_);
    return inner_->act(in, slots);
  }

 private:
  std::unique_ptr<Agent> inner_;
  std::chrono::microseconds per_slot_;
};

}  // namespace rlstack
