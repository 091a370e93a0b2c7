#pragma once

// Samplers: serial, parallel-decentralized (action selection in workers),
// parallel-centralized (batched action selection in the master) and
// alternating (two slot groups, one stepping while the other is acted on).
// All modes fill [T, B] sample batches with identical contents for the same
// seed, parameters and configuration.

#include <algorithm>
#include <atomic>
#include <barrier>
#include <chrono>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <semaphore>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "rlstack/agents.hpp"
#include "rlstack/env.hpp"
#include "rlstack/struct_array.hpp"

namespace rlstack {

class SamplerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class SamplerMode { serial, decentralized, centralized, alternating };

inline std::string mode_name(SamplerMode m) {
  switch (m) {
    case SamplerMode::serial: return "serial";
    case SamplerMode::decentralized: return "decentralized";
    case SamplerMode::centralized: return "centralized";
    case SamplerMode::alternating: return "alternating";
  }
  return "?";
}

inline SamplerMode parse_mode(const std::string& s) {
  if (s == "serial") return SamplerMode::serial;
  if (s == "decentralized") return SamplerMode::decentralized;
  if (s == "centralized") return SamplerMode::centralized;
  if (s == "alternating") return SamplerMode::alternating;
  throw SamplerError("unknown sampler mode '" + s + "'");
}

struct SamplerConfig {
  SamplerMode mode = SamplerMode::serial;
  std::size_t batch_T = 1;
  std::size_t batch_B = 1;
  std::size_t workers = 1;
  std::uint64_t seed = 0;
  /// Discount used for trajectory diagnostics.
  double discount = 0.99;
  std::size_t eval_envs = 0;
  std::size_t eval_max_steps = 1000;
  std::chrono::milliseconds step_timeout{30000};
};

/// Spec of a [T, B] sample batch for the given environment and agent.
inline StructSpec sample_batch_spec(const Env& env, const Agent& agent) {
  auto obs = env.observation_space();
  auto [akind, ashape] = env.action_space().leaf();
  StructSpec s;
  s.add_leaf("observation", ElementKind::float32, {obs.flat_dim()});
  s.add_leaf("action", akind, ashape);
  s.add_leaf("reward", ElementKind::float32);
  s.add_leaf("done", ElementKind::boolean);
  s.add_leaf("next_observation", ElementKind::float32, {obs.flat_dim()});
  s.add_leaf("prev_action", akind, ashape);
  s.add_leaf("prev_reward", ElementKind::float32);
  s.add_subtree("env_info", env.info_spec());
  s.add_subtree("agent_info", agent.info_spec());
  return s;
}

/// Per-slot episode state owned by whoever steps the slot's environment.
struct SlotState {
  std::unique_ptr<Env> env;
  std::vector<float> obs;
  Action prev_action;
  double prev_reward = 0.0;
  TrajInfo traj;
  bool agent_reset = false;
};

inline Action zero_action(const Space& s) {
  Action a;
  if (!s.is_discrete()) a.value.assign(s.flat_dim(), 0.0f);
  return a;
}

/// Writes cells of a sample batch; caches leaf indices.
class BatchWriter {
 public:
  BatchWriter() = default;
  BatchWriter(const StructSpec& spec, const StructSpec& env_info, const StructSpec& agent_info, bool discrete)
      : discrete_(discrete) {
    obs_ = spec.require_leaf("observation");
    act_ = spec.require_leaf("action");
    rew_ = spec.require_leaf("reward");
    done_ = spec.require_leaf("done");
    next_ = spec.require_leaf("next_observation");
    pact_ = spec.require_leaf("prev_action");
    prew_ = spec.require_leaf("prev_reward");
    for (const auto& l : env_info.leaves()) env_.push_back(spec.require_leaf("env_info." + l.path));
    for (const auto& l : agent_info.leaves()) agent_.push_back(spec.require_leaf("agent_info." + l.path));
  }

  /// Pre-step fields plus the agent's output for one cell.
  void write_agent_part(StructArray& buf, std::size_t flat, const SlotState& st, const Action& a,
                        const StructArray& info, std::size_t info_row) const {
    std::copy(st.obs.begin(), st.obs.end(), buf.row<float>(obs_, flat).begin());
    write_action(buf, act_, flat, a);
    write_action(buf, pact_, flat, st.prev_action);
    buf.leaf<float>(prew_)[flat] = static_cast<float>(st.prev_reward);
    const auto& leaves = info.spec().leaves();
    for (std::size_t i = 0; i < agent_.size(); ++i) {
      std::size_t eb = leaves[i].elem_bytes;
      std::memcpy(buf.leaf_bytes(agent_[i]) + flat * eb, info.leaf_bytes(i) + info_row * eb, eb);
    }
  }

  void write_env_part(StructArray& buf, std::size_t flat, const EnvStep& s) const {
    buf.leaf<float>(rew_)[flat] = static_cast<float>(s.reward);
    buf.leaf<bool>(done_)[flat] = s.done;
    std::copy(s.observation.begin(), s.observation.end(), buf.row<float>(next_, flat).begin());
    if (s.env_info.size() != env_.size()) throw SamplerError("env_info does not match the environment's info spec");
    for (std::size_t i = 0; i < env_.size(); ++i) {
      auto kind = buf.spec().leaves()[env_[i]].kind;
      detail::store_scalar(buf.leaf_bytes(env_[i]) + flat * element_size(kind), kind, s.env_info[i]);
    }
  }

 private:
  void write_action(StructArray& buf, std::size_t leaf, std::size_t flat, const Action& a) const {
    if (discrete_) buf.leaf<std::int64_t>(leaf)[flat] = a.index;
    else std::copy(a.value.begin(), a.value.end(), buf.row<float>(leaf, flat).begin());
  }

  bool discrete_ = true;
  std::size_t obs_ = 0, act_ = 0, rew_ = 0, done_ = 0, next_ = 0, pact_ = 0, prew_ = 0;
  std::vector<std::size_t> env_, agent_;
};

/// Steps one slot's environment with `a`, writes the env half of the cell and
/// advances the slot. Returns the completed trajectory, if any.
inline std::optional<TrajRecord> step_slot(SlotState& st, const Action& a, const Space& action_space,
                                           StructArray& buf, const BatchWriter& w, std::size_t t, std::size_t B,
                                           std::size_t slot) {
  EnvStep s;
  try {
    s = st.env->step(a);
  } catch (const std::exception& e) {
    throw SamplerError("environment error at t=" + std::to_string(t) + ", b=" + std::to_string(slot) + ": " + e.what());
  }
  w.write_env_part(buf, t * B + slot, s);
  st.traj.update(s.reward);
  if (s.done) {
    bool timeout = !s.env_info.empty() && s.env_info[0] != 0.0;
    TrajRecord rec = st.traj.complete(slot, timeout);
    rec.end_t = t;
    st.obs = st.env->reset();
    st.prev_action = zero_action(action_space);
    st.prev_reward = 0.0;
    st.agent_reset = true;
    return rec;
  }
  st.obs = std::move(s.observation);
  st.prev_action = a;
  st.prev_reward = s.reward;
  return std::nullopt;
}

inline AgentInputs gather_inputs(const std::vector<SlotState>& states, std::span<const std::size_t> slots,
                                 std::size_t obs_dim) {
  AgentInputs in;
  in.observation = Tensor({slots.size(), obs_dim});
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const auto& st = states[slots[i]];
    std::copy(st.obs.begin(), st.obs.end(), in.observation.data.begin() + static_cast<std::ptrdiff_t>(i * obs_dim));
    in.prev_action.push_back(st.prev_action);
    in.prev_reward.push_back(st.prev_reward);
  }
  return in;
}

inline bool traj_order(const TrajRecord& a, const TrajRecord& b) {
  return a.end_t != b.end_t ? a.end_t < b.end_t : a.slot < b.slot;
}

// ---------------------------------------------------------------------------

class Sampler {
 public:
  Sampler(SamplerConfig cfg, const Agent& agent, EnvFactory factory) : cfg_(cfg), factory_(std::move(factory)) {
    if (cfg.batch_T == 0 || cfg.batch_B == 0) throw SamplerError("batch_T and batch_B must be positive");
    if (cfg.workers == 0) throw SamplerError("workers must be positive");
    agent_ = agent.clone();
    agent_->initialize(cfg.batch_B, cfg.seed, StreamKind::agent);
    auto probe = factory_();
    obs_dim_ = probe->observation_space().flat_dim();
    action_space_ = probe->action_space();
    spec_ = sample_batch_spec(*probe, *agent_);
    writer_ = BatchWriter(spec_, probe->info_spec(), agent_->info_spec(), action_space_.is_discrete());
    states_.resize(cfg.batch_B);
    for (std::size_t s = 0; s < cfg.batch_B; ++s) {
      auto& st = states_[s];
      st.env = factory_();
      st.env->seed(SlotRng::for_slot(cfg.seed, s, StreamKind::env));
      st.obs = st.env->reset();
      st.prev_action = zero_action(action_space_);
      st.traj = TrajInfo(cfg.discount);
    }
  }
  virtual ~Sampler() = default;

  const SamplerConfig& config() const { return cfg_; }
  const StructSpec& batch_spec() const { return spec_; }
  std::size_t obs_dim() const { return obs_dim_; }
  const Space& action_space() const { return action_space_; }
  const Agent& agent() const { return *agent_; }
  Agent& agent() { return *agent_; }

  StructArray make_buffer(Backing backing = Backing::local) const {
    return StructArray::allocate(spec_, {cfg_.batch_T, cfg_.batch_B}, backing);
  }

  /// Parameters used from the next batch on.
  virtual void publish(const ParamSet& p, std::uint64_t version) { agent_->set_params(p, version); }
  virtual void set_sample_step(std::size_t s) { agent_->set_sample_step(s); }

  /// Pulls newer parameters from a mailbox; call only between batches.
  bool refresh(const ParamMailbox& box) {
    auto got = box.fetch(agent_->param_version());
    if (!got) return false;
    publish(*got->first, got->second);
    return true;
  }

  /// Fills `buf` ([T, B]) with the next batch.
  virtual void collect(StructArray& buf) = 0;

  std::vector<TrajRecord> take_trajectories() {
    std::sort(trajs_.begin(), trajs_.end(), traj_order);
    return std::exchange(trajs_, {});
  }

  /// Per-slot rng and recurrent-state snapshot, for isolation checks.
  virtual std::vector<SlotRng> agent_streams() const {
    std::vector<SlotRng> r;
    for (std::size_t s = 0; s < cfg_.batch_B; ++s) r.push_back(agent_->slot_rng(s));
    return r;
  }

 protected:
  void check_buffer(const StructArray& buf) const {
    auto ld = buf.leading_dims();
    if (ld.size() != 2 || ld[0] != cfg_.batch_T || ld[1] != cfg_.batch_B || !(buf.spec() == spec_))
      throw SamplerError("sample buffer does not match the sampler");
  }

  SamplerConfig cfg_;
  EnvFactory factory_;
  std::unique_ptr<Agent> agent_;
  std::size_t obs_dim_ = 0;
  Space action_space_;
  StructSpec spec_;
  BatchWriter writer_;
  std::vector<SlotState> states_;
  std::vector<TrajRecord> trajs_;
};

class SerialSampler final : public Sampler {
 public:
  SerialSampler(SamplerConfig cfg, const Agent& agent, EnvFactory factory)
      : Sampler(cfg, agent, std::move(factory)) {
    for (std::size_t s = 0; s < cfg.batch_B; ++s) slots_.push_back(s);
  }

  void collect(StructArray& buf) override {
    check_buffer(buf);
    std::size_t B = cfg_.batch_B;
    for (std::size_t t = 0; t < cfg_.batch_T; ++t) {
      auto in = gather_inputs(states_, slots_, obs_dim_);
      auto step = agent_->act(in, slots_);
      for (std::size_t b = 0; b < B; ++b) {
        writer_.write_agent_part(buf, t * B + b, states_[b], step.action[b], step.info, b);
        if (auto rec = step_slot(states_[b], step.action[b], action_space_, buf, writer_, t, B, b)) trajs_.push_back(*rec);
        if (states_[b].agent_reset) {
          agent_->reset_slot(b);
          states_[b].agent_reset = false;
        }
      }
    }
  }

 private:
  std::vector<std::size_t> slots_;
};

// ---------------------------------------------------------------------------

/// Each worker owns a contiguous block of slots, a full agent copy and its
/// environments; workers meet the master once per batch.
class DecentralizedSampler final : public Sampler {
 public:
  DecentralizedSampler(SamplerConfig cfg, const Agent& agent, EnvFactory factory,
                       std::vector<std::size_t> worker_order = {})
      : Sampler(cfg, agent, std::move(factory)), start_(static_cast<std::ptrdiff_t>(cfg.workers + 1)),
        finish_(static_cast<std::ptrdiff_t>(cfg.workers + 1)) {
    if (cfg.batch_B % cfg.workers) throw SamplerError("batch_B must be divisible by workers");
    std::size_t per = cfg.batch_B / cfg.workers;
    if (worker_order.empty())
      for (std::size_t w = 0; w < cfg.workers; ++w) worker_order.push_back(w);
    if (worker_order.size() != cfg.workers) throw SamplerError("worker order must list every worker");
    for (std::size_t w = 0; w < cfg.workers; ++w) {
      auto wk = std::make_unique<Worker>();
      wk->agent = agent_->clone();
      std::size_t block = worker_order[w];
      for (std::size_t k = 0; k < per; ++k) wk->slots.push_back(block * per + k);
      workers_.push_back(std::move(wk));
    }
    for (std::size_t w = 0; w < cfg.workers; ++w)
      threads_.emplace_back([this, w] { run_worker(w); });
  }

  ~DecentralizedSampler() override {
    stop_ = true;
    start_.arrive_and_wait();
    for (auto& t : threads_) t.join();
  }

  std::vector<std::vector<std::size_t>> column_sets() const {
    std::vector<std::vector<std::size_t>> r;
    for (const auto& w : workers_) r.push_back(w->slots);
    return r;
  }

  void collect(StructArray& buf) override {
    check_buffer(buf);
    target_ = &buf;
    start_.arrive_and_wait();
    finish_.arrive_and_wait();
    for (std::size_t w = 0; w < workers_.size(); ++w) {
      auto& wk = *workers_[w];
      if (!wk.error.empty()) throw SamplerError("worker " + std::to_string(w) + " failed: " + wk.error);
      trajs_.insert(trajs_.end(), wk.trajs.begin(), wk.trajs.end());
      wk.trajs.clear();
    }
  }

  std::vector<SlotRng> agent_streams() const override {
    std::vector<SlotRng> r(cfg_.batch_B);
    for (const auto& w : workers_)
      for (auto s : w->slots) r[s] = w->agent->slot_rng(s);
    return r;
  }

 private:
  struct Worker {
    std::unique_ptr<Agent> agent;
    std::vector<std::size_t> slots;
    std::vector<TrajRecord> trajs;
    std::string error;
  };

  void run_worker(std::size_t w) {
    auto& wk = *workers_[w];
    while (true) {
      start_.arrive_and_wait();
      if (stop_) return;
      try {
        // parameters published by the master before this batch; same version for all workers
        if (wk.agent->param_version() != agent_->param_version())
          wk.agent->set_params(agent_->params(), agent_->param_version());
        wk.agent->set_sample_step(sample_step_);
        if (wk.error.empty()) collect_block(wk, *target_);
      } catch (const std::exception& e) {
        wk.error = e.what();
      }
      finish_.arrive_and_wait();
    }
  }

  void collect_block(Worker& wk, StructArray& buf) {
    std::size_t B = cfg_.batch_B;
    for (std::size_t t = 0; t < cfg_.batch_T; ++t) {
      auto in = gather_inputs(states_, wk.slots, obs_dim_);
      auto step = wk.agent->act(in, wk.slots);
      for (std::size_t i = 0; i < wk.slots.size(); ++i) {
        std::size_t b = wk.slots[i];
        writer_.write_agent_part(buf, t * B + b, states_[b], step.action[i], step.info, i);
        if (auto rec = step_slot(states_[b], step.action[i], action_space_, buf, writer_, t, B, b))
          wk.trajs.push_back(*rec);
        if (states_[b].agent_reset) {
          wk.agent->reset_slot(b);
          states_[b].agent_reset = false;
        }
      }
    }
  }

 public:
  void set_sample_step(std::size_t s) override {
    Sampler::set_sample_step(s);
    sample_step_ = s;
  }

 private:
  std::vector<std::unique_ptr<Worker>> workers_;
  std::vector<std::thread> threads_;
  std::barrier<> start_, finish_;
  std::atomic<bool> stop_{false};
  StructArray* target_ = nullptr;
  std::size_t sample_step_ = 0;
};

// ---------------------------------------------------------------------------

/// Master selects actions for all slots of a group in one call; workers only
/// step environments. With two groups (alternating mode) the master acts on
/// one group while workers step the other. Slots of group g are
/// [g * B / G, (g + 1) * B / G); within a group, worker w owns a contiguous block.
class CentralizedSampler final : public Sampler {
 public:
  struct TraceEvent {
    std::size_t t;
    std::size_t group;
  };

  CentralizedSampler(SamplerConfig cfg, const Agent& agent, EnvFactory factory, std::size_t groups)
      : Sampler(cfg, agent, std::move(factory)), groups_(groups) {
    if (groups != 1 && groups != 2) throw SamplerError("centralized sampler supports one or two groups");
    if (cfg.batch_B % (groups * cfg.workers))
      throw SamplerError(groups == 2 ? "alternating mode needs batch_B divisible by 2 * workers"
                                     : "batch_B must be divisible by workers");
    std::size_t per_group = cfg.batch_B / groups, per_worker = per_group / cfg.workers;
    group_slots_.resize(groups);
    for (std::size_t g = 0; g < groups; ++g)
      for (std::size_t s = 0; s < per_group; ++s) group_slots_[g].push_back(g * per_group + s);
    for (std::size_t w = 0; w < cfg.workers; ++w) {
      auto wk = std::make_unique<Worker>();
      wk->slots.resize(groups);
      for (std::size_t g = 0; g < groups; ++g)
        for (std::size_t k = 0; k < per_worker; ++k) wk->slots[g].push_back(g * per_group + w * per_worker + k);
      for (std::size_t g = 0; g < groups; ++g) wk->act_ready.push_back(std::make_unique<std::counting_semaphore<>>(0));
      workers_.push_back(std::move(wk));
    }
    for (std::size_t g = 0; g < groups; ++g) obs_ready_.push_back(std::make_unique<std::counting_semaphore<>>(0));
    actions_.resize(cfg.batch_B);
    for (std::size_t w = 0; w < cfg.workers; ++w) threads_.emplace_back([this, w] { run_worker(w); });
  }

  ~CentralizedSampler() override {
    stop_ = true;
    for (auto& wk : workers_)
      for (auto& s : wk->act_ready) s->release();
    for (auto& t : threads_) t.join();
  }

  std::size_t groups() const { return groups_; }
  const std::vector<TraceEvent>& trace() const { return trace_; }
  void clear_trace() { trace_.clear(); }

  void collect(StructArray& buf) override {
    check_buffer(buf);
    target_ = &buf;
    std::size_t B = cfg_.batch_B;
    for (std::size_t t = 0; t < cfg_.batch_T; ++t) {
      for (std::size_t g = 0; g < groups_; ++g) {
        wait_group(g);
        const auto& slots = group_slots_[g];
        for (auto s : slots)
          if (states_[s].agent_reset) {
            agent_->reset_slot(s);
            states_[s].agent_reset = false;
          }
        auto in = gather_inputs(states_, slots, obs_dim_);
        auto step = agent_->act(in, slots);
        for (std::size_t i = 0; i < slots.size(); ++i) {
          writer_.write_agent_part(buf, t * B + slots[i], states_[slots[i]], step.action[i], step.info, i);
          actions_[slots[i]] = step.action[i];
        }
        trace_.push_back({t, g});
        step_t_[g] = t;
        for (auto& wk : workers_) wk->act_ready[g]->release();
      }
    }
    for (std::size_t g = 0; g < groups_; ++g) {
      wait_group(g);
      have_obs_[g] = true;
    }
    for (auto& wk : workers_) {
      trajs_.insert(trajs_.end(), wk->trajs.begin(), wk->trajs.end());
      wk->trajs.clear();
    }
  }

 private:
  struct Worker {
    std::vector<std::vector<std::size_t>> slots;  // per group
    std::vector<std::unique_ptr<std::counting_semaphore<>>> act_ready;
    std::vector<TrajRecord> trajs;
    std::string error;
  };

  /// Blocks until every worker has finished stepping group g (once per act).
  void wait_group(std::size_t g) {
    if (have_obs_[g]) {
      have_obs_[g] = false;
      return;
    }
    if (!started_[g]) {
      // initial observations come from construction-time resets
      started_[g] = true;
      return;
    }
    for (std::size_t w = 0; w < workers_.size(); ++w)
      if (!obs_ready_[g]->try_acquire_for(cfg_.step_timeout))
        throw SamplerError("timed out waiting for worker observations");
    for (std::size_t w = 0; w < workers_.size(); ++w)
      if (!workers_[w]->error.empty()) throw SamplerError("worker " + std::to_string(w) + " failed: " + workers_[w]->error);
  }

  void run_worker(std::size_t w) {
    auto& wk = *workers_[w];
    std::size_t B = cfg_.batch_B;
    while (true) {
      for (std::size_t g = 0; g < groups_; ++g) {
        wk.act_ready[g]->acquire();
        if (stop_) return;
        try {
          if (wk.error.empty())
            for (auto s : wk.slots[g])
              if (auto rec = step_slot(states_[s], actions_[s], action_space_, *target_, writer_, step_t_[g], B, s))
                wk.trajs.push_back(*rec);
        } catch (const std::exception& e) {
          wk.error = e.what();
        }
        obs_ready_[g]->release();
      }
    }
  }

  std::size_t groups_;
  std::vector<std::vector<std::size_t>> group_slots_;
  std::vector<std::unique_ptr<Worker>> workers_;
  std::vector<std::unique_ptr<std::counting_semaphore<>>> obs_ready_;
  std::vector<Action> actions_;
  std::vector<std::thread> threads_;
  std::atomic<bool> stop_{false};
  StructArray* target_ = nullptr;
  std::size_t step_t_[2] = {0, 0};
  bool have_obs_[2] = {false, false};
  bool started_[2] = {false, false};
  std::vector<TraceEvent> trace_;
};

// ---------------------------------------------------------------------------

inline std::unique_ptr<Sampler> make_sampler(const SamplerConfig& cfg, const Agent& agent, EnvFactory factory) {
  switch (cfg.mode) {
    case SamplerMode::serial: return std::make_unique<SerialSampler>(cfg, agent, std::move(factory));
    case SamplerMode::decentralized: return std::make_unique<DecentralizedSampler>(cfg, agent, std::move(factory));
    case SamplerMode::centralized: return std::make_unique<CentralizedSampler>(cfg, agent, std::move(factory), 1);
    case SamplerMode::alternating: return std::make_unique<CentralizedSampler>(cfg, agent, std::move(factory), 2);
  }
  throw SamplerError("unknown sampler mode");
}

// ---------------------------------------------------------------------------

struct EvalSummary {
  std::size_t episodes = 0;
  double mean_return = 0.0, min_return = 0.0, max_return = 0.0;
  double mean_length = 0.0;
  std::vector<TrajRecord> trajectories;
};

/// Runs `episodes` evaluation episodes (one per eval env, up to max_steps
/// each) with an eval-mode clone of the agent and dedicated streams.
inline EvalSummary evaluate(const Agent& agent, const EnvFactory& factory, std::size_t episodes,
                            std::size_t max_steps, std::uint64_t seed, double discount = 1.0) {
  EvalSummary sum;
  if (episodes == 0) return sum;
  auto a = agent.clone();
  a->set_eval(true);
  a->initialize(episodes, seed, StreamKind::eval_agent);
  std::vector<SlotState> states(episodes);
  Space aspace;
  std::size_t obs_dim = 0;
  for (std::size_t s = 0; s < episodes; ++s) {
    states[s].env = factory();
    states[s].env->seed(SlotRng::for_slot(seed, s, StreamKind::eval_env));
    states[s].obs = states[s].env->reset();
    aspace = states[s].env->action_space();
    obs_dim = states[s].env->observation_space().flat_dim();
    states[s].prev_action = zero_action(aspace);
    states[s].traj = TrajInfo(discount);
  }
  std::vector<std::size_t> live;
  for (std::size_t s = 0; s < episodes; ++s) live.push_back(s);
  std::vector<TrajRecord> done(episodes);
  for (std::size_t step = 0; step < max_steps && !live.empty(); ++step) {
    auto in = gather_inputs(states, live, obs_dim);
    auto out = a->act(in, live);
    std::vector<std::size_t> still;
    for (std::size_t i = 0; i < live.size(); ++i) {
      auto& st = states[live[i]];
      auto r = st.env->step(out.action[i]);
      st.traj.update(r.reward);
      bool last = r.done || step + 1 == max_steps;
      if (last) {
        auto rec = st.traj.complete(live[i], !r.done);
        rec.end_t = step;
        done[live[i]] = rec;
      } else {
        st.obs = std::move(r.observation);
        st.prev_action = out.action[i];
        st.prev_reward = r.reward;
        still.push_back(live[i]);
      }
    }
    live = std::move(still);
  }
  sum.episodes = episodes;
  sum.min_return = done[0].return_;
  sum.max_return = done[0].return_;
  for (const auto& r : done) {
    sum.mean_return += r.return_;
    sum.mean_length += static_cast<double>(r.length);
    sum.min_return = std::min(sum.min_return, r.return_);
    sum.max_return = std::max(sum.max_return, r.return_);
  }
  sum.mean_return /= static_cast<double>(episodes);
  sum.mean_length /= static_cast<double>(episodes);
  sum.trajectories = std::move(done);
  return sum;
}

/// Per-step trace rows: t,b,action,reward,done.
inline void write_trace(std::ostream& os, const StructArray& batch, bool header = true) {
  auto ld = batch.leading_dims();
  if (header) os << "t,b,action,reward,done\n";
  auto act = batch.spec().require_leaf("action");
  bool discrete = batch.spec().leaves()[act].kind == ElementKind::int64;
  for (std::size_t t = 0; t < ld[0]; ++t)
    for (std::size_t b = 0; b < ld[1]; ++b) {
      std::size_t f = t * ld[1] + b;
      os << t << ',' << b << ',';
      if (discrete) {
        os << batch.leaf<std::int64_t>(act)[f];
      } else {
        auto row = batch.row<float>(act, f);
        for (std::size_t k = 0; k < row.size(); ++k) os << (k ? " " : "") << row[k];
      }
      os << ',' << batch.leaf<float>("reward")[f] << ',' << (batch.leaf<bool>("done")[f] ? 1 : 0) << '\n';
    }
}

}  // namespace rlstack
