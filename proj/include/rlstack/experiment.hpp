#pragma once

// Experiment configuration keys and construction of training stacks from them.

#include <chrono>
#include <memory>
#include <string>

#include "rlstack/config.hpp"
#include "rlstack/envs.hpp"
#include "rlstack/runner.hpp"

namespace rlstack {

inline const ConfigSchema& experiment_schema() {
  static const ConfigSchema s = [] {
    using VT = ValueType;
    using I = std::int64_t;
    using L = std::vector<std::int64_t>;
    ConfigSchema c;
    c.add("seed", VT::integer, I{0});
    c.add("env", VT::string, std::string("cartpole"), "chain | cartpole | pointnav | masked_chain");
    c.add("env.max_steps", VT::integer, I{500});
    c.add("env.chain_n", VT::integer, I{10});
    c.add("env.corridor", VT::integer, I{6});
    c.add("env.step_delay_us", VT::integer, I{0});
    c.add("algo", VT::string, std::string("dqn"), "dqn | r2d1 | a2c | ppo | ddpg | td3");

    c.add("agent.hidden", VT::int_list, L{64, 64});
    c.add("agent.dueling", VT::boolean, false);
    c.add("agent.atoms", VT::integer, I{0});
    c.add("agent.v_min", VT::real, -10.0);
    c.add("agent.v_max", VT::real, 10.0);
    c.add("agent.eps_initial", VT::real, 1.0);
    c.add("agent.eps_final", VT::real, 0.01);
    c.add("agent.eps_anneal_steps", VT::integer, I{10000});
    c.add("agent.eps_vector_base", VT::real, 0.0);
    c.add("agent.eps_eval", VT::real, 0.0);
    c.add("agent.rnn_hidden", VT::integer, I{32});
    c.add("agent.exploration_sigma", VT::real, 0.1);
    c.add("agent.random_steps", VT::integer, I{0});
    c.add("agent.act_delay_us", VT::integer, I{0});

    c.add("sampler.mode", VT::string, std::string("serial"), "serial | decentralized | centralized | alternating");
    c.add("sampler.batch_T", VT::integer, I{4});
    c.add("sampler.batch_B", VT::integer, I{1});
    c.add("sampler.workers", VT::integer, I{1});

    c.add("dqn.gamma", VT::real, 0.99);
    c.add("dqn.n_step", VT::integer, I{1});
    c.add("dqn.double_q", VT::boolean, true);
    c.add("dqn.huber_delta", VT::real, 1.0);
    c.add("dqn.lr", VT::real, 1e-4);
    c.add("dqn.batch_size", VT::integer, I{32});
    c.add("dqn.min_steps_learn", VT::integer, I{1000});
    c.add("dqn.replay_size", VT::integer, I{100000});
    c.add("dqn.replay_ratio", VT::real, 8.0);
    c.add("dqn.target_period", VT::integer, I{500});
    c.add("dqn.target_tau", VT::real, 1.0);
    c.add("dqn.prioritized", VT::boolean, false);
    c.add("dqn.grad_clip", VT::real, 10.0);

    c.add("priority.alpha", VT::real, 0.6);
    c.add("priority.beta", VT::real, 0.4);
    c.add("priority.beta_anneal_calls", VT::integer, I{0});
    c.add("priority.floor", VT::real, 1e-3);

    c.add("pg.gamma", VT::real, 0.99);
    c.add("pg.gae_lambda", VT::real, 0.95);
    c.add("pg.value_coef", VT::real, 0.5);
    c.add("pg.entropy_coef", VT::real, 0.01);
    c.add("pg.lr", VT::real, 3e-4);
    c.add("pg.clip_eps", VT::real, 0.2);
    c.add("pg.epochs", VT::integer, I{4});
    c.add("pg.minibatches", VT::integer, I{4});
    c.add("pg.normalize_advantages", VT::boolean, true);
    c.add("pg.grad_clip", VT::real, 0.5);

    c.add("ddpg.gamma", VT::real, 0.99);
    c.add("ddpg.n_step", VT::integer, I{1});
    c.add("ddpg.actor_lr", VT::real, 1e-3);
    c.add("ddpg.critic_lr", VT::real, 1e-3);
    c.add("ddpg.tau", VT::real, 0.005);
    c.add("ddpg.batch_size", VT::integer, I{64});
    c.add("ddpg.min_steps_learn", VT::integer, I{1000});
    c.add("ddpg.replay_size", VT::integer, I{100000});
    c.add("ddpg.replay_ratio", VT::real, 64.0);
    c.add("ddpg.target_noise", VT::real, 0.0);
    c.add("ddpg.noise_clip", VT::real, 0.5);
    c.add("ddpg.policy_delay", VT::integer, I{1});
    c.add("ddpg.grad_clip", VT::real, 0.0);

    c.add("r2d1.gamma", VT::real, 0.99);
    c.add("r2d1.n_step", VT::integer, I{1});
    c.add("r2d1.double_q", VT::boolean, true);
    c.add("r2d1.value_rescaling", VT::boolean, false);
    c.add("r2d1.huber_delta", VT::real, 1.0);
    c.add("r2d1.lr", VT::real, 1e-3);
    c.add("r2d1.batch_size", VT::integer, I{16});
    c.add("r2d1.min_steps_learn", VT::integer, I{1000});
    c.add("r2d1.replay_size", VT::integer, I{50000});
    c.add("r2d1.replay_ratio", VT::real, 4.0);
    c.add("r2d1.warmup_T", VT::integer, I{0});
    c.add("r2d1.train_T", VT::integer, I{8});
    c.add("r2d1.period", VT::integer, I{4});
    c.add("r2d1.lookahead", VT::integer, I{1});
    c.add("r2d1.prioritized", VT::boolean, true);
    c.add("r2d1.priority_eta", VT::real, 0.9);
    c.add("r2d1.priority_segment", VT::string, std::string("full"), "full | second_half");
    c.add("r2d1.target_period", VT::integer, I{250});
    c.add("r2d1.target_tau", VT::real, 1.0);
    c.add("r2d1.grad_clip", VT::real, 10.0);

    c.add("runner.total_env_steps", VT::integer, I{10000});
    c.add("runner.log_interval_steps", VT::integer, I{1000});
    c.add("runner.eval_interval_steps", VT::integer, I{0});
    c.add("runner.eval_episodes", VT::integer, I{10});
    c.add("runner.eval_max_steps", VT::integer, I{1000});
    c.add("runner.learners", VT::integer, I{1});
    c.add("runner.async", VT::boolean, false);
    c.add("runner.replay_ratio_cap", VT::real, 1.0);
    c.add("runner.check_interval", VT::integer, I{1});
    c.add("runner.checkpoint_interval_steps", VT::integer, I{0});
    c.add("runner.max_seconds", VT::real, 0.0, "0: no time limit");
    c.add("runner.stop_on_eval_return", VT::boolean, false);
    c.add("runner.stop_eval_return", VT::real, 0.0);
    return c;
  }();
  return s;
}

inline Config default_experiment() { return Config(experiment_schema()); }

inline RunnerConfig runner_config(const Config& c) {
  RunnerConfig r;
  r.total_env_steps = c.count("runner.total_env_steps");
  r.log_interval_steps = c.count("runner.log_interval_steps");
  r.eval_interval_steps = c.count("runner.eval_interval_steps");
  r.eval_episodes = c.count("runner.eval_episodes");
  r.eval_max_steps = c.count("runner.eval_max_steps");
  r.learners = c.count("runner.learners");
  r.async = c.boolean("runner.async");
  r.replay_ratio_cap = c.real("runner.replay_ratio_cap");
  r.check_interval = c.count("runner.check_interval");
  r.checkpoint_interval_steps = c.count("runner.checkpoint_interval_steps");
  r.max_seconds = c.real("runner.max_seconds");
  if (c.boolean("runner.stop_on_eval_return")) r.stop_eval_return = c.real("runner.stop_eval_return");
  r.seed = static_cast<std::uint64_t>(c.integer("seed"));
  return r;
}

inline EnvFactory make_env_factory(const Config& c) {
  const std::string& id = c.string("env");
  std::size_t max_steps = c.count("env.max_steps"), n = c.count("env.chain_n"), corridor = c.count("env.corridor");
  auto delay = std::chrono::microseconds(c.count("env.step_delay_us"));
  std::function<std::unique_ptr<Env>()> base;
  if (id == "chain") base = [=] { return std::make_unique<ChainMdp>(n, max_steps); };
  else if (id == "cartpole") base = [=] { return std::make_unique<CartPole>(max_steps); };
  else if (id == "pointnav") base = [=] { return std::make_unique<PointNav1d>(max_steps); };
  else if (id == "masked_chain") base = [=] { return std::make_unique<MaskedChain>(corridor); };
  else throw ConfigError("unknown env '" + id + "'");
  base();  // validates parameters
  if (delay.count() == 0) return base;
  return [=]() -> std::unique_ptr<Env> { return std::make_unique<DelayedEnv>(base(), delay); };
}

inline SamplerConfig sampler_config(const Config& c, std::size_t rank) {
  SamplerConfig s;
  s.mode = parse_mode(c.string("sampler.mode"));
  s.batch_T = c.count("sampler.batch_T");
  s.batch_B = c.count("sampler.batch_B");
  s.workers = c.count("sampler.workers");
  s.seed = static_cast<std::uint64_t>(c.integer("seed")) + 7919 * rank;
  return s;
}

namespace detail {

inline EpsilonConfig epsilon_config(const Config& c) {
  EpsilonConfig e;
  e.initial = c.real("agent.eps_initial");
  e.final = c.real("agent.eps_final");
  e.anneal_steps = c.count("agent.eps_anneal_steps");
  e.vector_base = c.real("agent.eps_vector_base");
  e.eval = c.real("agent.eps_eval");
  return e;
}

inline PrioritySpec priority_spec(const Config& c) {
  return {c.real("priority.alpha"), c.real("priority.beta"), c.count("priority.beta_anneal_calls"), c.real("priority.floor")};
}

inline Stack finish_stack(const Config& c, std::size_t rank, const Agent& agent, EnvFactory f) {
  Stack st;
  auto delay = std::chrono::microseconds(c.count("agent.act_delay_us"));
  auto sc = sampler_config(c, rank);
  if (delay.count()) st.sampler = make_sampler(sc, DelayedAgent(agent.clone(), delay), f);
  else st.sampler = make_sampler(sc, agent, f);
  st.eval_agent = agent.clone();
  st.env_factory = std::move(f);
  return st;
}

}  // namespace detail

/// Builds learner `rank`'s stack. Every rank starts from the same parameters;
/// sampler streams and replay sampling differ by rank.
inline Stack make_stack(const Config& c, std::size_t rank = 0) {
  auto f = make_env_factory(c);
  auto probe = f();
  std::size_t od = probe->observation_space().flat_dim();
  Space as = probe->action_space();
  auto seed = static_cast<std::uint64_t>(c.integer("seed"));
  const std::string& algo = c.string("algo");
  auto hidden = c.sizes("agent.hidden");

  if (algo == "dqn") {
    if (!as.is_discrete()) throw ConfigError("dqn needs a discrete action space");
    QAgentConfig ac;
    ac.obs_dim = od;
    ac.n_actions = as.n;
    ac.hidden = hidden;
    ac.dueling = c.boolean("agent.dueling");
    ac.atoms = c.count("agent.atoms");
    ac.v_min = c.real("agent.v_min");
    ac.v_max = c.real("agent.v_max");
    ac.epsilon = detail::epsilon_config(c);
    QAgent agent(ac, seed);
    auto st = detail::finish_stack(c, rank, agent, f);
    DqnConfig d;
    d.gamma = c.real("dqn.gamma");
    d.n_step = c.count("dqn.n_step");
    d.double_q = c.boolean("dqn.double_q");
    d.huber_delta = c.real("dqn.huber_delta");
    d.lr = c.real("dqn.lr");
    d.batch_size = c.count("dqn.batch_size");
    d.min_steps_learn = c.count("dqn.min_steps_learn");
    d.replay_size = c.count("dqn.replay_size");
    d.replay_ratio = c.real("dqn.replay_ratio");
    d.target = {c.count("dqn.target_period"), c.real("dqn.target_tau")};
    d.prioritized = c.boolean("dqn.prioritized");
    d.priority = detail::priority_spec(c);
    d.grad_clip = c.real("dqn.grad_clip");
    d.seed = seed + rank;
    st.algorithm = std::make_unique<DqnAlgorithm>(agent, d, st.sampler->batch_spec(), st.sampler->config().batch_B);
    return st;
  }
  if (algo == "r2d1") {
    if (!as.is_discrete()) throw ConfigError("r2d1 needs a discrete action space");
    RecurrentQAgentConfig ac;
    ac.obs_dim = od;
    ac.n_actions = as.n;
    ac.hidden = c.count("agent.rnn_hidden");
    ac.epsilon = detail::epsilon_config(c);
    RecurrentQAgent agent(ac, seed);
    auto st = detail::finish_stack(c, rank, agent, f);
    R2d1Config r;
    r.gamma = c.real("r2d1.gamma");
    r.n_step = c.count("r2d1.n_step");
    r.double_q = c.boolean("r2d1.double_q");
    r.value_rescaling = c.boolean("r2d1.value_rescaling");
    r.huber_delta = c.real("r2d1.huber_delta");
    r.lr = c.real("r2d1.lr");
    r.batch_size = c.count("r2d1.batch_size");
    r.min_steps_learn = c.count("r2d1.min_steps_learn");
    r.replay_size = c.count("r2d1.replay_size");
    r.replay_ratio = c.real("r2d1.replay_ratio");
    r.sequence = {c.count("r2d1.warmup_T"), c.count("r2d1.train_T"), c.count("r2d1.period"), c.count("r2d1.lookahead")};
    r.prioritized = c.boolean("r2d1.prioritized");
    r.priority = detail::priority_spec(c);
    r.priority_eta = c.real("r2d1.priority_eta");
    const auto& seg = c.string("r2d1.priority_segment");
    if (seg == "full") r.priority_segment = PrioritySegment::full;
    else if (seg == "second_half") r.priority_segment = PrioritySegment::second_half;
    else throw ConfigError("r2d1.priority_segment must be full or second_half");
    r.target = {c.count("r2d1.target_period"), c.real("r2d1.target_tau")};
    r.grad_clip = c.real("r2d1.grad_clip");
    r.seed = seed + rank;
    st.algorithm = std::make_unique<R2d1Algorithm>(agent, r, st.sampler->batch_spec(), st.sampler->config().batch_B);
    return st;
  }
  if (algo == "a2c" || algo == "ppo") {
    if (!as.is_discrete()) throw ConfigError(algo + " needs a discrete action space");
    PgAgentConfig ac;
    ac.obs_dim = od;
    ac.n_actions = as.n;
    ac.hidden = hidden;
    PgAgent agent(ac, seed);
    auto st = detail::finish_stack(c, rank, agent, f);
    PgConfig p;
    p.gamma = c.real("pg.gamma");
    p.gae_lambda = c.real("pg.gae_lambda");
    p.value_coef = c.real("pg.value_coef");
    p.entropy_coef = c.real("pg.entropy_coef");
    p.lr = c.real("pg.lr");
    p.ppo = algo == "ppo";
    p.clip_eps = c.real("pg.clip_eps");
    p.epochs = c.count("pg.epochs");
    p.minibatches = c.count("pg.minibatches");
    p.normalize_advantages = c.boolean("pg.normalize_advantages");
    p.grad_clip = c.real("pg.grad_clip");
    p.seed = seed + rank;
    st.algorithm = std::make_unique<PgAlgorithm>(agent, p);
    return st;
  }
  if (algo == "ddpg" || algo == "td3") {
    if (as.is_discrete()) throw ConfigError(algo + " needs a continuous action space");
    DdpgAgentConfig ac;
    ac.obs_dim = od;
    ac.action_dim = as.flat_dim();
    ac.hidden = hidden;
    ac.action_low = as.low.at(0);
    ac.action_high = as.high.at(0);
    ac.exploration_sigma = c.real("agent.exploration_sigma");
    ac.twin_critic = algo == "td3";
    ac.random_steps = c.count("agent.random_steps");
    DdpgAgent agent(ac, seed);
    auto st = detail::finish_stack(c, rank, agent, f);
    DdpgConfig d;
    d.gamma = c.real("ddpg.gamma");
    d.n_step = c.count("ddpg.n_step");
    d.actor_lr = c.real("ddpg.actor_lr");
    d.critic_lr = c.real("ddpg.critic_lr");
    d.tau = c.real("ddpg.tau");
    d.batch_size = c.count("ddpg.batch_size");
    d.min_steps_learn = c.count("ddpg.min_steps_learn");
    d.replay_size = c.count("ddpg.replay_size");
    d.replay_ratio = c.real("ddpg.replay_ratio");
    d.target_noise = c.real("ddpg.target_noise");
    d.noise_clip = c.real("ddpg.noise_clip");
    d.policy_delay = c.count("ddpg.policy_delay");
    d.grad_clip = c.real("ddpg.grad_clip");
    d.seed = seed + rank;
    st.algorithm = std::make_unique<DdpgAlgorithm>(agent, d, st.sampler->batch_spec(), st.sampler->config().batch_B);
    return st;
  }
  throw ConfigError("unknown algo '" + algo + "'");
}

inline StackFactory make_stack_factory(const Config& c) {
  return [c](std::size_t rank) { return make_stack(c, rank); };
}

/// Runs one experiment into `out_dir`: log.csv, manifest.txt, checkpoints.
inline RunResult run_experiment(const Config& c, const std::filesystem::path& out_dir, std::ostream* progress = nullptr) {
  auto rc = runner_config(c);
  rc.validate();
  auto factory = make_stack_factory(c);
  factory(0);  // surface construction errors before creating outputs
  std::filesystem::create_directories(out_dir);
  write_manifest(out_dir / "manifest.txt", c.entries());
  CsvLog log(out_dir / "log.csv");
  log.set_progress(progress);
  return train(rc, factory, {.log = &log, .checkpoint_dir = out_dir});
}

/// Reads manifest.txt back into a config (code_version is skipped).
inline Config read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read manifest " + path.string());
  std::stringstream ss;
  std::string body;
  for (std::string line; std::getline(is, line);)
    if (line.rfind("code_version", 0) != 0) body += line + "\n";
  Config c = default_experiment();
  c.parse(body, path.string());
  return c;
}

}  // namespace rlstack
