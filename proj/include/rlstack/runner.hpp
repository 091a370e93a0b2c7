#pragma once

// Training loops: serial, synchronous multi-learner (gradient all-reduce) and
// asynchronous sampler / copier / optimizer roles over a shared replay.

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "rlstack/algorithms.hpp"
#include "rlstack/allreduce.hpp"
#include "rlstack/samplers.hpp"

#ifndef RLSTACK_CODE_VERSION
#define RLSTACK_CODE_VERSION "unknown"
#endif

namespace rlstack {

class RunnerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunnerConfig {
  std::size_t total_env_steps = 10000;
  std::size_t log_interval_steps = 1000;
  /// 0: online statistics only.
  std::size_t eval_interval_steps = 0;
  std::size_t eval_episodes = 10;
  std::size_t eval_max_steps = 1000;
  std::size_t learners = 1;
  bool async = false;
  double replay_ratio_cap = 1.0;
  /// Sync mode: batches between cross-learner parameter checks.
  std::size_t check_interval = 1;
  /// 0: only the final checkpoint.
  std::size_t checkpoint_interval_steps = 0;
  /// Wall-clock limit in seconds; 0 for none. Serial and async only.
  double max_seconds = 0.0;
  /// Stop once an evaluation reaches this mean return. Serial and async only.
  std::optional<double> stop_eval_return;
  std::uint64_t seed = 0;

  void validate() const {
    if (total_env_steps == 0) throw RunnerError("total_env_steps must be positive");
    if (log_interval_steps == 0) throw RunnerError("log_interval_steps must be positive");
    if (learners == 0) throw RunnerError("learners must be >= 1");
    if (check_interval == 0) throw RunnerError("check_interval must be positive");
    if (async && !(replay_ratio_cap > 0.0)) throw RunnerError("replay_ratio_cap must be positive in async mode");
    if (async && learners > 1) throw RunnerError("async mode runs a single learner");
    if (max_seconds < 0.0) throw RunnerError("max_seconds must be >= 0");
    if (learners > 1 && (max_seconds > 0.0 || stop_eval_return))
      throw RunnerError("max_seconds and stop_eval_return need a single learner");
    if (stop_eval_return && eval_interval_steps == 0) throw RunnerError("stop_eval_return needs eval_interval_steps");
  }
};

/// One sampling-training stack. Sync mode builds one per learner.
struct Stack {
  std::unique_ptr<Sampler> sampler;
  std::unique_ptr<Algorithm> algorithm;
  /// Prototype cloned for evaluation; never touched by sampler threads.
  std::unique_ptr<Agent> eval_agent;
  EnvFactory env_factory;
};
using StackFactory = std::function<Stack(std::size_t rank)>;

// ---------------------------------------------------------------------------
// Logging.

struct LogRow {
  std::size_t iteration = 0;
  std::size_t cum_env_steps = 0;
  std::size_t cum_updates = 0;
  double wall_time_s = 0.0;
  double sps = 0.0;
  OptInfo opt;
  std::size_t online_episodes = 0;
  double online_return_mean = std::numeric_limits<double>::quiet_NaN();
  double online_return_min = std::numeric_limits<double>::quiet_NaN();
  double online_return_max = std::numeric_limits<double>::quiet_NaN();
  double online_length_mean = std::numeric_limits<double>::quiet_NaN();
  std::optional<EvalSummary> eval;
  double replay_ratio = std::numeric_limits<double>::quiet_NaN();

  static const std::vector<std::string>& columns() {
    static const std::vector<std::string> c{
        "iteration",          "cum_env_steps",      "cum_updates",       "wall_time_s",
        "sps",                "loss",               "grad_norm",         "td_abs_mean",
        "td_abs_max",         "entropy",            "kl",                "clip_fraction",
        "online_episodes",    "online_return_mean", "online_return_min", "online_return_max",
        "online_length_mean", "eval_episodes",      "eval_return_mean",  "eval_return_min",
        "eval_return_max",    "eval_length_mean",   "replay_ratio",      "checksum_failures"};
    return c;
  }

  /// Blank for NaN; otherwise shortest exact representation.
  static std::string num(double v) {
    if (std::isnan(v)) return "";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
  }

  std::string csv() const {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    bool up = opt.updates > 0;
    std::vector<std::string> f{std::to_string(iteration),
                               std::to_string(cum_env_steps),
                               std::to_string(cum_updates),
                               num(wall_time_s),
                               num(sps),
                               num(up ? opt.loss : nan),
                               num(up ? opt.grad_norm : nan),
                               num(up ? opt.td_abs_mean : nan),
                               num(up ? opt.td_abs_max : nan),
                               num(up ? opt.entropy : nan),
                               num(up ? opt.kl : nan),
                               num(up ? opt.clip_fraction : nan),
                               std::to_string(online_episodes),
                               num(online_return_mean),
                               num(online_return_min),
                               num(online_return_max),
                               num(online_length_mean),
                               eval ? std::to_string(eval->episodes) : "",
                               num(eval ? eval->mean_return : nan),
                               num(eval ? eval->min_return : nan),
                               num(eval ? eval->max_return : nan),
                               num(eval ? eval->mean_length : nan),
                               num(replay_ratio),
                               std::to_string(opt.checksum_failures)};
    std::string line;
    for (std::size_t i = 0; i < f.size(); ++i) {
      if (i) line += ',';
      line += f[i];
    }
    return line;
  }

  void set_online(const std::vector<TrajRecord>& trajs) {
    online_episodes = trajs.size();
    if (trajs.empty()) return;
    double s = 0.0, l = 0.0, lo = trajs[0].return_, hi = lo;
    for (const auto& t : trajs) {
      s += t.return_;
      l += static_cast<double>(t.length);
      lo = std::min(lo, t.return_);
      hi = std::max(hi, t.return_);
    }
    double n = static_cast<double>(trajs.size());
    online_return_mean = s / n;
    online_length_mean = l / n;
    online_return_min = lo;
    online_return_max = hi;
  }
};

/// Append-only CSV with a fixed header. Safe to call from several threads;
/// each row goes out in one write.
class CsvLog {
 public:
  CsvLog() = default;
  explicit CsvLog(const std::filesystem::path& path) { open(path); }

  void open(const std::filesystem::path& path) {
    std::lock_guard lock(mu_);
    out_.open(path, std::ios::out | std::ios::trunc);
    if (!out_) throw RunnerError("cannot open log " + path.string());
    std::string header;
    for (std::size_t i = 0; i < LogRow::columns().size(); ++i) {
      if (i) header += ',';
      header += LogRow::columns()[i];
    }
    header += '\n';
    out_ << header;
    out_.flush();
  }

  void append(const LogRow& row) {
    std::string line = row.csv() + '\n';
    std::lock_guard lock(mu_);
    rows_.push_back(row);
    if (out_.is_open()) {
      out_ << line;
      out_.flush();
      if (!out_) throw RunnerError("log write failed");
    }
    if (progress_) {
      auto& p = *progress_;
      p << "itr " << row.iteration << "  steps " << row.cum_env_steps << "  updates " << row.cum_updates
        << "  sps " << static_cast<long long>(row.sps);
      if (row.online_episodes) p << "  return " << row.online_return_mean;
      if (row.eval) p << "  eval " << row.eval->mean_return;
      p << '\n';
    }
  }

  void set_progress(std::ostream* os) { progress_ = os; }

  std::vector<LogRow> rows() const {
    std::lock_guard lock(mu_);
    return rows_;
  }

 private:
  mutable std::mutex mu_;
  std::ofstream out_;
  std::vector<LogRow> rows_;
  std::ostream* progress_ = nullptr;
};

/// Text key-value manifest: code version first, then the given entries.
inline void write_manifest(const std::filesystem::path& path, const std::vector<std::pair<std::string, std::string>>& entries) {
  std::ofstream os(path);
  if (!os) throw RunnerError("cannot write manifest " + path.string());
  os << "code_version = " << RLSTACK_CODE_VERSION << '\n';
  for (const auto& [k, v] : entries) os << k << " = " << v << '\n';
}

// ---------------------------------------------------------------------------

struct AsyncStats {
  std::size_t generated = 0;
  std::size_t consumed = 0;
  std::size_t sampler_batches = 0;
  double run_seconds = 0.0;
  /// Sampler time blocked waiting for a free double-buffer half.
  double sampler_stall_seconds = 0.0;
  /// Optimizer time blocked on the replay-ratio budget.
  double optimizer_idle_seconds = 0.0;
  std::size_t checksum_failures = 0;
  /// Largest consumed/generated over windows of 10 to 1000 sampler batches.
  double max_window_ratio = 0.0;
  double ratio() const { return generated ? static_cast<double>(consumed) / static_cast<double>(generated) : 0.0; }
};

struct RunResult {
  ParamSet params;
  std::size_t env_steps = 0;
  std::size_t updates = 0;
  std::optional<EvalSummary> final_eval;
  std::size_t equality_checks = 0;
  AsyncStats async;
};

struct RunOutputs {
  CsvLog* log = nullptr;
  /// Checkpoints go here when set.
  std::optional<std::filesystem::path> checkpoint_dir;
};

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline void save_params(const std::filesystem::path& path, const ParamSet& p) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw RunnerError("cannot write checkpoint " + path.string());
  save_checkpoint(os, p);
}

/// Log / eval / checkpoint cadence shared by every mode.
class Cadence {
 public:
  Cadence(const RunnerConfig& cfg, RunOutputs out, Stack& stack)
      : cfg_(cfg), out_(std::move(out)), stack_(stack), t0_(std::chrono::steady_clock::now()) {
    next_log_ = cfg.log_interval_steps;
    next_eval_ = cfg.eval_interval_steps;
    next_ckpt_ = cfg.checkpoint_interval_steps;
  }

  void add_opt(const OptInfo& o) { opt_.merge(o); }
  void add_trajectories(std::vector<TrajRecord> t) {
    for (auto& r : t) trajs_.push_back(r);
  }

  /// Called after progress to `steps`; emits whatever is due.
  void tick(std::size_t iteration, std::size_t steps, std::size_t updates, const ParamSet& params,
            double replay_ratio = std::numeric_limits<double>::quiet_NaN()) {
    if (cfg_.eval_interval_steps && steps >= next_eval_) {
      pending_eval_ = run_eval(params, steps);
      while (next_eval_ <= steps) next_eval_ += cfg_.eval_interval_steps;
    }
    if (cfg_.checkpoint_interval_steps && out_.checkpoint_dir && steps >= next_ckpt_) {
      save_params(*out_.checkpoint_dir / ("params_" + std::to_string(steps) + ".ckpt"), params);
      while (next_ckpt_ <= steps) next_ckpt_ += cfg_.checkpoint_interval_steps;
    }
    if (steps >= next_log_) {
      emit(iteration, steps, updates, replay_ratio);
      while (next_log_ <= steps) next_log_ += cfg_.log_interval_steps;
    }
  }

  /// Final eval, checkpoint and closing row.
  std::optional<EvalSummary> finish(std::size_t iteration, std::size_t steps, std::size_t updates, const ParamSet& params,
                                    double replay_ratio = std::numeric_limits<double>::quiet_NaN()) {
    std::optional<EvalSummary> final_eval;
    if (cfg_.eval_interval_steps) {
      if (last_eval_ && last_eval_steps_ == steps) {
        final_eval = last_eval_;
      } else {
        final_eval = run_eval(params, steps);
        pending_eval_ = final_eval;
      }
    }
    if (out_.checkpoint_dir) save_params(*out_.checkpoint_dir / "params_final.ckpt", params);
    if (last_row_steps_ != steps || pending_eval_) emit(iteration, steps, updates, replay_ratio);
    return final_eval;
  }

  double elapsed() const { return seconds_since(t0_); }

  /// Evaluation target reached or time limit passed.
  bool should_stop() const {
    if (target_reached_) return true;
    return cfg_.max_seconds > 0.0 && elapsed() >= cfg_.max_seconds;
  }

 private:
  EvalSummary run_eval(const ParamSet& params, std::size_t steps) {
    auto a = stack_.eval_agent->clone();
    a->set_params(params);
    auto s = evaluate(*a, stack_.env_factory, cfg_.eval_episodes, cfg_.eval_max_steps, cfg_.seed);
    last_eval_ = s;
    last_eval_steps_ = steps;
    if (cfg_.stop_eval_return && s.mean_return >= *cfg_.stop_eval_return) target_reached_ = true;
    return s;
  }

  void emit(std::size_t iteration, std::size_t steps, std::size_t updates, double replay_ratio) {
    LogRow row;
    row.iteration = iteration;
    row.cum_env_steps = steps;
    row.cum_updates = updates;
    row.wall_time_s = std::max(elapsed(), last_wall_);
    last_wall_ = row.wall_time_s;
    row.sps = row.wall_time_s > 0.0 ? static_cast<double>(steps) / row.wall_time_s : 0.0;
    row.opt = std::exchange(opt_, {});
    std::sort(trajs_.begin(), trajs_.end(), traj_order);
    row.set_online(trajs_);
    trajs_.clear();
    row.eval = std::exchange(pending_eval_, std::nullopt);
    row.replay_ratio = replay_ratio;
    last_row_steps_ = steps;
    if (out_.log) out_.log->append(row);
  }

 private:
  const RunnerConfig& cfg_;
  RunOutputs out_;
  Stack& stack_;
  std::chrono::steady_clock::time_point t0_;
  std::size_t next_log_ = 0, next_eval_ = 0, next_ckpt_ = 0;
  std::size_t last_row_steps_ = std::numeric_limits<std::size_t>::max();
  std::size_t last_eval_steps_ = std::numeric_limits<std::size_t>::max();
  double last_wall_ = 0.0;
  bool target_reached_ = false;
  OptInfo opt_;
  std::vector<TrajRecord> trajs_;
  std::optional<EvalSummary> pending_eval_, last_eval_;
};

inline void check_stack(const Stack& s) {
  if (!s.sampler || !s.algorithm || !s.eval_agent || !s.env_factory) throw RunnerError("incomplete training stack");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Serial.

inline RunResult train_serial(const RunnerConfig& cfg, Stack& stack, RunOutputs out = {}) {
  cfg.validate();
  detail::check_stack(stack);
  auto& sampler = *stack.sampler;
  auto& algo = *stack.algorithm;
  auto buf = sampler.make_buffer();
  std::size_t per_batch = buf.leading_count(), steps = 0, itr = 0;
  std::uint64_t version = 0;
  detail::Cadence cad(cfg, out, stack);
  sampler.publish(algo.params(), ++version);
  while (steps < cfg.total_env_steps && !cad.should_stop()) {
    sampler.set_sample_step(steps);
    sampler.collect(buf);
    steps += per_batch;
    ++itr;
    try {
      cad.add_opt(algo.process_batch(buf, steps));
    } catch (const std::exception& e) {
      throw RunnerError("optimization failed at iteration " + std::to_string(itr) + ": " + e.what());
    }
    sampler.publish(algo.params(), ++version);
    cad.add_trajectories(sampler.take_trajectories());
    cad.tick(itr, steps, algo.update_count(), algo.params());
  }
  RunResult r;
  r.params = algo.params();
  r.env_steps = steps;
  r.updates = algo.update_count();
  r.final_eval = cad.finish(itr, steps, r.updates, r.params);
  return r;
}

// ---------------------------------------------------------------------------
// Synchronous multi-learner: K replicated stacks, gradients averaged before
// every optimizer step. Learner k's data stream differs by its sampler seed.

inline RunResult train_sync(const RunnerConfig& cfg, const StackFactory& factory, RunOutputs out = {}) {
  cfg.validate();
  std::size_t K = cfg.learners;
  std::vector<Stack> stacks;
  for (std::size_t k = 0; k < K; ++k) {
    stacks.push_back(factory(k));
    detail::check_stack(stacks.back());
  }
  if (K == 1) return train_serial(cfg, stacks[0], out);
  for (std::size_t k = 1; k < K; ++k)
    if (stacks[k].algorithm->params().flatten() != stacks[0].algorithm->params().flatten())
      throw RunnerError("learner " + std::to_string(k) + " starts from different parameters");

  AllReduceGroup group(K);
  std::size_t per_learner = (cfg.total_env_steps + K - 1) / K;
  std::vector<std::exception_ptr> errors(K);
  std::vector<char> primary(K, 0);
  RunResult result;
  detail::Cadence cad(cfg, out, stacks[0]);

  auto learner = [&](std::size_t rank) {
    try {
      auto& st = stacks[rank];
      auto& sampler = *st.sampler;
      auto& algo = *st.algorithm;
      algo.set_grad_hook([&group, rank](GradSet& g, std::size_t) { group.reduce(rank, g); });
      auto buf = sampler.make_buffer();
      std::size_t per_batch = buf.leading_count(), steps = 0, itr = 0;
      std::uint64_t version = 0;
      sampler.publish(algo.params(), ++version);
      while (steps < per_learner) {
        sampler.set_sample_step(steps);
        sampler.collect(buf);
        steps += per_batch;
        ++itr;
        auto info = algo.process_batch(buf, steps);
        sampler.publish(algo.params(), ++version);
        if (itr % cfg.check_interval == 0) group.check_equal(rank, algo.params());
        auto trajs = sampler.take_trajectories();
        if (rank == 0) {
          cad.add_opt(info);
          cad.add_trajectories(std::move(trajs));
          cad.tick(itr, steps * K, algo.update_count(), algo.params());
        }
      }
      group.check_equal(rank, algo.params());
      if (rank == 0) {
        result.params = algo.params();
        result.env_steps = steps * K;
        result.updates = algo.update_count();
        result.final_eval = cad.finish(itr, steps * K, result.updates, result.params);
      }
    } catch (...) {
      errors[rank] = std::current_exception();
      primary[rank] = !group.aborted();
      group.abort(rank);
    }
  };
  std::vector<std::thread> threads;
  for (std::size_t k = 0; k < K; ++k) threads.emplace_back(learner, k);
  for (auto& t : threads) t.join();
  for (std::size_t k = 0; k < K; ++k) stacks[k].algorithm->set_grad_hook({});
  for (std::size_t k = 0; k < K; ++k) {
    if (!errors[k] || !primary[k]) continue;
    try {
      std::rethrow_exception(errors[k]);
    } catch (const std::exception& e) {
      throw RunnerError("learner " + std::to_string(k) + " failed: " + e.what());
    }
  }
  for (std::size_t k = 0; k < K; ++k)
    if (errors[k]) std::rethrow_exception(errors[k]);
  result.equality_checks = group.checks();
  return result;
}

// ---------------------------------------------------------------------------
// Asynchronous: sampler fills double-buffer halves, a copier moves finished
// halves into replay under the writer lock and credits the optimizer budget
// with cap * transitions, and the optimizer samples under the reader lock.

inline RunResult train_async(const RunnerConfig& cfg, Stack& stack, RunOutputs out = {}) {
  using clock = std::chrono::steady_clock;
  cfg.validate();
  detail::check_stack(stack);
  auto& sampler = *stack.sampler;
  auto& algo = *stack.algorithm;
  if (!algo.off_policy()) throw RunnerError("async mode requires an off-policy algorithm, got " + algo.name());
  const std::size_t spu = algo.samples_per_update();
  if (spu == 0) throw RunnerError("algorithm reports zero samples per update");

  std::shared_mutex replay_lock;
  ReplayAccess access;
  access.read = [&](const std::function<void()>& f) {
    std::shared_lock l(replay_lock);
    f();
  };
  access.write = [&](const std::function<void()>& f) {
    std::unique_lock l(replay_lock);
    f();
  };
  ParamMailbox mailbox;

  std::array<StructArray, 2> halves{sampler.make_buffer(), sampler.make_buffer()};
  const std::size_t per_batch = halves[0].leading_count();
  const double credit_per_batch = cfg.replay_ratio_cap * static_cast<double>(per_batch);

  std::mutex mu;
  std::condition_variable cv;
  std::array<bool, 2> full{false, false};
  bool sampler_done = false, copier_done = false, failed = false, ready = false, stop = false;
  std::exception_ptr error;
  std::string error_role;
  std::size_t generated = 0, consumed = 0, batches = 0;
  double budget = 0.0;
  std::vector<std::pair<std::size_t, std::size_t>> snapshots;  // (generated, consumed) before each credit
  std::vector<TrajRecord> trajs;
  AsyncStats stats;

  auto fail = [&](const char* role) {
    std::lock_guard l(mu);
    if (!failed) {
      error = std::current_exception();
      error_role = role;
    }
    failed = true;
    cv.notify_all();
  };

  sampler.publish(algo.params(), mailbox.publish(algo.params()));
  auto t0 = clock::now();

  std::thread sampler_thread([&] {
    try {
      std::size_t steps = 0, h = 0;
      while (steps < cfg.total_env_steps) {
        {
          std::unique_lock l(mu);
          if (full[h]) {
            auto w0 = clock::now();
            cv.wait(l, [&] { return failed || !full[h]; });
            stats.sampler_stall_seconds += detail::seconds_since(w0);
          }
          if (failed) return;
          if (stop || (cfg.max_seconds > 0.0 && detail::seconds_since(t0) >= cfg.max_seconds)) break;
        }
        sampler.refresh(mailbox);
        sampler.set_sample_step(steps);
        sampler.collect(halves[h]);
        steps += per_batch;
        auto t = sampler.take_trajectories();
        {
          std::lock_guard l(mu);
          for (auto& r : t) trajs.push_back(r);
          full[h] = true;
        }
        cv.notify_all();
        h ^= 1;
      }
      std::lock_guard l(mu);
      sampler_done = true;
      cv.notify_all();
    } catch (...) {
      fail("sampler");
    }
  });

  std::thread copier_thread([&] {
    try {
      std::size_t h = 0;
      for (;;) {
        {
          std::unique_lock l(mu);
          cv.wait(l, [&] { return failed || full[h] || sampler_done; });
          if (failed) return;
          if (!full[h]) break;
        }
        bool r = false;
        std::size_t gen = 0;
        {
          std::unique_lock w(replay_lock);
          algo.store(halves[h]);
          {
            std::lock_guard l(mu);
            gen = generated + per_batch;
          }
          r = algo.ready(gen);
        }
        {
          std::lock_guard l(mu);
          snapshots.emplace_back(generated, consumed);
          generated = gen;
          ++batches;
          ready = r;
          // Warmup transitions count as generated but bank no credit; unspent
          // credit beyond one optimizer batch does not carry over.
          if (r) budget = std::min(budget, static_cast<double>(spu)) + credit_per_batch;
          full[h] = false;
        }
        cv.notify_all();
        h ^= 1;
      }
      std::lock_guard l(mu);
      copier_done = true;
      cv.notify_all();
    } catch (...) {
      fail("copier");
    }
  });

  detail::Cadence cad(cfg, out, stack);
  std::size_t itr = 0, gen_seen = 0;
  try {
    for (;;) {
      bool can = false, done = false;
      std::size_t gen = 0, cons = 0;
      std::vector<TrajRecord> new_trajs;
      {
        std::unique_lock l(mu);
        auto pred = [&] {
          return failed || copier_done || (ready && budget >= static_cast<double>(spu)) || generated != gen_seen;
        };
        if (!pred()) {
          bool throttled = ready;
          auto w0 = clock::now();
          cv.wait(l, pred);
          if (throttled) stats.optimizer_idle_seconds += detail::seconds_since(w0);
        }
        if (failed) break;
        can = ready && budget >= static_cast<double>(spu);
        if (can) {
          budget -= static_cast<double>(spu);
          consumed += spu;
        }
        gen = gen_seen = generated;
        cons = consumed;
        itr = batches;
        done = copier_done && !can;
        new_trajs.swap(trajs);
      }
      if (can) {
        auto info = algo.update(access);
        stats.checksum_failures += info.checksum_failures;
        cad.add_opt(info);
        mailbox.publish(algo.params());
      }
      cad.add_trajectories(std::move(new_trajs));
      double ratio = gen ? static_cast<double>(cons) / static_cast<double>(gen) : 0.0;
      if (done) {
        stats.run_seconds = detail::seconds_since(t0);
        break;
      }
      cad.tick(itr, gen, algo.update_count(), algo.params(), ratio);
      if (cad.should_stop()) {
        std::lock_guard l(mu);
        stop = true;
      }
    }
  } catch (...) {
    fail("optimizer");
  }
  sampler_thread.join();
  copier_thread.join();
  if (failed) {
    try {
      std::rethrow_exception(error);
    } catch (const std::exception& e) {
      throw RunnerError(error_role + " role failed: " + e.what());
    }
  }

  stats.generated = generated;
  stats.consumed = consumed;
  stats.sampler_batches = batches;
  snapshots.emplace_back(generated, consumed);
  const std::size_t W = 10, n = snapshots.size();
  for (std::size_t i = 0; i + W < n; ++i)
    for (std::size_t j = i + W; j < std::min(n, i + 100 * W); ++j) {
      double dg = static_cast<double>(snapshots[j].first - snapshots[i].first);
      double dc = static_cast<double>(snapshots[j].second - snapshots[i].second);
      if (dg > 0) stats.max_window_ratio = std::max(stats.max_window_ratio, dc / dg);
    }

  RunResult r;
  r.params = algo.params();
  r.env_steps = generated;
  r.updates = algo.update_count();
  r.final_eval = cad.finish(batches, generated, r.updates, r.params, stats.ratio());
  r.async = stats;
  return r;
}

/// Dispatches on the configured mode.
inline RunResult train(const RunnerConfig& cfg, const StackFactory& factory, RunOutputs out = {}) {
  cfg.validate();
  if (cfg.async) {
    auto st = factory(0);
    return train_async(cfg, st, out);
  }
  if (cfg.learners > 1) return train_sync(cfg, factory, out);
  auto st = factory(0);
  return train_serial(cfg, st, out);
}

}  // namespace rlstack
