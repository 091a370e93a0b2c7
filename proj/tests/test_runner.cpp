#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "rlstack/envs.hpp"
#include "rlstack/runner.hpp"

using namespace rlstack;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("rlstack_runner_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

std::vector<std::string> lines_of(const std::filesystem::path& p) {
  std::ifstream is(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(is, l);) out.push_back(l);
  return out;
}

/// Drops the wall_time_s and sps fields (columns 3 and 4).
std::string strip_time(const std::string& line) {
  std::vector<std::string> f;
  std::stringstream ss(line);
  for (std::string x; std::getline(ss, x, ',');) f.push_back(x);
  if (line.back() == ',') f.push_back("");
  std::string out;
  for (std::size_t i = 0; i < f.size(); ++i) {
    if (i == 3 || i == 4) continue;
    out += f[i] + ";";
  }
  return out;
}

struct DqnSetup {
  std::size_t T = 4, B = 2, workers = 1;
  SamplerMode mode = SamplerMode::serial;
  std::uint64_t seed = 3;
  std::size_t min_steps = 64;
  double ratio = 1.0;
  std::size_t env_delay_us = 0;
  std::size_t cartpole_steps = 200;
  bool chain = false;
};

Stack dqn_stack(const DqnSetup& s, std::size_t rank = 0) {
  EnvFactory f;
  std::size_t od;
  if (s.chain) {
    f = [] { return std::make_unique<ChainMdp>(5, 20); };
    od = 5;
  } else {
    std::size_t ms = s.cartpole_steps, d = s.env_delay_us;
    f = [ms, d]() -> std::unique_ptr<Env> {
      if (d) return std::make_unique<DelayedEnv>(std::make_unique<CartPole>(ms), std::chrono::microseconds(d));
      return std::make_unique<CartPole>(ms);
    };
    od = 4;
  }
  QAgentConfig ac{.obs_dim = od, .n_actions = 2, .hidden = {16}};
  ac.epsilon.anneal_steps = 500;
  QAgent agent(ac, s.seed);
  SamplerConfig sc;
  sc.mode = s.mode;
  sc.batch_T = s.T;
  sc.batch_B = s.B;
  sc.workers = s.workers;
  sc.seed = s.seed + 1000 * rank;
  Stack st;
  st.sampler = make_sampler(sc, agent, f);
  DqnConfig dc;
  dc.min_steps_learn = s.min_steps;
  dc.replay_ratio = s.ratio;
  dc.batch_size = 16;
  dc.lr = 1e-3;
  dc.replay_size = 4096;
  dc.target = {50, 1.0};
  dc.seed = s.seed + rank;
  st.algorithm = std::make_unique<DqnAlgorithm>(agent, dc, st.sampler->batch_spec(), s.B);
  st.eval_agent = agent.clone();
  st.env_factory = f;
  return st;
}

Stack pg_stack(std::uint64_t seed, std::size_t rank, std::size_t T = 8, std::size_t B = 2) {
  EnvFactory f = [] { return std::make_unique<CartPole>(100); };
  PgAgent agent({.obs_dim = 4, .n_actions = 2, .hidden = {8}}, seed);
  SamplerConfig sc;
  sc.batch_T = T;
  sc.batch_B = B;
  sc.seed = seed + 1000 * rank;
  Stack st;
  st.sampler = make_sampler(sc, agent, f);
  PgConfig pc;
  pc.seed = seed + rank;
  st.algorithm = std::make_unique<PgAlgorithm>(agent, pc);
  st.eval_agent = agent.clone();
  st.env_factory = f;
  return st;
}

}  // namespace

TEST(RunnerConfig, Validation) {
  RunnerConfig c;
  c.learners = 0;
  EXPECT_THROW(c.validate(), RunnerError);
  c = {};
  c.log_interval_steps = 0;
  EXPECT_THROW(c.validate(), RunnerError);
  c = {};
  c.async = true;
  c.replay_ratio_cap = 0.0;
  EXPECT_THROW(c.validate(), RunnerError);
  c = {};
  c.stop_eval_return = 1.0;
  EXPECT_THROW(c.validate(), RunnerError);  // needs evaluations
  c.eval_interval_steps = 100;
  EXPECT_NO_THROW(c.validate());
  c.learners = 2;
  EXPECT_THROW(c.validate(), RunnerError);
  c = {};
  c.max_seconds = -1.0;
  EXPECT_THROW(c.validate(), RunnerError);
}

TEST(Serial, StopsAtEvalTarget) {
  DqnSetup s;
  s.chain = true;
  auto st = dqn_stack(s);
  RunnerConfig rc;
  rc.total_env_steps = 5000;
  rc.log_interval_steps = 100;
  rc.eval_interval_steps = 200;
  rc.eval_episodes = 2;
  rc.eval_max_steps = 20;
  rc.stop_eval_return = 0.0;  // any evaluation meets it
  CsvLog log;
  auto r = train_serial(rc, st, {.log = &log});
  EXPECT_EQ(r.env_steps, 200u);
  ASSERT_TRUE(r.final_eval);
  EXPECT_TRUE(log.rows().back().eval.has_value());

  auto st2 = dqn_stack(s);
  rc.stop_eval_return = 2.0;  // chain returns are at most 1
  EXPECT_EQ(train_serial(rc, st2).env_steps, 5000u);
}

TEST(Serial, TimeLimit) {
  DqnSetup s;
  s.env_delay_us = 200;
  auto st = dqn_stack(s);
  RunnerConfig rc;
  rc.total_env_steps = 1000000;
  rc.max_seconds = 0.3;
  auto t0 = std::chrono::steady_clock::now();
  auto r = train_serial(rc, st);
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_LT(r.env_steps, 1000000u);
  EXPECT_GE(secs, 0.3);
  EXPECT_LT(secs, 2.0);
}

TEST(Serial, SingleBatchRun) {
  DqnSetup s;
  auto st = dqn_stack(s);
  RunnerConfig rc;
  rc.total_env_steps = 1;
  rc.log_interval_steps = 100;
  CsvLog log;
  auto r = train_serial(rc, st, {.log = &log});
  EXPECT_EQ(r.env_steps, s.T * s.B);
  EXPECT_EQ(r.updates, 0u);
  auto rows = log.rows();
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].iteration, 1u);
}

TEST(Serial, LogCadenceAndMonotonicCounters) {
  DqnSetup s;
  s.T = 5;
  s.B = 3;  // 15 steps per batch
  auto st = dqn_stack(s);
  RunnerConfig rc;
  rc.total_env_steps = 600;
  rc.log_interval_steps = 100;
  rc.eval_interval_steps = 200;
  rc.eval_episodes = 2;
  rc.eval_max_steps = 50;
  CsvLog log;
  auto r = train_serial(rc, st, {.log = &log});
  auto rows = log.rows();
  ASSERT_GE(rows.size(), 6u);
  for (std::size_t i = 0; i + 1 < rows.size(); ++i) {
    // Row k appears within one batch after k * interval.
    std::size_t due = (i + 1) * rc.log_interval_steps;
    EXPECT_GE(rows[i].cum_env_steps, due);
    EXPECT_LT(rows[i].cum_env_steps, due + 15);
  }
  for (std::size_t i = 1; i < rows.size(); ++i) {
    EXPECT_GE(rows[i].cum_env_steps, rows[i - 1].cum_env_steps);
    EXPECT_GE(rows[i].cum_updates, rows[i - 1].cum_updates);
    EXPECT_GE(rows[i].wall_time_s, rows[i - 1].wall_time_s);
  }
  EXPECT_GT(r.updates, 0u);
  ASSERT_TRUE(r.final_eval);
  EXPECT_EQ(r.final_eval->episodes, 2u);
  std::size_t with_eval = 0;
  for (const auto& row : rows) with_eval += row.eval.has_value();
  EXPECT_GE(with_eval, 3u);
}

TEST(Serial, SameSeedSameLog) {
  auto dir = temp_dir("det");
  for (int rep = 0; rep < 2; ++rep) {
    DqnSetup s;
    auto st = dqn_stack(s);
    RunnerConfig rc;
    rc.total_env_steps = 800;
    rc.log_interval_steps = 100;
    rc.eval_interval_steps = 400;
    rc.eval_episodes = 2;
    rc.eval_max_steps = 30;
    CsvLog log(dir / ("log" + std::to_string(rep) + ".csv"));
    train_serial(rc, st, {.log = &log, .checkpoint_dir = dir});
  }
  auto a = lines_of(dir / "log0.csv"), b = lines_of(dir / "log1.csv");
  ASSERT_EQ(a.size(), b.size());
  ASSERT_GT(a.size(), 5u);
  EXPECT_EQ(a[0], b[0]);
  for (std::size_t i = 1; i < a.size(); ++i) EXPECT_EQ(strip_time(a[i]), strip_time(b[i])) << i;
  EXPECT_TRUE(std::filesystem::exists(dir / "params_final.ckpt"));
  std::ifstream is(dir / "params_final.ckpt", std::ios::binary);
  auto p = load_checkpoint(is);
  EXPECT_GT(p.count(), 0u);
}

TEST(Serial, IncompleteStackRejected) {
  RunnerConfig rc;
  rc.total_env_steps = 100;
  Stack broken;
  EXPECT_THROW(train_serial(rc, broken), RunnerError);
}

TEST(Sync, OneLearnerEqualsSerial) {
  RunnerConfig rc;
  rc.total_env_steps = 400;
  rc.log_interval_steps = 100;
  auto serial_stack = pg_stack(4, 0);
  auto a = train_serial(rc, serial_stack);
  rc.learners = 1;
  auto b = train_sync(rc, [](std::size_t k) { return pg_stack(4, k); });
  EXPECT_EQ(a.params.flatten(), b.params.flatten());
}

TEST(Sync, TwoLearnersMatchConcatenatedBatches) {
  // Fixed synthetic batches: learner k trains on half k, the reference on the
  // concatenation along B. With per-batch mean losses the averaged gradient is
  // the full-batch gradient.
  std::size_t T = 6, B = 2;
  auto probe = pg_stack(9, 0, T, B);
  auto spec = probe.sampler->batch_spec();
  PgAgent agent({.obs_dim = 4, .n_actions = 2, .hidden = {8}}, 9);
  PgConfig pc;
  pc.ppo = false;
  pc.normalize_advantages = false;
  pc.grad_clip = 0.0;
  pc.lr = 1e-2;
  std::vector<StructArray> full, halves[2];
  for (int n = 0; n < 5; ++n) {
    auto s0 = pg_stack(9 + static_cast<std::uint64_t>(n), 0, T, 2 * B);
    auto buf = s0.sampler->make_buffer();
    s0.sampler->collect(buf);
    full.push_back(buf);
    for (int h = 0; h < 2; ++h) {
      auto half = StructArray::allocate(spec, {T, B});
      std::size_t lo = static_cast<std::size_t>(h) * B;
      copy_region(half, {}, buf, {Sel::all(), Sel::span(lo, lo + B)});
      halves[h].push_back(half);
    }
  }
  PgAlgorithm ref(agent, pc);
  for (auto& b : full) ref.process_batch(b, 0);

  AllReduceGroup group(2);
  PgAlgorithm l0(agent, pc), l1(agent, pc);
  PgAlgorithm* ls[2] = {&l0, &l1};
  std::vector<std::thread> th;
  for (std::size_t k = 0; k < 2; ++k)
    th.emplace_back([&, k] {
      ls[k]->set_grad_hook([&, k](GradSet& g, std::size_t) { group.reduce(k, g); });
      for (auto& b : halves[k]) {
        ls[k]->process_batch(b, 0);
        group.check_equal(k, ls[k]->params());
      }
    });
  for (auto& t : th) t.join();
  EXPECT_EQ(group.checks(), 5u);
  EXPECT_EQ(l0.params().flatten(), l1.params().flatten());
  auto x = ref.params().flatten(), y = l0.params().flatten();
  ASSERT_EQ(x.size(), y.size());
  double md = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) md = std::max(md, std::abs(x[i] - y[i]));
  EXPECT_LT(md, 1e-10);
}

TEST(Sync, TwoLearnerRunStaysEqual) {
  RunnerConfig rc;
  rc.total_env_steps = 640;
  rc.log_interval_steps = 160;
  rc.learners = 2;
  CsvLog log;
  auto r = train_sync(rc, [](std::size_t k) { return pg_stack(5, k); }, {.log = &log});
  EXPECT_EQ(r.env_steps, 640u);
  EXPECT_GE(r.equality_checks, 640u / 16 / 2);
  EXPECT_GT(r.updates, 0u);
  EXPECT_FALSE(log.rows().empty());

  DqnSetup s;
  rc.total_env_steps = 400;
  auto d = train_sync(rc, [&](std::size_t k) { return dqn_stack(s, k); });
  EXPECT_GT(d.updates, 0u);
}

TEST(Sync, PeerFailureDoesNotDeadlock) {
  RunnerConfig rc;
  rc.total_env_steps = 2000;
  rc.learners = 3;
  auto factory = [](std::size_t k) {
    auto st = pg_stack(5, k);
    if (k == 1) {
      SamplerConfig sc;
      sc.batch_T = 8;
      sc.batch_B = 2;
      EnvFactory f = [] {
        struct Bad final : Env {
          std::size_t n = 0;
          std::string name() const override { return "bad"; }
          Space observation_space() const override { return Space::box(std::vector<double>(4, -1.0), std::vector<double>(4, 1.0)); }
          Space action_space() const override { return Space::discrete(2); }
          std::vector<float> reset() override { return std::vector<float>(4, 0.0f); }
          EnvStep step(const Action&) override {
            if (++n == 40) throw EnvError("bad step");
            return {std::vector<float>(4, 0.0f), 0.0, false, {0.0}};
          }
        };
        return std::make_unique<Bad>();
      };
      PgAgent agent({.obs_dim = 4, .n_actions = 2, .hidden = {8}}, 5);
      st.sampler = make_sampler(sc, agent, f);
    }
    return st;
  };
  try {
    train_sync(rc, factory);
    FAIL() << "expected failure";
  } catch (const RunnerError& e) {
    EXPECT_NE(std::string(e.what()).find("learner 1"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("bad step"), std::string::npos) << e.what();
  }
}

TEST(Async, RejectsOnPolicy) {
  RunnerConfig rc;
  rc.async = true;
  auto st = pg_stack(1, 0);
  EXPECT_THROW(train_async(rc, st), RunnerError);
}

TEST(Async, ThrottleAndIntegrity) {
  DqnSetup s;
  s.T = 16;
  s.B = 4;  // 64 transitions per sampler batch
  s.min_steps = 256;
  auto st = dqn_stack(s);
  RunnerConfig rc;
  rc.async = true;
  rc.total_env_steps = 64 * 60;
  rc.log_interval_steps = 640;
  rc.replay_ratio_cap = 1.0;
  CsvLog log;
  auto r = train_async(rc, st, {.log = &log});
  const auto& a = r.async;
  EXPECT_EQ(a.generated, 64u * 60);
  EXPECT_EQ(a.sampler_batches, 60u);
  EXPECT_GT(a.consumed, 0u);
  EXPECT_LE(static_cast<double>(a.consumed), rc.replay_ratio_cap * static_cast<double>(a.generated));
  EXPECT_LE(a.max_window_ratio, rc.replay_ratio_cap * 1.05 + 16.0 / 640.0);
  EXPECT_EQ(a.checksum_failures, 0u);
  EXPECT_EQ(r.updates * 16, a.consumed);
  auto rows = log.rows();
  ASSERT_FALSE(rows.empty());
  for (std::size_t i = 1; i < rows.size(); ++i) EXPECT_GE(rows[i].cum_env_steps, rows[i - 1].cum_env_steps);
}

TEST(Async, TimeLimitStopsAllRoles) {
  DqnSetup s;
  s.T = 8;
  s.env_delay_us = 100;
  auto st = dqn_stack(s);
  RunnerConfig rc;
  rc.async = true;
  rc.total_env_steps = 100000000;
  rc.max_seconds = 0.4;
  auto r = train_async(rc, st);
  EXPECT_GE(r.async.run_seconds, 0.4);
  EXPECT_LT(r.async.run_seconds, 2.0);
  EXPECT_EQ(r.async.generated, r.async.sampler_batches * 16);
}

TEST(Async, SlowSamplerMakesOptimizerWait) {
  DqnSetup s;
  s.T = 8;
  s.B = 2;
  s.min_steps = 16;
  s.env_delay_us = 500;  // 8 ms per sampler batch
  auto st = dqn_stack(s);
  RunnerConfig rc;
  rc.async = true;
  rc.total_env_steps = 16 * 30;
  rc.replay_ratio_cap = 2.0;
  auto r = train_async(rc, st);
  EXPECT_GT(r.async.optimizer_idle_seconds, 0.05);
  EXPECT_LE(static_cast<double>(r.async.consumed), 2.0 * static_cast<double>(r.async.generated));
}

TEST(Async, RoleFailureShutsDown) {
  auto st = dqn_stack({});
  SamplerConfig sc;
  sc.batch_T = 4;
  sc.batch_B = 2;
  EnvFactory f = [] {
    struct Bad final : Env {
      std::size_t n = 0;
      std::string name() const override { return "bad"; }
      Space observation_space() const override { return Space::box(std::vector<double>(4, -1.0), std::vector<double>(4, 1.0)); }
      Space action_space() const override { return Space::discrete(2); }
      std::vector<float> reset() override { return std::vector<float>(4, 0.0f); }
      EnvStep step(const Action&) override {
        if (++n == 100) throw EnvError("sampler broke");
        return {std::vector<float>(4, 0.0f), 0.0, false, {0.0}};
      }
    };
    return std::make_unique<Bad>();
  };
  st.sampler = make_sampler(sc, st.sampler->agent(), f);
  RunnerConfig rc;
  rc.async = true;
  rc.total_env_steps = 100000;
  try {
    train_async(rc, st);
    FAIL();
  } catch (const RunnerError& e) {
    EXPECT_NE(std::string(e.what()).find("sampler role"), std::string::npos) << e.what();
  }
}

TEST(Log, ConcurrentWritersProduceIntactRows) {
  auto dir = temp_dir("log");
  CsvLog log(dir / "log.csv");
  auto writer = [&](std::size_t base) {
    for (std::size_t i = 0; i < 500; ++i) {
      LogRow r;
      r.iteration = base + i;
      r.cum_env_steps = 123456789 + i;
      r.online_return_mean = 1.0 / 3.0;
      log.append(r);
    }
  };
  std::thread a(writer, 0), b(writer, 100000);
  a.join();
  b.join();
  auto lines = lines_of(dir / "log.csv");
  ASSERT_EQ(lines.size(), 1001u);
  std::size_t headers = 0;
  for (const auto& l : lines) {
    if (l.rfind("iteration,", 0) == 0) {
      ++headers;
      continue;
    }
    EXPECT_EQ(static_cast<std::size_t>(std::count(l.begin(), l.end(), ',')), LogRow::columns().size() - 1) << l;
    EXPECT_NE(l.find(",12345"), std::string::npos);
  }
  EXPECT_EQ(headers, 1u);
}

TEST(Log, ManifestHasVersionAndEntries) {
  auto dir = temp_dir("manifest");
  write_manifest(dir / "manifest.txt", {{"seed", "7"}, {"dqn.lr", "0.001"}});
  auto l = lines_of(dir / "manifest.txt");
  ASSERT_EQ(l.size(), 3u);
  EXPECT_EQ(l[0].rfind("code_version = ", 0), 0u);
  EXPECT_EQ(l[1], "seed = 7");
  EXPECT_EQ(l[2], "dqn.lr = 0.001");
}
