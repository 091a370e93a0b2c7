#include <gtest/gtest.h>

#include <random>

#include "rlstack/experiment.hpp"
#include "rlstack/plot.hpp"

using namespace rlstack;

namespace {

std::string message_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Config, DefaultsRoundTrip) {
  Config a = default_experiment();
  Config b = default_experiment();
  b.parse(a.serialize());
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.serialize(), b.serialize());
}

TEST(Config, RandomValuesRoundTrip) {
  std::mt19937_64 g(7);
  for (int rep = 0; rep < 200; ++rep) {
    Config a = default_experiment();
    for (const auto& k : a.schema().keys()) {
      switch (k.type) {
        case ValueType::integer: a.set(k.key, std::to_string(static_cast<std::int64_t>(g() % 100000))); break;
        case ValueType::real: {
          double v = std::ldexp(static_cast<double>(g() % 1000003) - 500000.0, static_cast<int>(g() % 40) - 30);
          a.set(k.key, format_value(v));
          EXPECT_EQ(std::get<double>(a.value(k.key)), v);
          break;
        }
        case ValueType::boolean: a.set(k.key, g() % 2 ? "true" : "false"); break;
        case ValueType::string: a.set(k.key, "s" + std::to_string(g() % 100)); break;
        case ValueType::int_list: a.set(k.key, "[" + std::to_string(g() % 9) + ", " + std::to_string(g() % 9) + "]"); break;
      }
    }
    Config b = default_experiment();
    b.parse(a.serialize());
    ASSERT_EQ(a, b);
  }
}

TEST(Config, RejectsWithLineNumbers) {
  Config c = default_experiment();
  auto m = message_of([&] { c.parse("seed = 1\n# comment\n\ndqn.learning_rate = 0.1\n", "x.cfg"); });
  EXPECT_NE(m.find("x.cfg:4"), std::string::npos) << m;
  EXPECT_NE(m.find("unknown key 'dqn.learning_rate'"), std::string::npos) << m;

  m = message_of([&] { c.parse("seed = 1\ndqn.lr = fast\n", "y.cfg"); });
  EXPECT_NE(m.find("y.cfg:2"), std::string::npos) << m;
  EXPECT_NE(m.find("dqn.lr"), std::string::npos) << m;

  m = message_of([&] { c.parse("seed = 1\nseed = 2\n", "z.cfg"); });
  EXPECT_NE(m.find("z.cfg:2"), std::string::npos) << m;
  EXPECT_NE(m.find("duplicate"), std::string::npos) << m;

  EXPECT_THROW(c.parse("just words\n"), ConfigError);
  EXPECT_THROW(c.apply_override("dqn.double_q=maybe"), ConfigError);
  EXPECT_THROW(c.apply_override("agent.hidden=[1, 2,]"), ConfigError);
  EXPECT_THROW(c.apply_override("seed=1.5"), ConfigError);
  EXPECT_THROW(c.apply_override("nokey"), ConfigError);
}

TEST(Config, Override) {
  Config c = default_experiment();
  c.apply_override("dqn.lr=1e-3");
  c.apply_override("agent.hidden=[16,8]");
  EXPECT_DOUBLE_EQ(c.real("dqn.lr"), 1e-3);
  EXPECT_EQ(c.sizes("agent.hidden"), (std::vector<std::size_t>{16, 8}));
  EXPECT_NE(c.serialize().find("dqn.lr = 0.001\n"), std::string::npos);
}

TEST(Config, BuildsEveryAlgorithm) {
  struct Case {
    const char* env;
    const char* algo;
  };
  for (auto [env, algo] : {Case{"chain", "dqn"}, Case{"cartpole", "ppo"}, Case{"cartpole", "a2c"}, Case{"pointnav", "ddpg"},
                           Case{"pointnav", "td3"}, Case{"masked_chain", "r2d1"}}) {
    Config c = default_experiment();
    c.set("env", env);
    c.set("algo", algo);
    if (std::string(algo) == "td3") {
      c.set("ddpg.target_noise", "0.2");
      c.set("ddpg.policy_delay", "2");
    }
    auto st = make_stack(c);
    EXPECT_EQ(st.algorithm->name(), algo);
  }
  Config bad = default_experiment();
  bad.set("env", "pointnav");
  EXPECT_THROW(make_stack(bad), ConfigError);
  bad.set("env", "nowhere");
  EXPECT_THROW(make_stack(bad), ConfigError);
}

TEST(Grid, ExpansionCountOrderAndPaths) {
  VariantGrid g(experiment_schema());
  g.parse("set runner.total_env_steps = 100\nvary dqn.lr = 1e-4 | 1e-3 | 3e-3\nvary seed = 0 | 1\n");
  EXPECT_EQ(g.size(), 6u);
  auto v = g.expand();
  ASSERT_EQ(v.size(), 6u);
  EXPECT_EQ(v[0].path, "lr_1e-4/seed_0");
  EXPECT_EQ(v[1].path, "lr_1e-4/seed_1");
  EXPECT_EQ(v[5].path, "lr_3e-3/seed_1");
  EXPECT_DOUBLE_EQ(v[2].config.real("dqn.lr"), 1e-3);
  EXPECT_EQ(v[3].config.integer("seed"), 1);
  for (const auto& x : v) EXPECT_EQ(x.config.count("runner.total_env_steps"), 100u);
  auto again = g.expand();
  for (std::size_t i = 0; i < v.size(); ++i) {
    EXPECT_EQ(v[i].path, again[i].path);
    EXPECT_EQ(v[i].config, again[i].config);
  }
}

TEST(Grid, Errors) {
  VariantGrid g(experiment_schema());
  auto m = message_of([&] { g.parse("vary seed = 0 | 1\nvary nokey = 1\n", "g"); });
  EXPECT_NE(m.find("g:2"), std::string::npos) << m;
  VariantGrid h(experiment_schema());
  m = message_of([&] { h.parse("vary seed = 0 | x\n", "g"); });
  EXPECT_NE(m.find("g:1"), std::string::npos) << m;
  VariantGrid d(experiment_schema());
  d.parse("vary dqn.lr = 0.1 | 1e-1\n");
  EXPECT_NO_THROW(d.expand());
  VariantGrid e(experiment_schema());
  e.parse("vary env = a/b | a_b\n");
  EXPECT_THROW(e.expand(), ConfigError);
}

TEST(Plot, SingleRunPolylineMatchesRows) {
  CsvTable t;
  t.header = {"cum_env_steps", "cum_updates", "wall_time_s", "m"};
  t.rows = {{"10", "1", "0.5", "1.5"}, {"20", "4", "0.9", ""}, {"30", "9", "1.2", "2.5"}};
  auto s = extract_series(t, "m", XAxis::steps, "r");
  EXPECT_EQ(s.x, (std::vector<double>{10, 30}));
  EXPECT_EQ(s.y, (std::vector<double>{1.5, 2.5}));
  auto u = extract_series(t, "m", XAxis::updates);
  EXPECT_EQ(u.x, (std::vector<double>{1, 9}));
  auto w = extract_series(t, "m", XAxis::time);
  EXPECT_EQ(w.x, (std::vector<double>{0.5, 1.2}));
  PlotFrame f = fit_frame({s}, nullptr);
  auto pts = polyline_points(s, f);
  ASSERT_EQ(pts.size(), 2u);
  EXPECT_DOUBLE_EQ(pts[0].first, f.margin);
  EXPECT_DOUBLE_EQ(pts[1].first, f.width - f.margin);
  EXPECT_DOUBLE_EQ(pts[0].second, f.height - f.margin);
  EXPECT_DOUBLE_EQ(pts[1].second, f.margin);
  auto svg = render_svg({s}, nullptr, "m", "cum_env_steps");
  EXPECT_EQ(std::count(svg.begin(), svg.end(), '\n') > 3, true);
  EXPECT_NE(svg.find("class=\"run\""), std::string::npos);
  EXPECT_THROW(extract_series(t, "missing", XAxis::steps), PlotError);
}

TEST(Plot, MeanBandIsPointwiseAverage) {
  std::mt19937 g(3);
  std::uniform_real_distribution<double> u(-5, 5);
  Series a{"a", {}, {}}, b{"b", {}, {}};
  for (int i = 0; i < 20; ++i) {
    a.x.push_back(i * 10);
    a.y.push_back(u(g));
    if (i % 4 != 3) {
      b.x.push_back(i * 10);
      b.y.push_back(u(g));
    }
  }
  auto band = mean_band({a, b});
  std::size_t k = 0;
  for (std::size_t i = 0; i < a.x.size(); ++i) {
    auto it = std::find(b.x.begin(), b.x.end(), a.x[i]);
    if (it == b.x.end()) continue;
    double yb = b.y[static_cast<std::size_t>(it - b.x.begin())];
    ASSERT_LT(k, band.x.size());
    EXPECT_EQ(band.x[k], a.x[i]);
    EXPECT_DOUBLE_EQ(band.mean[k], (a.y[i] + yb) / 2.0);
    EXPECT_DOUBLE_EQ(band.lo[k], std::min(a.y[i], yb));
    EXPECT_DOUBLE_EQ(band.hi[k], std::max(a.y[i], yb));
    ++k;
  }
  EXPECT_EQ(k, band.x.size());
  EXPECT_EQ(k, 15u);
}

TEST(Plot, Summary) {
  Series s{"run0", {1, 2, 3}, {0.5, 2.0, 1.0}};
  auto r = summarize(s);
  EXPECT_EQ(r.final_value, 1.0);
  EXPECT_EQ(r.best_value, 2.0);
  EXPECT_EQ(r.best_x, 2.0);
  auto csv = summary_csv({s}, "m");
  EXPECT_NE(csv.find("run0,m,3,3,1,2,2"), std::string::npos) << csv;
}
