#include <gtest/gtest.h>

#include <random>
#include <sstream>
#include <thread>

#include "rlstack/adam.hpp"
#include "rlstack/allreduce.hpp"
#include "rlstack/distributions.hpp"
#include "rlstack/gradcheck.hpp"
#include "rlstack/mlp.hpp"
#include "rlstack/rng.hpp"
#include "rlstack/rnn.hpp"

using namespace rlstack;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, std::mt19937_64& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> n(0.0, scale);
  for (auto& v : t.data) v = n(rng);
  return t;
}

// Weighted-sum loss sum(c * f(x)) so every output contributes a distinct gradient.
double weighted(const Tensor& y, const Tensor& c) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += c.data[i] * y.data[i];
  return s;
}

void check_mlp(MlpConfig cfg) {
  std::mt19937_64 rng(3);
  Mlp net(cfg);
  auto p = net.init(rng);
  auto x = random_tensor({5, cfg.input_dim}, rng);
  auto c = random_tensor({5, net.out_width()}, rng);
  Mlp::Cache cache;
  auto y = net.forward(p.tensors, x, &cache);
  auto g = p.zeros_like();
  net.backward(p.tensors, cache, c, g.tensors);
  auto res = finite_diff_check([&](const ParamSet& q) { return weighted(net.forward(q.tensors, x), c); }, p, g);
  EXPECT_LT(res.max_rel_error, 1e-5) << res.worst_tensor << "[" << res.worst_index << "]";
}

}  // namespace

TEST(Rng, StreamsAreDeterministicAndDistinct) {
  auto a = SlotRng::for_slot(1, 0, StreamKind::env);
  auto b = SlotRng::for_slot(1, 0, StreamKind::env);
  auto c = SlotRng::for_slot(1, 0, StreamKind::agent);
  auto d = SlotRng::for_slot(1, 1, StreamKind::env);
  for (int i = 0; i < 10; ++i) {
    auto va = a();
    EXPECT_EQ(va, b());
    EXPECT_NE(va, c());
    EXPECT_NE(va, d());
  }
}

TEST(Rng, UniformMomentsAndBelowRange) {
  auto r = SlotRng::for_slot(5, 2, StreamKind::replay);
  double s = 0.0, s2 = 0.0;
  const int n = 100000;
  std::vector<int> counts(7, 0);
  for (int i = 0; i < n; ++i) {
    double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    s += u;
    s2 += u * u;
    ++counts[r.below(7)];
  }
  EXPECT_NEAR(s / n, 0.5, 0.01);
  EXPECT_NEAR(s2 / n, 1.0 / 3.0, 0.01);
  for (int k : counts) EXPECT_NEAR(k / double(n), 1.0 / 7.0, 0.01);
}

TEST(Mlp, GradientsMatchFiniteDifferences) {
  check_mlp({3, {8, 6}, 4, Activation::tanh, false, 0});
  check_mlp({3, {8}, 4, Activation::tanh, true, 0});
  check_mlp({3, {5}, 2, Activation::tanh, true, 5});
  check_mlp({2, {}, 3, Activation::tanh, false, 0});
}

TEST(Mlp, RowsAreComputedIndependently) {
  std::mt19937_64 rng(9);
  Mlp net({4, {16, 16}, 3, Activation::relu, true, 0});
  auto p = net.init(rng);
  auto x = random_tensor({7, 4}, rng);
  auto all = net.forward(p.tensors, x);
  for (std::size_t r = 0; r < 7; ++r) {
    Tensor xr({1, 4});
    std::copy(x.row(r).begin(), x.row(r).end(), xr.data.begin());
    auto yr = net.forward(p.tensors, xr);
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(yr.data[j], all.at(r, j));
  }
}

TEST(Mlp, KeepsLeadingDims) {
  std::mt19937_64 rng(1);
  Mlp net({2, {4}, 3});
  auto p = net.init(rng);
  auto y = net.forward(p.tensors, Tensor({5, 6, 2}));
  EXPECT_EQ(y.shape, (std::vector<std::size_t>{5, 6, 3}));
}

TEST(Rnn, GradientsMatchFiniteDifferencesWithResets) {
  std::mt19937_64 rng(4);
  Rnn rnn({3, 5, 2});
  auto p = rnn.init(rng);
  std::size_t T = 6, B = 3;
  auto x = random_tensor({T, B, 3}, rng);
  RnnState h0{random_tensor({1, B, 5}, rng, 0.5)};
  std::vector<std::uint8_t> resets(T * B, 0);
  resets[2 * B + 1] = 1;
  resets[4 * B + 0] = 1;
  auto c = random_tensor({T, B, 2}, rng);
  Rnn::Cache cache;
  rnn.forward(p.tensors, x, h0, resets, &cache);
  auto g = p.zeros_like();
  auto gi = rnn.backward(p.tensors, cache, c, g.tensors);
  auto loss = [&](const ParamSet& q) { return weighted(rnn.forward(q.tensors, x, h0, resets).y, c); };
  auto res = finite_diff_check(loss, p, g);
  EXPECT_LT(res.max_rel_error, 1e-5) << res.worst_tensor;

  // initial-state gradient; slot 1 was reset at t=2 but contributes before that
  ParamSet hs;
  hs.add("h0", h0.hidden);
  ParamSet ghs;
  ghs.add("h0", gi.dh0);
  auto res_h = finite_diff_check(
      [&](const ParamSet& q) { return weighted(rnn.forward(p.tensors, x, RnnState{q.tensors[0]}, resets).y, c); }, hs,
      ghs);
  EXPECT_LT(res_h.max_rel_error, 1e-5);
}

TEST(Rnn, ResetBlocksInformationFlow) {
  std::mt19937_64 rng(2);
  Rnn rnn({2, 4, 1});
  auto p = rnn.init(rng);
  auto x = random_tensor({4, 1, 2}, rng);
  std::vector<std::uint8_t> resets{0, 0, 1, 0};
  auto a = rnn.forward(p.tensors, x, RnnState::zeros(1, 4), resets);
  auto x2 = x;
  x2.data[0] += 1.0;  // perturb before the reset
  auto b = rnn.forward(p.tensors, x2, RnnState{random_tensor({1, 1, 4}, rng)}, resets);
  EXPECT_NE(a.y.data[1], b.y.data[1]);
  EXPECT_EQ(a.y.data[2], b.y.data[2]);
  EXPECT_EQ(a.y.data[3], b.y.data[3]);
}

TEST(RnnState, BatchMajorRoundTrip) {
  std::mt19937_64 rng(8);
  RnnState s{random_tensor({2, 3, 4}, rng)};
  auto back = RnnState::from_batch_major(s.to_batch_major(), 2);
  EXPECT_EQ(back.hidden.data, s.hidden.data);
}

TEST(Adam, MatchesHandComputedUpdate) {
  ParamSet p;
  p.add("w", Tensor({2}));
  p.tensors[0].data = {1.0, -2.0};
  AdamConfig cfg;
  cfg.lr = 0.1;
  Adam opt(p, cfg);
  GradSet g = p.zeros_like();
  double m[2] = {0, 0}, v[2] = {0, 0}, w[2] = {1.0, -2.0};
  for (int t = 1; t <= 3; ++t) {
    g.tensors[0].data = {0.5 * t, -1.5};
    opt.step(p, g);
    for (int i = 0; i < 2; ++i) {
      double gi = g.tensors[0].data[i];
      m[i] = 0.9 * m[i] + 0.1 * gi;
      v[i] = 0.999 * v[i] + 0.001 * gi * gi;
      double mh = m[i] / (1 - std::pow(0.9, t)), vh = v[i] / (1 - std::pow(0.999, t));
      w[i] -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
      EXPECT_NEAR(p.tensors[0].data[i], w[i], 1e-12);
    }
  }
  g.tensors[0].data[0] = std::nan("");
  EXPECT_THROW(opt.step(p, g), NumericError);
}

TEST(AllReduce, MeanInRankOrder) {
  std::vector<GradSet> gs(3);
  for (int k = 0; k < 3; ++k) {
    gs[k].add("g", Tensor({2}));
    gs[k].tensors[0].data = {double(k), 2.0 * k};
  }
  auto m = allreduce_mean(gs);
  EXPECT_DOUBLE_EQ(m.tensors[0].data[0], 1.0);
  EXPECT_DOUBLE_EQ(m.tensors[0].data[1], 2.0);
  gs[1].tensors[0] = Tensor({3});
  EXPECT_THROW(allreduce_mean(gs), NumericError);
}

TEST(AllReduce, GroupAveragesAcrossThreads) {
  const std::size_t K = 3;
  AllReduceGroup group(K);
  std::vector<GradSet> gs(K);
  for (std::size_t k = 0; k < K; ++k) {
    gs[k].add("g", Tensor({4}));
    for (std::size_t i = 0; i < 4; ++i) gs[k].tensors[0].data[i] = double(k * 4 + i);
  }
  auto expected = allreduce_mean(gs);
  std::vector<std::thread> ts;
  for (std::size_t k = 0; k < K; ++k)
    ts.emplace_back([&, k] {
      for (int round = 0; round < 5; ++round) {
        GradSet g = round == 0 ? gs[k] : gs[k];
        group.reduce(k, g);
        EXPECT_EQ(g.tensors[0].data, expected.tensors[0].data);
      }
    });
  for (auto& t : ts) t.join();
}

TEST(AllReduce, DivergenceDetected) {
  AllReduceGroup group(2);
  ParamSet a, b;
  a.add("w", Tensor({2}, 1.0));
  b.add("w", Tensor({2}, 1.0));
  b.tensors[0].data[1] = std::nextafter(1.0, 2.0);
  int errors = 0;
  std::thread t0([&] {
    try { group.check_equal(0, a); } catch (const DivergenceError&) { ++errors; }
  });
  std::thread t1([&] {
    try { group.check_equal(1, b); } catch (const DivergenceError&) { ++errors; }
  });
  t0.join();
  t1.join();
  EXPECT_GE(errors, 1);
}

TEST(Distributions, CategoricalGradients) {
  std::vector<double> logits{0.3, -1.2, 2.0, 0.1};
  auto c = Categorical::from_logits(logits);
  ParamSet p;
  p.add("l", Tensor({4}));
  p.tensors[0].data = logits;
  GradSet g = p.zeros_like();
  c.grad_log_prob(2, g.tensors[0].data);
  auto r1 = finite_diff_check([](const ParamSet& q) { return Categorical::from_logits(q.tensors[0].data).log_prob(2); },
                              p, g);
  EXPECT_LT(r1.max_rel_error, 1e-6);
  g.zero();
  c.grad_entropy(g.tensors[0].data);
  auto r2 = finite_diff_check([](const ParamSet& q) { return Categorical::from_logits(q.tensors[0].data).entropy(); },
                              p, g);
  EXPECT_LT(r2.max_rel_error, 1e-6);
}

TEST(Distributions, CategoricalSampleFrequencies) {
  auto c = Categorical::from_logits(std::vector<double>{0.0, std::log(3.0)});
  auto rng = SlotRng::for_slot(1, 0, StreamKind::agent);
  int ones = 0;
  for (int i = 0; i < 40000; ++i) ones += c.sample(rng) == 1;
  EXPECT_NEAR(ones / 40000.0, 0.75, 0.01);
  EXPECT_THROW(Categorical::from_logits(std::vector<double>{0.0, INFINITY}), NumericError);
}

TEST(Distributions, GaussianLogProbAndClamp) {
  std::vector<double> m{0.5}, ls{std::log(2.0)};
  DiagGaussian g(m, ls);
  double x = 1.5;
  double expect = -0.5 * 0.25 - std::log(2.0) - 0.5 * std::log(2.0 * std::numbers::pi);
  EXPECT_NEAR(g.log_prob(std::vector<double>{x}), expect, 1e-12);
  DiagGaussian wide(m, std::vector<double>{50.0});
  EXPECT_EQ(wide.log_std[0], kLogStdMax);
  EXPECT_THROW(DiagGaussian(m, std::vector<double>{std::nan("")}), NumericError);
}

TEST(Tensor, CheckpointRoundTripAndClipping) {
  std::mt19937_64 rng(6);
  Mlp net({3, {4}, 2});
  auto p = net.init(rng);
  std::stringstream ss;
  save_checkpoint(ss, p);
  auto q = load_checkpoint(ss);
  EXPECT_TRUE(p == q);
  GradSet g = p.zeros_like();
  g.tensors[0].data[0] = 3.0;
  g.tensors[1].data[0] = 4.0;
  EXPECT_DOUBLE_EQ(global_norm(g), 5.0);
  clip_grad_norm(g, 1.0);
  EXPECT_NEAR(global_norm(g), 1.0, 1e-12);
}
