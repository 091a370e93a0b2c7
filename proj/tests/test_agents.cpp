#include <gtest/gtest.h>

#include <cmath>

#include "rlstack/agents.hpp"
#include "rlstack/envs.hpp"

using namespace rlstack;

namespace {

AgentInputs inputs(std::size_t n, std::size_t od, double fill = 0.1) {
  AgentInputs in;
  in.observation = Tensor({n, od});
  for (std::size_t i = 0; i < in.observation.size(); ++i) in.observation.data[i] = fill * static_cast<double>(i % 7);
  in.prev_action.assign(n, Action{});
  in.prev_reward.assign(n, 0.0);
  return in;
}

std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

}  // namespace

TEST(LeadingDims, InferAndRestore) {
  std::vector<std::size_t> s3{4, 3, 5};
  auto d = infer_leading_dims(s3, 1);
  EXPECT_TRUE(d.has_T);
  EXPECT_EQ(d.T, 4u);
  EXPECT_EQ(d.B, 3u);
  EXPECT_EQ(d.flat_shape(), (std::vector<std::size_t>{12, 5}));
  Tensor y({12, 2});
  auto r = restore_leading_dims(y, d);
  EXPECT_EQ(r.shape, (std::vector<std::size_t>{4, 3, 2}));

  std::vector<std::size_t> s1{5};
  auto d1 = infer_leading_dims(s1, 1);
  EXPECT_FALSE(d1.has_B);
  EXPECT_EQ(restore_leading_dims(Tensor({1, 2}), d1).shape, (std::vector<std::size_t>{2}));

  std::vector<std::size_t> bad{1, 2, 3, 4};
  EXPECT_THROW(infer_leading_dims(bad, 1), AgentError);
}

TEST(Epsilon, ArgmaxTiesLowest) {
  std::vector<double> q{1.0, 3.0, 3.0, 0.0};
  EXPECT_EQ(argmax_lowest(q), 1u);
}

TEST(Epsilon, ExplorationFrequency) {
  // Greedy action 2 of 4; P(action != 2) = eps * 3/4.
  std::vector<double> q{0.0, 0.0, 1.0, 0.0};
  for (double eps : {0.0, 0.1, 0.5, 1.0}) {
    auto rng = SlotRng::for_slot(3, 0, StreamKind::agent);
    int n = 40000, other = 0;
    for (int i = 0; i < n; ++i) other += epsilon_greedy_one(q, eps, rng) != 2;
    double p = eps * 0.75, se = std::sqrt(std::max(p * (1 - p), 1e-12) / n);
    EXPECT_NEAR(other / static_cast<double>(n), p, 4 * se + 1e-12) << eps;
  }
  auto rng = SlotRng::for_slot(3, 0, StreamKind::agent);
  EXPECT_THROW(epsilon_greedy_one(q, 1.5, rng), AgentError);
}

TEST(Epsilon, ScheduleAndVector) {
  EpsilonConfig c;
  c.initial = 1.0;
  c.final = 0.1;
  c.anneal_steps = 100;
  EXPECT_DOUBLE_EQ(c.at(0, 0, 4), 1.0);
  EXPECT_NEAR(c.at(50, 0, 4), 0.55, 1e-12);
  EXPECT_DOUBLE_EQ(c.at(500, 0, 4), 0.1);
  c.vector_base = 0.4;
  EXPECT_NEAR(c.at(0, 0, 8), 0.4, 1e-12);
  EXPECT_NEAR(c.at(0, 7, 8), std::pow(0.4, 8.0), 1e-12);
  for (std::size_t i = 1; i < 8; ++i) EXPECT_LT(c.at(0, i, 8), c.at(0, i - 1, 8));
}

TEST(Mailbox, VersionsIncrease) {
  ParamMailbox box;
  QAgent a({.obs_dim = 2, .n_actions = 2, .hidden = {4}}, 1);
  EXPECT_FALSE(box.fetch(0));
  auto v1 = box.publish(a.params());
  auto v2 = box.publish(a.params());
  EXPECT_LT(v1, v2);
  EXPECT_FALSE(box.fetch(v2));
  ASSERT_TRUE(box.fetch(v1));
  EXPECT_EQ(box.fetch(v1)->second, v2);
  EXPECT_TRUE(a.refresh_params(box));
  EXPECT_EQ(a.param_version(), v2);
  EXPECT_FALSE(a.refresh_params(box));
}

TEST(QAgent, ActShapesAndInfo) {
  QAgentConfig c{.obs_dim = 3, .n_actions = 4, .hidden = {8}};
  c.epsilon.initial = c.epsilon.final = 0.0;
  QAgent a(c, 7);
  a.initialize(5, 1);
  auto in = inputs(5, 3);
  auto slots = iota(5);
  auto s = a.act(in, slots);
  ASSERT_EQ(s.action.size(), 5u);
  auto q = a.q_values(a.params().tensors, in.observation);
  for (std::size_t i = 0; i < 5; ++i) {
    auto row = std::span<const double>(q.data).subspan(i * 4, 4);
    EXPECT_EQ(static_cast<std::size_t>(s.action[i].index), argmax_lowest(row));
    for (std::size_t k = 0; k < 4; ++k) EXPECT_FLOAT_EQ(s.info.leaf<float>(0)[i * 4 + k], static_cast<float>(row[k]));
  }
  EXPECT_THROW(a.act(inputs(4, 3), slots), AgentError);
}

TEST(QAgent, RowIndependentOfBatchComposition) {
  QAgentConfig c{.obs_dim = 3, .n_actions = 4, .hidden = {8}};
  c.epsilon.initial = c.epsilon.final = 0.5;
  QAgent a(c, 7), b(c, 7);
  a.initialize(4, 9);
  b.initialize(4, 9);
  auto in = inputs(4, 3);
  auto slots = iota(4);
  std::vector<std::int64_t> whole, parts;
  for (int rep = 0; rep < 20; ++rep) {
    for (auto& x : a.act(in, slots).action) whole.push_back(x.index);
    for (std::size_t s = 0; s < 4; ++s) {
      AgentInputs one;
      one.observation = Tensor({1, 3});
      std::copy_n(in.observation.data.begin() + static_cast<std::ptrdiff_t>(s * 3), 3, one.observation.data.begin());
      one.prev_action = {Action{}};
      one.prev_reward = {0.0};
      std::size_t sl[1] = {s};
      parts.push_back(b.act(one, sl).action[0].index);
    }
  }
  EXPECT_EQ(whole, parts);
}

TEST(QAgent, CategoricalExpectation) {
  QAgentConfig c{.obs_dim = 2, .n_actions = 3, .hidden = {6}, .atoms = 5, .v_min = -2, .v_max = 2};
  QAgent a(c, 3);
  auto z = a.support();
  EXPECT_DOUBLE_EQ(z.front(), -2.0);
  EXPECT_DOUBLE_EQ(z.back(), 2.0);
  auto q = a.q_values(a.params().tensors, inputs(2, 2).observation);
  for (double v : q.data) {
    EXPECT_GE(v, -2.0);
    EXPECT_LE(v, 2.0);
  }
}

TEST(RecurrentQAgent, StateCarriesAndResets) {
  RecurrentQAgentConfig c{.obs_dim = 2, .n_actions = 3, .hidden = 5};
  c.epsilon.initial = c.epsilon.final = 0.0;
  RecurrentQAgent a(c, 4);
  a.initialize(2, 0);
  auto slots = iota(2);
  auto in = inputs(2, 2, 0.7);
  auto s1 = a.act(in, slots);
  for (double v : s1.info.row<double>(1, 0)) EXPECT_EQ(v, 0.0);
  auto h_after = std::vector<double>(a.slot_state(0).begin(), a.slot_state(0).end());
  auto s2 = a.act(in, slots);
  auto rec = s2.info.row<double>(1, 0);
  EXPECT_TRUE(std::equal(rec.begin(), rec.end(), h_after.begin()));
  a.reset_slot(0);
  for (double v : a.slot_state(0)) EXPECT_EQ(v, 0.0);
  bool nonzero = false;
  for (double v : a.slot_state(1)) nonzero |= v != 0.0;
  EXPECT_TRUE(nonzero);
}

TEST(RecurrentQAgent, Encode) {
  RecurrentQAgentConfig c{.obs_dim = 2, .n_actions = 3, .hidden = 5};
  std::vector<float> obs{0.5f, -1.0f};
  std::vector<double> dst(6);
  RecurrentQAgent::encode(c, obs, 2, 0.25, dst);
  EXPECT_EQ(dst, (std::vector<double>{0.5, -1.0, 0, 0, 1, 0.25}));
}

TEST(PgAgent, LogProbMatchesDistribution) {
  PgAgent a({.obs_dim = 3, .n_actions = 4, .hidden = {8}}, 2);
  a.initialize(3, 5);
  auto in = inputs(3, 3);
  auto s = a.act(in, iota(3));
  auto logits = a.pi().forward(a.pi_params(a.params()), in.observation);
  auto v = a.v().forward(a.v_params(a.params()), in.observation);
  for (std::size_t i = 0; i < 3; ++i) {
    auto d = Categorical::from_logits(std::span<const double>(logits.data).subspan(i * 4, 4));
    EXPECT_DOUBLE_EQ(s.info.leaf<double>("log_prob")[i], d.log_prob(static_cast<std::size_t>(s.action[i].index)));
    EXPECT_DOUBLE_EQ(s.info.leaf<double>("value")[i], v.data[i]);
  }
  a.set_eval(true);
  auto e = a.act(in, iota(3));
  for (std::size_t i = 0; i < 3; ++i) {
    auto d = Categorical::from_logits(std::span<const double>(logits.data).subspan(i * 4, 4));
    EXPECT_EQ(static_cast<std::size_t>(e.action[i].index), d.argmax());
  }
}

TEST(DdpgAgent, ActionsInsideBox) {
  DdpgAgent a({.obs_dim = 2, .action_dim = 2, .hidden = {8}, .action_low = -0.5, .action_high = 2.0,
               .exploration_sigma = 3.0, .twin_critic = true},
              1);
  EXPECT_EQ(a.params().tensors.size(), a.actor_tensors() + 2 * a.critic_tensors());
  a.initialize(4, 2);
  for (int r = 0; r < 50; ++r)
    for (auto& act : a.act(inputs(4, 2), iota(4)).action)
      for (float v : act.value) {
        EXPECT_GE(v, -0.5f);
        EXPECT_LE(v, 2.0f);
      }
  a.set_eval(true);
  auto s = a.act(inputs(4, 2), iota(4));
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t k = 0; k < 2; ++k) EXPECT_FLOAT_EQ(s.action[i].value[k], s.info.leaf<float>(0)[i * 2 + k]);
}

TEST(Agent, SetParamsRejectsShapeMismatch) {
  QAgent a({.obs_dim = 2, .n_actions = 2, .hidden = {4}}, 1);
  QAgent b({.obs_dim = 2, .n_actions = 3, .hidden = {4}}, 1);
  EXPECT_THROW(a.set_params(b.params()), AgentError);
}
