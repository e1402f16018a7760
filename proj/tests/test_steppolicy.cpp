#include "rover/steppolicy.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

using namespace rover;

namespace {

Vector v2(double a, double b) {
  Vector v(2);
  v << a, b;
  return v;
}

FieldPtr bowl() {
  return std::make_shared<FunctionField>("bowl", 2, [](const Vector& x) { return x.squaredNorm(); });
}

AnglePredictor small_predictor(int n = 7, std::uint64_t seed = 5) {
  Rng rng(seed);
  nn::Network net(angle_net_spec(n));
  return AnglePredictor(nn::Checkpoint{net.spec(), net.initial_params(rng), {}});
}

PolicyTrainConfig tiny_config() {
  PolicyTrainConfig c;
  c.episodes = 6;
  c.warmup_episodes = 2;
  c.updates_per_episode = 2;
  c.batch = 3;
  c.fragment = 3;
  c.hidden = 8;
  c.env.horizon = 6;
  c.env.grid_n = 7;
  c.eval_every = 3;
  c.eval_fields = 2;
  return c;
}

Episode synthetic_episode(Rng& rng, int n, int length, bool random_actions) {
  Episode ep;
  for (int t = 0; t < length; ++t) {
    StepRecord s;
    s.observation = normalize_grid(Matrix::NullaryExpr(n, n, [&] { return rng.uniform(); }));
    s.features = Vector::NullaryExpr(kPrivilegedFeatures, [&] { return rng.normal(); });
    s.action = random_actions ? NavAction{rng.uniform(-0.5, 1.0), rng.uniform(-0.5, 1.0)} : NavAction{};
    s.reward = -rng.uniform();
    ep.steps.push_back(s);
  }
  ep.final_observation = ep.steps.back().observation;
  ep.final_features = ep.steps.back().features;
  return ep;
}

}  // namespace

TEST(Rewards, KnownValues) {
  EXPECT_DOUBLE_EQ(shaped_reward(3.0, 1.0, 5.0, 2.0, RewardMode::raw), -3.0);
  EXPECT_DOUBLE_EQ(shaped_reward(3.0, 1.0, 5.0, 2.0, RewardMode::norm), -0.5);
  EXPECT_DOUBLE_EQ(shaped_reward(3.0, 1.0, 5.0, 2.0, RewardMode::window), -2.0);
  EXPECT_EQ(sparse_terminal_reward(2.0, 3, 3), -2.0);
  EXPECT_EQ(sparse_terminal_reward(2.0, 2, 3), 0.0);
}

TEST(Rewards, GuardOnVanishingDenominator) {
  bool guarded = false;
  EXPECT_EQ(shaped_reward(1.0, 1.0, 1.0, 1.0, RewardMode::norm, &guarded), -1.0);
  EXPECT_TRUE(guarded);
  EXPECT_EQ(shaped_reward(2.0, 1.0, 3.0, 1.0 + 1e-13, RewardMode::window, &guarded), -1.0);
  EXPECT_TRUE(guarded);
  shaped_reward(2.0, 1.0, 3.0, 2.0, RewardMode::window, &guarded);
  EXPECT_FALSE(guarded);
}

TEST(Rewards, AffineInvariance) {
  Rng rng(11);
  for (int k = 0; k < 200; ++k) {
    const double a = rng.log_uniform(0.1, 10), b = rng.uniform(-10, 10);
    const double fs = rng.normal(), f0 = fs + rng.uniform(0.1, 5), wm = fs + rng.uniform(0.1, 5);
    const double ft = fs + rng.uniform(0, 2) * std::min(f0 - fs, wm - fs);
    for (RewardMode m : {RewardMode::norm, RewardMode::window}) {
      const double r1 = shaped_reward(ft, fs, f0, wm, m);
      const double r2 = shaped_reward(a * ft + b, a * fs + b, a * f0 + b, a * wm + b, m);
      EXPECT_NEAR(r1, r2, 1e-12);
    }
  }
}

TEST(Rewards, WindowUsesPrecedingValues) {
  RewardTracker tr(RewardMode::window, 0.0, 10.0, 2);
  EXPECT_DOUBLE_EQ(tr.window_mean(), 10.0);
  EXPECT_DOUBLE_EQ(tr.reward(5.0), -0.5);   // window {10}
  EXPECT_DOUBLE_EQ(tr.window_mean(), 7.5);  // {10, 5}
  EXPECT_DOUBLE_EQ(tr.reward(3.0), -3.0 / 7.5);
  EXPECT_DOUBLE_EQ(tr.window_mean(), 4.0);  // {5, 3}
}

TEST(Rewards, ModeNames) {
  for (RewardMode m : {RewardMode::raw, RewardMode::norm, RewardMode::window})
    EXPECT_EQ(parse_reward_mode(to_string(m)), m);
  EXPECT_THROW(parse_reward_mode("dense"), InvalidArgument);
}

TEST(Environment, MultiplicativeUpdatesAndClamp) {
  const AnglePredictor angle = small_predictor();
  const auto f = bowl();
  EnvConfig cfg;
  cfg.grid_n = 7;
  RewardTracker tr(cfg.reward, 0.0, f->value(v2(1, 1)), cfg.window);
  NavState s{v2(1, 1), 0.2, 0.1, {}, 0};
  const EnvStepResult r = env_step(s, NavAction{3.0, -0.9}, *f, angle, tr, cfg);
  EXPECT_DOUBLE_EQ(r.next.alpha, 0.2 * 2.0);
  EXPECT_DOUBLE_EQ(r.next.delta, 0.1 * 0.5);
  EXPECT_EQ(r.next.t, 1);
  EXPECT_NEAR((r.next.theta - s.theta).norm(), 0.2, 1e-12);
  EXPECT_DOUBLE_EQ(r.value, f->value(r.next.theta));
  EXPECT_NEAR(r.observation.resolution, 0.05, 1e-15);
  EXPECT_LE(r.reward, 0.0);
  EXPECT_GE(r.reward, -2.0);
}

TEST(Environment, NonFiniteEndsEpisodeWithPenalty) {
  const AnglePredictor angle = small_predictor();
  const auto f = std::make_shared<FunctionField>("cliff", 2, [](const Vector& x) {
    return x.norm() > 3.0 ? std::numeric_limits<double>::quiet_NaN() : x.squaredNorm();
  });
  EnvConfig cfg;
  cfg.grid_n = 7;
  RewardTracker tr(cfg.reward, 0.0, 1.0, cfg.window);
  const NavState s{v2(1, 0), 10.0, 0.01, {}, 0};
  const EnvStepResult r = env_step(s, NavAction{}, *f, angle, tr, cfg);
  EXPECT_TRUE(r.terminated);
  EXPECT_EQ(r.reward, -2.0);
}

TEST(Environment, ConstantActionsScaleGeometrically) {
  const AnglePredictor angle = small_predictor();
  const auto f = bowl();
  EnvConfig cfg;
  cfg.grid_n = 7;
  cfg.horizon = 5;
  const Episode ep =
      run_episode(constant_actions({0.1, -0.1}), angle, *f, {v2(2, 1), 0.05, 0.2}, 0.0, cfg);
  ASSERT_EQ(ep.steps.size(), 5u);
  for (std::size_t t = 0; t < 5; ++t) {
    EXPECT_NEAR(ep.steps[t].alpha, 0.05 * std::pow(1.1, t + 1), 1e-14);
    EXPECT_NEAR(ep.steps[t].delta, 0.2 * std::pow(0.9, t + 1), 1e-14);
  }
  std::ostringstream csv;
  write_trace_csv(csv, ep);
  const std::string text = csv.str();
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 7);
}

TEST(Networks, ShapesAndInitialActions) {
  Rng rng(2);
  nn::Network actor(actor_spec(15, 64)), critic(critic_spec(15, 64));
  EXPECT_EQ(actor.output_size(), 2);
  EXPECT_EQ(critic.output_size(), 1);
  EXPECT_EQ(critic.side_input_count(), 2 + kPrivilegedFeatures);
  EXPECT_TRUE(actor.recurrent());
  nn::Checkpoint ck{actor.spec(), initial_actor_params(actor, rng), {}};
  Policy policy(ck);
  nn::LstmState h = policy.initial_state();
  const NavAction a = policy.act(Matrix::Constant(15, 15, 0.3), h);
  EXPECT_NEAR(a.d_alpha, 0.0, 0.05);
  EXPECT_NEAR(a.d_delta, 0.0, 0.05);
}

TEST(Networks, SquashRangeAndDerivative) {
  EXPECT_NEAR(squash_action(-50), -0.5, 1e-12);
  EXPECT_NEAR(squash_action(50), 1.0, 1e-12);
  EXPECT_NEAR(squash_action(std::atanh(-1.0 / 3.0)), 0.0, 1e-15);
  for (double z : {-2.0, -0.3, 0.0, 0.7}) {
    const double fd = (squash_action(z + 1e-6) - squash_action(z - 1e-6)) / 2e-6;
    EXPECT_NEAR(squash_derivative(z), fd, 1e-8);
  }
}

TEST(Networks, CriticFeatures) {
  const Vector v = critic_features(0.1, 0.2, 3, 30, 1.0 + 1e-20, 1.0, 2.0);
  EXPECT_NEAR(v[0], std::log(0.1), 1e-15);
  EXPECT_NEAR(v[1], std::log(0.2), 1e-15);
  EXPECT_NEAR(v[2], 0.1, 1e-15);
  EXPECT_EQ(v[3], -12.0);
  EXPECT_EQ(critic_features(1, 1, 0, 30, 1e9, 0, 1)[3], 2.0);
}

TEST(Ddpg, CriticRegressesOnRewardWithZeroDiscount) {
  Rng rng(4);
  std::vector<Episode> eps;
  for (int k = 0; k < 4; ++k) eps.push_back(synthetic_episode(rng, 7, 5, true));
  ActorCritic ac(7, 8, rng);
  DdpgConfig cfg;
  cfg.gamma = 0.0;
  cfg.critic_lr = 1e-4;
  cfg.update_actor = false;
  cfg.update_targets = false;
  std::vector<Fragment> batch;
  for (const auto& e : eps) batch.push_back({&e, 1, 3});
  const Vector actor_before = ac.actor_params;
  double last = ddpg_update(ac, batch, cfg).critic_loss;
  for (int k = 0; k < 100; ++k) {
    const double loss = ddpg_update(ac, batch, cfg).critic_loss;
    EXPECT_LT(loss, last);
    last = loss;
  }
  EXPECT_EQ(ac.actor_params, actor_before);
}

TEST(Ddpg, WholeEpisodeCriticLearnsRemainingReturn) {
  // Reward -1 per step and gamma 1: Q(t) is minus the number of steps left.
  Rng rng(12);
  const int horizon = 5;
  std::vector<Episode> eps;
  for (int k = 0; k < 8; ++k) {
    Episode e = synthetic_episode(rng, 7, horizon, false);
    for (int t = 0; t < horizon; ++t) {
      e.steps[t].reward = -1.0;
      e.steps[t].features = critic_features(0.1, 0.1, t, horizon, 1.0, 0.0, 1.0);
    }
    e.final_features = critic_features(0.1, 0.1, horizon, horizon, 1.0, 0.0, 1.0);
    eps.push_back(e);
  }
  ActorCritic ac(7, 8, rng);
  DdpgConfig cfg;
  cfg.tau = 0.05;
  cfg.update_actor = false;
  for (int u = 0; u < 1500; ++u) {
    std::vector<Fragment> batch;
    for (int b = 0; b < 4; ++b) batch.push_back({&eps[rng.index(eps.size())], 0, horizon});
    ddpg_update(ac, batch, cfg);
  }
  std::vector<Matrix> obs, side;
  for (int t = 0; t < horizon; ++t) {
    obs.push_back(flatten_grid(eps[0].steps[t].observation));
    Matrix s = Matrix::Zero(2 + kPrivilegedFeatures, 1);
    s.col(0).tail(kPrivilegedFeatures) = eps[0].steps[t].features;
    side.push_back(s);
  }
  const nn::Tape q = ac.critic.run({ac.critic_params.data(), ac.critic.param_count()}, obs, &side);
  for (int t = 0; t < horizon; ++t) EXPECT_NEAR(q.outputs[t](0, 0), -(horizon - t), 0.3) << "t " << t;
}

TEST(Ddpg, ActorGradientVanishesWithFlatCritic) {
  Rng rng(6);
  std::vector<Episode> eps{synthetic_episode(rng, 7, 4, true), synthetic_episode(rng, 7, 4, true)};
  ActorCritic ac(7, 8, rng);
  ac.critic_params.setZero();
  DdpgConfig cfg;
  cfg.update_critic = false;
  cfg.update_targets = false;
  const Vector before = ac.actor_params;
  const DdpgStats st = ddpg_update(ac, {{&eps[0], 0, 4}, {&eps[1], 0, 4}}, cfg);
  EXPECT_EQ(st.mean_dq_da, 0.0);
  EXPECT_EQ(ac.actor_params, before);
}

TEST(Ddpg, ActorStepRaisesQ) {
  Rng rng(8);
  std::vector<Episode> eps;
  for (int k = 0; k < 3; ++k) eps.push_back(synthetic_episode(rng, 7, 4, false));
  ActorCritic ac(7, 8, rng);
  ac.critic_params = ac.critic.initial_params(rng);  // a critic with real action slopes
  DdpgConfig cfg;
  cfg.actor_lr = 1e-5;
  cfg.update_critic = false;
  cfg.update_targets = false;
  std::vector<Fragment> batch;
  for (const auto& e : eps) batch.push_back({&e, 1, 3});

  auto objective = [&] {
    std::vector<Matrix> obs, side;
    for (std::size_t t = 0; t < 4; ++t) {
      Matrix o(49, 3), s(2 + kPrivilegedFeatures, 3);
      for (int b = 0; b < 3; ++b) {
        o.col(b) = flatten_grid(eps[b].steps[t].observation);
        s.col(b).tail(kPrivilegedFeatures) = eps[b].steps[t].features;
      }
      obs.push_back(o);
      side.push_back(s);
    }
    const nn::Tape mu = ac.actor.run({ac.actor_params.data(), ac.actor.param_count()}, obs);
    for (std::size_t t = 0; t < 4; ++t)
      side[t].topRows(2) = mu.outputs[t].unaryExpr([](double z) { return squash_action(z); });
    const nn::Tape q = ac.critic.run({ac.critic_params.data(), ac.critic.param_count()}, obs, &side);
    return q.outputs[1].sum() + q.outputs[2].sum() + q.outputs[3].sum();
  };
  const double before = objective();
  ddpg_update(ac, batch, cfg);
  EXPECT_GT(objective(), before);
}

TEST(Ddpg, SoftUpdate) {
  Rng rng(9);
  ActorCritic ac(7, 8, rng);
  ac.actor_params.array() += 1.0;
  const Vector target = ac.actor_target;
  soft_update(ac, 0.25);
  EXPECT_LT((ac.actor_target - (target.array() + 0.25).matrix()).norm(), 1e-12);
}

TEST(Ddpg, RejectsMismatchedFragments) {
  Rng rng(10);
  std::vector<Episode> eps{synthetic_episode(rng, 7, 4, true), synthetic_episode(rng, 7, 4, true)};
  ActorCritic ac(7, 8, rng);
  EXPECT_THROW(ddpg_update(ac, {{&eps[0], 0, 2}, {&eps[1], 1, 2}}, {}), InvalidArgument);
  EXPECT_THROW(ddpg_update(ac, {{&eps[0], 3, 2}}, {}), InvalidArgument);
}

TEST(Training, ConfigTextRoundTrip) {
  PolicyTrainConfig c = tiny_config();
  c.env.reward = RewardMode::norm;
  c.modalities = {Modality::saddle, Modality::valley};
  c.tau = 0.0125;
  const PolicyTrainConfig d = PolicyTrainConfig::from_text(c.to_text());
  EXPECT_EQ(d.to_text(), c.to_text());
  EXPECT_THROW(PolicyTrainConfig::from_text("nonsense = 1"), InvalidArgument);
  EXPECT_THROW(PolicyTrainConfig::from_text("episodes = many"), InvalidArgument);
  EXPECT_EQ(PolicyTrainConfig::from_text("# comment\nbatch = 4  # trailing\n").batch, 4u);
}

TEST(Training, DeterministicAndRoundTrips) {
  const AnglePredictor angle = small_predictor();
  const PolicyTrainResult a = train_policy(angle, tiny_config());
  const PolicyTrainResult b = train_policy(angle, tiny_config());
  EXPECT_EQ(a.actor.params, b.actor.params);
  EXPECT_EQ(a.log.eval_returns, b.log.eval_returns);
  EXPECT_GT(a.log.updates, 0u);
  EXPECT_EQ(a.log.eval_returns.back().first, 6u);
  const nn::Checkpoint rt = nn::decode_checkpoint(nn::encode_checkpoint(a.actor));
  EXPECT_EQ(rt.params, a.actor.params);
  EXPECT_EQ(rt.spec, a.actor.spec);
  const Policy p(rt);
  EXPECT_EQ(p.grid_n(), 7);
}

TEST(Training, RejectsGridMismatch) {
  const AnglePredictor angle = small_predictor(9);
  EXPECT_THROW(train_policy(angle, tiny_config()), InvalidArgument);
}

TEST(Probe, RecoveredNeedsBothRanges) {
  ProbeTrace t;
  t.alpha = {1e-4, 1e-3, 2e-2};
  t.delta = {50, 10, 3};
  EXPECT_FALSE(recovered(t, 1e-2, 1, 0.05, 0.5));
  t.delta.push_back(0.3);
  t.alpha.push_back(5.0);
  EXPECT_FALSE(recovered(t, 1e-2, 1, 0.05, 0.5));  // each range visited, never together
  t.delta.push_back(0.2);
  t.alpha.push_back(0.5);
  EXPECT_TRUE(recovered(t, 1e-2, 1, 0.05, 0.5));
}

TEST(Probe, TraceLength) {
  const AnglePredictor angle = small_predictor();
  const auto f = bowl();
  const ProbeTrace t = probe_policy(constant_actions({1.0, -0.5}), angle, *f, {v2(3, 0), 1e-4, 50}, 10);
  ASSERT_EQ(t.alpha.size(), 11u);
  EXPECT_NEAR(t.alpha.back(), 1e-4 * 1024, 1e-12);
  EXPECT_NEAR(t.delta.back(), 50.0 / 1024, 1e-12);
}
