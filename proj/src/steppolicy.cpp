#include "rover/steppolicy.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <iomanip>
#include <numbers>
#include <ostream>
#include <sstream>

namespace rover {

std::string to_string(RewardMode m) {
  switch (m) {
    case RewardMode::raw: return "raw";
    case RewardMode::norm: return "norm";
    case RewardMode::window: return "window";
  }
  return "window";
}

RewardMode parse_reward_mode(const std::string& name) {
  if (name == "raw") return RewardMode::raw;
  if (name == "norm") return RewardMode::norm;
  if (name == "window") return RewardMode::window;
  throw InvalidArgument("unknown reward mode '" + name + "'");
}

NavAction NavAction::clamped() const {
  return {std::clamp(d_alpha, kActionMin, kActionMax), std::clamp(d_delta, kActionMin, kActionMax)};
}

double shaped_reward(double f_t, double f_star, double f_0, double window_mean, RewardMode mode,
                     bool* guarded) {
  if (guarded) *guarded = false;
  if (mode == RewardMode::raw) return -f_t;
  const double den = (mode == RewardMode::norm ? f_0 : window_mean) - f_star;
  if (std::abs(den) < 1e-12) {
    if (guarded) *guarded = true;
    return -1.0;
  }
  return -(f_t - f_star) / den;
}

double sparse_terminal_reward(double f_t, int t, int horizon) { return t == horizon ? -f_t : 0.0; }

RewardTracker::RewardTracker(RewardMode mode, double f_star, double f_0, int window)
    : mode_(mode), f_star_(f_star), f_0_(f_0), window_(static_cast<std::size_t>(std::max(1, window))) {
  recent_.push_back(f_0);
}

double RewardTracker::window_mean() const {
  double s = 0.0;
  for (double v : recent_) s += v;
  return s / static_cast<double>(recent_.size());
}

double RewardTracker::reward(double f_t, bool* guarded) {
  const double r = shaped_reward(f_t, f_star_, f_0_, window_mean(), mode_, guarded);
  recent_.push_back(f_t);
  if (recent_.size() > window_) recent_.pop_front();
  return r;
}

EnvStepResult env_step(const NavState& state, const NavAction& action, const ScalarField& f,
                       const AnglePredictor& angle, RewardTracker& rewards, const EnvConfig& config,
                       const GridSample* current, Rng* observation_rng) {
  const NavAction a = action.clamped();
  GridSample here;
  if (current == nullptr) {
    here = grid_sample(f, state.theta, state.delta, config.grid_n, observation_rng);
    current = &here;
  }
  EnvStepResult r;
  r.next = state;
  r.next.theta = state.theta + state.alpha * angle.predict(*current).direction;
  r.next.alpha = state.alpha * (1.0 + a.d_alpha);
  r.next.delta = state.delta * (1.0 + a.d_delta);
  r.next.t = state.t + 1;
  r.value = f.value(r.next.theta);
  const bool runaway = !(r.next.alpha <= config.alpha_max) || !(r.next.delta <= config.delta_max);
  if (!std::isfinite(r.value) || !all_finite(r.next.theta) || runaway) {
    r.terminated = true;
    r.reward = config.terminal_penalty;
    return r;
  }
  try {
    r.observation = grid_sample(f, r.next.theta, r.next.delta, config.grid_n, observation_rng);
  } catch (const ObservationError&) {
    r.terminated = true;
    r.reward = config.terminal_penalty;
    return r;
  }
  r.reward = rewards.reward(r.value, &r.guarded);
  if (config.clip_rewards) r.reward = std::clamp(r.reward, config.reward_min, config.reward_max);
  return r;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<nn::LayerDesc> trunk(int hidden) {
  using nn::LayerDesc;
  return {LayerDesc::conv(8, 3, 1), LayerDesc::act(nn::Activation::relu),
          LayerDesc::conv(16, 3, 2), LayerDesc::act(nn::Activation::relu), LayerDesc::lstm(hidden)};
}

}  // namespace

nn::NetSpec actor_spec(int grid_n, int hidden) {
  nn::NetSpec spec;
  spec.input = {1, grid_n, grid_n};
  spec.layers = trunk(hidden);
  spec.layers.push_back(nn::LayerDesc::dense(64));
  spec.layers.push_back(nn::LayerDesc::act(nn::Activation::relu));
  spec.layers.push_back(nn::LayerDesc::dense(2));
  return spec;
}

nn::NetSpec critic_spec(int grid_n, int hidden) {
  nn::NetSpec spec;
  spec.input = {1, grid_n, grid_n};
  spec.layers = trunk(hidden);
  spec.layers.push_back(nn::LayerDesc::dense(64, 2 + kPrivilegedFeatures));
  spec.layers.push_back(nn::LayerDesc::act(nn::Activation::relu));
  spec.layers.push_back(nn::LayerDesc::dense(1));
  return spec;
}

double squash_action(double z) { return 0.25 + 0.75 * std::tanh(z); }

double squash_derivative(double z) {
  const double t = std::tanh(z);
  return 0.75 * (1.0 - t * t);
}

Vector critic_features(double alpha, double delta, int t, int horizon, double f_t, double f_star,
                       double f_0) {
  Vector v(kPrivilegedFeatures);
  const double den = f_0 - f_star;
  double gap = std::abs(den) > 1e-300 ? (f_t - f_star) / den : 1.0;
  gap = std::clamp(std::log10(std::max(gap, 1e-12)), -12.0, 2.0);
  v << std::log(alpha), std::log(delta), static_cast<double>(t) / std::max(1, horizon), gap;
  return v;
}

namespace {

// Offsets of the final dense layer's weights and bias.
std::pair<std::size_t, std::size_t> last_layer(const nn::Network& net) {
  const std::size_t out = static_cast<std::size_t>(net.output_size());
  const int in = net.spec().layers[net.spec().layers.size() - 3].width;  // dense 64 before relu
  const std::size_t weights = out * static_cast<std::size_t>(in);
  const std::size_t bias_at = net.param_count() - out;
  return {bias_at - weights, bias_at};
}

void shrink_last_layer(const nn::Network& net, Vector& p, Rng& rng) {
  const auto [w, b] = last_layer(net);
  for (std::size_t k = w; k < b; ++k) p[static_cast<Eigen::Index>(k)] = rng.uniform(-3e-3, 3e-3);
}

}  // namespace

Vector initial_actor_params(const nn::Network& actor, Rng& rng) {
  Vector p = actor.initial_params(rng);
  shrink_last_layer(actor, p, rng);
  const auto [w, b] = last_layer(actor);
  (void)w;
  for (int k = 0; k < actor.output_size(); ++k)
    p[static_cast<Eigen::Index>(b) + k] = std::atanh(-1.0 / 3.0);
  return p;
}

Vector initial_critic_params(const nn::Network& critic, Rng& rng) {
  Vector p = critic.initial_params(rng);
  shrink_last_layer(critic, p, rng);
  return p;
}

Policy::Policy(nn::Checkpoint checkpoint) : checkpoint_(std::move(checkpoint)), net_(checkpoint_.spec) {
  if (!net_.recurrent() || net_.output_size() != 2 || net_.side_input_count() != 0)
    throw InvalidArgument("policy needs a recurrent network with two outputs");
  if (static_cast<std::size_t>(checkpoint_.params.size()) != net_.param_count())
    throw CheckpointCountError("policy checkpoint parameter count does not match its spec");
}

NavAction Policy::act(const Matrix& normalized_grid, nn::LstmState& hidden) const {
  if (hidden.h.size() == 0) hidden = net_.zero_state(1);
  const Matrix z = net_.forward(std::span<const double>(checkpoint_.params.data(), net_.param_count()),
                                flatten_grid(normalized_grid), &hidden);
  return {squash_action(z(0, 0)), squash_action(z(1, 0))};
}

ActionFn policy_actions(const Policy& policy) {
  return [&policy](const Matrix& grid, nn::LstmState& hidden) { return policy.act(grid, hidden); };
}

ActionFn constant_actions(NavAction action) {
  return [action](const Matrix&, nn::LstmState&) { return action; };
}

// ---------------------------------------------------------------------------

NavAction OuNoise::sample() {
  for (double& x : x_) x += -theta_ * x + sigma_ * rng_.normal();
  return {x_[0], x_[1]};
}

double Episode::total_reward() const {
  double s = 0.0;
  for (const auto& r : steps) s += r.reward;
  return s;
}

Episode run_episode(const ActionFn& actions, const AnglePredictor& angle, const ScalarField& f,
                    const NavInit& init, double f_star, const EnvConfig& config, OuNoise* noise,
                    Rng* observation_rng) {
  if (config.horizon < 1) throw InvalidArgument("run_episode: horizon must be >= 1");
  if (!(init.alpha > 0.0) || !(init.delta > 0.0))
    throw InvalidArgument("run_episode: alpha and delta must be positive");
  Episode ep;
  ep.init = init;
  ep.f_star = f_star;
  ep.f_0 = f.value(init.theta);
  if (!std::isfinite(ep.f_0)) throw InvalidArgument("run_episode: f is not finite at the start");
  ep.steps.reserve(static_cast<std::size_t>(config.horizon));
  if (noise) noise->reset();

  NavState state{init.theta, init.alpha, init.delta, {}, 0};
  RewardTracker rewards(config.reward, f_star, ep.f_0, config.window);
  GridSample obs = grid_sample(f, state.theta, state.delta, config.grid_n, observation_rng);
  double f_t = ep.f_0;
  nn::LstmState hidden;
  bool first = true;
  for (int t = 0; t < config.horizon; ++t) {
    StepRecord rec;
    rec.observation = obs.normalized;
    rec.features = critic_features(state.alpha, state.delta, t, config.horizon, f_t, f_star, ep.f_0);
    if (first) {
      // Zero hidden state of whatever width the action source uses.
      hidden = nn::LstmState{};
      first = false;
    }
    NavAction a = actions(obs.normalized, hidden);
    if (noise) {
      const NavAction n = noise->sample();
      a.d_alpha += n.d_alpha;
      a.d_delta += n.d_delta;
    }
    rec.action = a.clamped();
    EnvStepResult step = env_step(state, rec.action, f, angle, rewards, config, &obs, observation_rng);
    rec.reward = step.reward;
    rec.value = step.value;
    rec.theta = step.next.theta;
    rec.alpha = step.next.alpha;
    rec.delta = step.next.delta;
    ep.steps.push_back(std::move(rec));
    if (step.terminated) {
      ep.terminated = true;
      ep.final_observation = ep.steps.back().observation;
      ep.final_features = ep.steps.back().features;
      return ep;
    }
    state = step.next;
    obs = std::move(step.observation);
    f_t = step.value;
  }
  ep.final_observation = obs.normalized;
  ep.final_features =
      critic_features(state.alpha, state.delta, config.horizon, config.horizon, f_t, f_star, ep.f_0);
  return ep;
}

void write_trace_csv(std::ostream& out, const Episode& episode) {
  out << "step,f,alpha,delta,reward\n" << std::setprecision(17);
  out << 0 << ',' << episode.f_0 << ',' << episode.init.alpha << ',' << episode.init.delta << ",\n";
  for (std::size_t t = 0; t < episode.steps.size(); ++t) {
    const auto& s = episode.steps[t];
    out << t + 1 << ',' << s.value << ',' << s.alpha << ',' << s.delta << ',' << s.reward << '\n';
  }
}

// ---------------------------------------------------------------------------
// Configuration text
// ---------------------------------------------------------------------------

namespace {

std::string modality_list(const std::vector<Modality>& ms) {
  std::string s;
  for (std::size_t k = 0; k < ms.size(); ++k) s += (k ? "," : "") + to_string(ms[k]);
  return s;
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

std::string PolicyTrainConfig::to_text() const {
  std::ostringstream o;
  o << std::setprecision(17);
  o << "episodes = " << episodes << '\n'
    << "warmup_episodes = " << warmup_episodes << '\n'
    << "updates_per_episode = " << updates_per_episode << '\n'
    << "batch = " << batch << '\n'
    << "fragment = " << fragment << '\n'
    << "replay_capacity = " << replay_capacity << '\n'
    << "tau = " << tau << '\n'
    << "actor_lr = " << actor_lr << '\n'
    << "critic_lr = " << critic_lr << '\n'
    << "gamma = " << gamma << '\n'
    << "actor_delay = " << actor_delay << '\n'
    << "preactivation_penalty = " << preactivation_penalty << '\n'
    << "value_scale = " << value_scale << '\n'
    << "ou_theta = " << ou_theta << '\n'
    << "ou_sigma_start = " << ou_sigma_start << '\n'
    << "ou_sigma_end = " << ou_sigma_end << '\n'
    << "hidden = " << hidden << '\n'
    << "horizon = " << env.horizon << '\n'
    << "grid_n = " << env.grid_n << '\n'
    << "reward = " << to_string(env.reward) << '\n'
    << "window = " << env.window << '\n'
    << "terminal_penalty = " << env.terminal_penalty << '\n'
    << "alpha_min = " << alpha_min << '\n'
    << "alpha_max = " << alpha_max << '\n'
    << "delta_min = " << delta_min << '\n'
    << "delta_max = " << delta_max << '\n'
    << "start_radius_min = " << start_radius_min << '\n'
    << "start_radius_max = " << start_radius_max << '\n'
    << "modalities = " << modality_list(modalities) << '\n'
    << "eval_every = " << eval_every << '\n'
    << "eval_fields = " << eval_fields << '\n'
    << "seed = " << seed << '\n';
  return o.str();
}

void PolicyTrainConfig::set(const std::string& key, const std::string& value) {
  auto num = [&](auto& field) {
    std::istringstream in(value);
    std::remove_reference_t<decltype(field)> v{};
    if (!(in >> v) || !(in >> std::ws).eof())
      throw InvalidArgument("config: bad value for '" + key + "': " + value);
    field = v;
  };
  if (key == "episodes") num(episodes);
  else if (key == "warmup_episodes") num(warmup_episodes);
  else if (key == "updates_per_episode") num(updates_per_episode);
  else if (key == "batch") num(batch);
  else if (key == "fragment") num(fragment);
  else if (key == "replay_capacity") num(replay_capacity);
  else if (key == "tau") num(tau);
  else if (key == "actor_lr") num(actor_lr);
  else if (key == "critic_lr") num(critic_lr);
  else if (key == "gamma") num(gamma);
  else if (key == "actor_delay") num(actor_delay);
  else if (key == "preactivation_penalty") num(preactivation_penalty);
  else if (key == "value_scale") num(value_scale);
  else if (key == "ou_theta") num(ou_theta);
  else if (key == "ou_sigma_start") num(ou_sigma_start);
  else if (key == "ou_sigma_end") num(ou_sigma_end);
  else if (key == "hidden") num(hidden);
  else if (key == "horizon") num(env.horizon);
  else if (key == "grid_n") num(env.grid_n);
  else if (key == "reward") env.reward = parse_reward_mode(value);
  else if (key == "window") num(env.window);
  else if (key == "terminal_penalty") num(env.terminal_penalty);
  else if (key == "alpha_min") num(alpha_min);
  else if (key == "alpha_max") num(alpha_max);
  else if (key == "delta_min") num(delta_min);
  else if (key == "delta_max") num(delta_max);
  else if (key == "start_radius_min") num(start_radius_min);
  else if (key == "start_radius_max") num(start_radius_max);
  else if (key == "eval_every") num(eval_every);
  else if (key == "eval_fields") num(eval_fields);
  else if (key == "seed") num(seed);
  else if (key == "modalities") {
    modalities.clear();
    std::stringstream in(value);
    std::string item;
    while (std::getline(in, item, ',')) modalities.push_back(parse_modality(trim(item)));
    if (modalities.empty()) throw InvalidArgument("config: empty modality list");
  } else {
    throw InvalidArgument("config: unknown key '" + key + "'");
  }
}

PolicyTrainConfig PolicyTrainConfig::from_text(const std::string& text) {
  PolicyTrainConfig c;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw InvalidArgument("config line " + std::to_string(line_no) + ": expected key = value");
    c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return c;
}

// ---------------------------------------------------------------------------
// Actor-critic
// ---------------------------------------------------------------------------

ActorCritic::ActorCritic(int grid_n, int hidden, Rng& rng)
    : actor(actor_spec(grid_n, hidden)), critic(critic_spec(grid_n, hidden)) {
  actor_params = initial_actor_params(actor, rng);
  critic_params = initial_critic_params(critic, rng);
  actor_target = actor_params;
  critic_target = critic_params;
}

void soft_update(ActorCritic& ac, double tau) {
  ac.actor_target = (1.0 - tau) * ac.actor_target + tau * ac.actor_params;
  ac.critic_target = (1.0 - tau) * ac.critic_target + tau * ac.critic_params;
}

namespace {

std::span<const double> view(const Vector& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

struct BatchSequences {
  std::vector<Matrix> obs;       // steps 0 .. end (inclusive of the bootstrap step)
  std::vector<Matrix> features;  // same length as obs
  std::vector<Matrix> actions;   // steps 0 .. end - 1
  std::vector<Vector> rewards;
  std::vector<Vector> not_done;
};

BatchSequences gather(const std::vector<Fragment>& batch) {
  const std::size_t start = batch.front().start;
  const std::size_t len = batch.front().length;
  const std::size_t end = start + len;
  const auto b = static_cast<Eigen::Index>(batch.size());
  const Eigen::Index n2 = batch.front().episode->steps.front().observation.size();
  BatchSequences s;
  s.obs.assign(end + 1, Matrix(n2, b));
  s.features.assign(end + 1, Matrix(kPrivilegedFeatures, b));
  s.actions.assign(end, Matrix(2, b));
  s.rewards.assign(end, Vector(b));
  s.not_done.assign(end, Vector(b));
  for (Eigen::Index k = 0; k < b; ++k) {
    const Fragment& fr = batch[static_cast<std::size_t>(k)];
    if (fr.start != start || fr.length != len)
      throw InvalidArgument("ddpg_update: fragments must share start and length");
    const auto& steps = fr.episode->steps;
    if (end > steps.size()) throw InvalidArgument("ddpg_update: fragment exceeds its episode");
    for (std::size_t t = 0; t <= end; ++t) {
      const bool final = t == steps.size();
      const Matrix& o = final ? fr.episode->final_observation : steps[t].observation;
      s.obs[t].col(k) = flatten_grid(o);
      s.features[t].col(k) = final ? fr.episode->final_features : steps[t].features;
      if (t < end) {
        s.actions[t](0, k) = steps[t].action.d_alpha;
        s.actions[t](1, k) = steps[t].action.d_delta;
        s.rewards[t][k] = steps[t].reward;
        s.not_done[t][k] = t + 1 < steps.size() ? 1.0 : 0.0;
      }
    }
  }
  return s;
}

std::vector<Matrix> side_inputs(const std::vector<Matrix>& actions, const std::vector<Matrix>& features,
                                std::size_t count) {
  std::vector<Matrix> side(count);
  for (std::size_t t = 0; t < count; ++t) {
    side[t].resize(2 + kPrivilegedFeatures, actions[t].cols());
    side[t].topRows(2) = actions[t];
    side[t].bottomRows(kPrivilegedFeatures) = features[t];
  }
  return side;
}

Matrix squash(const Matrix& z) { return z.unaryExpr([](double v) { return squash_action(v); }); }

}  // namespace

DdpgStats ddpg_update(ActorCritic& ac, const std::vector<Fragment>& batch, const DdpgConfig& config) {
  if (batch.empty()) throw InvalidArgument("ddpg_update: empty batch");
  const std::size_t start = batch.front().start;
  const std::size_t len = batch.front().length;
  if (len == 0) throw InvalidArgument("ddpg_update: empty fragment");
  const std::size_t end = start + len;
  const BatchSequences seq = gather(batch);
  const double scale = 1.0 / static_cast<double>(batch.size() * len);
  const double vs = config.value_scale;
  if (!(vs > 0.0)) throw InvalidArgument("ddpg_update: value scale must be positive");
  DdpgStats stats;

  // TD targets from the target networks over steps 0 .. end.
  const std::vector<Matrix> obs_all(seq.obs.begin(), seq.obs.end());
  const nn::Tape target_actor = ac.actor.run(view(ac.actor_target), obs_all);
  std::vector<Matrix> target_actions(end + 1);
  for (std::size_t t = 0; t <= end; ++t) target_actions[t] = squash(target_actor.outputs[t]);
  const std::vector<Matrix> target_side = side_inputs(target_actions, seq.features, end + 1);
  const nn::Tape target_q = ac.critic.run(view(ac.critic_target), obs_all, &target_side);

  // Critic regression on steps start .. end - 1.
  const std::vector<Matrix> obs(seq.obs.begin(), seq.obs.begin() + static_cast<std::ptrdiff_t>(end));
  const std::vector<Matrix> side = side_inputs(seq.actions, seq.features, end);
  const nn::Tape q = ac.critic.run(view(ac.critic_params), obs, &side);
  std::vector<Matrix> dq(end);
  double loss = 0.0, q_sum = 0.0;
  for (std::size_t t = 0; t < end; ++t) {
    dq[t] = Matrix::Zero(1, static_cast<Eigen::Index>(batch.size()));
    if (t < start) continue;
    const Vector y = seq.rewards[t] / vs + config.gamma * seq.not_done[t].cwiseProduct(
                                                               target_q.outputs[t + 1].row(0).transpose());
    const Vector err = q.outputs[t].row(0).transpose() - y;
    loss += err.squaredNorm() * scale * vs * vs;
    q_sum += q.outputs[t].sum() * scale * vs;
    dq[t].row(0) = 2.0 * scale * err.transpose();
  }
  stats.critic_loss = loss;
  stats.mean_q = q_sum;
  Vector critic_grad = Vector::Zero(static_cast<Eigen::Index>(ac.critic.param_count()));
  ac.critic.backward(view(ac.critic_params), q, dq,
                     std::span<double>(critic_grad.data(), ac.critic.param_count()), nullptr, nullptr,
                     start);
  if (!std::isfinite(loss) || !critic_grad.allFinite()) {
    stats.skipped = true;
    return stats;
  }

  // Actor: ascend Q(s, mu(s)) through the critic's action inputs.
  Vector actor_grad = Vector::Zero(static_cast<Eigen::Index>(ac.actor.param_count()));
  if (config.update_actor) {
    const nn::Tape mu = ac.actor.run(view(ac.actor_params), obs);
    std::vector<Matrix> mu_actions(end);
    for (std::size_t t = 0; t < end; ++t) mu_actions[t] = squash(mu.outputs[t]);
    const std::vector<Matrix> mu_side = side_inputs(mu_actions, seq.features, end);
    const nn::Tape q_mu = ac.critic.run(view(ac.critic_params), obs, &mu_side);
    std::vector<Matrix> ones(end);
    for (std::size_t t = 0; t < end; ++t)
      ones[t] = Matrix::Constant(1, static_cast<Eigen::Index>(batch.size()), t < start ? 0.0 : 1.0);
    Vector scratch = Vector::Zero(static_cast<Eigen::Index>(ac.critic.param_count()));
    std::vector<Matrix> d_side;
    ac.critic.backward(view(ac.critic_params), q_mu, ones,
                       std::span<double>(scratch.data(), ac.critic.param_count()), &d_side, nullptr,
                       start);
    std::vector<Matrix> dz(end);
    double dq_abs = 0.0;
    for (std::size_t t = 0; t < end; ++t) {
      dz[t] = Matrix::Zero(2, static_cast<Eigen::Index>(batch.size()));
      if (t < start) continue;
      const Matrix da = vs * d_side[t].topRows(2);
      dq_abs += da.cwiseAbs().sum() * scale * 0.5;
      stats.dq_da[0] += da.row(0).sum() * scale;
      stats.dq_da[1] += da.row(1).sum() * scale;
      const Matrix dsq = mu.outputs[t].unaryExpr([](double v) { return squash_derivative(v); });
      dz[t] = -scale * da.cwiseProduct(dsq) + (2.0 * config.preactivation_penalty * scale) * mu.outputs[t];
    }
    stats.mean_dq_da = dq_abs;
    ac.actor.backward(view(ac.actor_params), mu, dz,
                      std::span<double>(actor_grad.data(), ac.actor.param_count()), nullptr, nullptr,
                      start);
    if (!actor_grad.allFinite()) {
      stats.skipped = true;
      return stats;
    }
  }

  if (config.update_critic) nn::adam_update(ac.critic_params, critic_grad, ac.critic_adam, config.critic_lr);
  if (config.update_actor) nn::adam_update(ac.actor_params, actor_grad, ac.actor_adam, config.actor_lr);
  if (config.update_targets) soft_update(ac, config.tau);
  return stats;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

namespace {

struct Scenario {
  ProtoPtr field;
  NavInit init;
};

Scenario draw_scenario(const PolicyTrainConfig& config, Modality m, Rng& rng) {
  Scenario s;
  s.field = sample_proto(m, rng);
  const double r = rng.uniform(config.start_radius_min, config.start_radius_max);
  const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
  s.init.theta = s.field->center();
  s.init.theta[0] += r * std::cos(phi);
  s.init.theta[1] += r * std::sin(phi);
  s.init.alpha = rng.log_uniform(config.alpha_min, config.alpha_max);
  s.init.delta = rng.log_uniform(config.delta_min, config.delta_max);
  return s;
}

double field_minimum(const ProtoField& f) {
  const auto m = f.known_minimum();
  return m ? m->value : 0.0;
}

ActionFn live_actions(const ActorCritic& ac) {
  return [&ac](const Matrix& grid, nn::LstmState& hidden) {
    if (hidden.h.size() == 0) hidden = ac.actor.zero_state(1);
    const Matrix z = ac.actor.forward(view(ac.actor_params), flatten_grid(grid), &hidden);
    return NavAction{squash_action(z(0, 0)), squash_action(z(1, 0))};
  };
}

bool finite_episode(const Episode& ep) {
  for (const auto& s : ep.steps)
    if (!std::isfinite(s.reward)) return false;
  return !ep.steps.empty();
}

nn::Checkpoint make_checkpoint(const nn::Network& net, const Vector& params, const PolicyTrainConfig& c,
                               std::uint64_t updates, double loss, const std::string& note) {
  nn::Checkpoint ck;
  ck.spec = net.spec();
  ck.params = params;
  ck.meta = {c.seed, updates, loss, note};
  return ck;
}

}  // namespace

double evaluate_return(const ActionFn& actions, const AnglePredictor& angle,
                       const PolicyTrainConfig& config, std::size_t fields, std::uint64_t seed) {
  Rng rng(seed);
  double total = 0.0;
  for (std::size_t k = 0; k < fields; ++k) {
    Rng fr = rng.split();
    const Scenario s = draw_scenario(config, config.modalities[k % config.modalities.size()], fr);
    total += run_episode(actions, angle, *s.field, s.init, field_minimum(*s.field), config.env)
                 .total_reward();
  }
  return total / static_cast<double>(std::max<std::size_t>(1, fields));
}

PolicyTrainResult train_policy(const AnglePredictor& angle, const PolicyTrainConfig& config) {
  if (config.env.grid_n != angle.grid_n())
    throw InvalidArgument("train_policy: grid size differs from the angle network's input");
  if (config.batch == 0 || config.fragment == 0) throw InvalidArgument("train_policy: empty batch");
  Rng rng(config.seed);
  ActorCritic ac(config.env.grid_n, config.hidden, rng);
  const std::uint64_t eval_seed = config.seed * 7919 + 17;
  DdpgConfig ddpg{config.tau,   config.actor_lr, config.critic_lr, config.gamma, config.preactivation_penalty,
                  config.value_scale, true,     true,           true};

  PolicyTrainResult result;
  auto evaluate = [&](std::size_t episode) {
    const double r = evaluate_return(live_actions(ac), angle, config, config.eval_fields, eval_seed);
    result.log.eval_returns.emplace_back(episode, r);
    if (config.verbose) std::fprintf(stderr, "policy episode %zu eval return %.3f\n", episode, r);
  };
  if (config.eval_every) evaluate(0);

  const std::size_t horizon = static_cast<std::size_t>(config.env.horizon);
  const std::size_t per_episode = horizon >= config.fragment ? horizon - config.fragment + 1 : 1;
  const std::size_t capacity = std::max<std::size_t>(1, config.replay_capacity / per_episode);
  std::deque<Episode> replay;

  for (std::size_t ep = 0; ep < config.episodes; ++ep) {
    Rng er = rng.split();
    const Modality m = config.modalities[er.index(config.modalities.size())];
    const Scenario s = draw_scenario(config, m, er);
    const double progress =
        config.episodes > 1 ? static_cast<double>(ep) / static_cast<double>(config.episodes - 1) : 1.0;
    const double sigma = config.ou_sigma_start + (config.ou_sigma_end - config.ou_sigma_start) * progress;
    OuNoise noise(config.ou_theta, sigma, er.split());
    Episode episode = run_episode(live_actions(ac), angle, *s.field, s.init, field_minimum(*s.field),
                                  config.env, &noise);
    if (finite_episode(episode)) {
      replay.push_back(std::move(episode));
      if (replay.size() > capacity) replay.pop_front();
    } else {
      ++result.log.dropped_episodes;
    }

    if (ep + 1 >= config.warmup_episodes && !replay.empty()) {
      for (std::size_t u = 0; u < config.updates_per_episode; ++u) {
        std::vector<const Episode*> chosen;
        std::size_t shortest = horizon;
        for (std::size_t b = 0; b < config.batch; ++b) {
          chosen.push_back(&replay[rng.index(replay.size())]);
          shortest = std::min(shortest, chosen.back()->steps.size());
        }
        const std::size_t len = std::min(config.fragment, shortest);
        const std::size_t start = rng.index(shortest - len + 1);
        std::vector<Fragment> batch;
        for (const Episode* e : chosen) batch.push_back({e, start, len});
        ddpg.update_actor = result.log.updates >= config.actor_delay;
        const DdpgStats st = ddpg_update(ac, batch, ddpg);
        ++result.log.updates;
        if (st.skipped) ++result.log.skipped_updates;
      }
    }
    if (config.eval_every && (ep + 1) % config.eval_every == 0) evaluate(ep + 1);
  }
  if (config.eval_every && (result.log.eval_returns.empty() ||
                            result.log.eval_returns.back().first != config.episodes))
    evaluate(config.episodes);

  const double last = result.log.eval_returns.empty() ? 0.0 : result.log.eval_returns.back().second;
  result.actor = make_checkpoint(ac.actor, ac.actor_params, config, result.log.updates, last, "actor");
  result.critic = make_checkpoint(ac.critic, ac.critic_params, config, result.log.updates, last, "critic");
  return result;
}

// ---------------------------------------------------------------------------

ProbeTrace probe_policy(const ActionFn& actions, const AnglePredictor& angle, const ScalarField& f,
                        const NavInit& init, int horizon) {
  EnvConfig cfg;
  cfg.horizon = horizon;
  cfg.grid_n = angle.grid_n();
  cfg.reward = RewardMode::raw;
  cfg.clip_rewards = false;
  const auto m = f.known_minimum();
  const Episode ep = run_episode(actions, angle, f, init, m ? m->value : 0.0, cfg);
  ProbeTrace trace;
  trace.alpha.push_back(init.alpha);
  trace.delta.push_back(init.delta);
  trace.value.push_back(ep.f_0);
  for (const auto& s : ep.steps) {
    trace.alpha.push_back(s.alpha);
    trace.delta.push_back(s.delta);
    trace.value.push_back(s.value);
  }
  return trace;
}

bool recovered(const ProbeTrace& trace, double alpha_min, double alpha_max, double delta_min,
               double delta_max) {
  for (std::size_t t = 0; t < std::min(trace.alpha.size(), trace.delta.size()); ++t)
    if (trace.alpha[t] >= alpha_min && trace.alpha[t] <= alpha_max && trace.delta[t] >= delta_min &&
        trace.delta[t] <= delta_max)
      return true;
  return false;
}

}  // namespace rover
