#pragma once

// Step-size and resolution control: the navigation environment, shaped
// rewards, a recurrent deterministic actor-critic and its training loop.

#include "rover/anglenet.hpp"

#include <deque>
#include <functional>
#include <map>

namespace rover {

enum class RewardMode { raw, norm, window };

std::string to_string(RewardMode m);
RewardMode parse_reward_mode(const std::string& name);

inline constexpr double kActionMin = -0.5;
inline constexpr double kActionMax = 1.0;

struct NavAction {
  double d_alpha = 0.0;
  double d_delta = 0.0;
  NavAction clamped() const;
};

struct NavState {
  Vector theta;
  double alpha = 0.0;
  double delta = 0.0;
  nn::LstmState hidden;  // owned by whoever drives the policy
  int t = 0;
};

/// RAW: -f_t. NORM: -(f_t - f*) / (f_0 - f*). WINDOW: -(f_t - f*) / (mean_k - f*).
/// A denominator below 1e-12 in magnitude yields -1 and sets `guarded`.
double shaped_reward(double f_t, double f_star, double f_0, double window_mean, RewardMode mode,
                     bool* guarded = nullptr);

/// Budgeted sparse reward -f(theta_T) * [t = T]; kept for completeness.
double sparse_terminal_reward(double f_t, int t, int horizon);

/// Tracks f_0 and the trailing window for one episode. The window holds the
/// k values preceding the current iterate (f_0 counts as the first).
class RewardTracker {
 public:
  RewardTracker(RewardMode mode, double f_star, double f_0, int window = 5);
  /// Reward for reaching value f_t; then appends f_t to the window.
  double reward(double f_t, bool* guarded = nullptr);
  double window_mean() const;
  double f_star() const { return f_star_; }
  double f_0() const { return f_0_; }

 private:
  RewardMode mode_;
  double f_star_, f_0_;
  std::size_t window_;
  std::deque<double> recent_;
};

struct EnvConfig {
  int horizon = 30;
  int grid_n = kDefaultGridSize;
  RewardMode reward = RewardMode::window;
  int window = 5;
  double terminal_penalty = -2.0;
  /// Training-time reward clip; shaped_reward itself is never clipped.
  double reward_min = -2.0;
  double reward_max = 0.0;
  bool clip_rewards = true;
  double alpha_max = 1e6;  // divergence guard on the multiplicative updates
  double delta_max = 1e6;
};

struct EnvStepResult {
  NavState next;
  GridSample observation;  // grid at (theta', delta')
  double value = 0.0;      // f(theta')
  double reward = 0.0;
  bool terminated = false;
  bool guarded = false;
};

/// theta' = theta + alpha * Delta(grid at (theta, delta)); alpha' = alpha (1 + d_alpha);
/// delta' = delta (1 + d_delta). A non-finite value or observation at the
/// new point ends the episode with the terminal penalty. `current` may pass
/// the grid at (theta, delta) when the caller already has it.
EnvStepResult env_step(const NavState& state, const NavAction& action, const ScalarField& f,
                       const AnglePredictor& angle, RewardTracker& rewards, const EnvConfig& config,
                       const GridSample* current = nullptr, Rng* observation_rng = nullptr);

// ---------------------------------------------------------------------------
// Networks
// ---------------------------------------------------------------------------

inline constexpr int kPrivilegedFeatures = 4;

/// conv 8, conv 16, lstm, dense 64, dense 2 (pre-squash).
nn::NetSpec actor_spec(int grid_n = kDefaultGridSize, int hidden = 64);
/// As the actor, with [action, privileged features] entering the dense 64
/// layer; one output.
nn::NetSpec critic_spec(int grid_n = kDefaultGridSize, int hidden = 64);

/// 0.25 + 0.75 tanh(z): maps the real line onto (-0.5, 1).
double squash_action(double z);
double squash_derivative(double z);

/// log alpha, log delta, t / T, log10 of the normalized gap (clipped to [-12, 2]).
Vector critic_features(double alpha, double delta, int t, int horizon, double f_t, double f_star,
                       double f_0);

/// Actor parameters with small final-layer weights and bias atanh(-1/3), so
/// the initial actions sit near (0, 0).
Vector initial_actor_params(const nn::Network& actor, Rng& rng);
Vector initial_critic_params(const nn::Network& critic, Rng& rng);

class Policy {
 public:
  explicit Policy(nn::Checkpoint checkpoint);

  NavAction act(const Matrix& normalized_grid, nn::LstmState& hidden) const;
  nn::LstmState initial_state() const { return net_.zero_state(1); }
  const nn::Checkpoint& checkpoint() const { return checkpoint_; }
  int grid_n() const { return checkpoint_.spec.input.height; }

 private:
  nn::Checkpoint checkpoint_;
  nn::Network net_;
};

/// Anything that maps (observation, recurrent state) to an action.
using ActionFn = std::function<NavAction(const Matrix& normalized_grid, nn::LstmState& hidden)>;

ActionFn policy_actions(const Policy& policy);
ActionFn constant_actions(NavAction action);

// ---------------------------------------------------------------------------
// Episodes
// ---------------------------------------------------------------------------

struct NavInit {
  Vector theta;
  double alpha = 0.1;
  double delta = 0.1;
};

/// Ornstein-Uhlenbeck process on both action components (dt = 1).
class OuNoise {
 public:
  OuNoise(double theta, double sigma, Rng rng) : theta_(theta), sigma_(sigma), rng_(std::move(rng)) {}
  NavAction sample();
  void reset() { x_ = {0.0, 0.0}; }

 private:
  double theta_, sigma_;
  Rng rng_;
  std::array<double, 2> x_{0.0, 0.0};
};

struct StepRecord {
  Matrix observation;  // normalized grid the action was chosen from
  Vector features;     // critic features at that observation
  NavAction action;
  double reward = 0.0;
  double value = 0.0;  // f after the move
  Vector theta;        // after the move
  double alpha = 0.0;  // after the move
  double delta = 0.0;
};

struct Episode {
  std::vector<StepRecord> steps;
  Matrix final_observation;
  Vector final_features;
  double f_0 = 0.0;
  double f_star = 0.0;
  NavInit init;
  bool terminated = false;  // ended early on a non-finite excursion
  double total_reward() const;
};

Episode run_episode(const ActionFn& actions, const AnglePredictor& angle, const ScalarField& f,
                    const NavInit& init, double f_star, const EnvConfig& config,
                    OuNoise* noise = nullptr, Rng* observation_rng = nullptr);

/// CSV with columns step, f, alpha, delta, reward (step 0 is the start).
void write_trace_csv(std::ostream& out, const Episode& episode);

// ---------------------------------------------------------------------------
// Actor-critic training
// ---------------------------------------------------------------------------

struct PolicyTrainConfig {
  std::size_t episodes = 1500;
  std::size_t warmup_episodes = 50;
  std::size_t updates_per_episode = 4;
  std::size_t batch = 32;
  std::size_t fragment = 30;  // equal to the horizon: whole episodes
  std::size_t replay_capacity = 50000;  // fragments; stored as whole episodes
  double tau = 0.02;
  double actor_lr = 1e-4;
  double critic_lr = 1e-3;
  double gamma = 1.0;
  std::size_t actor_delay = 1000;     // updates that train the critic alone
  double preactivation_penalty = 0.0;  // weight on the mean squared pre-squash output
  double value_scale = 1.0;            // the critic outputs Q / value_scale
  double ou_theta = 0.15;
  double ou_sigma_start = 0.2;
  double ou_sigma_end = 0.02;
  int hidden = 64;
  EnvConfig env;
  double alpha_min = 1e-2;  // log-uniform training distributions
  double alpha_max = 1.0;
  double delta_min = 0.05;
  double delta_max = 0.5;
  double start_radius_min = 2.0;
  double start_radius_max = 4.0;
  std::vector<Modality> modalities{kAllModalities.begin(), kAllModalities.end()};
  std::size_t eval_every = 100;  // episodes; 0 disables
  std::size_t eval_fields = 20;
  std::uint64_t seed = 1;
  bool verbose = false;

  /// "key = value" lines; '#' starts a comment. Unknown keys are errors.
  std::string to_text() const;
  static PolicyTrainConfig from_text(const std::string& text);
  void set(const std::string& key, const std::string& value);
};

struct ActorCritic {
  nn::Network actor;
  nn::Network critic;
  Vector actor_params, critic_params;
  Vector actor_target, critic_target;
  nn::AdamState actor_adam, critic_adam;

  ActorCritic(int grid_n, int hidden, Rng& rng);
};

/// A window [start, start + length) of a stored episode.
struct Fragment {
  const Episode* episode = nullptr;
  std::size_t start = 0;
  std::size_t length = 0;
};

struct DdpgConfig {
  double tau = 0.02;
  double actor_lr = 1e-4;
  double critic_lr = 1e-3;
  double gamma = 1.0;
  double preactivation_penalty = 0.0;
  double value_scale = 1.0;  // critic output times this is Q
  bool update_actor = true;
  bool update_critic = true;
  bool update_targets = true;
};

struct DdpgStats {
  double critic_loss = 0.0;
  double mean_q = 0.0;
  double mean_dq_da = 0.0;  // mean |dQ/da| at the policy action
  std::array<double, 2> dq_da{0.0, 0.0};  // signed means per action component
  bool skipped = false;     // non-finite loss or gradient
};

/// One critic TD step and one actor policy-gradient step on a batch of
/// fragments that share a start index, then soft target updates. Recurrent
/// states are rebuilt from each episode's start; gradients flow only through
/// the fragment (truncated backpropagation through time).
DdpgStats ddpg_update(ActorCritic& ac, const std::vector<Fragment>& batch, const DdpgConfig& config);

/// target <- (1 - tau) target + tau live, on both networks.
void soft_update(ActorCritic& ac, double tau);

struct PolicyTrainLog {
  std::vector<std::pair<std::size_t, double>> eval_returns;  // (episode, mean return)
  std::size_t updates = 0;
  std::size_t skipped_updates = 0;
  std::size_t dropped_episodes = 0;
};

struct PolicyTrainResult {
  nn::Checkpoint actor;
  nn::Checkpoint critic;
  PolicyTrainLog log;
};

/// Samples a fresh training landscape per episode, explores with OU noise,
/// replays whole-episode fragments. Deterministic given the seed.
PolicyTrainResult train_policy(const AnglePredictor& angle, const PolicyTrainConfig& config);

/// Mean undiscounted return of `actions` over held-out training landscapes
/// generated from `seed` (same start distribution as training).
double evaluate_return(const ActionFn& actions, const AnglePredictor& angle,
                       const PolicyTrainConfig& config, std::size_t fields, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Probes
// ---------------------------------------------------------------------------

struct ProbeTrace {
  std::vector<double> alpha;  // alpha_0 .. alpha_T
  std::vector<double> delta;
  std::vector<double> value;  // f(theta_0) .. f(theta_T)
};

ProbeTrace probe_policy(const ActionFn& actions, const AnglePredictor& angle, const ScalarField& f,
                        const NavInit& init, int horizon = 30);

/// True when alpha and delta are inside their training ranges at the same step.
bool recovered(const ProbeTrace& trace, double alpha_min, double alpha_max, double delta_min,
               double delta_max);

}  // namespace rover
