#pragma once

// Reference optimizers: gradient descent, Nesterov, damped Newton,
// Nelder-Mead, CMA-ES and Adam, plus grid-search tuning over a field family.

#include "rover/fields.hpp"

#include <iosfwd>

namespace rover {

enum class BaselineMethod { gd, nesterov, newton, nelder_mead, cmaes, adam };

std::string to_string(BaselineMethod m);
BaselineMethod parse_baseline_method(const std::string& name);

struct BaselineConfig {
  BaselineMethod method = BaselineMethod::gd;
  double step_size = 1e-2;  // gd, nesterov, adam; Newton scales its step by it
  double momentum = 0.9;    // nesterov
  double damping = 1e-6;    // newton: H + lambda I, lambda = max(0, damping - min eig H)
  double reflection = 1.0;  // nelder-mead
  double expansion = 2.0;
  double contraction = 0.5;
  double shrink = 0.5;
  double simplex_size = 0.1;
  std::size_t population = 0;  // cma-es; 0 means 4 + floor(3 ln d)
  double sigma = 0.5;          // cma-es initial step
  double beta1 = 0.9;          // adam
  double beta2 = 0.999;
  std::size_t iterations = 100;
  double divergence_norm = 1e12;  // |theta| beyond this counts as divergence
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const BaselineConfig&) const = default;
};

/// Shared schema for learned and hand-designed optimizer runs. alpha and
/// delta are empty for optimizers without them.
struct Trajectory {
  std::string optimizer;
  std::vector<Vector> thetas;
  std::vector<double> values;
  std::vector<double> alpha;
  std::vector<double> delta;
  bool diverged = false;

  std::size_t steps() const { return values.empty() ? 0 : values.size() - 1; }
  double final_value() const;
};

/// CSV: optimizer,step,f,alpha,delta,theta_0..theta_{d-1}; blanks for absent
/// alpha/delta. Values use round-trip precision.
void write_trajectory_csv(std::ostream& out, const Trajectory& t);
Trajectory read_trajectory_csv(std::istream& in);

/// Runs `config.iterations` updates from theta0. Gradients and Hessians come
/// from the field's oracle when present, central differences otherwise.
/// Nelder-Mead and CMA-ES record the best point seen so far. A non-finite or
/// runaway iterate truncates the run and sets `diverged`.
Trajectory baseline_run(const ScalarField& f, const Vector& theta0, const BaselineConfig& config);

struct TuningProblem {
  FieldPtr field;
  Vector theta0;
};

/// Returns the candidate with the smallest mean final f over `problems`
/// (diverged runs count as +inf; ties keep the earlier candidate).
BaselineConfig grid_search_tune(const std::vector<BaselineConfig>& candidates,
                                const std::vector<TuningProblem>& problems);

/// A log-spaced candidate grid over the method's main hyper-parameters.
std::vector<BaselineConfig> default_candidates(BaselineMethod method, std::size_t iterations,
                                               std::uint64_t seed = 0);

}  // namespace rover
