#include "rover/baselines.hpp"
#include "rover/neuralcore.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <iomanip>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

namespace rover {

std::string to_string(BaselineMethod m) {
  switch (m) {
    case BaselineMethod::gd: return "gd";
    case BaselineMethod::nesterov: return "nesterov";
    case BaselineMethod::newton: return "newton";
    case BaselineMethod::nelder_mead: return "nelder_mead";
    case BaselineMethod::cmaes: return "cmaes";
    case BaselineMethod::adam: return "adam";
  }
  return "gd";
}

BaselineMethod parse_baseline_method(const std::string& name) {
  for (BaselineMethod m : {BaselineMethod::gd, BaselineMethod::nesterov, BaselineMethod::newton,
                           BaselineMethod::nelder_mead, BaselineMethod::cmaes, BaselineMethod::adam})
    if (to_string(m) == name) return m;
  throw InvalidArgument("unknown optimizer '" + name + "'");
}

void BaselineConfig::validate() const {
  if (!(step_size > 0.0)) throw InvalidArgument("baseline: step size must be > 0");
  if (!(sigma > 0.0)) throw InvalidArgument("baseline: sigma must be > 0");
  if (!(simplex_size > 0.0)) throw InvalidArgument("baseline: simplex size must be > 0");
  if (!(damping >= 0.0)) throw InvalidArgument("baseline: damping must be >= 0");
  if (momentum < 0.0 || momentum >= 1.0) throw InvalidArgument("baseline: momentum must be in [0, 1)");
}

double Trajectory::final_value() const {
  if (values.empty() || diverged) return std::numeric_limits<double>::infinity();
  return values.back();
}

// ---------------------------------------------------------------------------

void write_trajectory_csv(std::ostream& out, const Trajectory& t) {
  const std::size_t d = t.thetas.empty() ? 0 : static_cast<std::size_t>(t.thetas.front().size());
  out << "optimizer,step,f,alpha,delta";
  for (std::size_t k = 0; k < d; ++k) out << ",theta_" << k;
  out << '\n' << std::setprecision(17);
  for (std::size_t s = 0; s < t.values.size(); ++s) {
    out << t.optimizer << ',' << s << ',' << t.values[s] << ',';
    if (s < t.alpha.size()) out << t.alpha[s];
    out << ',';
    if (s < t.delta.size()) out << t.delta[s];
    for (std::size_t k = 0; k < d; ++k) out << ',' << t.thetas[s][static_cast<Eigen::Index>(k)];
    out << '\n';
  }
}

Trajectory read_trajectory_csv(std::istream& in) {
  Trajectory t;
  std::string line;
  if (!std::getline(in, line) || line.rfind("optimizer,step,f,alpha,delta", 0) != 0)
    throw InvalidArgument("trajectory CSV: missing header");
  const std::size_t d = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) - 4;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (line.back() == ',') cells.emplace_back();
    if (cells.size() != 5 + d) throw InvalidArgument("trajectory CSV row " + std::to_string(row) + ": wrong width");
    auto num = [&](const std::string& s) {
      try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
      } catch (const std::exception&) {
        throw InvalidArgument("trajectory CSV row " + std::to_string(row) + ": bad number '" + s + "'");
      }
    };
    t.optimizer = cells[0];
    t.values.push_back(num(cells[2]));
    if (!cells[3].empty()) t.alpha.push_back(num(cells[3]));
    if (!cells[4].empty()) t.delta.push_back(num(cells[4]));
    Vector theta(static_cast<Eigen::Index>(d));
    for (std::size_t k = 0; k < d; ++k) theta[static_cast<Eigen::Index>(k)] = num(cells[5 + k]);
    t.thetas.push_back(std::move(theta));
  }
  return t;
}

// ---------------------------------------------------------------------------

namespace {

class Recorder {
 public:
  Recorder(const ScalarField& f, const BaselineConfig& c, Trajectory& t) : f_(f), c_(c), t_(t) {}

  /// Appends theta; returns false (and flags divergence) on a bad iterate.
  bool push(const Vector& theta, double value) {
    if (!theta.allFinite() || !std::isfinite(value) || theta.norm() > c_.divergence_norm) {
      t_.diverged = true;
      return false;
    }
    t_.thetas.push_back(theta);
    t_.values.push_back(value);
    return true;
  }
  bool push(const Vector& theta) {
    return push(theta, theta.allFinite() ? f_.value(theta) : std::numeric_limits<double>::quiet_NaN());
  }

 private:
  const ScalarField& f_;
  const BaselineConfig& c_;
  Trajectory& t_;
};

void run_first_order(const ScalarField& f, const Vector& theta0, const BaselineConfig& c, Recorder& rec) {
  Vector theta = theta0;
  Vector v = Vector::Zero(theta.size());
  nn::AdamState adam;
  for (std::size_t it = 0; it < c.iterations; ++it) {
    switch (c.method) {
      case BaselineMethod::gd:
        theta -= c.step_size * gradient_or_fd(f, theta);
        break;
      case BaselineMethod::nesterov: {
        const Vector look = theta + c.momentum * v;
        v = c.momentum * v - c.step_size * gradient_or_fd(f, look);
        theta += v;
        break;
      }
      case BaselineMethod::adam:
        nn::adam_update(theta, gradient_or_fd(f, theta), adam, c.step_size, {c.beta1, c.beta2, 1e-8});
        break;
      default:
        break;
    }
    if (!rec.push(theta)) return;
  }
}

void run_newton(const ScalarField& f, const Vector& theta0, const BaselineConfig& c, Recorder& rec) {
  Vector theta = theta0;
  for (std::size_t it = 0; it < c.iterations; ++it) {
    const Vector g = gradient_or_fd(f, theta);
    Matrix h = hessian_or_fd(f, theta);
    h = 0.5 * (h + h.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> eig(h);
    const double lambda = std::max(0.0, c.damping - eig.eigenvalues().minCoeff());
    const Vector shifted = eig.eigenvalues().array() + lambda;
    const Vector step = eig.eigenvectors() * ((eig.eigenvectors().transpose() * g).array() / shifted.array()).matrix();
    theta -= c.step_size * step;
    if (!rec.push(theta)) return;
  }
}

void run_nelder_mead(const ScalarField& f, const Vector& theta0, const BaselineConfig& c, Recorder& rec) {
  const Eigen::Index n = theta0.size();
  std::vector<Vector> x(static_cast<std::size_t>(n + 1), theta0);
  std::vector<double> fx(x.size());
  for (Eigen::Index k = 0; k < n; ++k) x[static_cast<std::size_t>(k + 1)][k] += c.simplex_size;
  for (std::size_t k = 0; k < x.size(); ++k) fx[k] = f.value(x[k]);
  std::vector<std::size_t> order(x.size());

  for (std::size_t it = 0; it < c.iterations; ++it) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return fx[a] < fx[b]; });
    const std::size_t best = order.front(), worst = order.back(), second = order[order.size() - 2];
    Vector centroid = Vector::Zero(n);
    for (std::size_t k = 0; k + 1 < order.size(); ++k) centroid += x[order[k]];
    centroid /= static_cast<double>(n);

    const Vector xr = centroid + c.reflection * (centroid - x[worst]);
    const double fr = f.value(xr);
    bool do_shrink = false;
    if (fr < fx[best]) {
      const Vector xe = centroid + c.expansion * (xr - centroid);
      const double fe = f.value(xe);
      if (fe < fr) {
        x[worst] = xe, fx[worst] = fe;
      } else {
        x[worst] = xr, fx[worst] = fr;
      }
    } else if (fr < fx[second]) {
      x[worst] = xr, fx[worst] = fr;
    } else if (fr < fx[worst]) {
      const Vector xc = centroid + c.contraction * (xr - centroid);
      const double fc = f.value(xc);
      if (fc <= fr) x[worst] = xc, fx[worst] = fc;
      else do_shrink = true;
    } else {
      const Vector xc = centroid + c.contraction * (x[worst] - centroid);
      const double fc = f.value(xc);
      if (fc < fx[worst]) x[worst] = xc, fx[worst] = fc;
      else do_shrink = true;
    }
    if (do_shrink) {
      for (std::size_t k = 0; k < x.size(); ++k) {
        if (k == best) continue;
        x[k] = x[best] + c.shrink * (x[k] - x[best]);
        fx[k] = f.value(x[k]);
      }
    }
    const std::size_t arg = static_cast<std::size_t>(std::min_element(fx.begin(), fx.end()) - fx.begin());
    if (!rec.push(x[arg], fx[arg])) return;
  }
}

void run_cmaes(const ScalarField& f, const Vector& theta0, const BaselineConfig& c, Recorder& rec) {
  const Eigen::Index n = theta0.size();
  const double nd = static_cast<double>(n);
  Rng rng(c.seed);
  const std::size_t lambda = c.population ? c.population : 4 + static_cast<std::size_t>(std::floor(3.0 * std::log(nd)));
  const std::size_t mu = lambda / 2;
  Vector w(static_cast<Eigen::Index>(mu));
  for (std::size_t i = 0; i < mu; ++i)
    w[static_cast<Eigen::Index>(i)] = std::log((static_cast<double>(lambda) + 1.0) / 2.0) - std::log(static_cast<double>(i) + 1.0);
  w /= w.sum();
  const double mueff = 1.0 / w.squaredNorm();
  const double cc = (4.0 + mueff / nd) / (nd + 4.0 + 2.0 * mueff / nd);
  const double cs = (mueff + 2.0) / (nd + mueff + 5.0);
  const double c1 = 2.0 / ((nd + 1.3) * (nd + 1.3) + mueff);
  const double cmu = std::min(1.0 - c1, 2.0 * (mueff - 2.0 + 1.0 / mueff) / ((nd + 2.0) * (nd + 2.0) + mueff));
  const double damps = 1.0 + 2.0 * std::max(0.0, std::sqrt((mueff - 1.0) / (nd + 1.0)) - 1.0) + cs;
  const double chi_n = std::sqrt(nd) * (1.0 - 1.0 / (4.0 * nd) + 1.0 / (21.0 * nd * nd));

  Vector mean = theta0;
  double sigma = c.sigma;
  Matrix cov = Matrix::Identity(n, n);
  Vector pc = Vector::Zero(n), ps = Vector::Zero(n);
  Vector best = theta0;
  double fbest = f.value(theta0);

  std::vector<Vector> xs(lambda), ys(lambda);
  std::vector<double> fs(lambda);
  std::vector<std::size_t> order(lambda);
  for (std::size_t gen = 0; gen < c.iterations; ++gen) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
    Vector d = eig.eigenvalues().cwiseMax(1e-20 * std::max(1.0, eig.eigenvalues().maxCoeff()));
    const Matrix b = eig.eigenvectors();
    const Vector sd = d.cwiseSqrt();
    for (std::size_t k = 0; k < lambda; ++k) {
      Vector z(n);
      for (Eigen::Index i = 0; i < n; ++i) z[i] = rng.normal();
      ys[k] = b * sd.cwiseProduct(z);
      xs[k] = mean + sigma * ys[k];
      fs[k] = f.value(xs[k]);
      if (!std::isfinite(fs[k])) fs[k] = std::numeric_limits<double>::infinity();
    }
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t bb) { return fs[a] < fs[bb]; });
    if (fs[order[0]] < fbest) {
      fbest = fs[order[0]];
      best = xs[order[0]];
    }
    Vector yw = Vector::Zero(n);
    for (std::size_t i = 0; i < mu; ++i) yw += w[static_cast<Eigen::Index>(i)] * ys[order[i]];
    mean += sigma * yw;
    const Vector inv_sqrt_y = b * (b.transpose() * yw).cwiseQuotient(sd);
    ps = (1.0 - cs) * ps + std::sqrt(cs * (2.0 - cs) * mueff) * inv_sqrt_y;
    const double gen_d = static_cast<double>(gen + 1);
    const bool hsig = ps.norm() / std::sqrt(1.0 - std::pow(1.0 - cs, 2.0 * gen_d)) / chi_n < 1.4 + 2.0 / (nd + 1.0);
    pc = (1.0 - cc) * pc + (hsig ? std::sqrt(cc * (2.0 - cc) * mueff) : 0.0) * yw;
    Matrix rank_mu = Matrix::Zero(n, n);
    for (std::size_t i = 0; i < mu; ++i)
      rank_mu += w[static_cast<Eigen::Index>(i)] * ys[order[i]] * ys[order[i]].transpose();
    cov = (1.0 - c1 - cmu) * cov + c1 * (pc * pc.transpose() + (hsig ? 0.0 : cc * (2.0 - cc)) * cov) + cmu * rank_mu;
    cov = 0.5 * (cov + cov.transpose());
    sigma *= std::exp((cs / damps) * (ps.norm() / chi_n - 1.0));
    if (!std::isfinite(sigma) || !mean.allFinite()) {
      rec.push(mean, std::numeric_limits<double>::quiet_NaN());
      return;
    }
    if (!rec.push(best, fbest)) return;
  }
}

}  // namespace

Trajectory baseline_run(const ScalarField& f, const Vector& theta0, const BaselineConfig& config) {
  config.validate();
  if (static_cast<std::size_t>(theta0.size()) != f.dim())
    throw InvalidArgument("baseline_run: theta0 has the wrong dimension");
  Trajectory t;
  t.optimizer = to_string(config.method);
  Recorder rec(f, config, t);
  if (!rec.push(theta0)) return t;
  switch (config.method) {
    case BaselineMethod::gd:
    case BaselineMethod::nesterov:
    case BaselineMethod::adam: run_first_order(f, theta0, config, rec); break;
    case BaselineMethod::newton: run_newton(f, theta0, config, rec); break;
    case BaselineMethod::nelder_mead: run_nelder_mead(f, theta0, config, rec); break;
    case BaselineMethod::cmaes: run_cmaes(f, theta0, config, rec); break;
  }
  return t;
}

BaselineConfig grid_search_tune(const std::vector<BaselineConfig>& candidates,
                                const std::vector<TuningProblem>& problems) {
  if (candidates.empty()) throw InvalidArgument("grid_search_tune: no candidates");
  if (problems.empty()) throw InvalidArgument("grid_search_tune: no problems");
  std::size_t best = 0;
  double best_score = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    double score = 0.0;
    for (const auto& p : problems) score += baseline_run(*p.field, p.theta0, candidates[k]).final_value();
    score /= static_cast<double>(problems.size());
    if (score < best_score) {
      best_score = score;
      best = k;
    }
  }
  return candidates[best];
}

std::vector<BaselineConfig> default_candidates(BaselineMethod method, std::size_t iterations,
                                               std::uint64_t seed) {
  std::vector<BaselineConfig> out;
  BaselineConfig base;
  base.method = method;
  base.iterations = iterations;
  base.seed = seed;
  auto push = [&](auto&& edit) {
    BaselineConfig c = base;
    edit(c);
    out.push_back(c);
  };
  switch (method) {
    case BaselineMethod::gd:
    case BaselineMethod::adam:
      for (int e = -12; e <= 2; ++e) push([&](BaselineConfig& c) { c.step_size = std::pow(2.0, e) * (method == BaselineMethod::adam ? 0.1 : 1.0); });
      break;
    case BaselineMethod::nesterov:
      for (int e = -12; e <= 0; ++e)
        for (double m : {0.5, 0.9, 0.99})
          push([&](BaselineConfig& c) { c.step_size = std::pow(2.0, e); c.momentum = m; });
      break;
    case BaselineMethod::newton:
      for (double s : {0.25, 0.5, 1.0})
        for (double dmp : {1e-6, 1e-2, 1.0, 10.0})
          push([&](BaselineConfig& c) { c.step_size = s; c.damping = dmp; });
      break;
    case BaselineMethod::nelder_mead:
      for (double h : {0.01, 0.05, 0.1, 0.5, 1.0, 2.0}) push([&](BaselineConfig& c) { c.simplex_size = h; });
      break;
    case BaselineMethod::cmaes:
      for (double s : {0.05, 0.1, 0.3, 0.5, 1.0, 2.0}) push([&](BaselineConfig& c) { c.sigma = s; });
      break;
  }
  return out;
}

}  // namespace rover
