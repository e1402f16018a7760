#include "rover/harness.hpp"

#include "json.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>

namespace rover {

namespace fs = std::filesystem;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

nn::Checkpoint load_or_explain(const fs::path& path, const std::string& command) {
  if (!fs::exists(path))
    throw CheckpointError("checkpoint " + path.string() + " not found; create it with `" + command + "`");
  return nn::load_checkpoint(path);
}

double median(std::vector<double> v) {
  if (v.empty()) return kInf;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double field_floor(const ScalarField& f) {
  const auto m = f.known_minimum();
  return m ? m->value : 0.0;
}

}  // namespace

RoverModels load_models(const fs::path& angle_path, const fs::path& policy_path) {
  nn::Checkpoint angle = load_or_explain(angle_path, "rover train-angle --out " + angle_path.string());
  nn::Checkpoint policy = load_or_explain(
      policy_path, "rover train-policy --angle " + angle_path.string() + " --out " + policy_path.string());
  const std::uint64_t ah = nn::checkpoint_hash(angle), ph = nn::checkpoint_hash(policy);
  RoverModels m{AnglePredictor(std::move(angle)), Policy(std::move(policy)), ah, ph};
  if (m.angle.grid_n() != m.policy.grid_n())
    throw InvalidArgument("angle and policy checkpoints use different grid sizes");
  return m;
}

Trajectory run_rover(const FieldPtr& f, const Vector& theta0, const RoverModels& models,
                     const RoverSettings& settings, int horizon, std::uint64_t seed) {
  if (!f) throw InvalidArgument("run_rover: null field");
  if (horizon < 0) throw InvalidArgument("run_rover: negative horizon");
  Trajectory t;
  t.optimizer = "rover";
  t.thetas.push_back(theta0);
  t.values.push_back(f->value(theta0));
  const bool planar = f->dim() == 2;
  if (planar) {
    t.alpha.push_back(settings.alpha0);
    t.delta.push_back(settings.delta0);
  }
  if (!std::isfinite(t.values.front())) {
    t.diverged = true;
    return t;
  }
  if (horizon == 0) return t;

  const ActionFn actions = policy_actions(models.policy);
  if (planar) {
    EnvConfig cfg;
    cfg.horizon = horizon;
    cfg.grid_n = models.angle.grid_n();
    cfg.reward = RewardMode::raw;
    cfg.clip_rewards = false;
    const Episode ep = run_episode(actions, models.angle, *f, {theta0, settings.alpha0, settings.delta0},
                                   field_floor(*f), cfg);
    for (const auto& s : ep.steps) {
      if (!std::isfinite(s.value)) break;
      t.thetas.push_back(s.theta);
      t.values.push_back(s.value);
      t.alpha.push_back(s.alpha);
      t.delta.push_back(s.delta);
    }
    t.diverged = ep.terminated;
    return t;
  }

  HighDimConfig hc = settings.highdim;
  hc.grid_n = models.angle.grid_n();
  PairStates states(f->dim(), settings.alpha0, settings.delta0);
  const DirectionFn directions = angle_directions(models.angle);
  Rng rng(seed);
  Vector theta = theta0;
  for (int step = 0; step < horizon; ++step) {
    HighDimStepResult r = highdim_step(f, theta, states, hc, directions, actions, rng, static_cast<std::size_t>(step));
    if (!std::isfinite(r.value) || !r.theta.allFinite()) {
      t.diverged = true;
      break;
    }
    theta = std::move(r.theta);
    t.thetas.push_back(theta);
    t.values.push_back(r.value);
  }
  return t;
}

// ---------------------------------------------------------------------------
// Folds
// ---------------------------------------------------------------------------

void ExperimentSpec::validate() const {
  if (folds < 1) throw InvalidArgument("experiment: fold count must be >= 1");
  if (roster.empty()) throw InvalidArgument("experiment: roster is empty");
  if (horizon < 0) throw InvalidArgument("experiment: negative horizon");
  if (!(radius >= 0.0)) throw InvalidArgument("experiment: radius must be >= 0");
}

FoldResult run_fold(const ExperimentSpec& spec, const FieldPtr& f, const RoverModels* models) {
  spec.validate();
  if (!f) throw InvalidArgument("run_fold: null field");
  if (static_cast<std::size_t>(spec.theta0.size()) != f->dim())
    throw InvalidArgument("run_fold: start has the wrong dimension");
  FoldResult out;
  out.field = spec.field;
  out.horizon = spec.horizon;
  Rng rng(spec.seed);
  for (std::size_t k = 0; k < spec.folds; ++k) {
    Vector s = spec.theta0;
    for (Eigen::Index i = 0; i < s.size(); ++i) s[i] += spec.radius * rng.normal();
    out.starts.push_back(std::move(s));
  }
  const std::size_t steps = static_cast<std::size_t>(spec.horizon) + 1;
  for (const auto& entry : spec.roster) {
    FoldSeries series;
    series.optimizer = entry.name;
    std::vector<std::vector<double>> per_step(steps);
    for (std::size_t k = 0; k < spec.folds; ++k) {
      Trajectory t;
      try {
        if (entry.baseline) {
          BaselineConfig c = *entry.baseline;
          c.iterations = static_cast<std::size_t>(spec.horizon);
          c.seed = entry.baseline->seed + k;
          t = baseline_run(*f, out.starts[k], c);
        } else {
          if (!models) throw InvalidArgument("learned optimizer requested without models");
          t = run_rover(f, out.starts[k], *models, spec.rover, spec.horizon, spec.seed + k);
        }
      } catch (const Error&) {
        ++series.failures;
        series.finals.push_back(kInf);
        continue;
      }
      for (std::size_t s = 0; s < t.values.size() && s < steps; ++s) per_step[s].push_back(t.values[s]);
      const bool complete = !t.diverged && t.values.size() == steps;
      if (!complete) ++series.failures;
      series.finals.push_back(complete ? t.values.back() : kInf);
    }
    for (const auto& vals : per_step) {
      series.counts.push_back(vals.size());
      if (vals.empty()) {
        series.mean.push_back(std::numeric_limits<double>::quiet_NaN());
        series.lo.push_back(std::numeric_limits<double>::quiet_NaN());
        series.hi.push_back(std::numeric_limits<double>::quiet_NaN());
        continue;
      }
      double sum = 0.0;
      for (double v : vals) sum += v;
      series.mean.push_back(sum / static_cast<double>(vals.size()));
      series.lo.push_back(*std::min_element(vals.begin(), vals.end()));
      series.hi.push_back(*std::max_element(vals.begin(), vals.end()));
    }
    out.series.push_back(std::move(series));
  }
  return out;
}

void write_fold_csv(std::ostream& out, const FoldResult& fold) {
  out << "optimizer,step,mean,min,max,runs\n" << std::setprecision(17);
  for (const auto& s : fold.series)
    for (std::size_t t = 1; t <= static_cast<std::size_t>(fold.horizon); ++t)
      out << s.optimizer << ',' << t << ',' << s.mean[t] << ',' << s.lo[t] << ',' << s.hi[t] << ','
          << s.counts[t] << '\n';
}

namespace {

const char* kPalette[] = {"#d62728", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"};

struct Curve {
  std::string name;
  std::vector<double> mean, lo, hi;
};

void write_svg(std::ostream& out, const std::vector<Curve>& curves, double offset, const std::string& title,
               const std::string& xlabel) {
  const double width = 640, height = 420, left = 70, right = 150, top = 40, bottom = 50;
  const double pw = width - left - right, ph = height - top - bottom;
  auto shifted = [&](double v) { return std::max(v - offset, 1e-16); };
  double ymin = kInf, ymax = -kInf;
  std::size_t xmax = 1;
  for (const auto& c : curves) {
    xmax = std::max(xmax, c.mean.size() > 0 ? c.mean.size() - 1 : 0);
    for (const auto* series : {&c.mean, &c.lo, &c.hi})
      for (double v : *series)
        if (std::isfinite(v)) {
          ymin = std::min(ymin, std::log10(shifted(v)));
          ymax = std::max(ymax, std::log10(shifted(v)));
        }
  }
  if (!std::isfinite(ymin)) ymin = -1, ymax = 1;
  ymin = std::floor(ymin);
  ymax = std::max(std::ceil(ymax), ymin + 1);
  auto px = [&](double t) { return left + pw * t / static_cast<double>(xmax); };
  auto py = [&](double v) { return top + ph * (ymax - std::log10(shifted(v))) / (ymax - ymin); };

  out << std::fixed << std::setprecision(2);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << left + pw / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << title << "</text>\n";
  for (double e = ymin; e <= ymax + 1e-9; e += 1.0) {
    out << "<line x1=\"" << left << "\" x2=\"" << left + pw << "\" y1=\"" << py(std::pow(10.0, e) + offset)
        << "\" y2=\"" << py(std::pow(10.0, e) + offset) << "\" stroke=\"#ddd\"/>\n";
    out << "<text x=\"" << left - 6 << "\" y=\"" << py(std::pow(10.0, e) + offset) + 4
        << "\" text-anchor=\"end\">1e" << static_cast<int>(e) << "</text>\n";
  }
  out << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"black\"/>\n";
  out << "<text x=\"" << left + pw / 2 << "\" y=\"" << height - 12 << "\" text-anchor=\"middle\">" << xlabel << "</text>\n";
  out << "<text x=\"" << left << "\" y=\"" << height - 30 << "\" text-anchor=\"middle\">0</text>\n";
  out << "<text x=\"" << left + pw << "\" y=\"" << height - 30 << "\" text-anchor=\"middle\">" << xmax << "</text>\n";
  for (std::size_t k = 0; k < curves.size(); ++k) {
    const auto& c = curves[k];
    const char* color = kPalette[k % std::size(kPalette)];
    std::ostringstream band, line;
    bool any = false;
    for (std::size_t t = 0; t < c.hi.size(); ++t)
      if (std::isfinite(c.hi[t])) band << (any ? " " : "") << px(static_cast<double>(t)) << ',' << py(c.hi[t]), any = true;
    for (std::size_t t = c.lo.size(); t-- > 0;)
      if (std::isfinite(c.lo[t])) band << ' ' << px(static_cast<double>(t)) << ',' << py(c.lo[t]);
    if (any)
      out << "<polygon points=\"" << band.str() << "\" fill=\"" << color << "\" fill-opacity=\"0.15\" stroke=\"none\"/>\n";
    any = false;
    for (std::size_t t = 0; t < c.mean.size(); ++t)
      if (std::isfinite(c.mean[t])) line << (any ? " " : "") << px(static_cast<double>(t)) << ',' << py(c.mean[t]), any = true;
    if (any)
      out << "<polyline points=\"" << line.str() << "\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    out << "<line x1=\"" << left + pw + 12 << "\" x2=\"" << left + pw + 32 << "\" y1=\"" << top + 12 + 18 * k
        << "\" y2=\"" << top + 12 + 18 * k << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    out << "<text x=\"" << left + pw + 38 << "\" y=\"" << top + 16 + 18 * k << "\">" << c.name << "</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace

void write_fold_svg(std::ostream& out, const FoldResult& fold, double offset, const std::string& title) {
  std::vector<Curve> curves;
  for (const auto& s : fold.series) curves.push_back({s.optimizer, s.mean, s.lo, s.hi});
  write_svg(out, curves, offset, title, "iteration");
}

Vector test_function_start(const std::string& name) {
  Vector s(2);
  if (name == "rosenbrock") s << -1.5, 2.0;
  else if (name == "ackley") s << 2.5, -2.0;
  else if (name == "rastrigin") s << 1.2, -1.1;
  else if (name == "maccornick") s << 2.0, 2.0;
  else if (name == "styblinski") s << -0.5, -0.5;
  else if (name == "beale") s << 1.0, 1.0;
  else throw InvalidArgument("no documented start for '" + name + "'");
  return s;
}

std::vector<RosterEntry> tuned_roster(const std::vector<BaselineMethod>& methods,
                                      const std::vector<TuningProblem>& problems, std::size_t iterations,
                                      std::uint64_t seed) {
  std::vector<RosterEntry> out;
  for (BaselineMethod m : methods)
    out.push_back({to_string(m), grid_search_tune(default_candidates(m, iterations, seed), problems)});
  return out;
}

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

namespace {

const std::vector<BaselineMethod> kPlanarMethods = {BaselineMethod::gd, BaselineMethod::nesterov,
                                                    BaselineMethod::newton, BaselineMethod::nelder_mead,
                                                    BaselineMethod::cmaes};

std::vector<Vector> perturbed(const Vector& center, double radius, std::size_t count, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Vector> out;
  for (std::size_t k = 0; k < count; ++k) {
    Vector s = center;
    for (Eigen::Index i = 0; i < s.size(); ++i) s[i] += radius * rng.normal();
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

MetaTestResult meta_test(const std::string& function, const RoverModels& models, int horizon, std::size_t folds,
                         std::uint64_t seed) {
  const FieldPtr f = make_test_function(function);
  const double fstar = field_floor(*f);
  ExperimentSpec spec;
  spec.field = function;
  spec.theta0 = test_function_start(function);
  spec.folds = folds;
  spec.horizon = horizon;
  spec.seed = seed;
  std::vector<TuningProblem> tuning;
  for (const Vector& s : perturbed(spec.theta0, spec.radius, 5, seed + 1000)) tuning.push_back({f, s});
  spec.roster.push_back({"rover", std::nullopt});
  for (auto& e : tuned_roster(kPlanarMethods, tuning, static_cast<std::size_t>(horizon), seed)) spec.roster.push_back(e);

  MetaTestResult r;
  r.function = function;
  r.fold = run_fold(spec, f, &models);
  r.best_baseline_median_gap = kInf;
  for (const auto& s : r.fold.series) {
    std::vector<double> gaps;
    for (double v : s.finals) gaps.push_back(v - fstar);
    const double m = median(gaps);
    if (s.optimizer == "rover") {
      r.rover_median_gap = m;
      std::size_t near = 0;
      for (double g : gaps) near += g <= 0.5;
      r.fraction_near_minimum = static_cast<double>(near) / static_cast<double>(gaps.size());
    } else if (m < r.best_baseline_median_gap) {
      r.best_baseline_median_gap = m;
      r.best_baseline = s.optimizer;
    }
  }
  return r;
}

ClassificationComparison classification_run(std::size_t d, std::uint64_t task_seed, const RoverModels& models,
                                            int horizon, std::size_t k) {
  if (d < 3) throw InvalidArgument("classification_run: d must be >= 3");
  const FieldPtr f = make_binary_classification_field(d - 1, 200, task_seed);
  Rng rng(task_seed ^ 0x5bd1e995ULL);
  Vector theta0(static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < theta0.size(); ++i) theta0[i] = rng.normal();
  const std::vector<TuningProblem> tuning{{f, theta0}};
  const auto iters = static_cast<std::size_t>(horizon);

  ClassificationComparison c;
  c.d = d;
  c.task_seed = task_seed;
  c.gd = baseline_run(*f, theta0, grid_search_tune(default_candidates(BaselineMethod::gd, iters), tuning));
  c.newton = baseline_run(*f, theta0, grid_search_tune(default_candidates(BaselineMethod::newton, iters), tuning));
  RoverSettings rs;
  rs.highdim.budget = {PairStrategy::uniform_k, std::min(k, d), UniformReading::dimensions, {}};
  rs.highdim.normalizer = Normalizer::budget;
  c.rover = run_rover(f, theta0, models, rs, horizon, task_seed);
  c.gd_final = c.gd.final_value();
  c.newton_final = c.newton.final_value();
  c.rover_final = c.rover.final_value();
  return c;
}

IrisComparison iris_strategies(const RoverModels& models, std::size_t seeds, int horizon, std::uint64_t seed,
                               bool with_baselines) {
  const FieldPtr f = make_iris_mlp_field(fs::path(ROVER_DATA_DIR) / "iris.csv");
  const auto blocks = std::dynamic_pointer_cast<const IrisMlpField>(f)->layer_blocks();
  const std::size_t d = f->dim();
  std::vector<std::pair<std::string, RoverSettings>> strategies;
  {
    RoverSettings s;
    s.highdim.budget = {PairStrategy::uniform_k, 10, UniformReading::dimensions, {}};
    s.highdim.normalizer = Normalizer::budget;
    strategies.emplace_back("pair", s);
    s.highdim.budget = {PairStrategy::per_dimension_l, 1, UniformReading::dimensions, {}};
    s.highdim.normalizer = Normalizer::per_coordinate;
    strategies.emplace_back("per_dimension", s);
    s.highdim.budget = {PairStrategy::block_l, 1, UniformReading::dimensions, blocks};
    strategies.emplace_back("per_dimension_block", s);
  }
  std::vector<Vector> starts;
  Rng rng(seed);
  for (std::size_t k = 0; k < seeds; ++k) {
    Vector t(static_cast<Eigen::Index>(d));
    for (Eigen::Index i = 0; i < t.size(); ++i) t[i] = 0.5 * rng.normal();
    starts.push_back(std::move(t));
  }

  IrisComparison out;
  std::map<std::string, std::vector<Trajectory>> runs;
  for (const auto& [name, settings] : strategies)
    for (std::size_t k = 0; k < seeds; ++k) runs[name].push_back(run_rover(f, starts[k], models, settings, horizon, seed + k));
  if (with_baselines) {
    const std::vector<TuningProblem> tuning{{f, starts.front()}};
    for (BaselineMethod m : {BaselineMethod::gd, BaselineMethod::adam}) {
      const BaselineConfig c = grid_search_tune(default_candidates(m, static_cast<std::size_t>(horizon)), tuning);
      for (std::size_t k = 0; k < seeds; ++k) runs[to_string(m)].push_back(baseline_run(*f, starts[k], c));
    }
  }
  for (const auto& [name, trajs] : runs) {
    auto& finals = out.finals[name];
    for (const auto& t : trajs) finals.push_back(t.final_value());
    out.medians[name] = median(finals);
    auto& curve = out.median_curves[name];
    for (std::size_t s = 0; s <= static_cast<std::size_t>(horizon); ++s) {
      std::vector<double> at;
      for (const auto& t : trajs) at.push_back(s < t.values.size() ? t.values[s] : kInf);
      curve.push_back(median(at));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reproduction
// ---------------------------------------------------------------------------

const std::vector<std::string>& experiment_ids() {
  static const std::vector<std::string> ids = {"table1", "fig4", "fig5", "fig6", "fig7"};
  return ids;
}

namespace {

std::string hex(std::uint64_t v) {
  std::ostringstream o;
  o << std::hex << std::setw(16) << std::setfill('0') << v;
  return o.str();
}

std::uint64_t fnv1a(const std::string& bytes, std::uint64_t h = 1469598103934665603ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream o;
  o << in.rdbuf();
  return o.str();
}

class ArtifactWriter {
 public:
  ArtifactWriter(fs::path dir, ArtifactRecord& record) : dir_(std::move(dir)), record_(record) {
    fs::create_directories(dir_);
  }

  template <typename Fn>
  void file(const std::string& name, Fn&& write) {
    const fs::path p = dir_ / name;
    std::ofstream out(p);
    if (!out) throw Error("cannot write " + p.string());
    write(out);
    if (!out) throw Error("failed writing " + p.string());
    record_.files.push_back(p);
  }

  const fs::path& dir() const { return dir_; }

 private:
  fs::path dir_;
  ArtifactRecord& record_;
};

std::vector<Curve> curves_from(const std::map<std::string, std::vector<double>>& medians) {
  std::vector<Curve> out;
  for (const auto& [name, curve] : medians) out.push_back({name, curve, curve, curve});
  return out;
}

void run_table1(const ReproduceOptions& o, ArtifactWriter& w, ArtifactRecord& rec, nlohmann::json& config) {
  AngleTableConfig cfg;
  cfg.seed = o.seed + 7;
  if (o.quick) {
    cfg.collect.num_functions = 200;
    cfg.test_functions = 40;
    cfg.train.steps = 300;
  }
  config["functions_per_row"] = cfg.collect.num_functions;
  config["test_functions"] = cfg.test_functions;
  config["train_steps"] = cfg.train.steps;
  config["batch"] = cfg.train.batch;
  config["teacher_trial"] = to_string(cfg.collect.trial);
  const AngleTable table = angle_dissimilarity_matrix(cfg);
  w.file("table1.csv", [&](std::ostream& out) { write_angle_table_csv(out, table); });
  for (std::size_t r = 0; r < table.rows.size(); ++r)
    for (std::size_t c = 0; c < table.cols.size(); ++c)
      rec.metrics[table.rows[r] + "/" + table.cols[c]] = table.degrees(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

void run_fig4(const ReproduceOptions& o, const RoverModels& m, ArtifactWriter& w, ArtifactRecord& rec,
              nlohmann::json& config) {
  const int horizon = 30;
  const std::size_t folds = o.quick ? 4 : 20;
  config["horizon"] = horizon;
  config["folds"] = folds;
  for (Modality mod : kAllModalities) {
    Rng rng(o.seed + 400 + static_cast<std::uint64_t>(mod));
    std::vector<TuningProblem> tuning;
    for (int k = 0; k < (o.quick ? 3 : 10); ++k) {
      const ProtoPtr f = sample_proto(mod, rng);
      const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
      Vector s = f->center();
      s[0] += 3.0 * std::cos(phi);
      s[1] += 3.0 * std::sin(phi);
      tuning.push_back({f, s});
    }
    const ProtoPtr f = sample_proto(mod, rng);
    ExperimentSpec spec;
    spec.field = to_string(mod);
    spec.theta0 = f->center();
    spec.theta0[0] += 3.0;
    spec.folds = folds;
    spec.horizon = horizon;
    spec.seed = o.seed;
    spec.roster.push_back({"rover", std::nullopt});
    for (auto& e : tuned_roster(kPlanarMethods, tuning, horizon, o.seed)) spec.roster.push_back(e);
    const FoldResult fold = run_fold(spec, f, &m);
    const double fstar = field_floor(*f);
    w.file("fig4_" + spec.field + ".csv", [&](std::ostream& out) { write_fold_csv(out, fold); });
    w.file("fig4_" + spec.field + ".svg",
           [&](std::ostream& out) { write_fold_svg(out, fold, fstar, spec.field + ": f - f*"); });
    for (const auto& s : fold.series) {
      std::vector<double> gaps;
      for (double v : s.finals) gaps.push_back(v - fstar);
      rec.metrics[spec.field + "/" + s.optimizer + "/median_gap"] = median(gaps);
    }
  }
}

void run_fig5(const ReproduceOptions& o, const RoverModels& m, ArtifactWriter& w, ArtifactRecord& rec,
              nlohmann::json& config) {
  const int horizon = 50;
  const std::size_t folds = o.quick ? 4 : 20;
  config["horizon"] = horizon;
  config["folds"] = folds;
  config["radius"] = 0.1;
  for (const auto& name : test_function_names()) {
    const MetaTestResult r = meta_test(name, m, horizon, folds, o.seed);
    const double fstar = field_floor(*make_test_function(name));
    w.file("fig5_" + name + ".csv", [&](std::ostream& out) { write_fold_csv(out, r.fold); });
    w.file("fig5_" + name + ".svg", [&](std::ostream& out) { write_fold_svg(out, r.fold, fstar, name + ": f - f*"); });
    rec.metrics[name + "/rover_median_gap"] = r.rover_median_gap;
    rec.metrics[name + "/best_baseline_median_gap"] = r.best_baseline_median_gap;
    rec.metrics[name + "/rover_near_minimum"] = r.fraction_near_minimum;
    const Vector start = test_function_start(name);
    config["start_" + name] = {start[0], start[1]};
  }
}

void run_fig6(const ReproduceOptions& o, const RoverModels& m, ArtifactWriter& w, ArtifactRecord& rec,
              nlohmann::json& config) {
  const int horizon = o.quick ? 40 : 200;
  config["horizon"] = horizon;
  config["k"] = 10;
  for (std::size_t d : {std::size_t{10}, std::size_t{20}, std::size_t{50}}) {
    const ClassificationComparison c = classification_run(d, o.seed + d, m, horizon);
    const std::string tag = "d" + std::to_string(d);
    w.file("fig6_" + tag + ".csv", [&](std::ostream& out) {
      out << "optimizer,step,f\n" << std::setprecision(17);
      for (const Trajectory* t : {&c.rover, &c.gd, &c.newton})
        for (std::size_t s = 0; s < t->values.size(); ++s) out << (t == &c.rover ? "rover" : t->optimizer) << ',' << s << ',' << t->values[s] << '\n';
    });
    std::map<std::string, std::vector<double>> curves{{"rover", c.rover.values}, {"gd", c.gd.values}, {"newton", c.newton.values}};
    w.file("fig6_" + tag + ".svg", [&](std::ostream& out) { write_svg(out, curves_from(curves), 0.0, "classification " + tag, "iteration"); });
    rec.metrics[tag + "/rover"] = c.rover_final;
    rec.metrics[tag + "/gd"] = c.gd_final;
    rec.metrics[tag + "/newton"] = c.newton_final;
  }
}

void run_fig7(const ReproduceOptions& o, const RoverModels& m, ArtifactWriter& w, ArtifactRecord& rec,
              nlohmann::json& config) {
  const int horizon = o.quick ? 5 : 60;
  const std::size_t seeds = o.quick ? 2 : 10;
  config["horizon"] = horizon;
  config["seeds"] = seeds;
  const IrisComparison c = iris_strategies(m, seeds, horizon, o.seed);
  w.file("fig7.csv", [&](std::ostream& out) {
    out << "strategy,step,median_f\n" << std::setprecision(17);
    for (const auto& [name, curve] : c.median_curves)
      for (std::size_t s = 0; s < curve.size(); ++s) out << name << ',' << s << ',' << curve[s] << '\n';
  });
  w.file("fig7.svg", [&](std::ostream& out) { write_svg(out, curves_from(c.median_curves), 0.0, "iris: median loss", "iteration"); });
  for (const auto& [name, v] : c.medians) rec.metrics[name + "/median_final"] = v;
}

}  // namespace

ArtifactRecord reproduce(const std::string& id, const ReproduceOptions& options) {
  if (std::find(experiment_ids().begin(), experiment_ids().end(), id) == experiment_ids().end())
    throw InvalidArgument("unknown experiment '" + id + "'");
  ArtifactRecord rec;
  rec.name = id;
  ArtifactWriter w(options.out_dir / id, rec);
  nlohmann::json config;
  nlohmann::json manifest;
  manifest["experiment"] = id;
  manifest["seed"] = options.seed;
  manifest["quick"] = options.quick;
  const auto t0 = std::chrono::steady_clock::now();
  if (id == "table1") {
    run_table1(options, w, rec, config);
  } else {
    const RoverModels models = load_models(options.angle_checkpoint, options.policy_checkpoint);
    manifest["checkpoints"] = {{"angle", {{"path", options.angle_checkpoint.string()}, {"hash", hex(models.angle_hash)}}},
                               {"policy", {{"path", options.policy_checkpoint.string()}, {"hash", hex(models.policy_hash)}}}};
    if (id == "fig4") run_fig4(options, models, w, rec, config);
    else if (id == "fig5") run_fig5(options, models, w, rec, config);
    else if (id == "fig6") run_fig6(options, models, w, rec, config);
    else run_fig7(options, models, w, rec, config);
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  manifest["config"] = config;
  nlohmann::json files = nlohmann::json::object();
  std::uint64_t content = fnv1a(manifest.dump());
  for (const auto& p : rec.files) {
    const std::string bytes = slurp(p);
    files[p.filename().string()] = hex(fnv1a(bytes));
    content = fnv1a(bytes, content);
  }
  manifest["files"] = files;
  manifest["metrics"] = rec.metrics;
  manifest["content_hash"] = hex(content);
  manifest["runtime_seconds"] = seconds;
  std::ofstream(w.dir() / "manifest.json") << manifest.dump(2) << '\n';
  rec.files.push_back(w.dir() / "manifest.json");
  rec.metrics["runtime_seconds"] = seconds;
  return rec;
}

// ---------------------------------------------------------------------------

std::map<std::string, std::string> read_key_values(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot read config " + path.string());
  std::map<std::string, std::string> out;
  std::string line;
  int n = 0;
  auto trim = [](const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return std::string();
    return s.substr(a, s.find_last_not_of(" \t\r") - a + 1);
  };
  while (std::getline(in, line)) {
    ++n;
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw InvalidArgument(path.string() + ":" + std::to_string(n) + ": expected key = value");
    out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

fs::path output_root(const fs::path& fallback) {
  const char* env = std::getenv("ROVER_OUTPUT_ROOT");
  return env && *env ? fs::path(env) : fallback;
}

}  // namespace rover
