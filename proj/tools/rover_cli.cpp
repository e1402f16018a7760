// rover: command-line entry point for landscape generation, training,
// single runs, folds and the experiment presets.

#include "rover/harness.hpp"

#include "CLI11.hpp"

#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace rover;

namespace {

std::vector<double> parse_numbers(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    try {
      out.push_back(std::stod(item, &used));
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0) throw InvalidArgument("not a number: '" + item + "'");
  }
  return out;
}

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(item);
  return out;
}

// name | <modality>:<seed> | classification:<d>:<seed> | iris
FieldPtr field_by_name(const std::string& spec) {
  const auto parts = split(spec, ':');
  if (parts.empty()) throw InvalidArgument("empty field name");
  if (parts[0] == "iris") return make_iris_mlp_field(fs::path(ROVER_DATA_DIR) / "iris.csv");
  if (parts[0] == "classification") {
    if (parts.size() != 3) throw InvalidArgument("use classification:<d>:<seed>");
    const std::size_t d = std::stoul(parts[1]);
    if (d < 2) throw InvalidArgument("classification dimension must be >= 2");
    return make_binary_classification_field(d - 1, 200, std::stoull(parts[2]));
  }
  for (Modality m : kAllModalities)
    if (parts[0] == to_string(m)) {
      if (parts.size() != 2) throw InvalidArgument("use " + parts[0] + ":<seed>");
      return sample_proto(m, std::stoull(parts[1]));
    }
  if (parts.size() != 1) throw InvalidArgument("unknown field '" + spec + "'");
  return make_test_function(parts[0]);
}

Vector initial_point(const ScalarField& f, const std::string& init, const std::string& field) {
  if (!init.empty()) {
    const auto v = parse_numbers(init);
    if (v.size() != f.dim())
      throw InvalidArgument("--init has " + std::to_string(v.size()) + " values, field has dimension " +
                            std::to_string(f.dim()));
    return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
  }
  if (f.dim() == 2) {
    const auto name = split(field, ':').front();
    for (const auto& t : test_function_names())
      if (t == name) return test_function_start(t);
    if (const auto* p = dynamic_cast<const ProtoField*>(&f)) {
      Vector s = p->center();
      s[0] += 3.0;
      return s;
    }
  }
  Rng rng(0);
  Vector s(static_cast<Eigen::Index>(f.dim()));
  for (Eigen::Index i = 0; i < s.size(); ++i) s[i] = rng.normal();
  return s;
}

std::ofstream open_out(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) throw Error("cannot write " + p.string());
  return out;
}

struct ModelPaths {
  std::string angle = "checkpoints/angle.ck";
  std::string policy = "checkpoints/policy.ck";
  void add(CLI::App* app) {
    app->add_option("--angle", angle, "Direction-network checkpoint")->capture_default_str();
    app->add_option("--policy", policy, "Step-size policy checkpoint")->capture_default_str();
  }
};

std::vector<Modality> parse_modalities(const std::string& text) {
  std::vector<Modality> out;
  for (const auto& n : split(text, ',')) out.push_back(parse_modality(n));
  if (out.empty()) throw InvalidArgument("no modalities given");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learned zeroth-order optimizer toolkit"};
  app.set_config("--config", "", "INI-style config file; flags given on the command line win");
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Progress output on stderr");
  const fs::path root = output_root();

  // gen-landscapes
  auto* gen = app.add_subcommand("gen-landscapes", "Sample training landscapes and dump them as grid CSV");
  std::string gen_modalities = "quadratic,valley,saddle,plateau_cliff", gen_out;
  std::size_t gen_count = 4;
  std::uint64_t gen_seed = 1;
  int gen_n = 41;
  double gen_extent = 4.0;
  gen->add_option("--modalities", gen_modalities)->capture_default_str();
  gen->add_option("--count", gen_count, "Landscapes per modality")->capture_default_str();
  gen->add_option("--seed", gen_seed)->capture_default_str();
  gen->add_option("--grid", gen_n, "Lattice points per side")->capture_default_str()->check(CLI::Range(3, 1001));
  gen->add_option("--extent", gen_extent, "Half-width of the dumped square around the center")->capture_default_str();
  gen->add_option("--out", gen_out, "Output directory (default: $ROVER_OUTPUT_ROOT/landscapes)");

  // collect-imitation
  auto* col = app.add_subcommand("collect-imitation", "Roll out the teachers and store an imitation dataset");
  CollectConfig collect;
  std::string col_modalities = "quadratic,valley,saddle,plateau_cliff", col_trial = "fixed", col_out;
  std::uint64_t col_seed = 1;
  col->add_option("--functions", collect.num_functions)->capture_default_str();
  col->add_option("--steps", collect.steps_per_function, "Teacher steps per function")->capture_default_str();
  col->add_option("--modalities", col_modalities)->capture_default_str();
  col->add_option("--trial", col_trial, "Teacher trial rule: scan or fixed")->capture_default_str();
  col->add_option("--seed", col_seed)->capture_default_str();
  col->add_option("--out", col_out, "Dataset file (default: $ROVER_OUTPUT_ROOT/imitation.bin)");

  // train-angle
  auto* ta = app.add_subcommand("train-angle", "Train the direction network by imitation");
  AngleTrainConfig angle_cfg;
  std::string ta_data, ta_out = "checkpoints/angle.ck";
  ta->add_option("--data", ta_data, "Dataset from collect-imitation")->required();
  ta->add_option("--steps", angle_cfg.steps)->capture_default_str();
  ta->add_option("--batch", angle_cfg.batch)->capture_default_str();
  ta->add_option("--lr", angle_cfg.learning_rate)->capture_default_str();
  ta->add_option("--seed", angle_cfg.seed)->capture_default_str();
  ta->add_flag("!--no-augment", angle_cfg.augment, "Disable symmetry augmentation");
  ta->add_option("--out", ta_out)->capture_default_str();

  // train-policy
  auto* tp = app.add_subcommand("train-policy", "Train the step-size and resolution controller");
  std::string tp_angle = "checkpoints/angle.ck", tp_out = "checkpoints/policy.ck", tp_settings;
  std::vector<std::string> tp_overrides;
  tp->add_option("--angle", tp_angle, "Direction-network checkpoint")->capture_default_str();
  tp->add_option("--settings", tp_settings, "Training settings file (key = value; see `--print-settings`)");
  tp->add_option("--set", tp_overrides, "Override one setting, key=value (repeatable)");
  bool tp_print = false;
  tp->add_flag("--print-settings", tp_print, "Print the effective settings and exit");
  tp->add_option("--out", tp_out)->capture_default_str();

  // optimize
  auto* opt = app.add_subcommand("optimize", "One optimization run with a per-step CSV log");
  std::string opt_field, opt_optimizer = "rover", opt_init, opt_out;
  int opt_horizon = 50;
  std::uint64_t opt_seed = 0;
  RoverSettings opt_rover;
  std::string opt_strategy = "per_dimension_l", opt_normalizer = "per_coordinate";
  std::size_t opt_budget = 1;
  BaselineConfig opt_baseline;
  bool opt_tune = false;
  ModelPaths opt_models;
  opt->add_option("--field", opt_field,
                  "Test function, <modality>:<seed>, classification:<d>:<seed> or iris")->required();
  opt->add_option("--optimizer", opt_optimizer, "rover, gd, nesterov, newton, nelder_mead, cmaes or adam")
      ->capture_default_str();
  opt->add_option("--init", opt_init, "Comma-separated start (default: documented start)");
  opt->add_option("--horizon", opt_horizon)->capture_default_str()->check(CLI::NonNegativeNumber);
  opt->add_option("--seed", opt_seed)->capture_default_str();
  opt->add_option("--alpha0", opt_rover.alpha0)->capture_default_str();
  opt->add_option("--delta0", opt_rover.delta0)->capture_default_str();
  opt->add_option("--strategy", opt_strategy, "Pair budget in d > 2: all_pairs, uniform_k, per_dimension_l, block_l")
      ->capture_default_str();
  opt->add_option("--budget", opt_budget, "k or l for the pair budget")->capture_default_str();
  opt->add_option("--normalizer", opt_normalizer)->capture_default_str();
  opt->add_option("--step-size", opt_baseline.step_size)->capture_default_str();
  opt->add_option("--damping", opt_baseline.damping)->capture_default_str();
  opt->add_flag("--tune", opt_tune, "Grid-search the baseline on the start point first");
  opt->add_option("--out", opt_out, "Trajectory CSV (default: stdout)");
  opt_models.add(opt);

  // fold
  auto* fold = app.add_subcommand("fold", "Perturbed-start comparison of several optimizers");
  std::string fold_field, fold_init, fold_roster = "rover,gd,nesterov,newton,nelder_mead,cmaes", fold_out;
  ExperimentSpec fold_spec;
  bool fold_tune = true;
  ModelPaths fold_models;
  fold->add_option("--field", fold_field)->required();
  fold->add_option("--init", fold_init);
  fold->add_option("--radius", fold_spec.radius)->capture_default_str()->check(CLI::NonNegativeNumber);
  fold->add_option("--folds", fold_spec.folds)->capture_default_str()->check(CLI::PositiveNumber);
  fold->add_option("--horizon", fold_spec.horizon)->capture_default_str()->check(CLI::NonNegativeNumber);
  fold->add_option("--roster", fold_roster)->capture_default_str();
  fold->add_option("--seed", fold_spec.seed)->capture_default_str();
  fold->add_flag("!--no-tune", fold_tune, "Use baseline defaults instead of grid search");
  fold->add_option("--out", fold_out, "Output directory (default: $ROVER_OUTPUT_ROOT/fold)");
  fold_models.add(fold);

  // reproduce / table1
  auto* rep = app.add_subcommand("reproduce", "Run an experiment preset and write its artifacts");
  std::string rep_id;
  ReproduceOptions rep_opts;
  std::string rep_out;
  ModelPaths rep_models;
  rep->add_option("experiment", rep_id, "table1, fig4, fig5, fig6 or fig7")->required();
  rep->add_option("--seed", rep_opts.seed)->capture_default_str();
  rep->add_flag("--quick", rep_opts.quick, "Reduced sizes for smoke runs");
  rep->add_option("--out", rep_out, "Output directory (default: $ROVER_OUTPUT_ROOT)");
  rep_models.add(rep);

  auto* t1 = app.add_subcommand("table1", "Direction-network cross-modality dissimilarity table");
  AngleTableConfig table_cfg;
  std::string t1_trial = "fixed", t1_out;
  bool t1_untrained = false;
  t1->add_option("--functions", table_cfg.collect.num_functions, "Training functions per row")->capture_default_str();
  t1->add_option("--test-functions", table_cfg.test_functions)->capture_default_str();
  t1->add_option("--steps", table_cfg.train.steps)->capture_default_str();
  t1->add_option("--batch", table_cfg.train.batch)->capture_default_str();
  t1->add_option("--trial", t1_trial)->capture_default_str();
  t1->add_option("--seed", table_cfg.seed)->capture_default_str();
  t1->add_flag("--untrained", t1_untrained, "Add a row for the randomly initialized network");
  t1->add_option("--out", t1_out, "CSV file (default: stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      const fs::path dir = gen_out.empty() ? root / "landscapes" : fs::path(gen_out);
      fs::create_directories(dir);
      for (Modality m : parse_modalities(gen_modalities))
        for (std::size_t k = 0; k < gen_count; ++k) {
          const std::uint64_t seed = gen_seed + k;
          const ProtoPtr f = sample_proto(m, seed);
          const double delta = 2.0 * gen_extent / (gen_n - 1);
          const GridSample g = grid_sample(*f, f->center(), delta, gen_n);
          const fs::path p = dir / (to_string(m) + "_" + std::to_string(seed) + ".csv");
          auto out = open_out(p);
          write_grid_csv(out, g);
          std::cout << to_string(m) << " seed " << seed << " -> " << p.string() << '\n';
        }
      return 0;
    }
    if (col->parsed()) {
      collect.modalities = parse_modalities(col_modalities);
      collect.trial = parse_teacher_trial(col_trial);
      Rng rng(col_seed);
      CollectStats stats;
      const ImitationDataset data = collect_imitation_dataset(collect, rng, &stats);
      const fs::path p = col_out.empty() ? root / "imitation.bin" : fs::path(col_out);
      if (p.has_parent_path()) fs::create_directories(p.parent_path());
      save_dataset(p, data);
      std::cout << data.size() << " samples from " << stats.functions << " functions (" << stats.skipped
                << " skipped, " << stats.newton_wins << " newton wins) -> " << p.string() << '\n';
      return 0;
    }
    if (ta->parsed()) {
      angle_cfg.log_every = verbose ? 200 : 0;
      const ImitationDataset data = load_dataset(ta_data);
      const AngleTrainResult r = train_angle_predictor(data, angle_cfg);
      if (fs::path(ta_out).has_parent_path()) fs::create_directories(fs::path(ta_out).parent_path());
      nn::save_checkpoint(ta_out, r.checkpoint);
      std::cout << "loss " << r.initial_loss << " -> " << r.final_loss << ", holdout accuracy "
                << r.holdout_accuracy << " -> " << ta_out << '\n';
      return 0;
    }
    if (tp->parsed()) {
      PolicyTrainConfig cfg;
      if (!tp_settings.empty())
        for (const auto& [k, v] : read_key_values(tp_settings)) cfg.set(k, v);
      for (const auto& kv : tp_overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw InvalidArgument("--set expects key=value, got '" + kv + "'");
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
      }
      cfg.verbose = verbose;
      if (tp_print) {
        std::cout << cfg.to_text();
        return 0;
      }
      if (!fs::exists(tp_angle))
        throw CheckpointError("checkpoint " + tp_angle + " not found; create it with `rover train-angle --out " +
                              tp_angle + "`");
      const AnglePredictor angle(nn::load_checkpoint(tp_angle));
      const PolicyTrainResult r = train_policy(angle, cfg);
      if (fs::path(tp_out).has_parent_path()) fs::create_directories(fs::path(tp_out).parent_path());
      nn::save_checkpoint(tp_out, r.actor);
      if (!r.log.eval_returns.empty())
        std::cout << "final evaluation return " << r.log.eval_returns.back().second << ", ";
      std::cout << r.log.updates << " updates (" << r.log.skipped_updates << " skipped) -> " << tp_out << '\n';
      return 0;
    }
    if (opt->parsed()) {
      const FieldPtr f = field_by_name(opt_field);
      const Vector theta0 = initial_point(*f, opt_init, opt_field);
      Trajectory t;
      if (opt_optimizer == "rover") {
        const RoverModels models = load_models(opt_models.angle, opt_models.policy);
        opt_rover.highdim.budget = {parse_pair_strategy(opt_strategy), opt_budget, UniformReading::dimensions, {}};
        if (opt_rover.highdim.budget.strategy == PairStrategy::block_l) {
          const auto* iris = dynamic_cast<const IrisMlpField*>(f.get());
          if (!iris) throw InvalidArgument("block_l needs a field with parameter blocks (iris)");
          opt_rover.highdim.budget.blocks = iris->layer_blocks();
        }
        opt_rover.highdim.normalizer = parse_normalizer(opt_normalizer);
        t = run_rover(f, theta0, models, opt_rover, opt_horizon, opt_seed);
      } else {
        opt_baseline.method = parse_baseline_method(opt_optimizer);
        opt_baseline.iterations = static_cast<std::size_t>(opt_horizon);
        opt_baseline.seed = opt_seed;
        if (opt_tune)
          opt_baseline = grid_search_tune(default_candidates(opt_baseline.method, opt_baseline.iterations, opt_seed),
                                          {{f, theta0}});
        t = baseline_run(*f, theta0, opt_baseline);
      }
      if (opt_out.empty()) {
        write_trajectory_csv(std::cout, t);
      } else {
        auto out = open_out(opt_out);
        write_trajectory_csv(out, t);
      }
      if (verbose) std::cerr << "final f " << t.final_value() << '\n';
      return t.diverged ? 1 : 0;
    }
    if (fold->parsed()) {
      const FieldPtr f = field_by_name(fold_field);
      fold_spec.field = fold_field;
      fold_spec.theta0 = initial_point(*f, fold_init, fold_field);
      std::vector<BaselineMethod> methods;
      bool learned = false;
      for (const auto& name : split(fold_roster, ',')) {
        if (name == "rover") {
          learned = true;
          fold_spec.roster.push_back({"rover", std::nullopt});
        } else {
          methods.push_back(parse_baseline_method(name));
        }
      }
      const auto iters = static_cast<std::size_t>(fold_spec.horizon);
      if (fold_tune) {
        std::vector<TuningProblem> problems;
        Rng rng(fold_spec.seed + 1000);
        for (int k = 0; k < 5; ++k) {
          Vector s = fold_spec.theta0;
          for (Eigen::Index i = 0; i < s.size(); ++i) s[i] += fold_spec.radius * rng.normal();
          problems.push_back({f, s});
        }
        for (auto& e : tuned_roster(methods, problems, iters, fold_spec.seed)) fold_spec.roster.push_back(e);
      } else {
        for (BaselineMethod m : methods) {
          BaselineConfig c;
          c.method = m;
          c.seed = fold_spec.seed;
          fold_spec.roster.push_back({to_string(m), c});
        }
      }
      std::optional<RoverModels> models;
      if (learned) models.emplace(load_models(fold_models.angle, fold_models.policy));
      const FoldResult r = run_fold(fold_spec, f, models ? &*models : nullptr);
      const fs::path dir = fold_out.empty() ? root / "fold" : fs::path(fold_out);
      fs::create_directories(dir);
      {
        auto out = open_out(dir / "fold.csv");
        write_fold_csv(out, r);
      }
      {
        const auto m = f->known_minimum();
        auto out = open_out(dir / "fold.svg");
        write_fold_svg(out, r, m ? m->value : 0.0, fold_field);
      }
      std::size_t failures = 0;
      for (const auto& s : r.series) {
        failures += s.failures;
        std::cout << s.optimizer << ": mean final " << s.mean.back() << " (" << s.failures << " failed)\n";
      }
      std::cout << "-> " << (dir / "fold.csv").string() << '\n';
      return failures == 0 ? 0 : 1;
    }
    if (rep->parsed()) {
      rep_opts.out_dir = rep_out.empty() ? root : fs::path(rep_out);
      rep_opts.angle_checkpoint = rep_models.angle;
      rep_opts.policy_checkpoint = rep_models.policy;
      rep_opts.verbose = verbose;
      const ArtifactRecord rec = reproduce(rep_id, rep_opts);
      for (const auto& [k, v] : rec.metrics) std::cout << k << " = " << v << '\n';
      for (const auto& p : rec.files) std::cout << "wrote " << p.string() << '\n';
      return 0;
    }
    if (t1->parsed()) {
      table_cfg.collect.trial = parse_teacher_trial(t1_trial);
      table_cfg.include_untrained = t1_untrained;
      table_cfg.train.log_every = verbose ? 500 : 0;
      const AngleTable table = angle_dissimilarity_matrix(table_cfg);
      if (t1_out.empty()) {
        write_angle_table_csv(std::cout, table);
      } else {
        auto out = open_out(t1_out);
        write_angle_table_csv(out, table);
      }
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "rover: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
