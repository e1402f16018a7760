#pragma once

// Experiment orchestration: single runs, perturbation folds with envelopes,
// SVG overlays, and the named reproduction pipelines with their manifests.

#include "rover/baselines.hpp"
#include "rover/highdim.hpp"

#include <filesystem>
#include <optional>

namespace rover {

/// Trained angle predictor and step policy.
struct RoverModels {
  AnglePredictor angle;
  Policy policy;
  std::uint64_t angle_hash = 0;
  std::uint64_t policy_hash = 0;
};

/// Loads both checkpoints; a missing file raises an error that names the
/// command producing it.
RoverModels load_models(const std::filesystem::path& angle_path, const std::filesystem::path& policy_path);

struct RoverSettings {
  double alpha0 = 0.1;
  double delta0 = 0.15;
  HighDimConfig highdim;  // d > 2 only
};

/// 2D: runs the policy as in training (raw rewards, no clipping). d > 2: the
/// pairwise extension. alpha/delta are recorded in 2D only.
Trajectory run_rover(const FieldPtr& f, const Vector& theta0, const RoverModels& models,
                     const RoverSettings& settings, int horizon, std::uint64_t seed = 0);

struct RosterEntry {
  std::string name;
  std::optional<BaselineConfig> baseline;  // empty: the learned optimizer
};

struct ExperimentSpec {
  std::string field;  // test-function name, modality name, or a label
  Vector theta0;
  double radius = 0.1;
  std::size_t folds = 20;
  int horizon = 50;
  std::vector<RosterEntry> roster;
  RoverSettings rover;
  std::uint64_t seed = 0;

  void validate() const;
};

struct FoldSeries {
  std::string optimizer;
  std::vector<double> mean, lo, hi;  // steps 0..horizon over completed runs
  std::vector<std::size_t> counts;   // runs contributing at each step
  std::vector<double> finals;        // last value per run (+inf on failure)
  std::size_t failures = 0;
};

struct FoldResult {
  std::string field;
  int horizon = 0;
  std::vector<FoldSeries> series;
  std::vector<Vector> starts;
};

/// Perturbs theta0 with `folds` Gaussian draws of scale `radius` and runs the
/// whole roster from each. A failed run leaves a gap; the fold never aborts.
FoldResult run_fold(const ExperimentSpec& spec, const FieldPtr& f, const RoverModels* models);

/// optimizer,step,mean,min,max,runs for steps 1..horizon.
void write_fold_csv(std::ostream& out, const FoldResult& fold);
/// Log-scale overlay of means with shaded envelopes. `offset` is subtracted
/// before the log (pass the known minimum).
void write_fold_svg(std::ostream& out, const FoldResult& fold, double offset, const std::string& title);

/// Documented meta-test starting points.
Vector test_function_start(const std::string& name);

/// Tuned baseline roster for a problem family (grid search per method).
std::vector<RosterEntry> tuned_roster(const std::vector<BaselineMethod>& methods,
                                      const std::vector<TuningProblem>& problems, std::size_t iterations,
                                      std::uint64_t seed);

// ---------------------------------------------------------------------------
// Reproduction pipelines
// ---------------------------------------------------------------------------

struct ReproduceOptions {
  std::filesystem::path out_dir = "results";
  std::filesystem::path angle_checkpoint = "checkpoints/angle.ck";
  std::filesystem::path policy_checkpoint = "checkpoints/policy.ck";
  std::uint64_t seed = 0;
  /// Shrinks every experiment (fewer folds, seeds, shorter horizons) for smoke runs.
  bool quick = false;
  bool verbose = false;
};

struct ArtifactRecord {
  std::string name;
  std::map<std::string, double> metrics;
  std::vector<std::filesystem::path> files;
};

/// Runs one of table1, fig4, fig5, fig6, fig7 and writes its artifacts plus
/// manifest.json (seeds, configuration, checkpoint hashes, runtimes) into
/// out_dir/<id>.
ArtifactRecord reproduce(const std::string& id, const ReproduceOptions& options);

const std::vector<std::string>& experiment_ids();

/// Per-experiment pieces, exposed for the acceptance checks.
struct MetaTestResult {
  std::string function;
  FoldResult fold;
  double rover_median_gap = 0.0;
  double best_baseline_median_gap = 0.0;
  std::string best_baseline;
  double fraction_near_minimum = 0.0;  // rover runs ending within 0.5 of f*
};

MetaTestResult meta_test(const std::string& function, const RoverModels& models, int horizon,
                         std::size_t folds, std::uint64_t seed);

struct ClassificationComparison {
  std::size_t d = 0;
  std::uint64_t task_seed = 0;
  double rover_final = 0.0;
  double gd_final = 0.0;
  double newton_final = 0.0;
  Trajectory rover, gd, newton;
};

/// Rover (k = 10 dimension budget) against tuned GD and Newton on one
/// generated classification task.
ClassificationComparison classification_run(std::size_t d, std::uint64_t task_seed, const RoverModels& models,
                                            int horizon, std::size_t k = 10);

struct IrisComparison {
  std::map<std::string, std::vector<double>> finals;  // strategy -> final loss per seed
  std::map<std::string, double> medians;
  std::map<std::string, std::vector<double>> median_curves;
};

IrisComparison iris_strategies(const RoverModels& models, std::size_t seeds, int horizon, std::uint64_t seed,
                               bool with_baselines = true);

/// Reads "key = value" lines ('#' comments) into a map; used by the CLI.
std::map<std::string, std::string> read_key_values(const std::filesystem::path& path);

/// Output root: $ROVER_OUTPUT_ROOT when set, `fallback` otherwise.
std::filesystem::path output_root(const std::filesystem::path& fallback = "results");

}  // namespace rover
