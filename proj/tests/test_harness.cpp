#include "rover/harness.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

using namespace rover;
namespace fs = std::filesystem;

namespace {

Vector v2(double a, double b) {
  Vector v(2);
  v << a, b;
  return v;
}

FieldPtr bowl() {
  return std::make_shared<FunctionField>("bowl", 2, [](const Vector& x) { return x.squaredNorm(); });
}

RosterEntry gd(double eta) {
  BaselineConfig c;
  c.method = BaselineMethod::gd;
  c.step_size = eta;
  return {"gd", c};
}

// Untrained networks at a small grid size: enough to exercise the plumbing.
struct ModelFiles {
  fs::path dir, angle, policy;
  explicit ModelFiles(const std::string& tag) {
    dir = fs::temp_directory_path() / ("rover_harness_" + tag);
    fs::create_directories(dir);
    angle = dir / "angle.ck";
    policy = dir / "policy.ck";
    Rng rng(3);
    nn::Network a(angle_net_spec(7));
    nn::save_checkpoint(angle, {a.spec(), a.initial_params(rng), {}});
    nn::Network p(actor_spec(7, 16));
    nn::save_checkpoint(policy, {p.spec(), initial_actor_params(p, rng), {}});
  }
  ~ModelFiles() { fs::remove_all(dir); }
};

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST(Fold, ZeroRadiusHasZeroEnvelope) {
  ExperimentSpec spec;
  spec.field = "bowl";
  spec.theta0 = v2(1.0, -2.0);
  spec.radius = 0.0;
  spec.folds = 5;
  spec.horizon = 12;
  spec.roster = {gd(0.1)};
  const FoldResult r = run_fold(spec, bowl(), nullptr);
  ASSERT_EQ(r.series.size(), 1u);
  const FoldSeries& s = r.series[0];
  ASSERT_EQ(s.mean.size(), 13u);
  for (std::size_t t = 0; t < s.mean.size(); ++t) {
    EXPECT_EQ(s.hi[t] - s.lo[t], 0.0);
    EXPECT_EQ(s.counts[t], 5u);
  }
  EXPECT_EQ(s.failures, 0u);
}

TEST(Fold, CsvHasOneRowPerStepAndOptimizer) {
  ExperimentSpec spec;
  spec.theta0 = v2(1.0, 1.0);
  spec.folds = 3;
  spec.horizon = 9;
  spec.roster = {gd(0.1), gd(0.2), gd(0.3)};
  std::ostringstream csv;
  write_fold_csv(csv, run_fold(spec, bowl(), nullptr));
  EXPECT_EQ(count_lines(csv.str()), 9u * 3u + 1u);
  EXPECT_EQ(csv.str().rfind("optimizer,step,mean,min,max,runs\n", 0), 0u);
}

TEST(Fold, FailedRunsLeaveGapsWithoutAborting) {
  // Finite only near the start; gradient descent with a large step leaves it.
  const auto wall = std::make_shared<FunctionField>("wall", 2, [](const Vector& x) {
    return x.norm() < 3.0 ? x.squaredNorm() : std::numeric_limits<double>::quiet_NaN();
  });
  ExperimentSpec spec;
  spec.theta0 = v2(1.0, 0.0);
  spec.folds = 4;
  spec.horizon = 10;
  spec.roster = {gd(2.0), gd(0.1)};
  const FoldResult r = run_fold(spec, wall, nullptr);
  EXPECT_EQ(r.series[0].failures, 4u);
  EXPECT_TRUE(std::isinf(r.series[0].finals[0]));
  EXPECT_EQ(r.series[0].counts[0], 4u);
  EXPECT_EQ(r.series[1].failures, 0u);
  EXPECT_LT(r.series[1].mean.back(), 0.1);
}

TEST(Fold, RejectsEmptyRosterAndZeroFolds) {
  ExperimentSpec spec;
  spec.theta0 = v2(0, 0);
  EXPECT_THROW(run_fold(spec, bowl(), nullptr), InvalidArgument);
  spec.roster = {gd(0.1)};
  spec.folds = 0;
  EXPECT_THROW(run_fold(spec, bowl(), nullptr), InvalidArgument);
}

TEST(Fold, LearnedOptimizerWithoutModelsIsAGap) {
  ExperimentSpec spec;
  spec.theta0 = v2(1, 1);
  spec.folds = 2;
  spec.horizon = 3;
  spec.roster = {{"rover", std::nullopt}};
  const FoldResult r = run_fold(spec, bowl(), nullptr);
  EXPECT_EQ(r.series[0].failures, 2u);
}

TEST(Fold, SvgDrawsEveryOptimizer) {
  ExperimentSpec spec;
  spec.theta0 = v2(1, 1);
  spec.folds = 3;
  spec.horizon = 5;
  spec.roster = {gd(0.1), gd(0.3)};
  std::ostringstream svg;
  write_fold_svg(svg, run_fold(spec, bowl(), nullptr), 0.0, "bowl");
  const std::string s = svg.str();
  EXPECT_EQ(s.rfind("<svg", 0), 0u);
  std::size_t lines = 0;
  for (auto p = s.find("<polyline"); p != std::string::npos; p = s.find("<polyline", p + 1)) ++lines;
  EXPECT_EQ(lines, 2u);
}

TEST(Optimize, HorizonZeroIsASingleRow) {
  BaselineConfig c;
  c.iterations = 0;
  const Trajectory t = baseline_run(*bowl(), v2(3, 4), c);
  std::stringstream csv;
  write_trajectory_csv(csv, t);
  EXPECT_EQ(count_lines(csv.str()), 2u);
  const Trajectory back = read_trajectory_csv(csv);
  ASSERT_EQ(back.values.size(), 1u);
  EXPECT_EQ(back.values[0], 25.0);
}

TEST(Optimize, RoverTrajectoryRoundTripsThroughCsv) {
  ModelFiles files("roundtrip");
  const RoverModels m = load_models(files.angle, files.policy);
  const Trajectory t = run_rover(bowl(), v2(1.5, -0.5), m, {}, 6);
  ASSERT_EQ(t.values.size(), 7u);
  ASSERT_EQ(t.alpha.size(), 7u);
  std::stringstream csv;
  write_trajectory_csv(csv, t);
  const Trajectory back = read_trajectory_csv(csv);
  EXPECT_EQ(back.optimizer, "rover");
  ASSERT_EQ(back.values.size(), t.values.size());
  for (std::size_t s = 0; s < t.values.size(); ++s) {
    EXPECT_EQ(back.values[s], t.values[s]);
    EXPECT_EQ(back.alpha[s], t.alpha[s]);
    EXPECT_EQ(back.delta[s], t.delta[s]);
    EXPECT_EQ(back.thetas[s], t.thetas[s]);
  }
  const Trajectory none = run_rover(bowl(), v2(1.5, -0.5), m, {}, 0);
  EXPECT_EQ(none.values.size(), 1u);
}

TEST(Optimize, RoverRunsInHigherDimensionsDeterministically) {
  ModelFiles files("highd");
  const RoverModels m = load_models(files.angle, files.policy);
  const FieldPtr f = make_binary_classification_field(4, 50, 9);
  RoverSettings s;
  s.highdim.budget = {PairStrategy::uniform_k, 3, UniformReading::dimensions, {}};
  s.highdim.normalizer = Normalizer::budget;
  const Vector theta0 = Vector::Constant(5, 0.3);
  const Trajectory a = run_rover(f, theta0, m, s, 4, 11);
  const Trajectory b = run_rover(f, theta0, m, s, 4, 11);
  ASSERT_EQ(a.values.size(), 5u);
  EXPECT_EQ(a.values, b.values);
  EXPECT_TRUE(a.alpha.empty());
}

TEST(Models, MissingCheckpointNamesTheTrainingCommand) {
  ModelFiles files("missing");
  try {
    load_models(files.dir / "nope.ck", files.policy);
    FAIL() << "expected an error";
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("rover train-angle"), std::string::npos);
  }
  try {
    load_models(files.angle, files.dir / "nope.ck");
    FAIL() << "expected an error";
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("rover train-policy"), std::string::npos);
  }
}

TEST(Reproduce, MissingCheckpointsFailBeforeWriting) {
  ReproduceOptions o;
  o.out_dir = fs::temp_directory_path() / "rover_harness_nock";
  o.angle_checkpoint = o.out_dir / "absent.ck";
  EXPECT_THROW(reproduce("fig5", o), CheckpointError);
  EXPECT_THROW(reproduce("fig9", o), InvalidArgument);
  fs::remove_all(o.out_dir);
}

TEST(Reproduce, ManifestHashIsStableAcrossRuns) {
  ModelFiles files("manifest");
  std::string hashes[2];
  for (int k = 0; k < 2; ++k) {
    ReproduceOptions o;
    o.out_dir = files.dir / ("run" + std::to_string(k));
    o.angle_checkpoint = files.angle;
    o.policy_checkpoint = files.policy;
    o.quick = true;
    o.seed = 4;
    const ArtifactRecord rec = reproduce("fig4", o);
    EXPECT_EQ(rec.files.size(), 9u);  // csv + svg per modality, manifest
    std::ifstream in(o.out_dir / "fig4" / "manifest.json");
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string text = ss.str();
    const auto p = text.find("\"content_hash\"");
    ASSERT_NE(p, std::string::npos);
    hashes[k] = text.substr(p, 40);
    EXPECT_NE(text.find("\"checkpoints\""), std::string::npos);
  }
  EXPECT_EQ(hashes[0], hashes[1]);
}

TEST(Config, KeyValuesSkipCommentsAndRejectBareLines) {
  const fs::path p = fs::temp_directory_path() / "rover_kv.txt";
  std::ofstream(p) << "# header\nepisodes = 40  # trailing\n\n  seed=3\n";
  const auto kv = read_key_values(p);
  EXPECT_EQ(kv.at("episodes"), "40");
  EXPECT_EQ(kv.at("seed"), "3");
  EXPECT_EQ(kv.size(), 2u);
  std::ofstream(p) << "episodes 40\n";
  EXPECT_THROW(read_key_values(p), InvalidArgument);
  fs::remove(p);
}

TEST(Starts, DocumentedForEveryTestFunction) {
  for (const auto& name : test_function_names()) {
    const Vector s = test_function_start(name);
    const auto f = make_test_function(name);
    EXPECT_TRUE(std::isfinite(f->value(s))) << name;
    EXPECT_GT((s - f->known_minimum()->point).norm(), 0.5) << name;
  }
  EXPECT_THROW(test_function_start("sphere"), InvalidArgument);
}
