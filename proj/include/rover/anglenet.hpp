#pragma once

// Direction prediction by behavioral cloning: teacher roll-outs on training
// landscapes, negative sampling, the contrastive cross-entropy loss, and the
// trained predictor.

#include "rover/gridsense.hpp"
#include "rover/neuralcore.hpp"
#include "rover/protogen.hpp"

#include <array>
#include <iosfwd>
#include <optional>

namespace rover {

// ---------------------------------------------------------------------------
// Teachers
// ---------------------------------------------------------------------------

enum class Teacher { gradient, newton };

std::string to_string(Teacher t);

struct TeacherResult {
  Vector direction;  // raw candidate of the winning teacher
  Teacher teacher = Teacher::gradient;
  double step = 0.0;      // trial step (along the unit direction) with the best decrease
  double decrease = 0.0;  // f(theta) - f(theta + step * unit direction)
  bool no_decrease = false;
};

/// Damped Newton candidate -(H + lambda I)^-1 g with lambda = max(0, 1e-6 - min |eig H|).
Vector newton_direction(const Vector& gradient, const Matrix& hessian);

/// How the one-step decrease of each candidate is measured.
///  - scan: best over trial steps 0.1 * 2^k (k = -4..6) plus the Newton length;
///  - fixed: a single trial step of 0.1.
enum class TeacherTrial { scan, fixed };

std::string to_string(TeacherTrial t);
TeacherTrial parse_teacher_trial(const std::string& name);

/// Compares -grad f and the damped Newton candidate, each moved along its
/// unit direction; the larger decrease wins and ties go to gradient descent.
/// Uses the noiseless surface.
TeacherResult teacher_step(const ScalarField& f, const Vector& theta,
                           TeacherTrial trial = TeacherTrial::fixed);

/// Unit vector uniform over the open half-circle opposite to d.
Vector sample_negative(const Vector& d, Rng& rng);

// ---------------------------------------------------------------------------
// Imitation data
// ---------------------------------------------------------------------------

struct ImitationSample {
  Matrix grid;    // normalized, n x n
  Vector action;  // unit 2-vector
  int label = 0;  // 1 = teacher, 0 = negative
  Modality modality = Modality::quadratic;
};

using ImitationDataset = std::vector<ImitationSample>;

struct CollectConfig {
  std::size_t num_functions = 2000;
  std::size_t steps_per_function = 10;
  std::vector<Modality> modalities{kAllModalities.begin(), kAllModalities.end()};
  int grid_n = kDefaultGridSize;
  double delta_min = 0.05;  // per-function resolution, log-uniform
  double delta_max = 0.5;
  double start_radius_min = 2.0;
  double start_radius_max = 4.0;
  double max_move = 0.5;  // cap on the teacher move between recorded steps
  TeacherTrial trial = TeacherTrial::fixed;
  ProtoConfig proto;
};

struct CollectStats {
  std::size_t functions = 0;
  std::size_t skipped = 0;
  std::size_t restarts = 0;
  std::size_t no_decrease = 0;
  std::size_t newton_wins = 0;
};

/// One positive and one negative sample per teacher step. Function k uses
/// modality modalities[k % size], so every modality gets an equal share.
ImitationDataset collect_imitation_dataset(const CollectConfig& config, Rng& rng,
                                           CollectStats* stats = nullptr);

/// Length-prefixed binary: "RVDS", u32 version, u64 count, then per sample
/// u32 n, f64[n*n] (row-major), f64[2] action, i32 label, i32 modality.
void save_dataset(const std::filesystem::path& path, const ImitationDataset& data);
ImitationDataset load_dataset(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Network and loss
// ---------------------------------------------------------------------------

/// conv 8 3x3/1, BN, relu, conv 16 3x3/2, BN, relu, dense 64, relu, dense 2.
nn::NetSpec angle_net_spec(int grid_n = kDefaultGridSize);

/// Row-major flattening used as network input (one column).
Vector flatten_grid(const Matrix& grid);

/// Mean over the batch of -[t log s + (1-t) log(1-s)], s = sigmoid(y^T a);
/// log arguments are clamped at 1e-12. Fills `grad` (d loss / d params)
/// when non-null. BN runs on batch statistics in training mode.
double imitation_loss(const nn::Network& net, std::span<const double> params,
                      const std::vector<const ImitationSample*>& batch, Vector* grad = nullptr,
                      nn::Mode mode = nn::Mode::training);

/// Applies dihedral element `code` in [0, 8) to a sample: bit 0 transposes
/// (swapping action components), bit 1 flips rows (negating action[0]),
/// bit 2 flips columns (negating action[1]).
ImitationSample transform_sample(const ImitationSample& s, int code);

/// Per-sample loss for a given network output y.
double imitation_sample_loss(const Vector& y, const Vector& action, int label);

struct AngleTrainConfig {
  std::size_t steps = 6000;
  std::size_t batch = 128;
  double learning_rate = 3e-3;
  double final_learning_rate = 1e-5;  // cosine decay target
  double holdout_fraction = 0.1;
  /// Random dihedral symmetry (transpose / flips of the grid with the
  /// matching map of the action) applied to every training sample.
  bool augment = true;
  std::uint64_t seed = 1;
  std::size_t log_every = 0;  // 0 = silent
};

struct AngleTrainResult {
  nn::Checkpoint checkpoint;
  double initial_loss = 0.0;
  double final_loss = 0.0;  // mean training loss over the last 100 steps
  double holdout_loss = 0.0;
  double holdout_accuracy = 0.0;  // sign(y^T a) agrees with the label
};

/// Adam on minibatches. Throws TrainingError if the loss turns non-finite;
/// the error message carries the last finite step.
AngleTrainResult train_angle_predictor(const ImitationDataset& data, const AngleTrainConfig& config);

struct DirectionPrediction {
  Vector direction;  // unit 2-vector
  bool degenerate = false;
};

/// y(s) / |y(s)|, or (1, 0) flagged degenerate when |y| < 1e-12.
class AnglePredictor {
 public:
  explicit AnglePredictor(nn::Checkpoint checkpoint);

  DirectionPrediction predict(const GridSample& grid) const;
  DirectionPrediction predict(const Matrix& normalized_grid) const;
  /// Raw network outputs for a batch of normalized grids (2 x count).
  Matrix outputs(const std::vector<const Matrix*>& grids) const;

  const nn::Checkpoint& checkpoint() const { return checkpoint_; }
  int grid_n() const { return checkpoint_.spec.input.height; }

 private:
  nn::Checkpoint checkpoint_;
  nn::Network net_;
};

DirectionPrediction predict_direction(const AnglePredictor& predictor, const GridSample& grid);

/// Mean angle in degrees between predictions and the positive samples'
/// actions (arccos argument clamped to [-1, 1]).
double mean_angle_dissimilarity(const AnglePredictor& predictor, const ImitationDataset& data);

// ---------------------------------------------------------------------------
// Dissimilarity table
// ---------------------------------------------------------------------------

struct AngleTable {
  std::vector<std::string> rows;  // training sets: four modalities then "all"
  std::vector<std::string> cols;  // test modalities
  Matrix degrees;                 // rows x cols
  std::vector<AngleTrainResult> training;
};

struct AngleTableConfig {
  CollectConfig collect;                 // training set size per row
  std::size_t test_functions = 200;      // held-out functions per column
  AngleTrainConfig train;
  std::uint64_t seed = 7;
  bool include_untrained = false;        // extra row with random initial weights
};

AngleTable angle_dissimilarity_matrix(const AngleTableConfig& config);

void write_angle_table_csv(std::ostream& out, const AngleTable& table);

}  // namespace rover
