#pragma once

// d > 2: per-pair slice predictions recombined into one d-dimensional move,
// with pair-sampling budgets and lazily created per-pair step state.

#include "rover/steppolicy.hpp"

#include <map>
#include <utility>

namespace rover {

/// Dimension pair (i, j), 0-based, i < j.
using DimPair = std::pair<std::size_t, std::size_t>;

struct PairState {
  DimPair pair;
  double alpha = 0.0;
  double delta = 0.0;
  nn::LstmState hidden;
  std::int64_t last_visit = -1;  // step index, -1 before the first visit
  std::size_t visits = 0;
};

/// Per-pair states for a d-dimensional problem. Entries are created on the
/// first visit with (alpha0, delta0) and a zero hidden state.
class PairStates {
 public:
  PairStates(std::size_t d, double alpha0, double delta0);

  std::size_t dim() const { return d_; }
  std::size_t possible() const { return d_ * (d_ - 1) / 2; }
  std::size_t materialized() const { return states_.size(); }
  double alpha0() const { return alpha0_; }
  double delta0() const { return delta0_; }

  PairState& at(const DimPair& p);
  /// nullptr when the pair has never been visited.
  const PairState* find(const DimPair& p) const;
  const std::map<DimPair, PairState>& states() const { return states_; }

 private:
  std::size_t d_;
  double alpha0_, delta0_;
  std::map<DimPair, PairState> states_;
};

PairStates init_pair_states(std::size_t d, double alpha0, double delta0);
/// Materializes `pairs` up front.
PairStates init_pair_states(std::size_t d, const std::vector<DimPair>& pairs, double alpha0,
                            double delta0);

enum class PairStrategy { all_pairs, uniform_k, per_dimension_l, block_l };

/// uniform_k reads k either as a count of dimensions (all k(k-1)/2 pairs among
/// them) or as a count of pairs.
enum class UniformReading { dimensions, pairs };

std::string to_string(PairStrategy s);
PairStrategy parse_pair_strategy(const std::string& name);

struct PairBudget {
  PairStrategy strategy = PairStrategy::all_pairs;
  std::size_t count = 0;  // k or l
  UniformReading reading = UniformReading::dimensions;
  std::vector<std::vector<std::size_t>> blocks;  // block_l partition

  /// Throws InvalidArgument when the budget cannot be met in dimension d.
  void validate(std::size_t d) const;

  /// all_pairs up to d = 20, per_dimension_l (l = 1) above.
  static PairBudget default_for(std::size_t d);
};

std::vector<DimPair> sample_pairs(const PairBudget& budget, std::size_t d, Rng& rng);

/// How the summed per-pair moves are scaled.
///  - all_pairs: 1 / (d - 1);
///  - budget: 1 / (k - 1), k given by the caller (1 when k = 1);
///  - per_coordinate: each coordinate divided by the number of pairs touching it.
enum class Normalizer { all_pairs, budget, per_coordinate };

std::string to_string(Normalizer n);
Normalizer parse_normalizer(const std::string& name);

struct PairUpdate {
  DimPair pair;
  double alpha = 1.0;
  Vector dir2;
};

Vector recombine(const std::vector<PairUpdate>& updates, std::size_t d, Normalizer mode,
                 std::size_t k = 0);

/// Direction for one slice grid: the angle network, or a test oracle.
using DirectionFn = std::function<Vector(const SliceField& slice, const GridSample& grid)>;

DirectionFn angle_directions(const AnglePredictor& angle);

struct HighDimConfig {
  PairBudget budget;
  Normalizer normalizer = Normalizer::per_coordinate;
  int grid_n = kDefaultGridSize;
  bool update_states = true;  // false keeps alpha and delta fixed (oracle tests)
};

struct HighDimStepResult {
  Vector theta;
  double value = 0.0;
  std::size_t pairs_sampled = 0;
  std::size_t pairs_used = 0;
  std::size_t max_staleness = 0;  // steps since the oldest revisited pair's last visit
  std::vector<std::string> warnings;
};

/// One move: sample pairs, read each slice grid at its own resolution, predict
/// a direction, recombine, step; the same grid drives the policy's update of
/// that pair's alpha, delta and hidden state. Pairs whose slice cannot be
/// observed are skipped.
HighDimStepResult highdim_step(const FieldPtr& f, const Vector& theta, PairStates& states,
                               const HighDimConfig& config, const DirectionFn& directions,
                               const ActionFn& policy, Rng& rng, std::size_t step);

struct HighDimRun {
  std::vector<double> values;  // f(theta_0) .. f(theta_T)
  Vector theta;
  std::size_t skipped_pairs = 0;
  std::size_t max_staleness = 0;
};

HighDimRun run_highdim(const FieldPtr& f, const Vector& theta0, const HighDimConfig& config,
                       double alpha0, double delta0, int horizon, const DirectionFn& directions,
                       const ActionFn& policy, Rng& rng);

}  // namespace rover
