#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>

namespace rover {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Caller handed us something outside the operation's domain.
struct InvalidArgument : Error {
  using Error::Error;
};

/// A field returned a non-finite value while being observed.
struct ObservationError : Error {
  ObservationError(const std::string& what, Vector offset)
      : Error(what), offset(std::move(offset)) {}
  Vector offset;
};

struct IngestionError : Error {
  using Error::Error;
};

struct GenerationError : Error {
  using Error::Error;
};

struct TrainingError : Error {
  using Error::Error;
};

struct CheckpointError : Error {
  using Error::Error;
};
struct CheckpointHeaderError : CheckpointError {
  using CheckpointError::CheckpointError;
};
struct CheckpointVersionError : CheckpointError {
  using CheckpointError::CheckpointError;
};
struct CheckpointCountError : CheckpointError {
  using CheckpointError::CheckpointError;
};

// ---------------------------------------------------------------------------
// Random streams
// ---------------------------------------------------------------------------

/// Seeded random stream. The transforms are written out here so a seed
/// reproduces the same numbers regardless of the standard library in use.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n) {
    if (n == 0) throw InvalidArgument("Rng::index: empty range");
    return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(t);
    has_spare_ = true;
    return r * std::cos(t);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  double log_uniform(double lo, double hi) {
    return std::exp(uniform(std::log(lo), std::log(hi)));
  }

  /// Gaussian truncated to (0, inf) by rejection.
  double positive_normal(double mean, double stddev) {
    for (int i = 0; i < 10000; ++i) {
      const double v = normal(mean, stddev);
      if (v > 0.0) return v;
    }
    throw GenerationError("positive_normal: rejection sampling failed");
  }

  /// Independent child stream; the parent advances by one draw.
  Rng split() { return Rng(engine_() ^ 0x9e3779b97f4a7c15ULL); }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

inline bool all_finite(const Vector& v) { return v.allFinite(); }

inline double degrees(double radians) { return radians * 180.0 / std::numbers::pi; }

}  // namespace rover
