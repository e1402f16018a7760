#pragma once

// Grid observations around an iterate and 2D slices of d-dimensional fields.

#include "rover/fields.hpp"

#include <iosfwd>

namespace rover {

/// How lattice index i in {1..n} maps to an offset multiplier.
///  - centered: i - (n + 1) / 2, so the middle sample of an odd grid is theta;
///  - strict:   i - n / 2, the literal lattice (asymmetric by one sample).
enum class GridOffset { centered, strict };

inline constexpr int kDefaultGridSize = 15;

struct GridSample {
  Matrix raw;         // n x n
  Matrix normalized;  // n x n, in [0, 1]
  Vector center;
  double resolution = 0.0;
  int n = 0;
};

/// (raw - min) / (max - min), or 0.5 everywhere for a constant grid.
Matrix normalize_grid(const Matrix& raw);

/// Point sampled for entry (i, j), 1-based: theta - delta * (i - c, j - c).
Vector grid_point(const Vector& theta, double delta, int n, int i, int j,
                  GridOffset mode = GridOffset::centered);

/// Observes f on the n x n lattice. Noise is drawn from rng when both the
/// field is noisy and rng is non-null. Throws ObservationError on a
/// non-finite sample.
GridSample grid_sample(const ScalarField& f, const Vector& theta, double delta,
                       int n = kDefaultGridSize, Rng* rng = nullptr,
                       GridOffset mode = GridOffset::centered);

/// g(u, v) = f(theta + u e_i + v e_j), with 0-based indices i < j.
class SliceField : public ScalarField {
 public:
  SliceField(FieldPtr parent, Vector theta, std::size_t i, std::size_t j);

  std::size_t dim() const override { return 2; }
  double value(const Vector& uv) const override;
  double observe(const Vector& uv, Rng* rng) const override;
  double noise_sigma() const override { return parent_->noise_sigma(); }
  std::string name() const override;

  std::size_t first() const { return i_; }
  std::size_t second() const { return j_; }

 private:
  Vector embed(const Vector& uv) const;

  FieldPtr parent_;
  Vector theta_;
  std::size_t i_, j_;
};

/// Throws InvalidArgument unless i < j < dim.
std::shared_ptr<const SliceField> slice_field(FieldPtr f, const Vector& theta, std::size_t i,
                                              std::size_t j);

/// E_{i,j} * dir2: zero except dir2[0] at i and dir2[1] at j.
Vector embed_direction(const Vector& dir2, std::size_t i, std::size_t j, std::size_t d);

/// CSV with a three-line header (theta, delta, n) then n rows of raw values.
void write_grid_csv(std::ostream& out, const GridSample& grid);

}  // namespace rover
