#include "rover/gridsense.hpp"

#include <iomanip>
#include <ostream>
#include <sstream>

namespace rover {

Matrix normalize_grid(const Matrix& raw) {
  const double lo = raw.minCoeff();
  const double hi = raw.maxCoeff();
  if (!(hi > lo)) return Matrix::Constant(raw.rows(), raw.cols(), 0.5);
  return (raw.array() - lo) / (hi - lo);
}

namespace {

double lattice_center(int n, GridOffset mode) {
  return mode == GridOffset::centered ? 0.5 * (n + 1) : 0.5 * n;
}

}  // namespace

Vector grid_point(const Vector& theta, double delta, int n, int i, int j, GridOffset mode) {
  const double c = lattice_center(n, mode);
  Vector p = theta;
  p[0] -= delta * (i - c);
  p[1] -= delta * (j - c);
  return p;
}

GridSample grid_sample(const ScalarField& f, const Vector& theta, double delta, int n, Rng* rng,
                       GridOffset mode) {
  if (f.dim() != 2 || theta.size() != 2) throw InvalidArgument("grid_sample: field must be 2D");
  if (!(delta > 0.0) || !std::isfinite(delta)) throw InvalidArgument("grid_sample: delta must be > 0");
  if (n < 2) throw InvalidArgument("grid_sample: n must be >= 2");
  GridSample g;
  g.raw.resize(n, n);
  g.center = theta;
  g.resolution = delta;
  g.n = n;
  const double c = lattice_center(n, mode);
  Vector p(2);
  for (int i = 1; i <= n; ++i) {
    for (int j = 1; j <= n; ++j) {
      p[0] = theta[0] - delta * (i - c);
      p[1] = theta[1] - delta * (j - c);
      const double v = f.observe(p, rng);
      if (!std::isfinite(v)) {
        Vector offset(2);
        offset << -delta * (i - c), -delta * (j - c);
        std::ostringstream msg;
        msg << "non-finite field value at grid offset (" << offset[0] << ", " << offset[1] << ")";
        throw ObservationError(msg.str(), offset);
      }
      g.raw(i - 1, j - 1) = v;
    }
  }
  g.normalized = normalize_grid(g.raw);
  return g;
}

// ---------------------------------------------------------------------------

SliceField::SliceField(FieldPtr parent, Vector theta, std::size_t i, std::size_t j)
    : parent_(std::move(parent)), theta_(std::move(theta)), i_(i), j_(j) {}

Vector SliceField::embed(const Vector& uv) const {
  Vector x = theta_;
  x[static_cast<Eigen::Index>(i_)] += uv[0];
  x[static_cast<Eigen::Index>(j_)] += uv[1];
  return x;
}

double SliceField::value(const Vector& uv) const { return parent_->value(embed(uv)); }

double SliceField::observe(const Vector& uv, Rng* rng) const {
  return parent_->observe(embed(uv), rng);
}

std::string SliceField::name() const {
  return parent_->name() + "[" + std::to_string(i_) + "," + std::to_string(j_) + "]";
}

namespace {

void check_pair(std::size_t i, std::size_t j, std::size_t d) {
  if (i == j) throw InvalidArgument("slice pair needs distinct dimensions");
  if (i > j) throw InvalidArgument("slice pair must be ordered i < j");
  if (j >= d) throw InvalidArgument("slice pair index out of range");
}

}  // namespace

std::shared_ptr<const SliceField> slice_field(FieldPtr f, const Vector& theta, std::size_t i,
                                              std::size_t j) {
  if (!f) throw InvalidArgument("slice_field: null field");
  check_pair(i, j, f->dim());
  if (static_cast<std::size_t>(theta.size()) != f->dim())
    throw InvalidArgument("slice_field: theta has the wrong dimension");
  return std::make_shared<SliceField>(std::move(f), theta, i, j);
}

Vector embed_direction(const Vector& dir2, std::size_t i, std::size_t j, std::size_t d) {
  check_pair(i, j, d);
  if (dir2.size() != 2) throw InvalidArgument("embed_direction: expected a 2-vector");
  Vector out = Vector::Zero(static_cast<Eigen::Index>(d));
  out[static_cast<Eigen::Index>(i)] = dir2[0];
  out[static_cast<Eigen::Index>(j)] = dir2[1];
  return out;
}

void write_grid_csv(std::ostream& out, const GridSample& grid) {
  out << std::setprecision(17);
  out << "theta";
  for (Eigen::Index k = 0; k < grid.center.size(); ++k) out << ',' << grid.center[k];
  out << "\ndelta," << grid.resolution << "\nn," << grid.n << '\n';
  for (Eigen::Index r = 0; r < grid.raw.rows(); ++r) {
    for (Eigen::Index c = 0; c < grid.raw.cols(); ++c) {
      if (c) out << ',';
      out << grid.raw(r, c);
    }
    out << '\n';
  }
}

}  // namespace rover
