#include "rover/protogen.hpp"

#include <algorithm>
#include <limits>

namespace rover {

std::string to_string(Modality m) {
  switch (m) {
    case Modality::quadratic: return "quadratic";
    case Modality::valley: return "valley";
    case Modality::saddle: return "saddle";
    case Modality::plateau_cliff: return "plateau_cliff";
  }
  return "unknown";
}

Modality parse_modality(const std::string& name) {
  for (Modality m : kAllModalities)
    if (to_string(m) == name) return m;
  throw InvalidArgument("unknown modality '" + name + "'");
}

Matrix rotation(double phi) {
  Matrix r(2, 2);
  r << std::cos(phi), -std::sin(phi), std::sin(phi), std::cos(phi);
  return r;
}

namespace {

void require_spd(const Matrix& s) {
  if (s.rows() != s.cols() || s.rows() == 0) throw InvalidArgument("covariance: S must be square");
  if (!s.isApprox(s.transpose(), 1e-12)) throw InvalidArgument("covariance: S must be symmetric");
  Eigen::SelfAdjointEigenSolver<Matrix> eig(s);
  if (eig.eigenvalues().minCoeff() <= 0.0)
    throw InvalidArgument("covariance: S must be positive definite");
}

}  // namespace

GaussianKernel::GaussianKernel(const Matrix& scale, CovarianceForm form) : form_(form) {
  require_spd(scale);
  if (scale.rows() != 2) throw InvalidArgument("covariance: S must be 2x2");
  inverse_ = Eigen::Matrix2d(scale).inverse();
  norm_ = 1.0 / std::sqrt((2.0 * std::numbers::pi * scale).determinant());
}

double GaussianKernel::operator()(const Vector& x, const Vector& xp) const {
  const Eigen::Vector2d a(x[0], x[1]);
  const Eigen::Vector2d b(xp[0], xp[1]);
  const double q = form_ == CovarianceForm::verbatim ? a.dot(inverse_ * b)
                                                      : (a - b).dot(inverse_ * (a - b));
  return norm_ * std::exp(-0.5 * q);
}

double covariance(const Vector& x, const Vector& xp, const Matrix& scale, CovarianceForm form) {
  return GaussianKernel(scale, form)(x, xp);
}

// ---------------------------------------------------------------------------

namespace {
constexpr double kRelativeJitter = 1e-12;
}  // namespace

GaussianProcessSurface::GaussianProcessSurface(AnchorSet anchors, CovarianceForm form)
    : anchors_(std::move(anchors)), form_(form), kernel_(anchors_.scale, form) {
  const std::size_t k = anchors_.points.size();
  if (k == 0 || static_cast<std::size_t>(anchors_.values.size()) != k)
    throw InvalidArgument("anchor set needs matching, nonempty points and values");
  Matrix gram(k, k);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j)
      gram(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          kernel_(anchors_.points[i], anchors_.points[j]);
  // jitter relative to the kernel amplitude
  const double amplitude = gram.diagonal().maxCoeff();
  gram.diagonal().array() += kRelativeJitter * amplitude;
  gram_.compute(gram);
  if (!gram_.isInvertible()) throw GenerationError("anchor Gram matrix is singular");
  weights_ = gram_.solve(anchors_.values);
  if (!weights_.allFinite()) throw GenerationError("anchor Gram matrix is singular");
}

Vector GaussianProcessSurface::cross(const Vector& x) const {
  const std::size_t k = anchors_.points.size();
  Vector out(static_cast<Eigen::Index>(k));
  for (std::size_t i = 0; i < k; ++i)
    out[static_cast<Eigen::Index>(i)] = kernel_(x, anchors_.points[i]);
  return out;
}

double GaussianProcessSurface::mean(const Vector& x) const { return cross(x).dot(weights_); }

double GaussianProcessSurface::variance(const Vector& x) const {
  const Vector kx = cross(x);
  const double prior = kernel_(x, x);
  return std::max(0.0, prior - kx.dot(gram_.solve(kx)));
}

double GaussianProcessSurface::sample(const Vector& x, Rng& rng) const {
  const Vector kx = cross(x);
  const double prior = kernel_(x, x);
  const double var = std::max(0.0, prior - kx.dot(gram_.solve(kx)));
  return kx.dot(weights_) + std::sqrt(var) * rng.normal();
}

double gp_conditional(const AnchorSet& anchors, const Vector& x, Rng* rng, CovarianceForm form) {
  const GaussianProcessSurface surface(anchors, form);
  return rng ? surface.sample(x, *rng) : surface.mean(x);
}

// ---------------------------------------------------------------------------

ProtoField::ProtoField(Matrix a, Vector b, const ProtoConfig& config, std::uint64_t seed)
    : modality_(Modality::quadratic), seed_(seed), noisy_(config.noisy), a_(std::move(a)),
      b_(std::move(b)) {
  if (noisy_) noise_sigma_ = config.noise_fraction * b_.squaredNorm();
  locate_minimum();
}

ProtoField::ProtoField(Modality modality, AnchorSet anchors, const ProtoConfig& config,
                       std::uint64_t seed)
    : modality_(modality), seed_(seed), noisy_(config.noisy) {
  if (modality == Modality::quadratic)
    throw InvalidArgument("quadratic bowls are built from (A, b), not anchors");
  const double scale = anchors.values.cwiseAbs().maxCoeff();
  surface_.emplace(std::move(anchors), config.form);
  if (noisy_) noise_sigma_ = config.noise_fraction * scale;
  locate_minimum();
}

double ProtoField::value(const Vector& x) const {
  if (surface_) return surface_->mean(x);
  return (a_ * x - b_).squaredNorm();
}

std::optional<Vector> ProtoField::gradient(const Vector& x) const {
  if (surface_) return std::nullopt;
  return Vector(2.0 * a_.transpose() * (a_ * x - b_));
}

std::optional<Matrix> ProtoField::hessian(const Vector&) const {
  if (surface_) return std::nullopt;
  return Matrix(2.0 * a_.transpose() * a_);
}

double ProtoField::observe(const Vector& x, Rng* rng) const {
  if (!noisy_ || rng == nullptr) return value(x);
  const double base = surface_ ? surface_->sample(x, *rng) : value(x);
  return base + noise_sigma_ * rng->normal();
}

Vector ProtoField::center() const {
  if (!surface_) return minimum_->point;
  Vector c = Vector::Zero(2);
  for (const auto& p : surface_->anchors().points) c += p;
  return c / static_cast<double>(surface_->anchors().points.size());
}

void ProtoField::locate_minimum() {
  if (!surface_) {
    const Vector x = a_.colPivHouseholderQr().solve(b_);
    minimum_ = KnownMinimum{x, value(x)};
    return;
  }
  const auto& anchors = surface_->anchors();
  if (anchors.points.size() == 1 && anchors.values[0] <= 0.0 &&
      surface_->form() == CovarianceForm::standard) {
    // a single negative anchor is the bottom of a Gaussian well
    minimum_ = KnownMinimum{anchors.points[0], value(anchors.points[0])};
    return;
  }
  // dense scan over the region where the kernel is non-negligible, then a
  // few rounds of local grid refinement around the best cell
  Eigen::SelfAdjointEigenSolver<Matrix> eig(anchors.scale);
  double reach = 0.0;
  for (const auto& p : anchors.points) reach = std::max(reach, p.norm());
  reach += 4.0 * std::sqrt(eig.eigenvalues().maxCoeff());
  Vector best = Vector::Zero(2);
  double best_value = std::numeric_limits<double>::infinity();
  Vector x(2);
  const int steps = 200;
  double cell = 2.0 * reach / steps;
  for (int i = 0; i <= steps; ++i) {
    for (int j = 0; j <= steps; ++j) {
      x << -reach + i * cell, -reach + j * cell;
      const double v = value(x);
      if (v < best_value) {
        best_value = v;
        best = x;
      }
    }
  }
  for (int round = 0; round < 12; ++round) {
    const Vector c = best;
    for (int i = -10; i <= 10; ++i) {
      for (int j = -10; j <= 10; ++j) {
        x << c[0] + i * cell / 10.0, c[1] + j * cell / 10.0;
        const double v = value(x);
        if (v < best_value) {
          best_value = v;
          best = x;
        }
      }
    }
    cell /= 5.0;
  }
  minimum_ = KnownMinimum{best, best_value};
}

// ---------------------------------------------------------------------------

namespace {

constexpr double kLambdaMean = 10.0;
const double kLambdaStd = std::sqrt(2.0);  // variance 2

Matrix rotated_scale(double l1, double l2, double phi) {
  const Matrix r = rotation(phi);
  Matrix d = Matrix::Zero(2, 2);
  d(0, 0) = l1;
  d(1, 1) = l2;
  Matrix s = r.transpose() * d * r;
  return 0.5 * (s + s.transpose());
}

}  // namespace

ProtoPtr sample_proto(Modality modality, std::uint64_t seed, const ProtoConfig& config) {
  Rng rng(seed);
  constexpr double two_pi = 2.0 * std::numbers::pi;
  switch (modality) {
    case Modality::quadratic: {
      Matrix a(2, 2);
      for (int attempt = 0;; ++attempt) {
        for (int i = 0; i < 4; ++i) a(i / 2, i % 2) = rng.normal();
        Eigen::JacobiSVD<Matrix> svd(a);
        const auto sv = svd.singularValues();
        if (sv[1] > 0.0 && sv[0] / sv[1] <= 50.0) break;
        if (attempt > 10000) throw GenerationError("quadratic: conditioning rejection failed");
      }
      Vector b(2);
      b << rng.normal(), rng.normal();
      return std::make_shared<ProtoField>(a, b, config, seed);
    }
    case Modality::valley: {
      AnchorSet anchors;
      anchors.points = {Vector::Zero(2)};
      anchors.values = Vector::Constant(1, rng.uniform(-5.0, 0.0));
      const double l1 = rng.positive_normal(kLambdaMean, kLambdaStd);
      const double ratio = rng.uniform(100.0, 200.0);
      const double phi = rng.uniform(0.0, two_pi);
      anchors.scale = rotated_scale(l1, ratio * l1, phi);
      return std::make_shared<ProtoField>(modality, anchors, config, seed);
    }
    case Modality::saddle: {
      AnchorSet anchors;
      // quadrants I..IV with signs +, -, +, - so opposite corners agree
      const double sx[4] = {1, -1, -1, 1};
      const double sy[4] = {1, 1, -1, -1};
      const double sign[4] = {1, -1, 1, -1};
      anchors.values.resize(4);
      for (int q = 0; q < 4; ++q) {
        Vector p(2);
        p << sx[q] * rng.uniform(), sy[q] * rng.uniform();
        anchors.points.push_back(p);
        anchors.values[q] = sign[q] * std::abs(rng.normal(0.0, 3.0));
      }
      const double l1 = rng.positive_normal(kLambdaMean, kLambdaStd);
      const double l2 = rng.positive_normal(kLambdaMean, kLambdaStd);
      anchors.scale = rotated_scale(l1, l2, rng.uniform(0.0, two_pi));
      return std::make_shared<ProtoField>(modality, anchors, config, seed);
    }
    case Modality::plateau_cliff: {
      AnchorSet anchors;
      anchors.points = {Vector::Zero(2)};
      anchors.values = Vector::Constant(1, -std::abs(rng.positive_normal(5.0, kLambdaStd)));
      const double l1 = rng.positive_normal(kLambdaMean, kLambdaStd);
      const double l2 = rng.positive_normal(kLambdaMean, kLambdaStd);
      anchors.scale = rotated_scale(l1, l2, rng.uniform(0.0, two_pi));
      return std::make_shared<ProtoField>(modality, anchors, config, seed);
    }
  }
  throw InvalidArgument("unknown modality");
}

ProtoPtr sample_proto(Modality modality, Rng& rng, const ProtoConfig& config) {
  return sample_proto(modality, rng.next_u64(), config);
}

}  // namespace rover
