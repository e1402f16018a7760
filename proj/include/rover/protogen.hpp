#pragma once

// Prototypical training landscapes: quadratic bowls plus Gaussian-process
// conditional surfaces shaped into valleys, saddles and plateau/cliff wells.

#include "rover/fields.hpp"

#include <array>
#include <string>
#include <vector>

namespace rover {

enum class Modality { quadratic, valley, saddle, plateau_cliff };

inline constexpr std::array<Modality, 4> kAllModalities = {
    Modality::quadratic, Modality::valley, Modality::saddle, Modality::plateau_cliff};

std::string to_string(Modality m);
Modality parse_modality(const std::string& name);

/// `standard` is the shift-invariant exp(-1/2 (x-x')^T S^-1 (x-x')) kernel;
/// `verbatim` uses exp(-1/2 x^T S^-1 x') with the same normalization.
enum class CovarianceForm { standard, verbatim };

struct AnchorSet {
  std::vector<Vector> points;
  Vector values;
  Matrix scale;  // 2x2, symmetric positive definite
};

/// |2 pi S|^(-1/2) exp(-1/2 ...). Throws InvalidArgument when S is not
/// symmetric positive definite.
double covariance(const Vector& x, const Vector& xp, const Matrix& scale,
                  CovarianceForm form = CovarianceForm::standard);

/// Normalized Gaussian kernel with S^-1 and |2 pi S|^(-1/2) precomputed.
class GaussianKernel {
 public:
  GaussianKernel(const Matrix& scale, CovarianceForm form);
  double operator()(const Vector& x, const Vector& xp) const;
  double amplitude() const { return norm_; }

 private:
  Eigen::Matrix2d inverse_;
  double norm_;
  CovarianceForm form_;
};

/// Conditional Gaussian p(f(x) | anchors) with the Gram matrix factored once.
class GaussianProcessSurface {
 public:
  GaussianProcessSurface(AnchorSet anchors, CovarianceForm form);

  double mean(const Vector& x) const;
  /// Clamped at zero.
  double variance(const Vector& x) const;
  double sample(const Vector& x, Rng& rng) const;

  const AnchorSet& anchors() const { return anchors_; }
  CovarianceForm form() const { return form_; }

 private:
  Vector cross(const Vector& x) const;

  AnchorSet anchors_;
  CovarianceForm form_;
  GaussianKernel kernel_;
  Eigen::FullPivLU<Matrix> gram_;  // the verbatim kernel need not give a PSD Gram matrix
  Vector weights_;  // K^-1 V
};

/// One draw from the conditional at x, or its mean when rng is null.
double gp_conditional(const AnchorSet& anchors, const Vector& x, Rng* rng,
                      CovarianceForm form = CovarianceForm::standard);

struct ProtoConfig {
  CovarianceForm form = CovarianceForm::standard;
  /// Observations draw from the GP conditional and add Gaussian noise.
  bool noisy = false;
  /// Additive noise standard deviation relative to the largest anchor
  /// magnitude (or |b|^2 for quadratics).
  double noise_fraction = 0.01;
};

class ProtoField : public ScalarField {
 public:
  /// Quadratic bowl |A x - b|^2.
  ProtoField(Matrix a, Vector b, const ProtoConfig& config, std::uint64_t seed);
  /// Gaussian-process modality.
  ProtoField(Modality modality, AnchorSet anchors, const ProtoConfig& config, std::uint64_t seed);

  std::size_t dim() const override { return 2; }
  double value(const Vector& x) const override;
  std::optional<Vector> gradient(const Vector& x) const override;
  std::optional<Matrix> hessian(const Vector& x) const override;
  std::optional<KnownMinimum> known_minimum() const override { return minimum_; }
  double noise_sigma() const override { return noise_sigma_; }
  double observe(const Vector& x, Rng* rng) const override;
  std::string name() const override { return to_string(modality_); }

  Modality modality() const { return modality_; }
  std::uint64_t seed() const { return seed_; }
  /// Anchor centroid (GP modalities) or minimizer (quadratic).
  Vector center() const;
  const std::optional<GaussianProcessSurface>& surface() const { return surface_; }
  const Matrix& quadratic_a() const { return a_; }
  const Vector& quadratic_b() const { return b_; }

 private:
  void locate_minimum();

  Modality modality_;
  std::uint64_t seed_;
  bool noisy_;
  double noise_sigma_ = 0.0;
  Matrix a_;
  Vector b_;
  std::optional<GaussianProcessSurface> surface_;
  std::optional<KnownMinimum> minimum_;
};

using ProtoPtr = std::shared_ptr<const ProtoField>;

ProtoPtr sample_proto(Modality modality, std::uint64_t seed, const ProtoConfig& config = {});
ProtoPtr sample_proto(Modality modality, Rng& rng, const ProtoConfig& config = {});

/// 2x2 rotation matrix.
Matrix rotation(double phi);

}  // namespace rover
