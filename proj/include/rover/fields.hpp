#pragma once

// Scalar-field oracles: the six analytic meta-test functions, finite
// differences, and the two supervised-learning losses used in the
// high-dimensional experiments.

#include "rover/core.hpp"

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace rover {

struct KnownMinimum {
  Vector point;
  double value = 0.0;
};

/// A d-dimensional real-valued oracle. `value` is always the noiseless
/// surface; `observe` adds whatever observation noise the field carries,
/// drawn from a caller-owned stream.
class ScalarField {
 public:
  virtual ~ScalarField() = default;

  virtual std::size_t dim() const = 0;
  virtual double value(const Vector& x) const = 0;

  virtual std::optional<Vector> gradient(const Vector&) const { return std::nullopt; }
  virtual std::optional<Matrix> hessian(const Vector&) const { return std::nullopt; }
  virtual std::optional<KnownMinimum> known_minimum() const { return std::nullopt; }

  virtual double noise_sigma() const { return 0.0; }

  /// Value seen by a zeroth-order agent. Noise is only added when the field
  /// is noisy and a stream is supplied.
  virtual double observe(const Vector& x, Rng* rng) const {
    const double v = value(x);
    if (rng != nullptr && noise_sigma() > 0.0) return v + noise_sigma() * rng->normal();
    return v;
  }

  virtual std::string name() const { return "field"; }
};

using FieldPtr = std::shared_ptr<const ScalarField>;

/// Field assembled from callables; used for ad hoc surfaces in tests and
/// for the analytic meta-test functions.
class FunctionField : public ScalarField {
 public:
  using ValueFn = std::function<double(const Vector&)>;
  using GradFn = std::function<Vector(const Vector&)>;
  using HessFn = std::function<Matrix(const Vector&)>;

  FunctionField(std::string name, std::size_t dim, ValueFn value, GradFn grad = {},
                HessFn hess = {}, std::optional<KnownMinimum> minimum = std::nullopt,
                double noise_sigma = 0.0);

  std::size_t dim() const override { return dim_; }
  double value(const Vector& x) const override { return value_(x); }
  std::optional<Vector> gradient(const Vector& x) const override;
  std::optional<Matrix> hessian(const Vector& x) const override;
  std::optional<KnownMinimum> known_minimum() const override { return minimum_; }
  double noise_sigma() const override { return noise_sigma_; }
  std::string name() const override { return name_; }

 private:
  std::string name_;
  std::size_t dim_;
  ValueFn value_;
  GradFn grad_;
  HessFn hess_;
  std::optional<KnownMinimum> minimum_;
  double noise_sigma_;
};

/// Wraps a field with additive Gaussian observation noise.
class NoisyField : public ScalarField {
 public:
  NoisyField(FieldPtr base, double sigma);

  std::size_t dim() const override { return base_->dim(); }
  double value(const Vector& x) const override { return base_->value(x); }
  std::optional<Vector> gradient(const Vector& x) const override { return base_->gradient(x); }
  std::optional<Matrix> hessian(const Vector& x) const override { return base_->hessian(x); }
  std::optional<KnownMinimum> known_minimum() const override { return base_->known_minimum(); }
  double noise_sigma() const override { return sigma_; }
  std::string name() const override { return base_->name() + "+noise"; }

 private:
  FieldPtr base_;
  double sigma_;
};

const std::vector<std::string>& test_function_names();

/// One of rosenbrock, ackley, rastrigin, maccornick, styblinski, beale.
FieldPtr make_test_function(const std::string& name);

Vector finite_difference_gradient(const ScalarField& f, const Vector& theta, double h = 1e-5);

/// Second-order central stencil, symmetrized.
Matrix finite_difference_hessian(const ScalarField& f, const Vector& theta, double h = 1e-4);

/// Analytic gradient when the field has one, central differences otherwise.
Vector gradient_or_fd(const ScalarField& f, const Vector& theta, double h = 1e-5);
Matrix hessian_or_fd(const ScalarField& f, const Vector& theta, double h = 1e-4);

// ---------------------------------------------------------------------------
// Binary classification
// ---------------------------------------------------------------------------

struct ClassificationTask {
  Matrix features;     // m x d
  Vector labels;       // m values in {0, 1}
  std::uint64_t seed = 0;
};

/// Two identity-covariance Gaussian clusters split along a random unit
/// direction; separation drawn from U[1, 3]. Regenerates (seed + 1, ...) when
/// a draw leaves one class empty, giving up after 10 attempts.
ClassificationTask make_classification_task(std::size_t d, std::size_t m, std::uint64_t seed);

/// Mean logistic cross-entropy over (weights, bias); dimension d + 1.
class LogisticLossField : public ScalarField {
 public:
  explicit LogisticLossField(ClassificationTask task);

  std::size_t dim() const override { return static_cast<std::size_t>(task_.features.cols()) + 1; }
  double value(const Vector& params) const override;
  std::optional<Vector> gradient(const Vector& params) const override;
  std::optional<Matrix> hessian(const Vector& params) const override;
  std::string name() const override { return "binary_classification"; }

  const ClassificationTask& task() const { return task_; }

 private:
  ClassificationTask task_;
};

FieldPtr make_binary_classification_field(std::size_t d, std::size_t m, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Iris MLP
// ---------------------------------------------------------------------------

struct IrisData {
  Matrix features;                 // 150 x 4, z-scored per column
  std::vector<int> labels;         // 0, 1, 2
};

IrisData load_iris_csv(const std::filesystem::path& path);

/// Cross-entropy of a 4-10-10-3 tanh network with softmax output, as a
/// function of its 193 flattened parameters. Layout per layer: weights
/// (row-major, out x in) then biases.
class IrisMlpField : public ScalarField {
 public:
  static constexpr std::size_t kInput = 4;
  static constexpr std::size_t kHidden = 10;
  static constexpr std::size_t kClasses = 3;
  static constexpr std::size_t kParamCount =
      kInput * kHidden + kHidden + kHidden * kHidden + kHidden + kHidden * kClasses + kClasses;

  explicit IrisMlpField(IrisData data);

  std::size_t dim() const override { return kParamCount; }
  double value(const Vector& params) const override;
  std::optional<Vector> gradient(const Vector& params) const override;
  std::string name() const override { return "iris_mlp"; }

  /// Parameter indices grouped by layer (weights and bias of one layer).
  std::vector<std::vector<std::size_t>> layer_blocks() const;

 private:
  IrisData data_;
};

FieldPtr make_iris_mlp_field(const std::filesystem::path& dataset_path);

}  // namespace rover
