#include "rover/protogen.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace rover;

namespace {

Vector v2(double a, double b) {
  Vector v(2);
  v << a, b;
  return v;
}

constexpr double kTwoPi = 2.0 * std::numbers::pi;

}  // namespace

TEST(Covariance, VerbatimFormValues) {
  Matrix s(2, 2);
  s << 2.0, 0.3, 0.3, 1.0;
  const double norm = 1.0 / std::sqrt((kTwoPi * s).determinant());
  EXPECT_NEAR(covariance(v2(0, 0), v2(1, 2), s, CovarianceForm::verbatim), norm, 1e-15);
  EXPECT_NEAR(covariance(v2(-1, 4), v2(0, 0), s, CovarianceForm::verbatim), norm, 1e-15);
  const Matrix id = Matrix::Identity(2, 2);
  EXPECT_NEAR(covariance(v2(1, 0), v2(1, 0), id, CovarianceForm::verbatim),
              std::exp(-0.5) / kTwoPi, 1e-15);
}

TEST(Covariance, StandardFormValues) {
  const Matrix id = Matrix::Identity(2, 2);
  EXPECT_NEAR(covariance(v2(1, 0), v2(1, 0), id), 1.0 / kTwoPi, 1e-15);
  EXPECT_NEAR(covariance(v2(1, 0), v2(0, 0), id), std::exp(-0.5) / kTwoPi, 1e-15);
  // shift invariance
  EXPECT_NEAR(covariance(v2(3, 1), v2(2, 1), id), covariance(v2(1, 0), v2(0, 0), id), 1e-15);
}

TEST(Covariance, Symmetric) {
  Rng rng(1);
  Matrix s(2, 2);
  s << 1.5, -0.4, -0.4, 0.7;
  for (auto form : {CovarianceForm::standard, CovarianceForm::verbatim}) {
    for (int k = 0; k < 100; ++k) {
      const Vector a = v2(rng.normal(), rng.normal());
      const Vector b = v2(rng.normal(), rng.normal());
      EXPECT_DOUBLE_EQ(covariance(a, b, s, form), covariance(b, a, s, form));
    }
  }
}

TEST(Covariance, RejectsNonPositiveDefinite) {
  Matrix s(2, 2);
  s << 1.0, 2.0, 2.0, 1.0;
  EXPECT_THROW(covariance(v2(0, 0), v2(0, 0), s), InvalidArgument);
  s << 1.0, 0.5, 0.0, 1.0;
  EXPECT_THROW(covariance(v2(0, 0), v2(0, 0), s), InvalidArgument);
}

TEST(GpConditional, InterpolatesAnchors) {
  Rng rng(4);
  for (int k = 0; k < 20; ++k) {
    const auto f = sample_proto(Modality::saddle, rng);
    const auto& anchors = f->surface()->anchors();
    for (std::size_t i = 0; i < anchors.points.size(); ++i)
      EXPECT_NEAR(gp_conditional(anchors, anchors.points[i], nullptr), anchors.values[i], 1e-6);
  }
  for (auto m : {Modality::valley, Modality::plateau_cliff}) {
    const auto f = sample_proto(m, 9);
    const auto& a = f->surface()->anchors();
    EXPECT_NEAR(f->value(a.points[0]), a.values[0], 1e-6);
  }
}

TEST(GpConditional, DecaysFarFromAnchor) {
  AnchorSet a{{v2(0, 0)}, Vector::Constant(1, -5.0), Matrix::Identity(2, 2)};
  EXPECT_NEAR(gp_conditional(a, v2(50, -40), nullptr), 0.0, 1e-12);
}

TEST(GpConditional, VarianceBounded) {
  const auto f = sample_proto(Modality::saddle, 12);
  const auto& gp = *f->surface();
  Rng rng(5);
  for (int k = 0; k < 200; ++k) {
    const Vector x = v2(rng.uniform(-2, 2), rng.uniform(-2, 2));
    const double var = gp.variance(x);
    EXPECT_GE(var, 0.0);
    EXPECT_LE(var, covariance(x, x, gp.anchors().scale) * (1 + 1e-12));
  }
}

TEST(SampleProto, ValleyRatio) {
  Rng rng(6);
  for (int k = 0; k < 100; ++k) {
    const auto f = sample_proto(Modality::valley, rng);
    Eigen::SelfAdjointEigenSolver<Matrix> es(f->surface()->anchors().scale);
    const double ratio = es.eigenvalues()[1] / es.eigenvalues()[0];
    EXPECT_GE(ratio, 100.0 - 1e-6);
    EXPECT_LE(ratio, 200.0 + 1e-6);
  }
}

TEST(SampleProto, ValleyAnisotropy) {
  Rng rng(7);
  for (int k = 0; k < 100; ++k) {
    const auto f = sample_proto(Modality::valley, rng);
    const Matrix h = finite_difference_hessian(*f, f->surface()->anchors().points[0], 1e-3);
    Eigen::SelfAdjointEigenSolver<Matrix> es(h);
    const auto ev = es.eigenvalues().cwiseAbs();
    EXPECT_GT(ev.maxCoeff() / ev.minCoeff(), 10.0);
  }
}

TEST(SampleProto, QuadraticMinimum) {
  Rng rng(8);
  for (int k = 0; k < 20; ++k) {
    const auto f = sample_proto(Modality::quadratic, rng);
    const auto m = f->known_minimum();
    ASSERT_TRUE(m);
    Eigen::JacobiSVD<Matrix> svd(f->quadratic_a());
    EXPECT_LE(svd.singularValues()[0] / svd.singularValues()[1], 50.0);
    for (int j = 0; j < 100; ++j)
      EXPECT_LE(m->value, f->value(v2(rng.normal(0, 3), rng.normal(0, 3))));
  }
}

TEST(SampleProto, SaddleSignPattern) {
  Rng rng(9);
  for (int k = 0; k < 50; ++k) {
    const auto f = sample_proto(Modality::saddle, rng);
    const auto& a = f->surface()->anchors();
    ASSERT_EQ(a.points.size(), 4u);
    for (int i = 0; i < 4; ++i) {
      const double mean = f->value(a.points[i]);
      if (i % 2 == 0)
        EXPECT_GE(mean, -1e-6);
      else
        EXPECT_LE(mean, 1e-6);
    }
  }
}

TEST(SampleProto, PlateauAnchorNegative) {
  Rng rng(10);
  for (int k = 0; k < 50; ++k) {
    const auto f = sample_proto(Modality::plateau_cliff, rng);
    EXPECT_LT(f->surface()->anchors().values[0], 0.0);
  }
}

TEST(SampleProto, SeededReproducible) {
  for (auto m : kAllModalities) {
    const auto a = sample_proto(m, 1234);
    const auto b = sample_proto(m, 1234);
    Rng rng(1);
    for (int k = 0; k < 20; ++k) {
      const Vector x = v2(rng.normal(), rng.normal());
      EXPECT_EQ(a->value(x), b->value(x));
      EXPECT_EQ(a->value(x), a->value(x));
    }
  }
}

TEST(SampleProto, VerbatimFormBuilds) {
  ProtoConfig cfg;
  cfg.form = CovarianceForm::verbatim;
  for (auto m : {Modality::valley, Modality::saddle, Modality::plateau_cliff}) {
    const auto f = sample_proto(m, 21, cfg);
    EXPECT_TRUE(std::isfinite(f->value(v2(0.3, -0.2))));
  }
}

TEST(SampleProto, NoisyObservationsVary) {
  ProtoConfig cfg;
  cfg.noisy = true;
  const auto f = sample_proto(Modality::saddle, 3, cfg);
  Rng rng(2);
  const Vector x = v2(0.2, 0.1);
  EXPECT_NE(f->observe(x, &rng), f->observe(x, &rng));
  EXPECT_EQ(f->observe(x, nullptr), f->value(x));
}

TEST(Modality, NamesRoundTrip) {
  for (auto m : kAllModalities) EXPECT_EQ(parse_modality(to_string(m)), m);
  EXPECT_THROW(parse_modality("ridge"), InvalidArgument);
}
