#include "rover/gridsense.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace rover;

namespace {

Vector v2(double a, double b) {
  Vector v(2);
  v << a, b;
  return v;
}

FieldPtr bowl(std::size_t d = 2) {
  return std::make_shared<FunctionField>("bowl", d, [](const Vector& x) { return x.squaredNorm(); });
}

}  // namespace

TEST(GridSample, StrictOffsetsSmallBowl) {
  const auto g = grid_sample(*bowl(), v2(0, 0), 1.0, 3, nullptr, GridOffset::strict);
  // offsets i - 1.5 in {-0.5, 0.5, 1.5}, sampled at theta minus offset
  EXPECT_DOUBLE_EQ(g.raw(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(g.raw(0, 2), 2.5);
  EXPECT_DOUBLE_EQ(g.raw(2, 0), 2.5);
  EXPECT_DOUBLE_EQ(g.raw(2, 2), 4.5);
  EXPECT_DOUBLE_EQ(g.normalized(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(g.normalized(2, 2), 1.0);
  EXPECT_DOUBLE_EQ(g.normalized(0, 2), 0.5);
}

TEST(GridSample, CenteredPutsThetaInTheMiddle) {
  const auto f = make_test_function("beale");
  const Vector theta = v2(0.7, -0.3);
  const auto g = grid_sample(*f, theta, 0.2);
  EXPECT_EQ(g.n, 15);
  EXPECT_DOUBLE_EQ(g.raw(7, 7), f->value(theta));
}

TEST(GridSample, ConstantFieldIsHalf) {
  FunctionField c("c", 2, [](const Vector&) { return 4.0; });
  const auto g = grid_sample(c, v2(1, 1), 0.1, 5);
  EXPECT_TRUE((g.normalized.array() == 0.5).all());
}

TEST(GridSample, AffineInvariance) {
  const auto f = make_test_function("rosenbrock");
  FunctionField h("h", 2, [&](const Vector& x) { return 3.0 * f->value(x) + 7.0; });
  const auto a = grid_sample(*f, v2(-0.5, 0.8), 0.05);
  const auto b = grid_sample(h, v2(-0.5, 0.8), 0.05);
  EXPECT_LT((a.normalized - b.normalized).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_DOUBLE_EQ(a.normalized.minCoeff(), 0.0);
  EXPECT_DOUBLE_EQ(a.normalized.maxCoeff(), 1.0);
}

TEST(GridSample, RoundTripIsExact) {
  const auto f = make_test_function("ackley");
  const Vector theta = v2(0.31, 1.7);
  for (int n : {4, 7}) {
    const auto g = grid_sample(*f, theta, 0.13, n, nullptr, GridOffset::strict);
    for (int i = 1; i <= n; ++i)
      for (int j = 1; j <= n; ++j)
        EXPECT_EQ(g.raw(i - 1, j - 1),
                  f->value(grid_point(theta, 0.13, n, i, j, GridOffset::strict)));
  }
}

TEST(GridSample, TranslationCovariance) {
  const auto f = make_test_function("styblinski");
  const Vector c = v2(0.5, -0.25);
  FunctionField shifted("s", 2, [&](const Vector& x) { return f->value(x - c); });
  const Vector theta = v2(1.0, 0.5);
  const auto a = grid_sample(*f, theta, 0.25, 9);
  const auto b = grid_sample(shifted, theta + c, 0.25, 9);
  EXPECT_LT((a.raw - b.raw).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(GridSample, NonFiniteCarriesOffset) {
  FunctionField bad("bad", 2, [](const Vector& x) { return x[0] > 0.5 ? std::nan("") : 0.0; });
  try {
    grid_sample(bad, v2(0, 0), 0.1, 15);
    FAIL();
  } catch (const ObservationError& e) {
    EXPECT_GT(e.offset[0], 0.5);
  }
}

TEST(GridSample, RejectsBadArguments) {
  EXPECT_THROW(grid_sample(*bowl(3), Vector::Zero(3), 0.1), InvalidArgument);
  EXPECT_THROW(grid_sample(*bowl(), v2(0, 0), 0.0), InvalidArgument);
  EXPECT_THROW(grid_sample(*bowl(), v2(0, 0), 0.1, 1), InvalidArgument);
}

TEST(SliceField, Basics) {
  Vector theta = Vector::Zero(3);
  theta[2] = 1.0;
  const auto g = slice_field(bowl(3), theta, 0, 1);
  EXPECT_DOUBLE_EQ(g->value(v2(0.5, -2)), 0.25 + 4 + 1);
  EXPECT_DOUBLE_EQ(g->value(v2(0, 0)), 1.0);
  FieldPtr linear = std::make_shared<FunctionField>("lin", 4, [](const Vector& x) {
    return x[0] - 2 * x[1] + 3 * x[2] + x[3];
  });
  const auto s = slice_field(linear, Vector::Ones(4), 1, 3);
  EXPECT_NEAR(s->value(v2(1, 1)) - s->value(v2(0, 0)), -2 + 1, 1e-12);
  EXPECT_NEAR(s->value(v2(2, 2)) - s->value(v2(0, 0)), 2 * (-2 + 1), 1e-12);
  EXPECT_THROW(slice_field(bowl(3), theta, 1, 1), InvalidArgument);
  EXPECT_THROW(slice_field(bowl(3), theta, 2, 1), InvalidArgument);
  EXPECT_THROW(slice_field(bowl(3), theta, 1, 3), InvalidArgument);
}

TEST(SliceField, GridAtOriginMatchesParent) {
  Rng rng(1);
  Vector theta(5);
  for (int k = 0; k < 5; ++k) theta[k] = rng.normal();
  const auto parent = bowl(5);
  const auto g = grid_sample(*slice_field(parent, theta, 1, 4), v2(0, 0), 0.3, 5);
  Vector p = theta;
  p[1] -= 0.3 * (1 - 3);
  p[4] -= 0.3 * (5 - 3);
  EXPECT_DOUBLE_EQ(g.raw(0, 4), parent->value(p));
}

TEST(EmbedDirection, Basics) {
  const Vector e = embed_direction(v2(1, 2), 0, 2, 4);
  Vector expected(4);
  expected << 1, 0, 2, 0;
  EXPECT_EQ(e, expected);
  EXPECT_EQ(embed_direction(v2(0, 0), 1, 3, 5).norm(), 0.0);
  const Vector back = v2(e[0], e[2]);
  EXPECT_EQ(back, v2(1, 2));
  EXPECT_THROW(embed_direction(v2(1, 1), 2, 2, 4), InvalidArgument);
}

TEST(GridCsv, Header) {
  const auto g = grid_sample(*bowl(), v2(1, 2), 0.5, 3);
  std::ostringstream out;
  write_grid_csv(out, g);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "theta,1,2");
  std::getline(in, line);
  EXPECT_EQ(line, "delta,0.5");
  std::getline(in, line);
  EXPECT_EQ(line, "n,3");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 3);
}
