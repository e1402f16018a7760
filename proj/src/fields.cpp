#include "rover/fields.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <sstream>

namespace rover {

FunctionField::FunctionField(std::string name, std::size_t dim, ValueFn value, GradFn grad,
                             HessFn hess, std::optional<KnownMinimum> minimum, double noise_sigma)
    : name_(std::move(name)),
      dim_(dim),
      value_(std::move(value)),
      grad_(std::move(grad)),
      hess_(std::move(hess)),
      minimum_(std::move(minimum)),
      noise_sigma_(noise_sigma) {
  if (dim_ == 0) throw InvalidArgument("FunctionField: dimension must be positive");
  if (noise_sigma_ < 0.0) throw InvalidArgument("FunctionField: negative noise sigma");
}

std::optional<Vector> FunctionField::gradient(const Vector& x) const {
  if (!grad_) return std::nullopt;
  return grad_(x);
}

std::optional<Matrix> FunctionField::hessian(const Vector& x) const {
  if (!hess_) return std::nullopt;
  return hess_(x);
}

NoisyField::NoisyField(FieldPtr base, double sigma) : base_(std::move(base)), sigma_(sigma) {
  if (!base_) throw InvalidArgument("NoisyField: null base field");
  if (sigma_ < 0.0) throw InvalidArgument("NoisyField: negative sigma");
}

// ---------------------------------------------------------------------------
// Meta-test functions
// ---------------------------------------------------------------------------

namespace {

constexpr double kPi = std::numbers::pi;

Vector vec2(double a, double b) {
  Vector v(2);
  v << a, b;
  return v;
}

Matrix mat2(double a, double b, double c, double d) {
  Matrix m(2, 2);
  m << a, b, c, d;
  return m;
}

FieldPtr rosenbrock() {
  auto f = [](const Vector& x) {
    const double a = x[1] - x[0] * x[0];
    const double b = x[0] - 1.0;
    return 100.0 * a * a + b * b;
  };
  auto g = [](const Vector& x) {
    const double a = x[1] - x[0] * x[0];
    return vec2(-400.0 * x[0] * a + 2.0 * (x[0] - 1.0), 200.0 * a);
  };
  auto h = [](const Vector& x) {
    return mat2(1200.0 * x[0] * x[0] - 400.0 * x[1] + 2.0, -400.0 * x[0], -400.0 * x[0], 200.0);
  };
  return std::make_shared<FunctionField>("rosenbrock", 2, f, g, h, KnownMinimum{vec2(1, 1), 0.0});
}

FieldPtr ackley() {
  auto f = [](const Vector& x) {
    const double r = std::sqrt(0.5 * (x[0] * x[0] + x[1] * x[1]));
    const double c = 0.5 * std::cos(2 * kPi * x[0]) + 0.5 * std::cos(2 * kPi * x[1]);
    return -20.0 * std::exp(-0.2 * r) - std::exp(c) + 20.0 + std::numbers::e;
  };
  auto g = [](const Vector& x) {
    const double r = std::sqrt(0.5 * (x[0] * x[0] + x[1] * x[1]));
    const double c = 0.5 * std::cos(2 * kPi * x[0]) + 0.5 * std::cos(2 * kPi * x[1]);
    Vector out = Vector::Zero(2);
    for (int i = 0; i < 2; ++i) {
      // radial term is not differentiable at the origin; report its limit 0
      if (r > 0.0) out[i] += 4.0 * std::exp(-0.2 * r) * 0.5 * x[i] / r;
      out[i] += kPi * std::sin(2 * kPi * x[i]) * std::exp(c);
    }
    return out;
  };
  return std::make_shared<FunctionField>("ackley", 2, f, g, FunctionField::HessFn{},
                                         KnownMinimum{vec2(0, 0), 0.0});
}

FieldPtr rastrigin() {
  auto f = [](const Vector& x) {
    double s = 20.0;
    for (int i = 0; i < 2; ++i) s += x[i] * x[i] - 10.0 * std::cos(2 * kPi * x[i]);
    return s;
  };
  auto g = [](const Vector& x) {
    Vector out(2);
    for (int i = 0; i < 2; ++i) out[i] = 2.0 * x[i] + 20.0 * kPi * std::sin(2 * kPi * x[i]);
    return out;
  };
  auto h = [](const Vector& x) {
    Matrix out = Matrix::Zero(2, 2);
    for (int i = 0; i < 2; ++i) out(i, i) = 2.0 + 40.0 * kPi * kPi * std::cos(2 * kPi * x[i]);
    return out;
  };
  return std::make_shared<FunctionField>("rastrigin", 2, f, g, h, KnownMinimum{vec2(0, 0), 0.0});
}

FieldPtr maccornick() {
  auto f = [](const Vector& x) {
    const double d = x[0] - x[1];
    return std::sin(x[0] + x[1]) + d * d - 1.5 * x[0] + 2.5 * x[1] + 1.0;
  };
  auto g = [](const Vector& x) {
    const double c = std::cos(x[0] + x[1]);
    const double d = x[0] - x[1];
    return vec2(c + 2.0 * d - 1.5, c - 2.0 * d + 2.5);
  };
  auto h = [](const Vector& x) {
    const double s = std::sin(x[0] + x[1]);
    return mat2(2.0 - s, -2.0 - s, -2.0 - s, 2.0 - s);
  };
  // Stationarity gives x0 - x1 = 1 and cos(x0 + x1) = -1/2; the minimum on
  // the customary [-1.5, 4] x [-3, 4] box sits at x0 + x1 = -2 pi / 3.
  const double s = -2.0 * kPi / 3.0;
  const Vector xmin = vec2((s + 1.0) / 2.0, (s - 1.0) / 2.0);
  return std::make_shared<FunctionField>("maccornick", 2, f, g, h, KnownMinimum{xmin, f(xmin)});
}

FieldPtr styblinski() {
  auto f = [](const Vector& x) {
    double s = 0.0;
    for (int i = 0; i < 2; ++i) {
      const double v = x[i];
      s += v * v * v * v - 16.0 * v * v + 5.0 * v;
    }
    return 0.5 * s;
  };
  auto g = [](const Vector& x) {
    Vector out(2);
    for (int i = 0; i < 2; ++i) out[i] = 0.5 * (4.0 * x[i] * x[i] * x[i] - 32.0 * x[i] + 5.0);
    return out;
  };
  auto h = [](const Vector& x) {
    Matrix out = Matrix::Zero(2, 2);
    for (int i = 0; i < 2; ++i) out(i, i) = 0.5 * (12.0 * x[i] * x[i] - 32.0);
    return out;
  };
  // root of 4x^3 - 32x + 5 in the left well, polished by Newton
  double r = -2.9;
  for (int it = 0; it < 50; ++it) r -= (4 * r * r * r - 32 * r + 5) / (12 * r * r - 32);
  const Vector xmin = vec2(r, r);
  return std::make_shared<FunctionField>("styblinski", 2, f, g, h, KnownMinimum{xmin, f(xmin)});
}

FieldPtr beale() {
  auto residuals = [](const Vector& x, double out[3]) {
    const double a = x[0], b = x[1];
    out[0] = 1.5 - a + a * b;
    out[1] = 2.25 - a + a * b * b;
    out[2] = 2.625 - a + a * b * b * b;
  };
  auto f = [residuals](const Vector& x) {
    double r[3];
    residuals(x, r);
    return r[0] * r[0] + r[1] * r[1] + r[2] * r[2];
  };
  auto g = [residuals](const Vector& x) {
    double r[3];
    residuals(x, r);
    const double a = x[0], b = x[1];
    const double dx[3] = {b - 1.0, b * b - 1.0, b * b * b - 1.0};
    const double dy[3] = {a, 2.0 * a * b, 3.0 * a * b * b};
    Vector out = Vector::Zero(2);
    for (int k = 0; k < 3; ++k) {
      out[0] += 2.0 * r[k] * dx[k];
      out[1] += 2.0 * r[k] * dy[k];
    }
    return out;
  };
  auto h = [residuals](const Vector& x) {
    double r[3];
    residuals(x, r);
    const double a = x[0], b = x[1];
    const double dx[3] = {b - 1.0, b * b - 1.0, b * b * b - 1.0};
    const double dy[3] = {a, 2.0 * a * b, 3.0 * a * b * b};
    const double hxy[3] = {1.0, 2.0 * b, 3.0 * b * b};
    const double hyy[3] = {0.0, 2.0 * a, 6.0 * a * b};
    Matrix out = Matrix::Zero(2, 2);
    for (int k = 0; k < 3; ++k) {
      out(0, 0) += 2.0 * dx[k] * dx[k];
      out(0, 1) += 2.0 * (dx[k] * dy[k] + r[k] * hxy[k]);
      out(1, 1) += 2.0 * (dy[k] * dy[k] + r[k] * hyy[k]);
    }
    out(1, 0) = out(0, 1);
    return out;
  };
  return std::make_shared<FunctionField>("beale", 2, f, g, h, KnownMinimum{vec2(3, 0.5), 0.0});
}

}  // namespace

const std::vector<std::string>& test_function_names() {
  static const std::vector<std::string> names = {"rosenbrock", "ackley",     "rastrigin",
                                                 "maccornick", "styblinski", "beale"};
  return names;
}

FieldPtr make_test_function(const std::string& name) {
  if (name == "rosenbrock") return rosenbrock();
  if (name == "ackley") return ackley();
  if (name == "rastrigin") return rastrigin();
  if (name == "maccornick") return maccornick();
  if (name == "styblinski") return styblinski();
  if (name == "beale") return beale();
  throw InvalidArgument("unknown test function '" + name + "'");
}

// ---------------------------------------------------------------------------
// Finite differences
// ---------------------------------------------------------------------------

Vector finite_difference_gradient(const ScalarField& f, const Vector& theta, double h) {
  if (!(h > 0.0)) throw InvalidArgument("finite_difference_gradient: step must be positive");
  const Eigen::Index n = theta.size();
  Vector g(n);
  Vector x = theta;
  for (Eigen::Index i = 0; i < n; ++i) {
    x[i] = theta[i] + h;
    const double fp = f.value(x);
    x[i] = theta[i] - h;
    const double fm = f.value(x);
    x[i] = theta[i];
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

Matrix finite_difference_hessian(const ScalarField& f, const Vector& theta, double h) {
  if (!(h > 0.0)) throw InvalidArgument("finite_difference_hessian: step must be positive");
  const Eigen::Index n = theta.size();
  Matrix hess(n, n);
  Vector x = theta;
  const double f0 = f.value(theta);
  for (Eigen::Index i = 0; i < n; ++i) {
    x[i] = theta[i] + h;
    const double fp = f.value(x);
    x[i] = theta[i] - h;
    const double fm = f.value(x);
    x[i] = theta[i];
    hess(i, i) = (fp - 2.0 * f0 + fm) / (h * h);
    for (Eigen::Index j = i + 1; j < n; ++j) {
      auto at = [&](double si, double sj) {
        x[i] = theta[i] + si * h;
        x[j] = theta[j] + sj * h;
        const double v = f.value(x);
        x[i] = theta[i];
        x[j] = theta[j];
        return v;
      };
      const double v = (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1)) / (4.0 * h * h);
      hess(i, j) = v;
      hess(j, i) = v;
    }
  }
  return 0.5 * (hess + hess.transpose());
}

Vector gradient_or_fd(const ScalarField& f, const Vector& theta, double h) {
  if (auto g = f.gradient(theta)) return *g;
  return finite_difference_gradient(f, theta, h);
}

Matrix hessian_or_fd(const ScalarField& f, const Vector& theta, double h) {
  if (auto hs = f.hessian(theta)) return *hs;
  if (f.gradient(theta)) {
    // central differences of the analytic gradient
    const Eigen::Index n = theta.size();
    Matrix out(n, n);
    Vector x = theta;
    for (Eigen::Index i = 0; i < n; ++i) {
      x[i] = theta[i] + h;
      const Vector gp = *f.gradient(x);
      x[i] = theta[i] - h;
      const Vector gm = *f.gradient(x);
      x[i] = theta[i];
      out.col(i) = (gp - gm) / (2.0 * h);
    }
    return 0.5 * (out + out.transpose());
  }
  return finite_difference_hessian(f, theta, h);
}

// ---------------------------------------------------------------------------
// Binary classification
// ---------------------------------------------------------------------------

ClassificationTask make_classification_task(std::size_t d, std::size_t m, std::uint64_t seed) {
  if (d < 3) throw InvalidArgument("binary classification needs d >= 3");
  if (m < 2) throw InvalidArgument("binary classification needs m >= 2");
  for (int attempt = 0; attempt < 10; ++attempt) {
    const std::uint64_t s = seed + static_cast<std::uint64_t>(attempt);
    Rng rng(s);
    Vector direction(static_cast<Eigen::Index>(d));
    for (auto& v : direction) v = rng.normal();
    direction.normalize();
    Vector center(static_cast<Eigen::Index>(d));
    for (auto& v : center) v = rng.normal();
    const double separation = rng.uniform(1.0, 3.0);

    ClassificationTask task;
    task.seed = s;
    task.features.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(d));
    task.labels.resize(static_cast<Eigen::Index>(m));
    std::size_t positives = 0;
    for (std::size_t r = 0; r < m; ++r) {
      const bool positive = rng.uniform() < 0.5;
      positives += positive ? 1 : 0;
      const double side = positive ? 0.5 : -0.5;
      for (std::size_t c = 0; c < d; ++c) {
        const auto ci = static_cast<Eigen::Index>(c);
        task.features(static_cast<Eigen::Index>(r), ci) =
            center[ci] + side * separation * direction[ci] + rng.normal();
      }
      task.labels[static_cast<Eigen::Index>(r)] = positive ? 1.0 : 0.0;
    }
    if (positives > 0 && positives < m) return task;
  }
  throw GenerationError("binary classification: single-class draw after 10 attempts");
}

namespace {

double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }
double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

LogisticLossField::LogisticLossField(ClassificationTask task) : task_(std::move(task)) {
  if (!task_.features.allFinite()) throw InvalidArgument("classification features not finite");
}

double LogisticLossField::value(const Vector& params) const {
  const Eigen::Index d = task_.features.cols();
  const Vector z = (task_.features * params.head(d)).array() + params[d];
  double s = 0.0;
  for (Eigen::Index r = 0; r < z.size(); ++r) s += softplus(z[r]) - task_.labels[r] * z[r];
  return s / static_cast<double>(z.size());
}

std::optional<Vector> LogisticLossField::gradient(const Vector& params) const {
  const Eigen::Index d = task_.features.cols();
  const Eigen::Index m = task_.features.rows();
  const Vector z = (task_.features * params.head(d)).array() + params[d];
  Vector resid(m);
  for (Eigen::Index r = 0; r < m; ++r) resid[r] = sigmoid(z[r]) - task_.labels[r];
  Vector g(d + 1);
  g.head(d) = task_.features.transpose() * resid / static_cast<double>(m);
  g[d] = resid.sum() / static_cast<double>(m);
  return g;
}

std::optional<Matrix> LogisticLossField::hessian(const Vector& params) const {
  const Eigen::Index d = task_.features.cols();
  const Eigen::Index m = task_.features.rows();
  Matrix design(m, d + 1);
  design.leftCols(d) = task_.features;
  design.col(d).setOnes();
  const Vector z = design * params;
  Vector w(m);
  for (Eigen::Index r = 0; r < m; ++r) {
    const double s = sigmoid(z[r]);
    w[r] = s * (1.0 - s);
  }
  return Matrix(design.transpose() * w.asDiagonal() * design / static_cast<double>(m));
}

FieldPtr make_binary_classification_field(std::size_t d, std::size_t m, std::uint64_t seed) {
  return std::make_shared<LogisticLossField>(make_classification_task(d, m, seed));
}

// ---------------------------------------------------------------------------
// Iris
// ---------------------------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n\"");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n\"");
  return s.substr(b, e - b + 1);
}

int iris_label(std::string label) {
  std::transform(label.begin(), label.end(), label.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (label.rfind("iris-", 0) == 0) label = label.substr(5);
  if (label == "setosa" || label == "0") return 0;
  if (label == "versicolor" || label == "1") return 1;
  if (label == "virginica" || label == "2") return 2;
  return -1;
}

}  // namespace

IrisData load_iris_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open iris file " + path.string());
  std::vector<std::array<double, 4>> rows;
  std::vector<int> labels;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(trim(cell));
    if (cells.size() != 5) {
      throw IngestionError("iris row " + std::to_string(line_no) + ": expected 5 fields, got " +
                           std::to_string(cells.size()));
    }
    std::array<double, 4> values{};
    bool numeric = true;
    for (int c = 0; c < 4; ++c) {
      try {
        std::size_t used = 0;
        values[c] = std::stod(cells[c], &used);
        if (used != cells[c].size()) numeric = false;
      } catch (const std::exception&) {
        numeric = false;
      }
    }
    if (!numeric) {
      if (rows.empty() && labels.empty() && line_no == 1) continue;  // header
      throw IngestionError("iris row " + std::to_string(line_no) + ": malformed number");
    }
    const int label = iris_label(cells[4]);
    if (label < 0) {
      throw IngestionError("iris row " + std::to_string(line_no) + ": unknown label '" +
                           cells[4] + "'");
    }
    rows.push_back(values);
    labels.push_back(label);
  }
  if (rows.size() != 150) {
    throw IngestionError("iris file has " + std::to_string(rows.size()) + " rows, expected 150");
  }
  IrisData data;
  data.features.resize(150, 4);
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (int c = 0; c < 4; ++c) data.features(static_cast<Eigen::Index>(r), c) = rows[r][c];
  for (int c = 0; c < 4; ++c) {
    auto col = data.features.col(c);
    const double mean = col.mean();
    const double sd = std::sqrt((col.array() - mean).square().sum() / 150.0);
    col = (col.array() - mean) / (sd > 0 ? sd : 1.0);
  }
  data.labels = std::move(labels);
  return data;
}

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct MlpView {
  Eigen::Map<const RowMat> w1, w2, w3;
  Eigen::Map<const Vector> b1, b2, b3;

  explicit MlpView(const double* p)
      : w1(p, 10, 4),
        w2(p + 50, 10, 10),
        w3(p + 160, 3, 10),
        b1(p + 40, 10),
        b2(p + 150, 10),
        b3(p + 190, 3) {}
};

}  // namespace

IrisMlpField::IrisMlpField(IrisData data) : data_(std::move(data)) {}

double IrisMlpField::value(const Vector& params) const {
  if (static_cast<std::size_t>(params.size()) != kParamCount)
    throw InvalidArgument("IrisMlpField: expected 193 parameters");
  const MlpView v(params.data());
  const Matrix h1 = ((data_.features * v.w1.transpose()).rowwise() + v.b1.transpose()).array().tanh();
  const Matrix h2 = ((h1 * v.w2.transpose()).rowwise() + v.b2.transpose()).array().tanh();
  const Matrix logits = (h2 * v.w3.transpose()).rowwise() + v.b3.transpose();
  double loss = 0.0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double mx = logits.row(r).maxCoeff();
    const double lse = mx + std::log((logits.row(r).array() - mx).exp().sum());
    loss += lse - logits(r, data_.labels[static_cast<std::size_t>(r)]);
  }
  return loss / static_cast<double>(logits.rows());
}

std::optional<Vector> IrisMlpField::gradient(const Vector& params) const {
  const MlpView v(params.data());
  const Eigen::Index m = data_.features.rows();
  const Matrix h1 = ((data_.features * v.w1.transpose()).rowwise() + v.b1.transpose()).array().tanh();
  const Matrix h2 = ((h1 * v.w2.transpose()).rowwise() + v.b2.transpose()).array().tanh();
  const Matrix logits = (h2 * v.w3.transpose()).rowwise() + v.b3.transpose();
  Matrix dlogits(m, 3);
  for (Eigen::Index r = 0; r < m; ++r) {
    const double mx = logits.row(r).maxCoeff();
    const Eigen::RowVectorXd e = (logits.row(r).array() - mx).exp();
    dlogits.row(r) = e / e.sum();
    dlogits(r, data_.labels[static_cast<std::size_t>(r)]) -= 1.0;
  }
  dlogits /= static_cast<double>(m);
  const Matrix dh2 = (dlogits * v.w3).array() * (1.0 - h2.array().square());
  const Matrix dh1 = (dh2 * v.w2).array() * (1.0 - h1.array().square());

  Vector g(static_cast<Eigen::Index>(kParamCount));
  Eigen::Map<RowMat>(g.data(), 10, 4) = dh1.transpose() * data_.features;
  g.segment(40, 10) = dh1.colwise().sum().transpose();
  Eigen::Map<RowMat>(g.data() + 50, 10, 10) = dh2.transpose() * h1;
  g.segment(150, 10) = dh2.colwise().sum().transpose();
  Eigen::Map<RowMat>(g.data() + 160, 3, 10) = dlogits.transpose() * h2;
  g.segment(190, 3) = dlogits.colwise().sum().transpose();
  return g;
}

std::vector<std::vector<std::size_t>> IrisMlpField::layer_blocks() const {
  std::vector<std::vector<std::size_t>> blocks(3);
  for (std::size_t i = 0; i < 50; ++i) blocks[0].push_back(i);
  for (std::size_t i = 50; i < 160; ++i) blocks[1].push_back(i);
  for (std::size_t i = 160; i < kParamCount; ++i) blocks[2].push_back(i);
  return blocks;
}

FieldPtr make_iris_mlp_field(const std::filesystem::path& dataset_path) {
  return std::make_shared<IrisMlpField>(load_iris_csv(dataset_path));
}

}  // namespace rover
