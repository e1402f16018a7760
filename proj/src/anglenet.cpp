#include "rover/anglenet.hpp"

#include <cstring>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <ostream>

namespace rover {

std::string to_string(Teacher t) { return t == Teacher::gradient ? "gradient" : "newton"; }

Vector newton_direction(const Vector& gradient, const Matrix& hessian) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (hessian + hessian.transpose()));
  const Vector& ev = es.eigenvalues();
  const double lambda = std::max(0.0, 1e-6 - ev.cwiseAbs().minCoeff());
  Vector shifted = ev.array() + lambda;
  for (Eigen::Index k = 0; k < shifted.size(); ++k)
    if (std::abs(shifted[k]) < 1e-6) shifted[k] = 1e-6;
  const Matrix& v = es.eigenvectors();
  return -(v * (v.transpose() * gradient).cwiseQuotient(shifted));
}

namespace {

struct Trial {
  double decrease = -std::numeric_limits<double>::infinity();
  double step = 0.0;
};

Trial best_decrease(const ScalarField& f, const Vector& theta, double f0, const Vector& candidate,
                    const std::vector<double>& steps) {
  Trial best;
  const double norm = candidate.norm();
  if (!(norm > 0.0) || !std::isfinite(norm)) return best;
  const Vector unit = candidate / norm;
  for (double s : steps) {
    const double v = f.value(theta + s * unit);
    if (!std::isfinite(v)) continue;
    if (f0 - v > best.decrease) best = {f0 - v, s};
  }
  return best;
}

}  // namespace

std::string to_string(TeacherTrial t) { return t == TeacherTrial::scan ? "scan" : "fixed"; }

TeacherTrial parse_teacher_trial(const std::string& name) {
  if (name == "scan") return TeacherTrial::scan;
  if (name == "fixed") return TeacherTrial::fixed;
  throw InvalidArgument("unknown teacher trial '" + name + "'");
}

TeacherResult teacher_step(const ScalarField& f, const Vector& theta, TeacherTrial trial) {
  const double f0 = f.value(theta);
  const Vector g = gradient_or_fd(f, theta);
  const Vector gd = -g;
  const Vector nt = newton_direction(g, hessian_or_fd(f, theta));

  std::vector<double> steps{0.1};
  if (trial == TeacherTrial::scan) {
    steps.clear();
    for (int k = -4; k <= 6; ++k) steps.push_back(0.1 * std::ldexp(1.0, k));
    const double newton_length = nt.norm();
    if (std::isfinite(newton_length) && newton_length > 0.0) steps.push_back(newton_length);
  }

  const Trial a = best_decrease(f, theta, f0, gd, steps);
  const Trial b = best_decrease(f, theta, f0, nt, steps);
  TeacherResult r;
  if (b.decrease > a.decrease) {
    r.direction = nt;
    r.teacher = Teacher::newton;
    r.step = b.step;
    r.decrease = b.decrease;
  } else {
    r.direction = gd;
    r.step = a.step;
    r.decrease = a.decrease;
  }
  if (!(r.decrease > 0.0)) {
    r.direction = gd;
    r.teacher = Teacher::gradient;
    r.step = a.step;
    r.decrease = a.decrease;
    r.no_decrease = true;
  }
  return r;
}

Vector sample_negative(const Vector& d, Rng& rng) {
  if (d.size() != 2) throw InvalidArgument("sample_negative: expected a 2-vector");
  const double norm = d.norm();
  if (!(norm > 0.0) || !std::isfinite(norm)) throw InvalidArgument("sample_negative: zero direction");
  const double base = std::atan2(-d[1], -d[0]);
  double offset = 0.0;
  do {
    offset = rng.uniform(-0.5, 0.5) * std::numbers::pi;
  } while (offset == -0.5 * std::numbers::pi);
  Vector out(2);
  out << std::cos(base + offset), std::sin(base + offset);
  return out;
}

// ---------------------------------------------------------------------------

ImitationDataset collect_imitation_dataset(const CollectConfig& config, Rng& rng,
                                           CollectStats* stats) {
  if (config.num_functions == 0 || config.steps_per_function == 0)
    throw InvalidArgument("collect_imitation_dataset: counts must be >= 1");
  if (config.modalities.empty()) throw InvalidArgument("collect_imitation_dataset: no modalities");
  CollectStats local;
  CollectStats& st = stats ? *stats : local;
  ImitationDataset data;
  data.reserve(2 * config.num_functions * config.steps_per_function);
  const std::size_t max_attempts = 10 * config.steps_per_function;

  for (std::size_t k = 0; k < config.num_functions; ++k) {
    Rng fr = rng.split();
    const Modality m = config.modalities[k % config.modalities.size()];
    ProtoPtr f;
    try {
      f = sample_proto(m, fr, config.proto);
    } catch (const Error&) {
      ++st.skipped;
      continue;
    }
    const double delta = fr.log_uniform(config.delta_min, config.delta_max);
    auto fresh_start = [&] {
      const double r = fr.uniform(config.start_radius_min, config.start_radius_max);
      const double phi = fr.uniform(0.0, 2.0 * std::numbers::pi);
      Vector t = f->center();
      t[0] += r * std::cos(phi);
      t[1] += r * std::sin(phi);
      return t;
    };
    Vector theta = fresh_start();
    ImitationDataset mine;
    std::size_t attempts = 0;
    bool failed = false;
    while (mine.size() < 2 * config.steps_per_function) {
      if (++attempts > max_attempts) {
        failed = true;
        break;
      }
      const TeacherResult t = teacher_step(*f, theta, config.trial);
      const double norm = t.direction.norm();
      if (t.no_decrease || !(norm > 1e-9) || !std::isfinite(norm)) {
        ++st.restarts;
        if (t.no_decrease) ++st.no_decrease;
        theta = fresh_start();
        continue;
      }
      GridSample g;
      try {
        g = grid_sample(*f, theta, delta, config.grid_n, config.proto.noisy ? &fr : nullptr);
      } catch (const ObservationError&) {
        ++st.restarts;
        theta = fresh_start();
        continue;
      }
      const Vector a = t.direction / norm;
      if (t.teacher == Teacher::newton) ++st.newton_wins;
      mine.push_back({g.normalized, a, 1, m});
      mine.push_back({g.normalized, sample_negative(a, fr), 0, m});
      theta += std::min(t.step, config.max_move) * a;
    }
    if (failed) {
      ++st.skipped;
      continue;
    }
    ++st.functions;
    for (auto& s : mine) data.push_back(std::move(s));
  }
  return data;
}

namespace {

constexpr char kDatasetMagic[4] = {'R', 'V', 'D', 'S'};
constexpr std::uint32_t kDatasetVersion = 1;

template <class T>
void write_raw(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_raw(std::istream& in) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IngestionError("dataset truncated");
  return v;
}

}  // namespace

void save_dataset(const std::filesystem::path& path, const ImitationDataset& data) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(kDatasetMagic, 4);
  write_raw<std::uint32_t>(out, kDatasetVersion);
  write_raw<std::uint64_t>(out, data.size());
  for (const auto& s : data) {
    const auto n = static_cast<std::uint32_t>(s.grid.rows());
    write_raw<std::uint32_t>(out, n);
    for (std::uint32_t i = 0; i < n; ++i)
      for (std::uint32_t j = 0; j < n; ++j) write_raw<double>(out, s.grid(i, j));
    write_raw<double>(out, s.action[0]);
    write_raw<double>(out, s.action[1]);
    write_raw<std::int32_t>(out, s.label);
    write_raw<std::int32_t>(out, static_cast<std::int32_t>(s.modality));
  }
  if (!out) throw Error("write failed for " + path.string());
}

ImitationDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open dataset " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kDatasetMagic, 4) != 0)
    throw IngestionError("not an imitation dataset: " + path.string());
  if (read_raw<std::uint32_t>(in) != kDatasetVersion)
    throw IngestionError("unsupported dataset version in " + path.string());
  const auto count = read_raw<std::uint64_t>(in);
  ImitationDataset data;
  data.reserve(count);
  for (std::uint64_t k = 0; k < count; ++k) {
    ImitationSample s;
    const auto n = read_raw<std::uint32_t>(in);
    if (n < 2 || n > 1024) throw IngestionError("dataset sample " + std::to_string(k) + ": bad grid size");
    s.grid.resize(n, n);
    for (std::uint32_t i = 0; i < n; ++i)
      for (std::uint32_t j = 0; j < n; ++j) s.grid(i, j) = read_raw<double>(in);
    s.action.resize(2);
    s.action[0] = read_raw<double>(in);
    s.action[1] = read_raw<double>(in);
    s.label = read_raw<std::int32_t>(in);
    const auto m = read_raw<std::int32_t>(in);
    if (m < 0 || m > 3) throw IngestionError("dataset sample " + std::to_string(k) + ": bad modality");
    s.modality = static_cast<Modality>(m);
    data.push_back(std::move(s));
  }
  return data;
}

// ---------------------------------------------------------------------------

nn::NetSpec angle_net_spec(int grid_n) {
  using nn::LayerDesc;
  nn::NetSpec spec;
  spec.input = {1, grid_n, grid_n};
  spec.layers = {LayerDesc::conv(8, 3, 1),  LayerDesc::batchnorm(), LayerDesc::act(nn::Activation::relu),
                 LayerDesc::conv(16, 3, 2), LayerDesc::batchnorm(), LayerDesc::act(nn::Activation::relu),
                 LayerDesc::dense(64),      LayerDesc::act(nn::Activation::relu), LayerDesc::dense(2)};
  return spec;
}

Vector flatten_grid(const Matrix& grid) {
  Vector out(grid.size());
  const Eigen::Index n = grid.cols();
  for (Eigen::Index i = 0; i < grid.rows(); ++i)
    for (Eigen::Index j = 0; j < n; ++j) out[i * n + j] = grid(i, j);
  return out;
}

namespace {

const double kLossCap = -std::log(1e-12);

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

double sigmoid(double z) {
  return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

Matrix stack_grids(const std::vector<const ImitationSample*>& batch) {
  const Eigen::Index n = batch.front()->grid.size();
  Matrix x(n, static_cast<Eigen::Index>(batch.size()));
  for (std::size_t b = 0; b < batch.size(); ++b) {
    if (batch[b]->grid.size() != n) throw InvalidArgument("imitation batch mixes grid sizes");
    x.col(static_cast<Eigen::Index>(b)) = flatten_grid(batch[b]->grid);
  }
  return x;
}

// Loss, optional gradient, optional BN running-stat update in one pass.
double loss_pass(const nn::Network& net, std::span<const double> params,
                 const std::vector<const ImitationSample*>& batch, Vector* grad, nn::Mode mode,
                 Vector* commit) {
  if (batch.empty()) throw InvalidArgument("imitation_loss: empty batch");
  const nn::Tape tape = net.run(params, {stack_grids(batch)}, nullptr, nullptr, mode);
  const Matrix& y = tape.outputs.front();
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  Matrix dy(2, y.cols());
  double total = 0.0;
  for (Eigen::Index b = 0; b < y.cols(); ++b) {
    const auto& s = *batch[static_cast<std::size_t>(b)];
    const double z = y.col(b).dot(s.action);
    double l = s.label == 1 ? softplus(-z) : softplus(z);
    double dz = (sigmoid(z) - s.label) * inv_b;
    if (l > kLossCap) l = kLossCap, dz = 0.0;
    total += l;
    dy.col(b) = dz * s.action;
  }
  if (grad) {
    *grad = Vector::Zero(static_cast<Eigen::Index>(net.param_count()));
    net.backward(params, tape, {dy}, std::span<double>(grad->data(), net.param_count()));
  }
  if (commit) net.commit_batch_statistics(std::span<double>(commit->data(), net.param_count()), tape);
  return total * inv_b;
}

}  // namespace

ImitationSample transform_sample(const ImitationSample& s, int code) {
  ImitationSample out = s;
  if (code & 1) {
    out.grid = out.grid.transpose().eval();
    std::swap(out.action[0], out.action[1]);
  }
  if (code & 2) {
    out.grid = out.grid.colwise().reverse().eval();
    out.action[0] = -out.action[0];
  }
  if (code & 4) {
    out.grid = out.grid.rowwise().reverse().eval();
    out.action[1] = -out.action[1];
  }
  return out;
}

double imitation_sample_loss(const Vector& y, const Vector& action, int label) {
  const double z = y.dot(action);
  return std::min(kLossCap, label == 1 ? softplus(-z) : softplus(z));
}

double imitation_loss(const nn::Network& net, std::span<const double> params,
                      const std::vector<const ImitationSample*>& batch, Vector* grad, nn::Mode mode) {
  return loss_pass(net, params, batch, grad, mode, nullptr);
}

AngleTrainResult train_angle_predictor(const ImitationDataset& data, const AngleTrainConfig& config) {
  if (data.size() < 4) throw InvalidArgument("train_angle_predictor: dataset too small");
  if (config.batch == 0 || config.steps == 0) throw InvalidArgument("train_angle_predictor: empty schedule");
  const int n = static_cast<int>(data.front().grid.rows());
  const nn::Network net(angle_net_spec(n));
  Rng rng(config.seed);
  Vector params = net.initial_params(rng);

  // Held-out tail: samples are stored function by function, so this is a
  // split by function.
  auto holdout_count = static_cast<std::size_t>(config.holdout_fraction * static_cast<double>(data.size()));
  holdout_count -= holdout_count % 2;
  if (holdout_count >= data.size()) holdout_count = 0;
  const std::size_t train_count = data.size() - holdout_count;

  std::vector<std::size_t> order(train_count);
  for (std::size_t k = 0; k < train_count; ++k) order[k] = k;
  std::size_t cursor = train_count;
  std::vector<ImitationSample> augmented;
  auto next_batch = [&] {
    std::vector<const ImitationSample*> batch;
    const std::size_t size = std::min(config.batch, train_count);
    augmented.clear();
    augmented.reserve(size);
    while (batch.size() < size) {
      if (cursor >= train_count) {
        for (std::size_t k = train_count; k > 1; --k) std::swap(order[k - 1], order[rng.index(k)]);
        cursor = 0;
      }
      const ImitationSample& s = data[order[cursor++]];
      if (config.augment) {
        augmented.push_back(transform_sample(s, static_cast<int>(rng.index(8))));
        batch.push_back(&augmented.back());
      } else {
        batch.push_back(&s);
      }
    }
    return batch;
  };

  AngleTrainResult result;
  nn::AdamState adam;
  Vector grad, last_good = params;
  std::vector<double> recent;
  const auto& mask = net.trainable();
  Vector mask_v(static_cast<Eigen::Index>(mask.size()));
  for (std::size_t k = 0; k < mask.size(); ++k) mask_v[static_cast<Eigen::Index>(k)] = mask[k];

  for (std::size_t step = 0; step < config.steps; ++step) {
    const auto batch = next_batch();
    const std::span<const double> view(params.data(), net.param_count());
    Vector committed = params;
    const double loss = loss_pass(net, view, batch, &grad, nn::Mode::training, &committed);
    if (!std::isfinite(loss) || !grad.allFinite()) {
      throw TrainingError("angle training diverged at step " + std::to_string(step) +
                          "; last finite parameters are from step " +
                          std::to_string(step == 0 ? 0 : step - 1));
    }
    if (step == 0) result.initial_loss = loss;
    recent.push_back(loss);
    if (recent.size() > 100) recent.erase(recent.begin());
    const double progress = static_cast<double>(step) / static_cast<double>(config.steps);
    const double lr = config.final_learning_rate +
                      0.5 * (config.learning_rate - config.final_learning_rate) *
                          (1.0 + std::cos(std::numbers::pi * progress));
    params = committed;
    nn::adam_update(params, grad.cwiseProduct(mask_v), adam, lr);
    // Adam leaves untrainable entries untouched since their gradient and
    // moments stay zero.
    last_good = params;
    if (config.log_every && (step + 1) % config.log_every == 0)
      std::fprintf(stderr, "angle step %zu loss %.4f\n", step + 1, loss);
  }
  double sum = 0.0;
  for (double l : recent) sum += l;
  result.final_loss = sum / static_cast<double>(recent.size());

  if (holdout_count > 0) {
    const std::span<const double> view(params.data(), net.param_count());
    double loss = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = train_count; start < data.size(); start += 256) {
      std::vector<const ImitationSample*> batch;
      for (std::size_t k = start; k < std::min(data.size(), start + 256); ++k) batch.push_back(&data[k]);
      const Matrix y = net.run(view, {stack_grids(batch)}).outputs.front();
      for (std::size_t b = 0; b < batch.size(); ++b) {
        const Vector yb = y.col(static_cast<Eigen::Index>(b));
        loss += imitation_sample_loss(yb, batch[b]->action, batch[b]->label);
        const int predicted = yb.dot(batch[b]->action) > 0.0 ? 1 : 0;
        correct += predicted == batch[b]->label;
      }
    }
    result.holdout_loss = loss / static_cast<double>(holdout_count);
    result.holdout_accuracy = static_cast<double>(correct) / static_cast<double>(holdout_count);
  }
  result.checkpoint.spec = net.spec();
  result.checkpoint.params = params;
  result.checkpoint.meta = {config.seed, config.steps, result.final_loss, "angle"};
  return result;
}

// ---------------------------------------------------------------------------

AnglePredictor::AnglePredictor(nn::Checkpoint checkpoint)
    : checkpoint_(std::move(checkpoint)), net_(checkpoint_.spec) {
  if (net_.output_size() != 2 || net_.recurrent())
    throw InvalidArgument("angle predictor needs a feed-forward network with 2 outputs");
  if (static_cast<std::size_t>(checkpoint_.params.size()) != net_.param_count())
    throw CheckpointCountError("angle checkpoint parameter count does not match its spec");
}

Matrix AnglePredictor::outputs(const std::vector<const Matrix*>& grids) const {
  Matrix x(net_.input_size(), static_cast<Eigen::Index>(grids.size()));
  for (std::size_t b = 0; b < grids.size(); ++b) {
    if (grids[b]->size() != net_.input_size())
      throw InvalidArgument("grid size does not match the angle network input");
    x.col(static_cast<Eigen::Index>(b)) = flatten_grid(*grids[b]);
  }
  return net_.forward(std::span<const double>(checkpoint_.params.data(), net_.param_count()), x);
}

DirectionPrediction AnglePredictor::predict(const Matrix& normalized_grid) const {
  const Vector y = outputs({&normalized_grid}).col(0);
  DirectionPrediction p;
  const double norm = y.norm();
  if (!(norm >= 1e-12) || !std::isfinite(norm)) {
    p.direction = Vector::Unit(2, 0);
    p.degenerate = true;
  } else {
    p.direction = y / norm;
  }
  return p;
}

DirectionPrediction AnglePredictor::predict(const GridSample& grid) const {
  return predict(grid.normalized);
}

DirectionPrediction predict_direction(const AnglePredictor& predictor, const GridSample& grid) {
  return predictor.predict(grid);
}

double mean_angle_dissimilarity(const AnglePredictor& predictor, const ImitationDataset& data) {
  double sum = 0.0;
  std::size_t count = 0;
  std::vector<const ImitationSample*> pos;
  for (const auto& s : data)
    if (s.label == 1) pos.push_back(&s);
  for (std::size_t start = 0; start < pos.size(); start += 256) {
    std::vector<const Matrix*> grids;
    const std::size_t end = std::min(pos.size(), start + 256);
    for (std::size_t k = start; k < end; ++k) grids.push_back(&pos[k]->grid);
    const Matrix y = predictor.outputs(grids);
    for (std::size_t k = start; k < end; ++k) {
      const Vector yk = y.col(static_cast<Eigen::Index>(k - start));
      const double norm = yk.norm();
      const Vector dir = norm >= 1e-12 ? Vector(yk / norm) : Vector(Vector::Unit(2, 0));
      sum += degrees(std::acos(std::clamp(dir.dot(pos[k]->action), -1.0, 1.0)));
      ++count;
    }
  }
  if (count == 0) throw InvalidArgument("mean_angle_dissimilarity: no positive samples");
  return sum / static_cast<double>(count);
}

// ---------------------------------------------------------------------------

AngleTable angle_dissimilarity_matrix(const AngleTableConfig& config) {
  AngleTable table;
  for (auto m : kAllModalities) table.cols.push_back(to_string(m));

  std::vector<ImitationDataset> tests;
  for (std::size_t c = 0; c < kAllModalities.size(); ++c) {
    CollectConfig cc = config.collect;
    cc.modalities = {kAllModalities[c]};
    cc.num_functions = config.test_functions;
    Rng rng(config.seed * 1000003ULL + 101 + c);
    tests.push_back(collect_imitation_dataset(cc, rng));
  }

  std::vector<std::vector<Modality>> rows;
  for (auto m : kAllModalities) {
    rows.push_back({m});
    table.rows.push_back(to_string(m));
  }
  rows.push_back({kAllModalities.begin(), kAllModalities.end()});
  table.rows.push_back("all");

  const std::size_t extra = config.include_untrained ? 1 : 0;
  table.degrees.resize(static_cast<Eigen::Index>(rows.size() + extra),
                       static_cast<Eigen::Index>(kAllModalities.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    CollectConfig cc = config.collect;
    cc.modalities = rows[r];
    Rng rng(config.seed * 1000003ULL + 11 + r);
    const ImitationDataset train = collect_imitation_dataset(cc, rng);
    AngleTrainConfig tc = config.train;
    tc.seed = config.train.seed + r;
    table.training.push_back(train_angle_predictor(train, tc));
    const AnglePredictor predictor(table.training.back().checkpoint);
    for (std::size_t c = 0; c < tests.size(); ++c)
      table.degrees(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
          mean_angle_dissimilarity(predictor, tests[c]);
  }
  if (extra) {
    nn::Checkpoint ck;
    ck.spec = angle_net_spec(config.collect.grid_n);
    Rng rng(config.train.seed + 999);
    ck.params = nn::Network(ck.spec).initial_params(rng);
    const AnglePredictor predictor(ck);
    const auto r = static_cast<Eigen::Index>(rows.size());
    for (std::size_t c = 0; c < tests.size(); ++c)
      table.degrees(r, static_cast<Eigen::Index>(c)) = mean_angle_dissimilarity(predictor, tests[c]);
    table.rows.push_back("untrained");
  }
  return table;
}

void write_angle_table_csv(std::ostream& out, const AngleTable& table) {
  out << "train";
  for (const auto& c : table.cols) out << ',' << c;
  out << '\n' << std::fixed << std::setprecision(2);
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    out << table.rows[r];
    for (std::size_t c = 0; c < table.cols.size(); ++c)
      out << ',' << table.degrees(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    out << '\n';
  }
  out.unsetf(std::ios::fixed);
}

}  // namespace rover
