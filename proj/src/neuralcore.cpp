#include "rover/neuralcore.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace rover::nn {

LayerDesc LayerDesc::conv(int out_channels, int kernel, int stride) {
  LayerDesc d;
  d.kind = LayerKind::conv2d;
  d.out_channels = out_channels;
  d.kernel = kernel;
  d.stride = stride;
  return d;
}

LayerDesc LayerDesc::batchnorm() {
  LayerDesc d;
  d.kind = LayerKind::batchnorm;
  return d;
}

LayerDesc LayerDesc::dense(int width, int side_inputs) {
  LayerDesc d;
  d.kind = LayerKind::dense;
  d.width = width;
  d.side_inputs = side_inputs;
  return d;
}

LayerDesc LayerDesc::lstm(int width) {
  LayerDesc d;
  d.kind = LayerKind::lstm;
  d.width = width;
  return d;
}

LayerDesc LayerDesc::act(Activation a) {
  LayerDesc d;
  d.kind = LayerKind::activation;
  d.activation = a;
  return d;
}

namespace {

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::sigmoid: return "sigmoid";
  }
  return "identity";
}

Activation parse_activation(const std::string& s) {
  if (s == "identity") return Activation::identity;
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  if (s == "sigmoid") return Activation::sigmoid;
  throw InvalidArgument("unknown activation '" + s + "'");
}

}  // namespace

std::string NetSpec::to_text() const {
  std::ostringstream out;
  out << "input " << input.channels << ' ' << input.height << ' ' << input.width;
  for (const auto& l : layers) {
    out << "; ";
    switch (l.kind) {
      case LayerKind::conv2d:
        out << "conv2d " << l.out_channels << ' ' << l.kernel << ' ' << l.stride;
        break;
      case LayerKind::batchnorm: out << "batchnorm"; break;
      case LayerKind::dense:
        out << "dense " << l.width;
        if (l.side_inputs) out << " side " << l.side_inputs;
        break;
      case LayerKind::lstm: out << "lstm " << l.width; break;
      case LayerKind::activation: out << "activation " << activation_name(l.activation); break;
    }
  }
  return out.str();
}

NetSpec NetSpec::from_text(const std::string& text) {
  NetSpec spec;
  std::stringstream clauses(text);
  std::string clause;
  bool have_input = false;
  while (std::getline(clauses, clause, ';')) {
    std::istringstream in(clause);
    std::string word;
    if (!(in >> word)) continue;
    auto need = [&](int& v) {
      if (!(in >> v)) throw InvalidArgument("net spec: malformed clause '" + clause + "'");
    };
    if (word == "input") {
      need(spec.input.channels);
      need(spec.input.height);
      need(spec.input.width);
      have_input = true;
    } else if (word == "conv2d") {
      LayerDesc d = LayerDesc::conv(0, 0, 1);
      need(d.out_channels);
      need(d.kernel);
      need(d.stride);
      spec.layers.push_back(d);
    } else if (word == "batchnorm") {
      spec.layers.push_back(LayerDesc::batchnorm());
    } else if (word == "dense") {
      LayerDesc d = LayerDesc::dense(0);
      need(d.width);
      std::string tag;
      if (in >> tag) {
        if (tag != "side") throw InvalidArgument("net spec: unexpected '" + tag + "'");
        need(d.side_inputs);
      }
      spec.layers.push_back(d);
    } else if (word == "lstm") {
      LayerDesc d = LayerDesc::lstm(0);
      need(d.width);
      spec.layers.push_back(d);
    } else if (word == "activation") {
      std::string name;
      if (!(in >> name)) throw InvalidArgument("net spec: activation needs a name");
      spec.layers.push_back(LayerDesc::act(parse_activation(name)));
    } else {
      throw InvalidArgument("net spec: unknown layer '" + word + "'");
    }
  }
  if (!have_input) throw InvalidArgument("net spec: missing input clause");
  return spec;
}

// ---------------------------------------------------------------------------

namespace {

using CMap = Eigen::Map<const Matrix>;
using MMap = Eigen::Map<Matrix>;
using CVMap = Eigen::Map<const Vector>;
using MVMap = Eigen::Map<Vector>;

constexpr double kBnEpsilon = 1e-5;

std::string layer_label(std::size_t l, const LayerDesc& d) {
  static const char* names[] = {"conv2d", "batchnorm", "dense", "lstm", "activation"};
  return "layer " + std::to_string(l) + " (" + names[static_cast<int>(d.kind)] + ")";
}

Matrix sigmoid(const Matrix& z) { return (1.0 + (-z.array()).exp()).inverse().matrix(); }

}  // namespace

Network::Network(NetSpec spec) : spec_(std::move(spec)) {
  if (spec_.input.size() <= 0) throw InvalidArgument("net spec: input shape must be positive");
  Shape s = spec_.input;
  shapes_.push_back(s);
  for (std::size_t l = 0; l < spec_.layers.size(); ++l) {
    const LayerDesc& d = spec_.layers[l];
    Slot slot;
    slot.offset = param_count_;
    switch (d.kind) {
      case LayerKind::conv2d: {
        if (d.out_channels <= 0 || d.kernel <= 0 || d.stride <= 0)
          throw InvalidArgument("net spec: " + layer_label(l, d) + " has bad parameters");
        if (s.height < d.kernel || s.width < d.kernel)
          throw InvalidArgument("net spec: " + layer_label(l, d) + " kernel exceeds input");
        slot.count = static_cast<std::size_t>(d.out_channels) *
                         static_cast<std::size_t>(s.channels * d.kernel * d.kernel) +
                     static_cast<std::size_t>(d.out_channels);
        s = Shape{d.out_channels, (s.height - d.kernel) / d.stride + 1,
                  (s.width - d.kernel) / d.stride + 1};
        break;
      }
      case LayerKind::batchnorm:
        slot.count = 4 * static_cast<std::size_t>(s.channels);
        break;
      case LayerKind::dense: {
        if (d.width <= 0 || d.side_inputs < 0)
          throw InvalidArgument("net spec: " + layer_label(l, d) + " has bad width");
        if (d.side_inputs > 0) {
          if (side_layer_ >= 0) throw InvalidArgument("net spec: at most one side-input layer");
          side_layer_ = static_cast<int>(l);
          side_inputs_ = d.side_inputs;
        }
        const auto in = static_cast<std::size_t>(s.size() + d.side_inputs);
        slot.count = static_cast<std::size_t>(d.width) * (in + 1);
        s = Shape{d.width, 1, 1};
        break;
      }
      case LayerKind::lstm: {
        if (lstm_layer_ >= 0) throw InvalidArgument("net spec: at most one lstm layer");
        if (d.width <= 0) throw InvalidArgument("net spec: " + layer_label(l, d) + " has bad width");
        lstm_layer_ = static_cast<int>(l);
        const auto h = static_cast<std::size_t>(d.width);
        slot.count = 4 * h * (static_cast<std::size_t>(s.size()) + h + 1);
        s = Shape{d.width, 1, 1};
        break;
      }
      case LayerKind::activation:
        break;
    }
    param_count_ += slot.count;
    slots_.push_back(slot);
    shapes_.push_back(s);
  }
  trainable_.assign(param_count_, 1);
  for (std::size_t l = 0; l < spec_.layers.size(); ++l) {
    if (spec_.layers[l].kind != LayerKind::batchnorm) continue;
    const auto c = static_cast<std::size_t>(shapes_[l].channels);
    for (std::size_t k = 2 * c; k < 4 * c; ++k) trainable_[slots_[l].offset + k] = 0;
  }
}

int Network::hidden_width() const {
  return lstm_layer_ >= 0 ? spec_.layers[static_cast<std::size_t>(lstm_layer_)].width : 0;
}

LstmState Network::zero_state(int batch) const {
  const int h = hidden_width();
  return LstmState{Matrix::Zero(h, batch), Matrix::Zero(h, batch)};
}

Vector Network::initial_params(Rng& rng) const {
  Vector p = Vector::Zero(static_cast<Eigen::Index>(param_count_));
  for (std::size_t l = 0; l < spec_.layers.size(); ++l) {
    const LayerDesc& d = spec_.layers[l];
    const Shape& in = shapes_[l];
    double* base = p.data() + slots_[l].offset;
    switch (d.kind) {
      case LayerKind::conv2d: {
        const int fan_in = in.channels * d.kernel * d.kernel;
        const double sd = std::sqrt(2.0 / fan_in);
        for (int k = 0; k < d.out_channels * fan_in; ++k) base[k] = sd * rng.normal();
        break;
      }
      case LayerKind::batchnorm: {
        const int c = in.channels;
        for (int k = 0; k < c; ++k) {
          base[k] = 1.0;          // gamma
          base[3 * c + k] = 1.0;  // running variance
        }
        break;
      }
      case LayerKind::dense: {
        const int fan_in = in.size() + d.side_inputs;
        const double sd = std::sqrt(1.0 / fan_in);
        for (int k = 0; k < d.width * fan_in; ++k) base[k] = sd * rng.normal();
        break;
      }
      case LayerKind::lstm: {
        const int h = d.width;
        const int cols = in.size() + h;
        const double bound = 1.0 / std::sqrt(static_cast<double>(h));
        for (int k = 0; k < 4 * h * cols; ++k) base[k] = rng.uniform(-bound, bound);
        double* bias = base + 4 * h * cols;
        for (int k = h; k < 2 * h; ++k) bias[k] = 1.0;  // forget gate
        break;
      }
      case LayerKind::activation:
        break;
    }
  }
  return p;
}

// ---------------------------------------------------------------------------
// Layer forward / backward
// ---------------------------------------------------------------------------

Matrix Network::layer_forward(std::size_t l, std::span<const double> params, const Matrix& x,
                              const Matrix* side, LstmState* state, LayerCache& cache,
                              Mode mode) const {
  const LayerDesc& d = spec_.layers[l];
  const Shape& in = shapes_[l];
  const Shape& out = shapes_[l + 1];
  const double* base = params.data() + slots_[l].offset;
  const Eigen::Index batch = x.cols();
  cache.training = mode == Mode::training;
  if (x.rows() != in.size()) {
    throw InvalidArgument("shape mismatch at " + layer_label(l, d) + ": expected " +
                          std::to_string(in.size()) + " features, got " +
                          std::to_string(x.rows()));
  }

  switch (d.kind) {
    case LayerKind::conv2d: {
      const int k = d.kernel, s = d.stride;
      const int kk = in.channels * k * k;
      const int positions = out.height * out.width;
      const int plane = in.height * in.width;
      Matrix& col = cache.a;
      col.resize(kk, positions * batch);
      for (Eigen::Index b = 0; b < batch; ++b) {
        const double* src = x.col(b).data();
        for (int oy = 0; oy < out.height; ++oy) {
          for (int ox = 0; ox < out.width; ++ox) {
            double* dst = col.col(b * positions + oy * out.width + ox).data();
            for (int c = 0; c < in.channels; ++c)
              for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx)
                  *dst++ = src[c * plane + (oy * s + ky) * in.width + ox * s + kx];
          }
        }
      }
      const CMap w(base, d.out_channels, kk);
      const CVMap bias(base + d.out_channels * kk, d.out_channels);
      Matrix prod = w * col;
      prod.colwise() += bias;
      Matrix y(out.size(), batch);
      for (Eigen::Index b = 0; b < batch; ++b)
        MMap(y.col(b).data(), positions, d.out_channels) =
            prod.middleCols(b * positions, positions).transpose();
      return y;
    }
    case LayerKind::batchnorm: {
      const int c = in.channels;
      const int plane = in.height * in.width;
      const CVMap gamma(base, c), beta(base + c, c), rmean(base + 2 * c, c), rvar(base + 3 * c, c);
      Matrix y(x.rows(), batch);
      Matrix& xhat = cache.a;
      xhat.resize(x.rows(), batch);
      cache.u.resize(c);  // inverse std
      cache.v.resize(c);  // batch mean
      cache.w.resize(c);  // batch variance
      const double count = static_cast<double>(plane * batch);
      for (int ch = 0; ch < c; ++ch) {
        const auto rows = x.middleRows(ch * plane, plane);
        double mean, var;
        if (mode == Mode::training) {
          mean = rows.sum() / count;
          var = (rows.array() - mean).square().sum() / count;
        } else {
          mean = rmean[ch];
          var = rvar[ch];
        }
        const double inv = 1.0 / std::sqrt(var + kBnEpsilon);
        cache.u[ch] = inv;
        cache.v[ch] = mean;
        cache.w[ch] = var;
        xhat.middleRows(ch * plane, plane) = (rows.array() - mean) * inv;
        y.middleRows(ch * plane, plane) =
            (xhat.middleRows(ch * plane, plane).array() * gamma[ch] + beta[ch]).matrix();
      }
      return y;
    }
    case LayerKind::dense: {
      const int fan_in = in.size() + d.side_inputs;
      Matrix& z = cache.a;
      if (d.side_inputs > 0) {
        if (side == nullptr || side->rows() != d.side_inputs || side->cols() != batch)
          throw InvalidArgument("shape mismatch at " + layer_label(l, d) + ": side inputs");
        z.resize(fan_in, batch);
        z.topRows(in.size()) = x;
        z.bottomRows(d.side_inputs) = *side;
      } else {
        z = x;
      }
      const CMap w(base, d.width, fan_in);
      const CVMap bias(base + d.width * fan_in, d.width);
      Matrix y = w * z;
      y.colwise() += bias;
      return y;
    }
    case LayerKind::lstm: {
      const int h = d.width;
      const int n_in = in.size();
      if (state == nullptr || state->h.rows() != h || state->h.cols() != batch)
        throw InvalidArgument("shape mismatch at " + layer_label(l, d) + ": hidden state");
      const CMap wx(base, 4 * h, n_in);
      const CMap wh(base + 4 * h * n_in, 4 * h, h);
      const CVMap bias(base + 4 * h * (n_in + h), 4 * h);
      Matrix z = wx * x + wh * state->h;
      z.colwise() += bias;
      Matrix gates(4 * h, batch);
      gates.topRows(2 * h) = sigmoid(z.topRows(2 * h));
      gates.middleRows(2 * h, h) = z.middleRows(2 * h, h).array().tanh().matrix();
      gates.bottomRows(h) = sigmoid(z.bottomRows(h));
      cache.a = x;
      cache.b = state->h;
      cache.c = state->c;
      Matrix c_new = gates.topRows(h).cwiseProduct(gates.middleRows(2 * h, h)) +
                     gates.middleRows(h, h).cwiseProduct(state->c);
      Matrix tanh_c = c_new.array().tanh().matrix();
      Matrix h_new = gates.bottomRows(h).cwiseProduct(tanh_c);
      cache.d = std::move(gates);
      cache.f = tanh_c;
      state->h = h_new;
      state->c = std::move(c_new);
      return h_new;
    }
    case LayerKind::activation: {
      Matrix y;
      switch (d.activation) {
        case Activation::identity: y = x; break;
        case Activation::relu: y = x.cwiseMax(0.0); break;
        case Activation::tanh: y = x.array().tanh().matrix(); break;
        case Activation::sigmoid: y = sigmoid(x); break;
      }
      cache.a = y;
      return y;
    }
  }
  return x;
}

Matrix Network::layer_backward(std::size_t l, std::span<const double> params,
                               const LayerCache& cache, const Matrix& dy, std::span<double> grad,
                               Matrix* d_side, Matrix* dh_carry, Matrix* dc_carry,
                               bool need_dx) const {
  const LayerDesc& d = spec_.layers[l];
  const Shape& in = shapes_[l];
  const Shape& out = shapes_[l + 1];
  const double* base = params.data() + slots_[l].offset;
  double* gbase = grad.data() + slots_[l].offset;
  const Eigen::Index batch = dy.cols();

  switch (d.kind) {
    case LayerKind::conv2d: {
      const int k = d.kernel, s = d.stride;
      const int kk = in.channels * k * k;
      const int positions = out.height * out.width;
      const int plane = in.height * in.width;
      Matrix dprod(d.out_channels, positions * batch);
      for (Eigen::Index b = 0; b < batch; ++b)
        dprod.middleCols(b * positions, positions) =
            CMap(dy.col(b).data(), positions, d.out_channels).transpose();
      MMap(gbase, d.out_channels, kk).noalias() += dprod * cache.a.transpose();
      MVMap(gbase + d.out_channels * kk, d.out_channels) += dprod.rowwise().sum();
      if (!need_dx) return {};
      const Matrix dcol = CMap(base, d.out_channels, kk).transpose() * dprod;
      Matrix dx = Matrix::Zero(in.size(), batch);
      for (Eigen::Index b = 0; b < batch; ++b) {
        double* dst = dx.col(b).data();
        for (int oy = 0; oy < out.height; ++oy) {
          for (int ox = 0; ox < out.width; ++ox) {
            const double* src = dcol.col(b * positions + oy * out.width + ox).data();
            for (int c = 0; c < in.channels; ++c)
              for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx)
                  dst[c * plane + (oy * s + ky) * in.width + ox * s + kx] += *src++;
          }
        }
      }
      return dx;
    }
    case LayerKind::batchnorm: {
      const int c = in.channels;
      const int plane = in.height * in.width;
      const CVMap gamma(base, c);
      const double count = static_cast<double>(plane * batch);
      Matrix dx(dy.rows(), batch);
      for (int ch = 0; ch < c; ++ch) {
        const auto g = dy.middleRows(ch * plane, plane).array();
        const auto xh = cache.a.middleRows(ch * plane, plane).array();
        gbase[ch] += (g * xh).sum();
        gbase[c + ch] += g.sum();
        if (!need_dx) continue;
        const double inv = cache.u[ch];
        if (cache.training) {
          const auto dxh = g * gamma[ch];
          const double s1 = dxh.sum();
          const double s2 = (dxh * xh).sum();
          dx.middleRows(ch * plane, plane) = ((inv / count) * (count * dxh - s1 - xh * s2)).matrix();
        } else {
          dx.middleRows(ch * plane, plane) = (g * (gamma[ch] * inv)).matrix();
        }
      }
      return dx;
    }
    case LayerKind::dense: {
      const int fan_in = in.size() + d.side_inputs;
      MMap(gbase, d.width, fan_in).noalias() += dy * cache.a.transpose();
      MVMap(gbase + d.width * fan_in, d.width) += dy.rowwise().sum();
      if (!need_dx && d_side == nullptr) return {};
      const Matrix dz = CMap(base, d.width, fan_in).transpose() * dy;
      if (d.side_inputs > 0 && d_side != nullptr) *d_side = dz.bottomRows(d.side_inputs);
      return dz.topRows(in.size());
    }
    case LayerKind::lstm: {
      const int h = d.width;
      const int n_in = in.size();
      const Matrix& gates = cache.d;
      const auto gi = gates.topRows(h).array();
      const auto gf = gates.middleRows(h, h).array();
      const auto gg = gates.middleRows(2 * h, h).array();
      const auto go = gates.bottomRows(h).array();
      const auto tc = cache.f.array();
      Matrix dh = dy;
      if (dh_carry != nullptr && dh_carry->size()) dh += *dh_carry;
      Matrix dc = (dh.array() * go * (1.0 - tc.square())).matrix();
      if (dc_carry != nullptr && dc_carry->size()) dc += *dc_carry;
      Matrix dz(4 * h, batch);
      dz.topRows(h) = (dc.array() * gg * gi * (1.0 - gi)).matrix();
      dz.middleRows(h, h) = (dc.array() * cache.c.array() * gf * (1.0 - gf)).matrix();
      dz.middleRows(2 * h, h) = (dc.array() * gi * (1.0 - gg.square())).matrix();
      dz.bottomRows(h) = (dh.array() * tc * go * (1.0 - go)).matrix();
      MMap(gbase, 4 * h, n_in).noalias() += dz * cache.a.transpose();
      MMap(gbase + 4 * h * n_in, 4 * h, h).noalias() += dz * cache.b.transpose();
      MVMap(gbase + 4 * h * (n_in + h), 4 * h) += dz.rowwise().sum();
      if (dh_carry != nullptr) *dh_carry = CMap(base + 4 * h * n_in, 4 * h, h).transpose() * dz;
      if (dc_carry != nullptr) *dc_carry = (dc.array() * gf).matrix();
      if (!need_dx) return {};
      return CMap(base, 4 * h, n_in).transpose() * dz;
    }
    case LayerKind::activation: {
      const auto y = cache.a.array();
      switch (d.activation) {
        case Activation::identity: return dy;
        case Activation::relu: return (dy.array() * (y > 0.0).cast<double>()).matrix();
        case Activation::tanh: return (dy.array() * (1.0 - y.square())).matrix();
        case Activation::sigmoid: return (dy.array() * y * (1.0 - y)).matrix();
      }
      return dy;
    }
  }
  return {};
}

// ---------------------------------------------------------------------------

Tape Network::run(std::span<const double> params, const std::vector<Matrix>& inputs,
                  const std::vector<Matrix>* side, const LstmState* initial, Mode mode) const {
  if (params.size() != param_count_)
    throw InvalidArgument("parameter count mismatch: expected " + std::to_string(param_count_) +
                          ", got " + std::to_string(params.size()));
  if (inputs.empty()) throw InvalidArgument("run: empty input sequence");
  if (side_inputs_ > 0 && (side == nullptr || side->size() != inputs.size()))
    throw InvalidArgument("run: side inputs required for every step");
  const auto batch = static_cast<int>(inputs.front().cols());
  Tape tape;
  tape.mode = mode;
  if (recurrent()) tape.final_state = initial ? *initial : zero_state(batch);
  tape.outputs.reserve(inputs.size());
  tape.caches.resize(inputs.size());
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    if (inputs[t].cols() != batch) throw InvalidArgument("run: batch size changes between steps");
    auto& caches = tape.caches[t];
    caches.resize(spec_.layers.size());
    Matrix x = inputs[t];
    for (std::size_t l = 0; l < spec_.layers.size(); ++l) {
      const Matrix* s = static_cast<int>(l) == side_layer_ ? &(*side)[t] : nullptr;
      x = layer_forward(l, params, x, s, recurrent() ? &tape.final_state : nullptr, caches[l], mode);
    }
    tape.outputs.push_back(std::move(x));
  }
  return tape;
}

void Network::backward(std::span<const double> params, const Tape& tape,
                       const std::vector<Matrix>& d_outputs, std::span<double> grad,
                       std::vector<Matrix>* d_side, std::vector<Matrix>* d_inputs,
                       std::size_t first_step) const {
  const std::size_t steps = tape.outputs.size();
  if (d_outputs.size() != steps) throw InvalidArgument("backward: one gradient per step required");
  if (grad.size() != param_count_) throw InvalidArgument("backward: gradient buffer size mismatch");
  if (d_side) d_side->assign(steps, Matrix());
  if (d_inputs) d_inputs->assign(steps, Matrix());
  Matrix dh, dc;
  for (std::size_t t = steps; t-- > first_step;) {
    Matrix g = d_outputs[t];
    if (g.rows() != output_size() || g.cols() != tape.outputs[t].cols())
      throw InvalidArgument("backward: output gradient shape mismatch");
    for (std::size_t l = spec_.layers.size(); l-- > 0;) {
      const bool is_side = static_cast<int>(l) == side_layer_;
      const bool is_lstm = static_cast<int>(l) == lstm_layer_;
      const bool need_dx = l > 0 || d_inputs != nullptr;
      Matrix* ds = (is_side && d_side) ? &(*d_side)[t] : nullptr;
      g = layer_backward(l, params, tape.caches[t][l], g, grad, ds, is_lstm ? &dh : nullptr,
                         is_lstm ? &dc : nullptr, need_dx);
      if (!need_dx) break;
    }
    if (d_inputs) (*d_inputs)[t] = std::move(g);
  }
}

Matrix Network::forward(std::span<const double> params, const Matrix& input, LstmState* hidden,
                        const Matrix* side) const {
  if (recurrent() && hidden == nullptr)
    throw InvalidArgument("forward: recurrent network needs a hidden state");
  std::vector<Matrix> inputs{input};
  std::vector<Matrix> sides;
  if (side) sides.push_back(*side);
  Tape tape = run(params, inputs, side ? &sides : nullptr, hidden, Mode::inference);
  if (recurrent()) *hidden = std::move(tape.final_state);
  return std::move(tape.outputs.front());
}

void Network::commit_batch_statistics(std::span<double> params, const Tape& tape,
                                      double momentum) const {
  if (tape.mode != Mode::training || tape.caches.empty()) return;
  for (std::size_t l = 0; l < spec_.layers.size(); ++l) {
    if (spec_.layers[l].kind != LayerKind::batchnorm) continue;
    const int c = shapes_[l].channels;
    const double count =
        static_cast<double>(shapes_[l].height * shapes_[l].width * tape.outputs.front().cols());
    const double unbias = count > 1.0 ? count / (count - 1.0) : 1.0;
    double* base = params.data() + slots_[l].offset;
    Vector mean = Vector::Zero(c), var = Vector::Zero(c);
    for (const auto& step : tape.caches) {
      mean += step[l].v;
      var += step[l].w;
    }
    mean /= static_cast<double>(tape.caches.size());
    var *= unbias / static_cast<double>(tape.caches.size());
    MVMap rmean(base + 2 * c, c), rvar(base + 3 * c, c);
    rmean = momentum * rmean + (1.0 - momentum) * mean;
    rvar = momentum * rvar + (1.0 - momentum) * var;
  }
}

GradientResult gradient(const Network& net, std::span<const double> params,
                        const std::vector<Matrix>& inputs, const LossHead& head,
                        const std::vector<Matrix>* side, Mode mode) {
  Tape tape = net.run(params, inputs, side, nullptr, mode);
  std::vector<Matrix> d_outputs(tape.outputs.size());
  for (std::size_t t = 0; t < d_outputs.size(); ++t)
    d_outputs[t] = Matrix::Zero(tape.outputs[t].rows(), tape.outputs[t].cols());
  GradientResult r;
  r.loss = head(tape.outputs, d_outputs);
  r.grad = Vector::Zero(static_cast<Eigen::Index>(net.param_count()));
  net.backward(params, tape, d_outputs, std::span<double>(r.grad.data(), net.param_count()));
  return r;
}

void adam_update(Vector& params, const Vector& grad, AdamState& state, double step_size,
                 const AdamConfig& config) {
  if (grad.size() != params.size()) throw InvalidArgument("adam_update: gradient size mismatch");
  if (state.m.size() != params.size()) {
    state.m = Vector::Zero(params.size());
    state.v = Vector::Zero(params.size());
    state.step = 0;
  }
  ++state.step;
  state.m = config.beta1 * state.m + (1.0 - config.beta1) * grad;
  state.v = config.beta2 * state.v + (1.0 - config.beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  params.array() -=
      step_size * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + config.epsilon);
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'R', 'V', 'C', 'K'};

template <class T>
void put(std::string& out, T value) {
  static_assert(std::endian::native == std::endian::little, "little-endian host required");
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

void put_text(std::string& out, const std::string& s) {
  put<std::uint64_t>(out, s.size());
  out += s;
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <class T>
  T get() {
    T value;
    if (pos_ + sizeof(T) > bytes_.size()) throw CheckpointCountError("checkpoint truncated");
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::string text() {
    const auto n = get<std::uint64_t>();
    if (n > bytes_.size() - pos_) throw CheckpointCountError("checkpoint truncated");
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }
  void skip(std::size_t n) { pos_ += n; }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const Checkpoint& checkpoint) {
  std::string out(kMagic, 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  put_text(out, checkpoint.spec.to_text());
  put<std::uint64_t>(out, static_cast<std::uint64_t>(checkpoint.params.size()));
  for (Eigen::Index k = 0; k < checkpoint.params.size(); ++k) put<double>(out, checkpoint.params[k]);
  put<std::uint64_t>(out, checkpoint.meta.seed);
  put<std::uint64_t>(out, checkpoint.meta.steps);
  put<double>(out, checkpoint.meta.loss);
  put_text(out, checkpoint.meta.note);
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw CheckpointHeaderError("not a checkpoint: bad magic");
  if (bytes.size() < 8) throw CheckpointHeaderError("not a checkpoint: header truncated");
  std::uint32_t version;
  std::memcpy(&version, bytes.data() + 4, 4);
  if (version != kCheckpointVersion)
    throw CheckpointVersionError("unsupported checkpoint version " + std::to_string(version));
  Reader in(bytes);
  in.skip(8);
  Checkpoint ck;
  std::string spec_text;
  try {
    spec_text = in.text();
  } catch (const CheckpointCountError&) {
    throw CheckpointHeaderError("checkpoint header truncated");
  }
  ck.spec = NetSpec::from_text(spec_text);
  const auto count = in.get<std::uint64_t>();
  const Network net(ck.spec);
  if (count != net.param_count())
    throw CheckpointCountError("checkpoint holds " + std::to_string(count) +
                               " parameters, architecture needs " +
                               std::to_string(net.param_count()));
  if (in.remaining() / sizeof(double) < count) throw CheckpointCountError("checkpoint truncated");
  ck.params.resize(static_cast<Eigen::Index>(count));
  for (std::uint64_t k = 0; k < count; ++k) ck.params[static_cast<Eigen::Index>(k)] = in.get<double>();
  ck.meta.seed = in.get<std::uint64_t>();
  ck.meta.steps = in.get<std::uint64_t>();
  ck.meta.loss = in.get<double>();
  ck.meta.note = in.text();
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  const std::string bytes = encode_checkpoint(checkpoint);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

std::uint64_t checkpoint_hash(const Checkpoint& checkpoint) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char ch : encode_checkpoint(checkpoint)) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace rover::nn
