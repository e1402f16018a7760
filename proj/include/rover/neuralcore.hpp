#pragma once

// Minimal f64 network toolkit: conv2d, batch norm, dense, LSTM and
// elementwise activations, with hand-written reverse-mode gradients,
// Adam, and a versioned binary checkpoint format.
//
// Tensors are Eigen matrices of shape (features x batch). Spatial features
// are laid out channel-major: index = c * H * W + y * W + x.

#include "rover/core.hpp"

#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace rover::nn {

enum class LayerKind { conv2d, batchnorm, dense, lstm, activation };
enum class Activation { identity, relu, tanh, sigmoid };

struct Shape {
  int channels = 1;
  int height = 1;
  int width = 1;
  int size() const { return channels * height * width; }
  bool operator==(const Shape&) const = default;
};

struct LayerDesc {
  LayerKind kind = LayerKind::dense;
  int out_channels = 0;  // conv2d
  int kernel = 0;        // conv2d
  int stride = 1;        // conv2d
  int width = 0;         // dense, lstm
  int side_inputs = 0;   // dense: extra per-sample inputs appended to its input
  Activation activation = Activation::identity;

  static LayerDesc conv(int out_channels, int kernel, int stride);
  static LayerDesc batchnorm();
  static LayerDesc dense(int width, int side_inputs = 0);
  static LayerDesc lstm(int width);
  static LayerDesc act(Activation a);
  bool operator==(const LayerDesc&) const = default;
};

struct NetSpec {
  Shape input;
  std::vector<LayerDesc> layers;

  /// One layer per `;`-separated clause, e.g.
  /// "input 1 15 15; conv2d 8 3 1; batchnorm; activation relu; dense 2".
  std::string to_text() const;
  static NetSpec from_text(const std::string& text);
  bool operator==(const NetSpec&) const = default;
};

enum class Mode { inference, training };

struct LstmState {
  Matrix h;  // width x batch
  Matrix c;
};

struct LayerCache {
  Matrix a, b, c, d, e, f;
  Vector u, v, w;
  bool training = false;
};

/// Everything a backward pass needs from a (possibly multi-step) forward.
struct Tape {
  std::vector<Matrix> outputs;                  // per step, out x batch
  std::vector<std::vector<LayerCache>> caches;  // [step][layer]
  LstmState final_state;
  Mode mode = Mode::inference;
};

class Network {
 public:
  explicit Network(NetSpec spec);

  const NetSpec& spec() const { return spec_; }
  std::size_t param_count() const { return param_count_; }
  int input_size() const { return spec_.input.size(); }
  int output_size() const { return shapes_.back().size(); }
  bool recurrent() const { return lstm_layer_ >= 0; }
  int hidden_width() const;
  int side_input_count() const { return side_inputs_; }

  /// Fan-in scaled Gaussian weights, zero biases, unit BN scale, LSTM forget
  /// bias 1, BN running variance 1.
  Vector initial_params(Rng& rng) const;

  LstmState zero_state(int batch) const;

  /// Runs a sequence. `side` (if the spec takes side inputs) holds one
  /// (side x batch) matrix per step. `initial` defaults to the zero state.
  Tape run(std::span<const double> params, const std::vector<Matrix>& inputs,
           const std::vector<Matrix>* side = nullptr, const LstmState* initial = nullptr,
           Mode mode = Mode::inference) const;

  /// Reverse pass for `tape`. Accumulates into `grad` (param_count entries).
  /// Steps before `first_step` receive no gradient (truncated BPTT).
  void backward(std::span<const double> params, const Tape& tape,
                const std::vector<Matrix>& d_outputs, std::span<double> grad,
                std::vector<Matrix>* d_side = nullptr, std::vector<Matrix>* d_inputs = nullptr,
                std::size_t first_step = 0) const;

  /// Single inference step. A recurrent net reads and replaces `hidden`,
  /// which must then be non-null.
  Matrix forward(std::span<const double> params, const Matrix& input, LstmState* hidden = nullptr,
                 const Matrix* side = nullptr) const;

  /// Folds the batch statistics recorded in a training-mode tape into the
  /// running statistics stored inside `params`.
  void commit_batch_statistics(std::span<double> params, const Tape& tape,
                               double momentum = 0.9) const;

  /// Mask with 1 for trainable entries, 0 for BN running statistics.
  const std::vector<char>& trainable() const { return trainable_; }

 private:
  struct Slot {
    std::size_t offset = 0;
    std::size_t count = 0;
  };

  Matrix layer_forward(std::size_t l, std::span<const double> params, const Matrix& x,
                       const Matrix* side, LstmState* state, LayerCache& cache, Mode mode) const;
  Matrix layer_backward(std::size_t l, std::span<const double> params, const LayerCache& cache,
                        const Matrix& dy, std::span<double> grad, Matrix* d_side,
                        Matrix* dh_carry, Matrix* dc_carry, bool need_dx) const;

  NetSpec spec_;
  std::vector<Shape> shapes_;  // shapes_[l] is the input of layer l; back() is the output
  std::vector<Slot> slots_;
  std::vector<char> trainable_;
  std::size_t param_count_ = 0;
  int lstm_layer_ = -1;
  int side_layer_ = -1;
  int side_inputs_ = 0;
};

/// Loss head: maps per-step outputs to (scalar loss, d loss / d outputs).
using LossHead =
    std::function<double(const std::vector<Matrix>& outputs, std::vector<Matrix>& d_outputs)>;

struct GradientResult {
  double loss = 0.0;
  Vector grad;
};

/// Reverse-mode gradient of `head` over a full unrolled sequence.
GradientResult gradient(const Network& net, std::span<const double> params,
                        const std::vector<Matrix>& inputs, const LossHead& head,
                        const std::vector<Matrix>* side = nullptr, Mode mode = Mode::training);

// ---------------------------------------------------------------------------

struct AdamState {
  Vector m;
  Vector v;
  std::uint64_t step = 0;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// One bias-corrected Adam step in place.
void adam_update(Vector& params, const Vector& grad, AdamState& state, double step_size,
                 const AdamConfig& config = {});

// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  std::uint64_t seed = 0;
  std::uint64_t steps = 0;
  double loss = 0.0;
  std::string note;
  bool operator==(const CheckpointMeta&) const = default;
};

struct Checkpoint {
  NetSpec spec;
  Vector params;
  CheckpointMeta meta;
};

/// Little-endian: "RVCK", u32 version, u64 + spec text, u64 count, f64[count],
/// u64 seed, u64 steps, f64 loss, u64 + note text.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(const std::string& bytes);

/// FNV-1a over the encoded checkpoint, for manifests.
std::uint64_t checkpoint_hash(const Checkpoint& checkpoint);

}  // namespace rover::nn
