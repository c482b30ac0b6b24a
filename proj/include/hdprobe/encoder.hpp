#pragma once

// Neural VSA encoder: a residual MLP mapping a pooled residual-stream
// embedding e in R^d to a vector in (-1, 1)^D.
//
//   input block   h0 = GELU(LN(W0 e + b0))
//   residual i    h  = h + Dropout(LN(GELU(Wi h + bi)))        (i = 1..blocks)
//   output block  y  = tanh(Wo LN(h) + bo)
//
// Training minimises BCE(sigmoid(y), (sign(t) + 1) / 2) + mse_coeff * MSE(y, t)
// with AdamW, cosine annealing with warm restarts and a gradient-accumulation
// schedule. Gradients are derived by hand for this fixed architecture.
//
// Batches are column-major: one sample per column.

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hdprobe/error.hpp"

namespace hdprobe::encoder {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

struct EncoderConfig {
  Eigen::Index input_dim = 0;
  Eigen::Index hidden_dim = 4096;
  Eigen::Index output_dim = 4096;
  int residual_blocks = 2;
  double dropout = 0.5;
  double layer_norm_eps = 1e-5;

  void validate() const;
};

// Closed form: (d*H + H) + blocks*(H*H + H) + (H*D + D) + 2H * (blocks + 2).
std::size_t parameter_count(const EncoderConfig& config);

template <typename Scalar>
struct Linear {
  Matrix<Scalar> weight;  // out x in
  Vector<Scalar> bias;
};

template <typename Scalar>
struct LayerNorm {
  Vector<Scalar> gamma;
  Vector<Scalar> beta;
};

template <typename Scalar>
struct EncoderParams {
  EncoderConfig config;
  std::uint64_t seed = 0;

  Linear<Scalar> input;
  LayerNorm<Scalar> input_norm;
  std::vector<Linear<Scalar>> block_linear;
  std::vector<LayerNorm<Scalar>> block_norm;
  LayerNorm<Scalar> output_norm;
  Linear<Scalar> output;

  // Tensors in serialization order with PyTorch-style names; vectors are
  // viewed as n x 1 matrices.
  std::vector<std::pair<std::string, Eigen::Map<Matrix<Scalar>>>> tensors();
  std::vector<std::pair<std::string, Eigen::Map<const Matrix<Scalar>>>> tensors() const;

  std::size_t parameter_count() const;
  bool all_finite() const;

  // Same shapes, every entry zero.
  static EncoderParams zeros(const EncoderConfig& config);

  template <typename Other>
  EncoderParams<Other> cast() const;

  friend bool operator==(const EncoderParams& a, const EncoderParams& b) {
    const auto ta = a.tensors();
    const auto tb = b.tensors();
    if (ta.size() != tb.size() || a.seed != b.seed) return false;
    for (std::size_t i = 0; i < ta.size(); ++i) {
      if (ta[i].first != tb[i].first || ta[i].second.rows() != tb[i].second.rows() ||
          ta[i].second.cols() != tb[i].second.cols() || ta[i].second != tb[i].second) {
        return false;
      }
    }
    return true;
  }
};

// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases 0, LayerNorm (1, 0).
template <typename Scalar>
EncoderParams<Scalar> init(const EncoderConfig& config, std::uint64_t seed);

struct ForwardMode {
  bool train = false;
  std::uint64_t dropout_seed = 0;

  static ForwardMode eval() { return {}; }
  static ForwardMode training(std::uint64_t dropout_seed) { return {true, dropout_seed}; }
};

template <typename Scalar>
Matrix<Scalar> forward(const EncoderParams<Scalar>& params, const Matrix<Scalar>& inputs, ForwardMode mode);

template <typename Scalar>
Vector<Scalar> forward(const EncoderParams<Scalar>& params, const Vector<Scalar>& input, ForwardMode mode) {
  return forward(params, Matrix<Scalar>(input), mode).col(0);
}

struct LossValue {
  double total = 0.0;
  double bce = 0.0;
  double mse = 0.0;  // unweighted mean squared error
};

// Mean over all elements of the batch.
template <typename Scalar>
LossValue loss(const Matrix<Scalar>& predictions, const Matrix<Scalar>& targets, double mse_coeff);

// d loss / d predictions.
template <typename Scalar>
Matrix<Scalar> loss_gradient(const Matrix<Scalar>& predictions, const Matrix<Scalar>& targets, double mse_coeff);

// Runs forward + backward on a batch and adds scale * dL/dtheta into `grads`.
template <typename Scalar>
LossValue accumulate_gradients(const EncoderParams<Scalar>& params, const Matrix<Scalar>& inputs,
                               const Matrix<Scalar>& targets, ForwardMode mode, double mse_coeff,
                               EncoderParams<Scalar>& grads, Scalar scale = Scalar(1));

template <typename Scalar>
EncoderParams<Scalar> backward(const EncoderParams<Scalar>& params, const Matrix<Scalar>& inputs,
                               const Matrix<Scalar>& targets, ForwardMode mode, double mse_coeff) {
  auto grads = EncoderParams<Scalar>::zeros(params.config);
  accumulate_gradients(params, inputs, targets, mode, mse_coeff, grads);
  return grads;
}

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

// Decoupled weight decay: theta <- theta (1 - lr wd), then a bias-corrected Adam step.
template <typename Scalar>
class AdamW {
 public:
  AdamW(const EncoderConfig& config, AdamWConfig cfg);

  void step(EncoderParams<Scalar>& params, const EncoderParams<Scalar>& grads, double lr);
  long long steps() const noexcept { return t_; }

 private:
  AdamWConfig cfg_;
  EncoderParams<Scalar> m_;
  EncoderParams<Scalar> v_;
  long long t_ = 0;
};

struct TrainConfig {
  std::size_t batch_size = 32;
  double base_lr = 3e-5;
  double weight_decay = 1e-4;
  double mse_coeff = 0.1;
  int patience = 100;
  int max_epochs = 1000;
  // Cosine annealing with warm restarts, active from restart_start_epoch.
  int restart_start_epoch = 100;
  int first_restart_period = 100;
  int restart_period_mult = 2;
  double lr_floor_ratio = 0.01;
  // epoch -> gradient accumulation factor (effective batch multiplier).
  std::map<int, int> accumulation = {{110, 2}, {310, 4}, {410, 8}};
  std::uint64_t seed = 0;

  void validate() const;
};

// Learning rate used during (0-based) `epoch`.
double learning_rate(const TrainConfig& config, int epoch);
// Number of micro-batches accumulated per optimizer step during `epoch`.
int accumulation_factor(const TrainConfig& config, int epoch);

template <typename Scalar>
struct Dataset {
  Matrix<Scalar> inputs;   // d x N
  Matrix<Scalar> targets;  // D x N, bipolar

  Eigen::Index size() const noexcept { return inputs.cols(); }
};

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  std::size_t effective_batch = 0;

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct Metrics {
  double cosine_mean = 0.0;
  double binary_accuracy = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;
  double best_val_loss = 0.0;
  bool stopped_early = false;
  std::optional<Metrics> test;
  double wall_seconds = 0.0;
};

template <typename Scalar>
struct TrainResult {
  EncoderParams<Scalar> params;  // best validation-loss parameters
  TrainReport report;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

template <typename Scalar>
TrainResult<Scalar> train(EncoderParams<Scalar> params, const Dataset<Scalar>& train_set,
                          const Dataset<Scalar>& val_set, const TrainConfig& config,
                          const EpochCallback& on_epoch = {});

struct LrFinderConfig {
  double min_lr = 1e-7;
  double max_lr = 1e-1;
  int num_steps = 100;
  double smoothing = 0.98;
  double diverge_factor = 4.0;
  double fallback_lr = 3e-5;
};

struct LrFinderResult {
  double suggestion = 0.0;
  bool fallback = false;
  std::vector<double> lrs;
  std::vector<double> losses;  // smoothed
};

// Exponential learning-rate sweep from a copy of `params`; suggests the rate
// at the steepest descent of the smoothed loss.
template <typename Scalar>
LrFinderResult lr_finder(const EncoderParams<Scalar>& params, const Dataset<Scalar>& train_set,
                         const TrainConfig& config, const LrFinderConfig& finder = {});

template <typename Scalar>
Metrics evaluate_predictions(const Matrix<Scalar>& predictions, const Matrix<Scalar>& targets);

template <typename Scalar>
Metrics evaluate(const EncoderParams<Scalar>& params, const Dataset<Scalar>& test_set);

// Eval-mode predictions for every column of `inputs`, computed in chunks.
template <typename Scalar>
Matrix<Scalar> predict(const EncoderParams<Scalar>& params, const Matrix<Scalar>& inputs);

// "HDPW" weights file: u32 version, u32 header length, JSON header
// {d, D, blocks, seed, tensors:[{name, shape}]}, then float32 LE tensors.
inline constexpr std::uint32_t kWeightsVersion = 1;

template <typename Scalar>
void save_params(const EncoderParams<Scalar>& params, const std::string& path);

// `dropout` and `layer_norm_eps` are not stored and come from `base`.
template <typename Scalar>
EncoderParams<Scalar> load_params(const std::string& path, const EncoderConfig& base = {});

void write_telemetry_csv(const std::string& path, const std::vector<EpochRecord>& epochs);

// ---------------------------------------------------------------------------

template <typename Scalar>
template <typename Other>
EncoderParams<Other> EncoderParams<Scalar>::cast() const {
  EncoderParams<Other> out;
  out.config = config;
  out.seed = seed;
  auto lin = [](const Linear<Scalar>& l) {
    return Linear<Other>{l.weight.template cast<Other>(), l.bias.template cast<Other>()};
  };
  auto ln = [](const LayerNorm<Scalar>& l) {
    return LayerNorm<Other>{l.gamma.template cast<Other>(), l.beta.template cast<Other>()};
  };
  out.input = lin(input);
  out.input_norm = ln(input_norm);
  for (const auto& l : block_linear) out.block_linear.push_back(lin(l));
  for (const auto& l : block_norm) out.block_norm.push_back(ln(l));
  out.output_norm = ln(output_norm);
  out.output = lin(output);
  return out;
}

}  // namespace hdprobe::encoder
