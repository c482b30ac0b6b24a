#include "hdprobe/encoder.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <numeric>

#include "hdprobe/binary_io.hpp"
#include "hdprobe/log.hpp"
#include "hdprobe/random.hpp"

namespace hdprobe::encoder {
namespace {

template <typename S>
using RowVec = Eigen::Matrix<S, 1, Eigen::Dynamic>;

// Name, storage and logical shape of every tensor, in file order.
template <typename S, typename Params>
void for_each_tensor(Params& p, auto&& fn) {
  auto lin = [&](const std::string& prefix, auto& l) {
    fn(prefix + ".weight", l.weight.data(), l.weight.rows(), l.weight.cols(), false);
    fn(prefix + ".bias", l.bias.data(), l.bias.rows(), Eigen::Index(1), true);
  };
  auto ln = [&](const std::string& prefix, auto& l) {
    fn(prefix + ".weight", l.gamma.data(), l.gamma.rows(), Eigen::Index(1), true);
    fn(prefix + ".bias", l.beta.data(), l.beta.rows(), Eigen::Index(1), true);
  };
  lin("input", p.input);
  ln("input_norm", p.input_norm);
  for (std::size_t i = 0; i < p.block_linear.size(); ++i) {
    lin("blocks." + std::to_string(i) + ".linear", p.block_linear[i]);
    ln("blocks." + std::to_string(i) + ".norm", p.block_norm[i]);
  }
  ln("output_norm", p.output_norm);
  lin("output", p.output);
}

template <typename S>
S gelu(S x) {
  return S(0.5) * x * (S(1) + std::erf(x / std::numbers::sqrt2_v<S>));
}

template <typename S>
S gelu_grad(S x) {
  const S cdf = S(0.5) * (S(1) + std::erf(x / std::numbers::sqrt2_v<S>));
  const S pdf = std::exp(S(-0.5) * x * x) / std::sqrt(S(2) * std::numbers::pi_v<S>);
  return cdf + x * pdf;
}

template <typename S>
Matrix<S> linear(const Linear<S>& l, const Matrix<S>& x) {
  Matrix<S> z = l.weight * x;
  z.colwise() += l.bias;
  return z;
}

template <typename S>
struct NormCache {
  Matrix<S> xhat;
  RowVec<S> inv_std;
};

template <typename S>
Matrix<S> layer_norm(const Matrix<S>& x, const LayerNorm<S>& p, S eps, NormCache<S>& cache) {
  const RowVec<S> mean = x.colwise().mean();
  Matrix<S> xc = x.rowwise() - mean;
  const RowVec<S> var = xc.array().square().colwise().mean();
  cache.inv_std = (var.array() + eps).rsqrt();
  cache.xhat = xc.array().rowwise() * cache.inv_std.array();
  Matrix<S> y = cache.xhat.array().colwise() * p.gamma.array();
  y.colwise() += p.beta;
  return y;
}

// Accumulates parameter gradients into g and returns dL/dx.
template <typename S>
Matrix<S> layer_norm_backward(const Matrix<S>& dy, const LayerNorm<S>& p, const NormCache<S>& cache,
                              LayerNorm<S>& g) {
  g.gamma += (dy.array() * cache.xhat.array()).rowwise().sum().matrix();
  g.beta += dy.rowwise().sum();
  const Matrix<S> dxhat = dy.array().colwise() * p.gamma.array();
  const RowVec<S> m1 = dxhat.colwise().mean();
  const RowVec<S> m2 = (dxhat.array() * cache.xhat.array()).colwise().mean();
  Matrix<S> dx = (dxhat.array().rowwise() - m1.array()) - (cache.xhat.array().rowwise() * m2.array());
  dx.array().rowwise() *= cache.inv_std.array();
  return dx;
}

// Inverted dropout mask, a pure function of (seed, block, element).
template <typename S>
Matrix<S> dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, std::uint64_t seed, int block) {
  const std::uint64_t block_seed = derive_seed(seed, static_cast<std::uint64_t>(block));
  const S keep_scale = S(1.0 / (1.0 - p));
  Matrix<S> mask(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c) {
    for (Eigen::Index r = 0; r < rows; ++r) {
      const std::uint64_t h = derive_seed(block_seed, static_cast<std::uint64_t>(c * rows + r));
      const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
      mask(r, c) = u < p ? S(0) : keep_scale;
    }
  }
  return mask;
}

template <typename S>
struct ForwardCache {
  Matrix<S> x;
  NormCache<S> norm0;
  Matrix<S> n0;  // pre-GELU input block activation
  std::vector<Matrix<S>> h;  // h[0] input block output, h[i] after residual block i
  std::vector<Matrix<S>> u;  // pre-GELU residual activations
  std::vector<NormCache<S>> norms;
  std::vector<Matrix<S>> masks;  // empty in eval mode
  NormCache<S> norm_out;
  Matrix<S> q;  // normalized input to the output layer
  Matrix<S> y;
};

template <typename S>
void forward_cached(const EncoderParams<S>& p, const Matrix<S>& x, ForwardMode mode, ForwardCache<S>& c) {
  const auto& cfg = p.config;
  if (x.rows() != cfg.input_dim) {
    throw InvalidArgument("encoder input has " + std::to_string(x.rows()) + " rows, expected " +
                          std::to_string(cfg.input_dim));
  }
  if (!x.allFinite()) throw InvalidArgument("encoder input contains non-finite values");
  const S eps = static_cast<S>(cfg.layer_norm_eps);
  const bool drop = mode.train && cfg.dropout > 0.0;
  c.x = x;
  c.n0 = layer_norm(linear(p.input, x), p.input_norm, eps, c.norm0);
  c.h.assign(1, c.n0.unaryExpr([](S v) { return gelu(v); }));
  c.u.clear();
  c.norms.assign(p.block_linear.size(), {});
  c.masks.clear();
  for (std::size_t i = 0; i < p.block_linear.size(); ++i) {
    c.u.push_back(linear(p.block_linear[i], c.h.back()));
    const Matrix<S> g = c.u.back().unaryExpr([](S v) { return gelu(v); });
    Matrix<S> n = layer_norm(g, p.block_norm[i], eps, c.norms[i]);
    if (drop) {
      c.masks.push_back(dropout_mask<S>(n.rows(), n.cols(), cfg.dropout, mode.dropout_seed, static_cast<int>(i)));
      n.array() *= c.masks.back().array();
    }
    c.h.push_back(c.h.back() + n);
  }
  c.q = layer_norm(c.h.back(), p.output_norm, eps, c.norm_out);
  c.y = linear(p.output, c.q).array().tanh();
}

template <typename S>
Matrix<S> gather_columns(const Matrix<S>& m, std::span<const std::size_t> idx) {
  Matrix<S> out(m.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out.col(static_cast<Eigen::Index>(i)) = m.col(static_cast<Eigen::Index>(idx[i]));
  return out;
}

template <typename S>
void set_zero(EncoderParams<S>& p) {
  for (auto& [name, t] : p.tensors()) t.setZero();
}

template <typename S>
void check_dataset(const EncoderParams<S>& p, const Dataset<S>& d, const char* what) {
  if (d.inputs.cols() != d.targets.cols()) throw InvalidArgument(std::string(what) + ": input/target count mismatch");
  if (d.inputs.rows() != p.config.input_dim) throw InvalidArgument(std::string(what) + ": wrong input dimension");
  if (d.targets.rows() != p.config.output_dim) throw InvalidArgument(std::string(what) + ": wrong target dimension");
}

template <typename S>
double dataset_loss(const EncoderParams<S>& p, const Dataset<S>& d, double mse_coeff) {
  constexpr Eigen::Index chunk = 256;
  double total = 0.0;
  for (Eigen::Index start = 0; start < d.size(); start += chunk) {
    const Eigen::Index n = std::min(chunk, d.size() - start);
    const Matrix<S> pred = forward(p, Matrix<S>(d.inputs.middleCols(start, n)), ForwardMode::eval());
    total += loss<S>(pred, d.targets.middleCols(start, n), mse_coeff).total * static_cast<double>(n);
  }
  return total / static_cast<double>(d.size());
}

}  // namespace

void EncoderConfig::validate() const {
  if (input_dim <= 0 || hidden_dim <= 0 || output_dim <= 0) throw InvalidArgument("encoder dimensions must be positive");
  if (residual_blocks < 0) throw InvalidArgument("encoder residual_blocks must be non-negative");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw InvalidArgument("encoder dropout must be in [0, 1)");
  if (!(layer_norm_eps > 0.0)) throw InvalidArgument("encoder layer_norm_eps must be positive");
}

std::size_t parameter_count(const EncoderConfig& c) {
  const auto d = static_cast<std::size_t>(c.input_dim);
  const auto h = static_cast<std::size_t>(c.hidden_dim);
  const auto D = static_cast<std::size_t>(c.output_dim);
  const auto b = static_cast<std::size_t>(c.residual_blocks);
  return (d * h + h) + b * (h * h + h) + (h * D + D) + 2 * h * (b + 2);
}

template <typename S>
std::vector<std::pair<std::string, Eigen::Map<Matrix<S>>>> EncoderParams<S>::tensors() {
  std::vector<std::pair<std::string, Eigen::Map<Matrix<S>>>> out;
  for_each_tensor<S>(*this, [&](std::string name, S* data, Eigen::Index r, Eigen::Index c, bool) {
    out.emplace_back(std::move(name), Eigen::Map<Matrix<S>>(data, r, c));
  });
  return out;
}

template <typename S>
std::vector<std::pair<std::string, Eigen::Map<const Matrix<S>>>> EncoderParams<S>::tensors() const {
  std::vector<std::pair<std::string, Eigen::Map<const Matrix<S>>>> out;
  for_each_tensor<S>(*this, [&](std::string name, const S* data, Eigen::Index r, Eigen::Index c, bool) {
    out.emplace_back(std::move(name), Eigen::Map<const Matrix<S>>(data, r, c));
  });
  return out;
}

template <typename S>
std::size_t EncoderParams<S>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : tensors()) n += static_cast<std::size_t>(t.size());
  return n;
}

template <typename S>
bool EncoderParams<S>::all_finite() const {
  for (const auto& [name, t] : tensors()) {
    if (!t.allFinite()) return false;
  }
  return true;
}

template <typename S>
EncoderParams<S> EncoderParams<S>::zeros(const EncoderConfig& config) {
  config.validate();
  const auto d = config.input_dim, h = config.hidden_dim, D = config.output_dim;
  EncoderParams p;
  p.config = config;
  p.input = {Matrix<S>::Zero(h, d), Vector<S>::Zero(h)};
  p.input_norm = {Vector<S>::Zero(h), Vector<S>::Zero(h)};
  for (int i = 0; i < config.residual_blocks; ++i) {
    p.block_linear.push_back({Matrix<S>::Zero(h, h), Vector<S>::Zero(h)});
    p.block_norm.push_back({Vector<S>::Zero(h), Vector<S>::Zero(h)});
  }
  p.output_norm = {Vector<S>::Zero(h), Vector<S>::Zero(h)};
  p.output = {Matrix<S>::Zero(D, h), Vector<S>::Zero(D)};
  return p;
}

template <typename S>
EncoderParams<S> init(const EncoderConfig& config, std::uint64_t seed) {
  auto p = EncoderParams<S>::zeros(config);
  p.seed = seed;
  std::uint64_t index = 0;
  auto fill_linear = [&](Linear<S>& l) {
    SplitMix64 rng(derive_seed(seed, index++));
    const double bound = 1.0 / std::sqrt(static_cast<double>(l.weight.cols()));
    // Column-major fill keeps the draw order independent of the scalar type.
    for (Eigen::Index j = 0; j < l.weight.size(); ++j) {
      l.weight.data()[j] = static_cast<S>(bound * (2.0 * rng.uniform() - 1.0));
    }
  };
  auto fill_norm = [](LayerNorm<S>& l) { l.gamma.setOnes(); };
  fill_linear(p.input);
  fill_norm(p.input_norm);
  for (std::size_t i = 0; i < p.block_linear.size(); ++i) {
    fill_linear(p.block_linear[i]);
    fill_norm(p.block_norm[i]);
  }
  fill_norm(p.output_norm);
  fill_linear(p.output);
  return p;
}

template <typename S>
Matrix<S> forward(const EncoderParams<S>& params, const Matrix<S>& inputs, ForwardMode mode) {
  ForwardCache<S> cache;
  forward_cached(params, inputs, mode, cache);
  return std::move(cache.y);
}

template <typename S>
LossValue loss(const Matrix<S>& predictions, const Matrix<S>& targets, double mse_coeff) {
  if (predictions.rows() != targets.rows() || predictions.cols() != targets.cols()) {
    throw InvalidArgument("loss: prediction/target shape mismatch");
  }
  if (predictions.size() == 0) throw InvalidArgument("loss: empty batch");
  double bce = 0.0, mse = 0.0;
  for (Eigen::Index i = 0; i < predictions.size(); ++i) {
    const double x = predictions.data()[i];
    const double y = targets.data()[i];
    const double t = y > 0 ? 1.0 : (y < 0 ? 0.0 : 0.5);
    const double softplus = std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
    bce += softplus - t * x;
    mse += (x - y) * (x - y);
  }
  const double n = static_cast<double>(predictions.size());
  return {bce / n + mse_coeff * mse / n, bce / n, mse / n};
}

template <typename S>
Matrix<S> loss_gradient(const Matrix<S>& predictions, const Matrix<S>& targets, double mse_coeff) {
  if (predictions.rows() != targets.rows() || predictions.cols() != targets.cols()) {
    throw InvalidArgument("loss_gradient: prediction/target shape mismatch");
  }
  const S inv_n = S(1) / static_cast<S>(predictions.size());
  const S c2 = static_cast<S>(2.0 * mse_coeff);
  return predictions.binaryExpr(targets, [=](S x, S y) {
    const S t = y > 0 ? S(1) : (y < 0 ? S(0) : S(0.5));
    const S sig = S(1) / (S(1) + std::exp(-x));
    return (sig - t + c2 * (x - y)) * inv_n;
  });
}

template <typename S>
LossValue accumulate_gradients(const EncoderParams<S>& p, const Matrix<S>& inputs, const Matrix<S>& targets,
                               ForwardMode mode, double mse_coeff, EncoderParams<S>& g, S scale) {
  ForwardCache<S> c;
  forward_cached(p, inputs, mode, c);
  const LossValue value = loss<S>(c.y, targets, mse_coeff);

  // Output block.
  Matrix<S> d_out = loss_gradient<S>(c.y, targets, mse_coeff) * scale;
  d_out.array() *= S(1) - c.y.array().square();
  g.output.weight.noalias() += d_out * c.q.transpose();
  g.output.bias += d_out.rowwise().sum();
  Matrix<S> dh = layer_norm_backward<S>(p.output.weight.transpose() * d_out, p.output_norm, c.norm_out, g.output_norm);

  // Residual blocks, last to first. dh flows through the skip unchanged.
  for (std::size_t k = p.block_linear.size(); k-- > 0;) {
    Matrix<S> dn = dh;
    if (!c.masks.empty()) dn.array() *= c.masks[k].array();
    Matrix<S> du = layer_norm_backward<S>(dn, p.block_norm[k], c.norms[k], g.block_norm[k]);
    du.array() *= c.u[k].unaryExpr([](S v) { return gelu_grad(v); }).array();
    g.block_linear[k].weight.noalias() += du * c.h[k].transpose();
    g.block_linear[k].bias += du.rowwise().sum();
    dh.noalias() += p.block_linear[k].weight.transpose() * du;
  }

  // Input block.
  Matrix<S> dn0 = dh.array() * c.n0.unaryExpr([](S v) { return gelu_grad(v); }).array();
  const Matrix<S> dz0 = layer_norm_backward<S>(dn0, p.input_norm, c.norm0, g.input_norm);
  g.input.weight.noalias() += dz0 * c.x.transpose();
  g.input.bias += dz0.rowwise().sum();
  return value;
}

template <typename S>
AdamW<S>::AdamW(const EncoderConfig& config, AdamWConfig cfg)
    : cfg_(cfg), m_(EncoderParams<S>::zeros(config)), v_(EncoderParams<S>::zeros(config)) {}

template <typename S>
void AdamW<S>::step(EncoderParams<S>& params, const EncoderParams<S>& grads, double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  const S b1 = static_cast<S>(cfg_.beta1), b2 = static_cast<S>(cfg_.beta2);
  const S decay = static_cast<S>(1.0 - lr * cfg_.weight_decay);
  const S step = static_cast<S>(lr / bc1);
  const S sqrt_bc2 = static_cast<S>(std::sqrt(bc2));
  const S eps = static_cast<S>(cfg_.eps);

  auto tp = params.tensors();
  const auto tg = grads.tensors();
  auto tm = m_.tensors();
  auto tv = v_.tensors();
  if (tp.size() != tg.size() || tp.size() != tm.size()) throw InvalidArgument("AdamW: parameter layout mismatch");
  for (std::size_t i = 0; i < tp.size(); ++i) {
    auto& p = tp[i].second;
    const auto& g = tg[i].second;
    auto& m = tm[i].second;
    auto& v = tv[i].second;
    p *= decay;
    m = b1 * m + (S(1) - b1) * g;
    v.array() = b2 * v.array() + (S(1) - b2) * g.array().square();
    p.array() -= step * m.array() / (v.array().sqrt() / sqrt_bc2 + eps);
  }
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw InvalidArgument("train: batch_size must be positive");
  if (!(base_lr > 0.0)) throw InvalidArgument("train: base_lr must be positive");
  if (weight_decay < 0.0) throw InvalidArgument("train: weight_decay must be non-negative");
  if (patience <= 0) throw InvalidArgument("train: patience must be positive");
  if (max_epochs <= 0) throw InvalidArgument("train: max_epochs must be positive");
  if (first_restart_period <= 0 || restart_period_mult <= 0) throw InvalidArgument("train: bad restart schedule");
  if (!(lr_floor_ratio >= 0.0 && lr_floor_ratio <= 1.0)) throw InvalidArgument("train: lr_floor_ratio must be in [0, 1]");
  for (const auto& [epoch, factor] : accumulation) {
    if (epoch < 0 || factor <= 0) throw InvalidArgument("train: bad accumulation schedule entry");
  }
}

double learning_rate(const TrainConfig& c, int epoch) {
  if (epoch < c.restart_start_epoch) return c.base_lr;
  long long e = epoch - c.restart_start_epoch;
  long long period = c.first_restart_period;
  while (e >= period) {
    e -= period;
    period *= c.restart_period_mult;
  }
  const double floor = c.base_lr * c.lr_floor_ratio;
  const double phase = std::numbers::pi * static_cast<double>(e) / static_cast<double>(period);
  return floor + (c.base_lr - floor) * 0.5 * (1.0 + std::cos(phase));
}

int accumulation_factor(const TrainConfig& c, int epoch) {
  auto it = c.accumulation.upper_bound(epoch);
  if (it == c.accumulation.begin()) return 1;
  return std::prev(it)->second;
}

template <typename S>
TrainResult<S> train(EncoderParams<S> params, const Dataset<S>& train_set, const Dataset<S>& val_set,
                     const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  check_dataset(params, train_set, "train set");
  check_dataset(params, val_set, "validation set");
  if (train_set.size() == 0 || val_set.size() == 0) throw InvalidArgument("train: empty train or validation set");

  const auto start = std::chrono::steady_clock::now();
  SplitMix64 shuffle_rng(derive_seed(config.seed, 0x73687566));
  const std::uint64_t dropout_base = derive_seed(config.seed, 0x64726f70);
  std::uint64_t micro_step = 0;

  AdamW<S> opt(params.config, {.weight_decay = config.weight_decay});
  auto grads = EncoderParams<S>::zeros(params.config);

  TrainResult<S> result{params, {}};
  result.report.best_val_loss = std::numeric_limits<double>::infinity();
  int since_best = 0;

  std::vector<std::size_t> order(static_cast<std::size_t>(train_set.size()));
  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    const double lr = learning_rate(config, epoch);
    const int acc = accumulation_factor(config, epoch);
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle_rng.shuffle(std::span<std::size_t>(order));

    const std::size_t n = order.size();
    const std::size_t n_micro = (n + config.batch_size - 1) / config.batch_size;
    double epoch_loss = 0.0;
    for (std::size_t first = 0; first < n_micro; first += static_cast<std::size_t>(acc)) {
      const std::size_t group = std::min<std::size_t>(static_cast<std::size_t>(acc), n_micro - first);
      set_zero(grads);
      for (std::size_t m = first; m < first + group; ++m) {
        const std::size_t lo = m * config.batch_size;
        const std::size_t hi = std::min(n, lo + config.batch_size);
        const std::span<const std::size_t> idx(order.data() + lo, hi - lo);
        const Matrix<S> x = gather_columns(train_set.inputs, idx);
        const Matrix<S> y = gather_columns(train_set.targets, idx);
        const auto mode = ForwardMode::training(derive_seed(dropout_base, micro_step++));
        const LossValue lv = accumulate_gradients(params, x, y, mode, config.mse_coeff, grads,
                                                  static_cast<S>(1.0 / static_cast<double>(group)));
        if (!std::isfinite(lv.total)) {
          throw NumericError("training diverged: non-finite loss at epoch " + std::to_string(epoch));
        }
        epoch_loss += lv.total * static_cast<double>(hi - lo);
      }
      opt.step(params, grads, lr);
    }
    if (!params.all_finite()) throw NumericError("training diverged: non-finite parameters at epoch " + std::to_string(epoch));

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_loss = epoch_loss / static_cast<double>(n);
    rec.val_loss = dataset_loss(params, val_set, config.mse_coeff);
    rec.effective_batch = config.batch_size * static_cast<std::size_t>(acc);
    if (!std::isfinite(rec.val_loss)) throw NumericError("training diverged: non-finite validation loss");
    result.report.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (rec.val_loss < result.report.best_val_loss) {
      result.report.best_val_loss = rec.val_loss;
      result.report.best_epoch = epoch;
      result.params = params;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      result.report.stopped_early = true;
      break;
    }
  }
  result.report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

template <typename S>
LrFinderResult lr_finder(const EncoderParams<S>& initial, const Dataset<S>& train_set, const TrainConfig& config,
                         const LrFinderConfig& finder) {
  config.validate();
  check_dataset(initial, train_set, "lr_finder");
  if (train_set.size() == 0) throw InvalidArgument("lr_finder: empty training set");
  if (finder.num_steps < 2 || !(finder.min_lr > 0.0) || !(finder.max_lr > finder.min_lr)) {
    throw InvalidArgument("lr_finder: bad sweep range");
  }

  auto params = initial;
  AdamW<S> opt(params.config, {.weight_decay = config.weight_decay});
  auto grads = EncoderParams<S>::zeros(params.config);
  SplitMix64 rng(derive_seed(config.seed, 0x6c7266));
  std::vector<std::size_t> order(static_cast<std::size_t>(train_set.size()));
  std::size_t cursor = order.size();

  LrFinderResult out;
  double avg = 0.0;
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < finder.num_steps; ++i) {
    const double lr = finder.min_lr * std::pow(finder.max_lr / finder.min_lr,
                                               static_cast<double>(i) / static_cast<double>(finder.num_steps - 1));
    if (cursor >= order.size()) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      rng.shuffle(std::span<std::size_t>(order));
      cursor = 0;
    }
    const std::size_t hi = std::min(order.size(), cursor + config.batch_size);
    const std::span<const std::size_t> idx(order.data() + cursor, hi - cursor);
    cursor = hi;

    set_zero(grads);
    const auto mode = ForwardMode::training(derive_seed(config.seed, 0x1000 + static_cast<std::uint64_t>(i)));
    const LossValue lv = accumulate_gradients(params, gather_columns(train_set.inputs, idx),
                                              gather_columns(train_set.targets, idx), mode, config.mse_coeff, grads);
    if (!std::isfinite(lv.total)) break;
    avg = finder.smoothing * avg + (1.0 - finder.smoothing) * lv.total;
    const double smoothed = avg / (1.0 - std::pow(finder.smoothing, static_cast<double>(i + 1)));
    out.lrs.push_back(lr);
    out.losses.push_back(smoothed);
    if (smoothed > finder.diverge_factor * best) break;
    best = std::min(best, smoothed);
    opt.step(params, grads, lr);
  }

  constexpr std::size_t skip = 10;
  std::size_t best_i = out.losses.size();
  double steepest = 0.0;
  for (std::size_t i = skip; i + 1 < out.losses.size(); ++i) {
    const double slope = out.losses[i + 1] - out.losses[i];
    if (slope < steepest) {
      steepest = slope;
      best_i = i;
    }
  }
  if (best_i == out.losses.size()) {
    warn("lr_finder: loss never decreased over the sweep; falling back to lr " + std::to_string(finder.fallback_lr));
    out.suggestion = finder.fallback_lr;
    out.fallback = true;
  } else {
    out.suggestion = out.lrs[best_i];
  }
  return out;
}

template <typename S>
Metrics evaluate_predictions(const Matrix<S>& pred, const Matrix<S>& targets) {
  if (pred.rows() != targets.rows() || pred.cols() != targets.cols()) {
    throw InvalidArgument("evaluate: prediction/target shape mismatch");
  }
  if (pred.cols() == 0) throw InvalidArgument("evaluate: empty set");
  double cos_sum = 0.0;
  std::size_t agree = 0;
  for (Eigen::Index j = 0; j < pred.cols(); ++j) {
    const auto p = pred.col(j).template cast<double>();
    const auto t = targets.col(j).template cast<double>();
    const double denom = p.norm() * t.norm();
    cos_sum += denom > 0.0 ? p.dot(t) / denom : 0.0;
    for (Eigen::Index i = 0; i < pred.rows(); ++i) {
      agree += (pred(i, j) >= 0) == (targets(i, j) >= 0);
    }
  }
  return {cos_sum / static_cast<double>(pred.cols()),
          static_cast<double>(agree) / static_cast<double>(pred.size())};
}

template <typename S>
Matrix<S> predict(const EncoderParams<S>& params, const Matrix<S>& inputs) {
  constexpr Eigen::Index chunk = 256;
  Matrix<S> out(params.config.output_dim, inputs.cols());
  for (Eigen::Index start = 0; start < inputs.cols(); start += chunk) {
    const Eigen::Index n = std::min(chunk, inputs.cols() - start);
    out.middleCols(start, n) = forward(params, Matrix<S>(inputs.middleCols(start, n)), ForwardMode::eval());
  }
  return out;
}

template <typename S>
Metrics evaluate(const EncoderParams<S>& params, const Dataset<S>& test_set) {
  check_dataset(params, test_set, "test set");
  return evaluate_predictions<S>(predict(params, test_set.inputs), test_set.targets);
}

template <typename S>
void save_params(const EncoderParams<S>& params, const std::string& path) {
  using RowMajor = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  nlohmann::ordered_json header;
  header["d"] = params.config.input_dim;
  header["D"] = params.config.output_dim;
  header["blocks"] = params.config.residual_blocks;
  header["seed"] = params.seed;
  auto list = nlohmann::ordered_json::array();
  for_each_tensor<S>(params, [&](const std::string& name, const S*, Eigen::Index r, Eigen::Index c, bool vec) {
    nlohmann::ordered_json t;
    t["name"] = name;
    t["shape"] = vec ? nlohmann::ordered_json::array({r}) : nlohmann::ordered_json::array({r, c});
    list.push_back(std::move(t));
  });
  header["tensors"] = std::move(list);

  auto out = io::open_output(path);
  io::write_frame_header(out, "HDPW", kWeightsVersion, header.dump());
  for (const auto& [name, t] : params.tensors()) {
    const RowMajor rm = t.template cast<float>();
    io::write_f32(out, std::span<const float>(rm.data(), static_cast<std::size_t>(rm.size())));
  }
  if (!out) throw FormatError("HDPW: write failed for '" + path + "'");
}

template <typename S>
EncoderParams<S> load_params(const std::string& path, const EncoderConfig& base) {
  using RowMajor = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  auto in = io::open_input(path);
  const auto frame = io::read_frame_header(in, "HDPW");
  if (frame.version != kWeightsVersion) throw FormatError("HDPW: unsupported version " + std::to_string(frame.version));

  EncoderConfig cfg = base;
  nlohmann::json header;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, std::vector<Eigen::Index>>> listed;
  try {
    header = nlohmann::json::parse(frame.json);
    cfg.input_dim = header.at("d").get<Eigen::Index>();
    cfg.output_dim = header.at("D").get<Eigen::Index>();
    cfg.residual_blocks = header.at("blocks").get<int>();
    seed = header.at("seed").get<std::uint64_t>();
    for (const auto& t : header.at("tensors")) {
      listed.emplace_back(t.at("name").get<std::string>(), t.at("shape").get<std::vector<Eigen::Index>>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("HDPW header: ") + e.what());
  }
  if (listed.empty() || listed.front().first != "input.weight" || listed.front().second.size() != 2) {
    throw FormatError("HDPW: first tensor must be input.weight");
  }
  cfg.hidden_dim = listed.front().second[0];
  try {
    cfg.validate();
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("HDPW: ") + e.what());
  }

  auto params = EncoderParams<S>::zeros(cfg);
  params.seed = seed;
  std::size_t i = 0;
  bool ok = true;
  for_each_tensor<S>(params, [&](const std::string& name, S*, Eigen::Index r, Eigen::Index c, bool vec) {
    if (i >= listed.size() || listed[i].first != name) {
      ok = false;
    } else {
      const std::vector<Eigen::Index> want = vec ? std::vector<Eigen::Index>{r} : std::vector<Eigen::Index>{r, c};
      ok = ok && listed[i].second == want;
    }
    ++i;
  });
  if (!ok || i != listed.size()) throw FormatError("HDPW: tensor list does not match the architecture");

  for (auto& [name, t] : params.tensors()) {
    RowMajor rm(t.rows(), t.cols());
    io::read_f32(in, std::span<float>(rm.data(), static_cast<std::size_t>(rm.size())), "HDPW");
    t = rm.template cast<S>();
  }
  if (!io::at_eof(in)) throw FormatError("HDPW: trailing bytes after payload");
  return params;
}

void write_telemetry_csv(const std::string& path, const std::vector<EpochRecord>& epochs) {
  auto out = io::open_output(path);
  out << "epoch,lr,train_loss,val_loss,effective_batch\n";
  char buf[160];
  for (const auto& e : epochs) {
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,%zu\n", e.epoch, e.lr, e.train_loss, e.val_loss,
                  e.effective_batch);
    out << buf;
  }
  if (!out) throw FormatError("telemetry: write failed for '" + path + "'");
}

#define HDPROBE_INSTANTIATE(S)                                                                                   \
  template struct EncoderParams<S>;                                                                              \
  template class AdamW<S>;                                                                                       \
  template EncoderParams<S> init<S>(const EncoderConfig&, std::uint64_t);                                        \
  template Matrix<S> forward<S>(const EncoderParams<S>&, const Matrix<S>&, ForwardMode);                         \
  template LossValue loss<S>(const Matrix<S>&, const Matrix<S>&, double);                                        \
  template Matrix<S> loss_gradient<S>(const Matrix<S>&, const Matrix<S>&, double);                               \
  template LossValue accumulate_gradients<S>(const EncoderParams<S>&, const Matrix<S>&, const Matrix<S>&,        \
                                             ForwardMode, double, EncoderParams<S>&, S);                         \
  template TrainResult<S> train<S>(EncoderParams<S>, const Dataset<S>&, const Dataset<S>&, const TrainConfig&,   \
                                   const EpochCallback&);                                                        \
  template LrFinderResult lr_finder<S>(const EncoderParams<S>&, const Dataset<S>&, const TrainConfig&,           \
                                       const LrFinderConfig&);                                                   \
  template Metrics evaluate_predictions<S>(const Matrix<S>&, const Matrix<S>&);                                  \
  template Metrics evaluate<S>(const EncoderParams<S>&, const Dataset<S>&);                                      \
  template Matrix<S> predict<S>(const EncoderParams<S>&, const Matrix<S>&);                                      \
  template void save_params<S>(const EncoderParams<S>&, const std::string&);                                     \
  template EncoderParams<S> load_params<S>(const std::string&, const EncoderConfig&);

HDPROBE_INSTANTIATE(float)
HDPROBE_INSTANTIATE(double)

#undef HDPROBE_INSTANTIATE

}  // namespace hdprobe::encoder
