#pragma once

#include "gema/linalg.hpp"
#include "gema/rng.hpp"

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace gema {

enum class Activation { Linear, Gelu, Silu, Softplus };

std::string_view to_string(Activation a);
Activation activation_from_string(std::string_view s);

double activate(Activation a, double x);
double activate_derivative(Activation a, double x);

// Upper bounds on sup |a'(x)| used by the Lipschitz product bound. The GELU
// and SiLU values sit slightly above the analytic suprema (~1.1290, ~1.0998).
double activation_lipschitz(Activation a);

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;
  Activation activation = Activation::Linear;
  // Persistent power-iteration vectors for spectral normalisation.
  Vector sn_u;
  Vector sn_v;

  Eigen::Index in_dim() const { return weight.cols(); }
  Eigen::Index out_dim() const { return weight.rows(); }
};

struct MlpGrads {
  std::vector<Matrix> weight;
  std::vector<Vector> bias;

  void set_zero();
  double squared_norm() const;
};

struct MlpTrace {
  std::uint64_t version = 0;
  std::vector<Matrix> inputs;  // input seen by layer l
  std::vector<Matrix> pre;     // pre-activation of layer l
  std::vector<Matrix> masks;   // scaled dropout mask on layer l output (empty: none)
  std::vector<Matrix> effective_weight;
  std::vector<double> sigma;   // spectral-norm divisor per layer (1 if off)
};

struct ForwardOptions {
  bool train = false;
  // Advance the persistent power iteration (train-mode forward only).
  bool update_spectral = false;
  RngStream* rng = nullptr;  // dropout masks; required when train and dropout > 0
};

/// Feedforward network with manual reverse-mode gradients. Inputs are
/// column-major batches (features x batch).
class Mlp {
 public:
  Mlp() = default;
  // dims = {in, h1, ..., out}; hidden layers use `hidden`, last uses `output`.
  Mlp(const std::vector<int>& dims, Activation hidden, Activation output, RngStream& rng);

  std::vector<DenseLayer>& layers() {
    ++version_;
    return layers_;
  }
  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::size_t n_layers() const { return layers_.size(); }
  Eigen::Index in_dim() const { return layers_.front().in_dim(); }
  Eigen::Index out_dim() const { return layers_.back().out_dim(); }

  double dropout_rate = 0.0;
  bool dropout_on_output = false;  // trunk networks feed heads, so their last layer is hidden
  bool spectral_norm = false;

  Matrix forward(const Matrix& input, const ForwardOptions& opts, MlpTrace* trace) const;
  Vector forward(const Vector& input) const;

  /// Accumulates parameter gradients of <output, grad_output> into `grads`
  /// and returns the gradient with respect to the input batch.
  Matrix backward(const MlpTrace& trace, const Matrix& grad_output, MlpGrads& grads) const;

  MlpGrads make_grads() const;

  // Weight actually applied in forward passes (spectrally normalised if on).
  Matrix effective_weight(std::size_t layer) const;
  double spectral_divisor(std::size_t layer) const;

  // One persistent power iteration per layer (train-time bookkeeping).
  void advance_power_iteration();
  void reset_power_iteration(int iters);

  // Marks parameters as modified; pending traces become stale.
  void touch() { ++version_; }
  std::uint64_t version() const { return version_; }

  std::vector<std::span<double>> parameter_spans();
  static std::vector<std::span<double>> grad_spans(MlpGrads& g);

 private:
  std::vector<DenseLayer> layers_;
  std::uint64_t version_ = 1;
};

/// Lookup table of per-code embedding rows with scatter-add gradients.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  EmbeddingTable(int n_codes, int dim, RngStream& rng, double init_scale = 0.1);

  int n_codes() const { return static_cast<int>(table.rows()); }
  int dim() const { return static_cast<int>(table.cols()); }

  Vector lookup(int code) const;
  // dim x codes.size() batch of rows.
  Matrix lookup_batch(std::span<const int> codes) const;
  // grad (n_codes x dim) += scatter of columns of `grad_rows` (dim x batch).
  void accumulate(std::span<const int> codes, const Matrix& grad_rows, Matrix& grad) const;

  Matrix table;  // n_codes x dim
};

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
};

struct AdamState {
  AdamConfig config;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::int64_t t = 0;
};

AdamState make_adam_state(const AdamConfig& config, const std::vector<std::span<double>>& params);

/// Bias-corrected Adam with decoupled weight decay:
/// p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p).
void adam_step(AdamState& state, const std::vector<std::span<double>>& params,
               const std::vector<std::span<double>>& grads);

}  // namespace gema
