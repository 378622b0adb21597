#include "gema/mlp.hpp"

#include "gema/error.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace gema {

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::Linear: return "linear";
    case Activation::Gelu: return "gelu";
    case Activation::Silu: return "silu";
    case Activation::Softplus: return "softplus";
  }
  return "linear";
}

Activation activation_from_string(std::string_view s) {
  if (s == "linear") return Activation::Linear;
  if (s == "gelu" || s == "GELU") return Activation::Gelu;
  if (s == "silu" || s == "SILU" || s == "SiLU") return Activation::Silu;
  if (s == "softplus") return Activation::Softplus;
  throw Error(ErrorCode::InvalidArgument, "unknown activation '" + std::string(s) + "'");
}

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

}  // namespace

double activate(Activation a, double x) {
  switch (a) {
    case Activation::Linear: return x;
    case Activation::Gelu: return 0.5 * x * std::erfc(-x * kInvSqrt2);
    case Activation::Silu: return x * sigmoid(x);
    case Activation::Softplus: return softplus(x);
  }
  return x;
}

double activate_derivative(Activation a, double x) {
  switch (a) {
    case Activation::Linear: return 1.0;
    case Activation::Gelu:
      return 0.5 * std::erfc(-x * kInvSqrt2) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
    case Activation::Silu: {
      const double s = sigmoid(x);
      return s * (1.0 + x * (1.0 - s));
    }
    case Activation::Softplus: return sigmoid(x);
  }
  return 1.0;
}

double activation_lipschitz(Activation a) {
  switch (a) {
    case Activation::Gelu: return 1.13;
    case Activation::Silu: return 1.1;
    default: return 1.0;
  }
}

// ---------------------------------------------------------------------------

void MlpGrads::set_zero() {
  for (auto& w : weight) w.setZero();
  for (auto& b : bias) b.setZero();
}

double MlpGrads::squared_norm() const {
  double s = 0.0;
  for (const auto& w : weight) s += w.squaredNorm();
  for (const auto& b : bias) s += b.squaredNorm();
  return s;
}

Mlp::Mlp(const std::vector<int>& dims, Activation hidden, Activation output, RngStream& rng) {
  if (dims.size() < 2) throw Error(ErrorCode::InvalidArgument, "Mlp needs at least two dims");
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    DenseLayer layer;
    const int in = dims[l];
    const int out = dims[l + 1];
    if (in <= 0 || out <= 0) throw Error(ErrorCode::InvalidArgument, "Mlp dims must be positive");
    // Fan-in scaled uniform initialisation.
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    layer.weight.resize(out, in);
    layer.bias.resize(out);
    for (int i = 0; i < out; ++i) {
      for (int j = 0; j < in; ++j) layer.weight(i, j) = rng.uniform(-bound, bound);
    }
    for (int i = 0; i < out; ++i) layer.bias(i) = rng.uniform(-bound, bound);
    layer.activation = (l + 2 == dims.size()) ? output : hidden;
    layer.sn_u = Vector::Constant(out, 1.0 / std::sqrt(static_cast<double>(out)));
    for (int i = 0; i < out; ++i) layer.sn_u(i) += 0.01 * rng.normal();
    layer.sn_u.normalize();
    layer.sn_v = Vector::Zero(in);
    layers_.push_back(std::move(layer));
  }
  reset_power_iteration(20);
}

void Mlp::reset_power_iteration(int iters) {
  for (auto& layer : layers_) {
    if (layer.sn_u.size() != layer.out_dim() || layer.sn_u.norm() == 0.0) {
      layer.sn_u = Vector::Constant(layer.out_dim(), 1.0 / std::sqrt(static_cast<double>(layer.out_dim())));
    }
    for (int k = 0; k < iters; ++k) {
      Vector v = layer.weight.transpose() * layer.sn_u;
      if (v.norm() == 0.0) break;
      layer.sn_v = v.normalized();
      Vector u = layer.weight * layer.sn_v;
      if (u.norm() == 0.0) break;
      layer.sn_u = u.normalized();
    }
  }
  ++version_;
}

void Mlp::advance_power_iteration() {
  if (!spectral_norm) return;
  reset_power_iteration(1);
}

double Mlp::spectral_divisor(std::size_t l) const {
  if (!spectral_norm) return 1.0;
  const auto& layer = layers_.at(l);
  const double sigma = layer.sn_u.dot(layer.weight * layer.sn_v);
  return sigma > 1e-12 ? sigma : 1.0;
}

Matrix Mlp::effective_weight(std::size_t l) const {
  const auto& layer = layers_.at(l);
  if (!spectral_norm) return layer.weight;
  return layer.weight / spectral_divisor(l);
}

MlpGrads Mlp::make_grads() const {
  MlpGrads g;
  for (const auto& layer : layers_) {
    g.weight.push_back(Matrix::Zero(layer.out_dim(), layer.in_dim()));
    g.bias.push_back(Vector::Zero(layer.out_dim()));
  }
  return g;
}

Matrix Mlp::forward(const Matrix& input, const ForwardOptions& opts, MlpTrace* trace) const {
  if (layers_.empty()) throw Error(ErrorCode::UnfittedModel, "empty Mlp");
  if (input.rows() != in_dim()) {
    throw Error(ErrorCode::DimensionMismatch, "Mlp input has " + std::to_string(input.rows()) +
                                                  " rows, expected " + std::to_string(in_dim()));
  }
  if (opts.update_spectral && spectral_norm) const_cast<Mlp*>(this)->advance_power_iteration();
  if (trace) {
    trace->version = version_;
    trace->inputs.clear();
    trace->pre.clear();
    trace->masks.clear();
    trace->effective_weight.clear();
    trace->sigma.clear();
  }
  const bool use_dropout = opts.train && dropout_rate > 0.0;
  if (use_dropout && !opts.rng) throw Error(ErrorCode::InvalidArgument, "dropout needs an rng");
  const double keep = 1.0 - dropout_rate;

  Matrix x = input;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    const double sigma = spectral_divisor(l);
    // A non-positive estimate falls back to the raw weight.
    const bool normalised = spectral_norm && layer.sn_u.dot(layer.weight * layer.sn_v) > 1e-12;
    Matrix z;
    if (normalised) {
      z = (layer.weight / sigma) * x;
    } else {
      z = layer.weight * x;
    }
    z.colwise() += layer.bias;
    Matrix a(z.rows(), z.cols());
    {
      const double* zp = z.data();
      double* ap = a.data();
      const Eigen::Index n = z.size();
      switch (layer.activation) {
        case Activation::Linear:
          a = z;
          break;
        default:
          for (Eigen::Index i = 0; i < n; ++i) ap[i] = activate(layer.activation, zp[i]);
      }
    }
    Matrix mask;
    const bool hidden = (l + 1 < layers_.size()) || dropout_on_output;
    if (use_dropout && hidden) {
      mask.resize(a.rows(), a.cols());
      double* mp = mask.data();
      for (Eigen::Index i = 0; i < mask.size(); ++i) mp[i] = opts.rng->uniform() < keep ? 1.0 / keep : 0.0;
      a = a.cwiseProduct(mask);
    }
    if (trace) {
      trace->inputs.push_back(std::move(x));
      trace->pre.push_back(std::move(z));
      trace->masks.push_back(std::move(mask));
      trace->effective_weight.push_back(normalised ? Matrix(layer.weight / sigma) : Matrix());
      trace->sigma.push_back(sigma);
    }
    x = std::move(a);
  }
  return x;
}

Vector Mlp::forward(const Vector& input) const {
  Matrix out = forward(Matrix(input), ForwardOptions{}, nullptr);
  return out.col(0);
}

Matrix Mlp::backward(const MlpTrace& trace, const Matrix& grad_output, MlpGrads& grads) const {
  if (trace.version != version_ || trace.pre.size() != layers_.size()) {
    throw Error(ErrorCode::StaleTrace, "trace does not match the current parameters");
  }
  if (grads.weight.size() != layers_.size()) grads = make_grads();
  Matrix g = grad_output;
  for (std::size_t li = layers_.size(); li-- > 0;) {
    const auto& layer = layers_[li];
    const Matrix& z = trace.pre[li];
    if (g.rows() != z.rows() || g.cols() != z.cols()) {
      throw Error(ErrorCode::DimensionMismatch, "grad_output shape");
    }
    if (trace.masks[li].size() != 0) g = g.cwiseProduct(trace.masks[li]);
    if (layer.activation != Activation::Linear) {
      const double* zp = z.data();
      double* gp = g.data();
      for (Eigen::Index i = 0; i < g.size(); ++i) gp[i] *= activate_derivative(layer.activation, zp[i]);
    }
    const Matrix& x = trace.inputs[li];
    const double sigma = trace.sigma[li];
    Matrix gw = g * x.transpose();
    grads.bias[li] += g.rowwise().sum();
    if (trace.effective_weight[li].size() != 0) {
      // W_eff = W / sigma with sigma = u^T W v (u, v held fixed).
      const Matrix& weff = trace.effective_weight[li];
      const double inner = gw.cwiseProduct(weff).sum();
      grads.weight[li] += (gw - inner * layer.sn_u * layer.sn_v.transpose()) / sigma;
      g = weff.transpose() * g;
    } else {
      grads.weight[li] += gw;
      g = layer.weight.transpose() * g;
    }
  }
  return g;
}

std::vector<std::span<double>> Mlp::parameter_spans() {
  ++version_;
  std::vector<std::span<double>> out;
  for (auto& layer : layers_) {
    out.emplace_back(layer.weight.data(), static_cast<std::size_t>(layer.weight.size()));
    out.emplace_back(layer.bias.data(), static_cast<std::size_t>(layer.bias.size()));
  }
  return out;
}

std::vector<std::span<double>> Mlp::grad_spans(MlpGrads& g) {
  std::vector<std::span<double>> out;
  for (std::size_t l = 0; l < g.weight.size(); ++l) {
    out.emplace_back(g.weight[l].data(), static_cast<std::size_t>(g.weight[l].size()));
    out.emplace_back(g.bias[l].data(), static_cast<std::size_t>(g.bias[l].size()));
  }
  return out;
}

// ---------------------------------------------------------------------------

EmbeddingTable::EmbeddingTable(int n_codes, int dim, RngStream& rng, double init_scale)
    : table(n_codes, dim) {
  for (int i = 0; i < n_codes; ++i) {
    for (int j = 0; j < dim; ++j) table(i, j) = init_scale * rng.normal();
  }
}

Vector EmbeddingTable::lookup(int code) const {
  if (code < 0 || code >= n_codes()) {
    throw Error(ErrorCode::CodeOutOfRange, "code " + std::to_string(code) + " not in [0, " +
                                               std::to_string(n_codes()) + ")");
  }
  return table.row(code).transpose();
}

Matrix EmbeddingTable::lookup_batch(std::span<const int> codes) const {
  Matrix out(dim(), static_cast<Eigen::Index>(codes.size()));
  for (std::size_t i = 0; i < codes.size(); ++i) out.col(static_cast<Eigen::Index>(i)) = lookup(codes[i]);
  return out;
}

void EmbeddingTable::accumulate(std::span<const int> codes, const Matrix& grad_rows, Matrix& grad) const {
  if (grad.rows() != table.rows() || grad.cols() != table.cols()) grad = Matrix::Zero(table.rows(), table.cols());
  for (std::size_t i = 0; i < codes.size(); ++i) {
    const int code = codes[i];
    if (code < 0 || code >= n_codes()) throw Error(ErrorCode::CodeOutOfRange, std::to_string(code));
    grad.row(code) += grad_rows.col(static_cast<Eigen::Index>(i)).transpose();
  }
}

// ---------------------------------------------------------------------------

AdamState make_adam_state(const AdamConfig& config, const std::vector<std::span<double>>& params) {
  AdamState s;
  s.config = config;
  for (const auto& p : params) {
    s.m.emplace_back(p.size(), 0.0);
    s.v.emplace_back(p.size(), 0.0);
  }
  return s;
}

void adam_step(AdamState& state, const std::vector<std::span<double>>& params,
               const std::vector<std::span<double>>& grads) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw Error(ErrorCode::DimensionMismatch, "adam_step: parameter block count");
  }
  const auto& c = state.config;
  state.t += 1;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.t));
  for (std::size_t b = 0; b < params.size(); ++b) {
    auto p = params[b];
    auto g = grads[b];
    auto& m = state.m[b];
    auto& v = state.v[b];
    if (p.size() != g.size() || p.size() != m.size()) {
      throw Error(ErrorCode::DimensionMismatch, "adam_step: block " + std::to_string(b));
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= c.learning_rate * (mhat / (std::sqrt(vhat) + c.epsilon) + c.weight_decay * p[i]);
    }
  }
}

}  // namespace gema
