#include "gema/proman_vae.hpp"

#include "gema/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

namespace gema {

namespace {

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

constexpr double kHalfLog2PiE = 1.4189385332046727418;  // 0.5 * log(2 pi e)

}  // namespace

// ---------------------------------------------------------------------------
// Config

nlohmann::json TrainConfig::to_json() const {
  return nlohmann::json{
      {"latent_dim", latent_dim},
      {"hidden_dim", hidden_dim},
      {"epochs", epochs},
      {"batch_size", batch_size},
      {"learning_rate", learning_rate},
      {"gamma_u", gamma_u},
      {"lambda_mono", lambda_mono},
      {"beta_anneal_epochs", beta_anneal_epochs},
      {"patience", patience},
      {"dropout", dropout},
      {"weight_decay", weight_decay},
      {"huber_delta", huber_delta},
      {"activation", std::string(gema::to_string(activation))},
      {"spectral_norm", spectral_norm},
      {"seed", seed},
      {"output_activation", std::string(gema::to_string(output_activation))},
      {"transform", std::string(gema::to_string(transform))},
      {"entity_embed_dim", entity_embed_dim},
      {"time_embed_dim", time_embed_dim},
      {"mono_points", mono_points},
      {"mono_z_samples", mono_z_samples},
      {"mono_delta", mono_delta},
      {"whitening_epsilon", whitening_epsilon},
      {"split_fractions", split_fractions},
  };
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) { return from_json(j, TrainConfig{}); }

TrainConfig TrainConfig::from_json(const nlohmann::json& j, const TrainConfig& base) {
  if (!j.is_object()) throw Error(ErrorCode::InvalidArgument, "training config must be a JSON object");
  TrainConfig c = base;
  try {
    for (auto& [key, value] : j.items()) {
      if (key == "latent_dim") c.latent_dim = value.get<int>();
      else if (key == "hidden_dim") c.hidden_dim = value.get<int>();
      else if (key == "epochs") c.epochs = value.get<int>();
      else if (key == "batch_size") c.batch_size = value.get<int>();
      else if (key == "learning_rate") c.learning_rate = value.get<double>();
      else if (key == "gamma_u") c.gamma_u = value.get<double>();
      else if (key == "lambda_mono") c.lambda_mono = value.get<double>();
      else if (key == "beta_anneal_epochs") c.beta_anneal_epochs = value.get<int>();
      else if (key == "patience") c.patience = value.get<int>();
      else if (key == "dropout") c.dropout = value.get<double>();
      else if (key == "weight_decay") c.weight_decay = value.get<double>();
      else if (key == "huber_delta") c.huber_delta = value.get<double>();
      else if (key == "activation") c.activation = activation_from_string(value.get<std::string>());
      else if (key == "spectral_norm") c.spectral_norm = value.get<bool>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "output_activation") c.output_activation = activation_from_string(value.get<std::string>());
      else if (key == "transform") c.transform = log_transform_from_string(value.get<std::string>());
      else if (key == "entity_embed_dim") c.entity_embed_dim = value.get<int>();
      else if (key == "time_embed_dim") c.time_embed_dim = value.get<int>();
      else if (key == "mono_points") c.mono_points = value.get<int>();
      else if (key == "mono_z_samples") c.mono_z_samples = value.get<int>();
      else if (key == "mono_delta") c.mono_delta = value.get<double>();
      else if (key == "whitening_epsilon") c.whitening_epsilon = value.get<double>();
      else if (key == "split_fractions") c.split_fractions = value.get<std::array<double, 3>>();
      else throw Error(ErrorCode::InvalidArgument, "unknown training config key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("training config: ") + e.what());
  }
  if (c.latent_dim < 1 || c.hidden_dim < 1 || c.epochs < 0 || c.batch_size < 1) {
    throw Error(ErrorCode::InvalidArgument, "training config: dimensions must be positive");
  }
  if (c.dropout < 0.0 || c.dropout >= 1.0) throw Error(ErrorCode::InvalidArgument, "dropout must be in [0, 1)");
  if (!(c.huber_delta > 0.0)) throw Error(ErrorCode::InvalidArgument, "huber_delta must be positive");
  return c;
}

// ---------------------------------------------------------------------------
// Features

FeatureMeta fit_features(const DatasetFrame& train, const TrainConfig& config) {
  FeatureMeta meta;
  meta.input_cols = train.names_with_role(ColumnRole::Input);
  meta.output_cols = train.names_with_role(ColumnRole::Output);
  if (meta.input_cols.empty()) throw Error(ErrorCode::MissingColumn, "no input column");
  if (meta.output_cols.empty()) throw Error(ErrorCode::MissingColumn, "no output column");
  meta.entity_col = train.first_with_role(ColumnRole::EntityId);
  meta.time_col = train.first_with_role(ColumnRole::TimeId);
  if (meta.entity_col) meta.entity_levels = train.column(*meta.entity_col).levels;
  if (meta.time_col) meta.time_levels = train.column(*meta.time_col).levels;
  meta.transform = config.transform;

  std::vector<std::string> numeric = meta.input_cols;
  numeric.insert(numeric.end(), meta.output_cols.begin(), meta.output_cols.end());
  const DatasetFrame logged = apply_log_transform(train, numeric, config.transform);
  meta.scaler = fit_standardizer(logged, numeric);
  const DatasetFrame standardised = apply_standardizer(logged, meta.scaler);
  const Matrix x = standardised.matrix(meta.input_cols);
  if (x.rows() >= 2) {
    meta.whitening = fit_whitening(x, config.whitening_epsilon);
  } else {
    meta.whitening.mean = Vector::Zero(x.cols());
    meta.whitening.w = Matrix::Identity(x.cols(), x.cols());
    meta.whitening.epsilon = config.whitening_epsilon;
  }
  return meta;
}

double ProManModel::rate() const { return softplus(log_lambda); }

std::vector<std::span<double>> ProManModel::parameter_spans() {
  std::vector<std::span<double>> out;
  for (Mlp* m : {&trunk, &head_z, &head_u, &decoder}) {
    auto s = m->parameter_spans();
    out.insert(out.end(), s.begin(), s.end());
  }
  out.emplace_back(entity_embedding.table.data(), static_cast<std::size_t>(entity_embedding.table.size()));
  out.emplace_back(time_embedding.table.data(), static_cast<std::size_t>(time_embedding.table.size()));
  out.emplace_back(&log_lambda, 1);
  return out;
}

void ProManModel::set_dropout(double rate) {
  trunk.dropout_rate = rate;
  decoder.dropout_rate = rate;
}

ProManModel make_model(const FeatureMeta& meta, const TrainConfig& config, RngStream& rng) {
  ProManModel m;
  m.meta = meta;
  m.config = config;
  m.d_x = static_cast<int>(meta.input_cols.size());
  m.d_y = static_cast<int>(meta.output_cols.size());
  m.latent_dim = config.latent_dim;
  const int e_ent = meta.entity_col ? config.entity_embed_dim : 0;
  const int e_time = meta.time_col ? config.time_embed_dim : 0;
  m.entity_embedding = EmbeddingTable(meta.entity_col ? static_cast<int>(meta.entity_levels.size()) : 0, e_ent, rng);
  m.time_embedding = EmbeddingTable(meta.time_col ? static_cast<int>(meta.time_levels.size()) : 0, e_time, rng);

  const int h = config.hidden_dim;
  const int enc_in = m.d_x + m.d_y + e_ent + e_time;
  m.trunk = Mlp({enc_in, h, h}, config.activation, config.activation, rng);
  m.trunk.dropout_on_output = true;
  m.head_z = Mlp({h, 2 * m.latent_dim}, Activation::Linear, Activation::Linear, rng);
  m.head_u = Mlp({h, 2}, Activation::Linear, Activation::Linear, rng);
  m.decoder = Mlp({m.d_x + m.latent_dim + e_ent + e_time, h, h, m.d_y}, config.activation,
                  config.output_activation, rng);
  m.decoder.spectral_norm = config.spectral_norm;
  m.log_lambda = 0.0;
  return m;
}

ModelData prepare(const ProManModel& model, const DatasetFrame& frame) {
  const FeatureMeta& meta = model.meta;
  for (const auto& name : meta.input_cols) {
    if (!frame.has_column(name)) throw Error(ErrorCode::SchemaMismatch, "missing input column " + name);
  }
  for (const auto& name : meta.output_cols) {
    if (!frame.has_column(name)) throw Error(ErrorCode::SchemaMismatch, "missing output column " + name);
  }
  ModelData d;
  const std::size_t n = frame.n_rows();
  d.x.resize(model.d_x, static_cast<Eigen::Index>(n));
  d.y.resize(model.d_y, static_cast<Eigen::Index>(n));
  auto fill = [&](const std::vector<std::string>& cols, Matrix& out) {
    for (std::size_t j = 0; j < cols.size(); ++j) {
      const Column& c = frame.column(cols[j]);
      if (c.is_categorical()) throw Error(ErrorCode::SchemaMismatch, cols[j] + " is categorical");
      const std::size_t s = meta.scaler.index_of(cols[j]);
      for (std::size_t i = 0; i < n; ++i) {
        double v = c.values[i];
        if (c.transform == LogTransform::None) {
          if (meta.transform == LogTransform::Log1p ? v < 0.0 : (meta.transform == LogTransform::Log && v <= 0.0)) {
            throw Error(ErrorCode::NegativeValue, "row " + std::to_string(i) + ", column " + cols[j]);
          }
          v = apply_log_transform(v, meta.transform);
        } else if (c.transform != meta.transform) {
          throw Error(ErrorCode::SchemaMismatch, cols[j] + " carries a different transform");
        }
        out(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = (v - meta.scaler.mean[s]) / meta.scaler.std[s];
      }
    }
  };
  fill(meta.input_cols, d.x);
  fill(meta.output_cols, d.y);

  auto codes = [&](const std::optional<std::string>& col, const std::vector<std::string>& levels,
                   std::vector<int>& out) {
    out.assign(n, 0);
    if (!col) return;
    if (!frame.has_column(*col)) throw Error(ErrorCode::SchemaMismatch, "missing id column " + *col);
    const Column& c = frame.column(*col);
    for (std::size_t i = 0; i < n; ++i) {
      const std::string& label = c.levels.at(static_cast<std::size_t>(c.codes[i]));
      auto it = std::lower_bound(levels.begin(), levels.end(), label);
      if (it == levels.end() || *it != label) {
        throw Error(ErrorCode::CodeOutOfRange, "unseen level '" + label + "' in " + *col);
      }
      out[i] = static_cast<int>(it - levels.begin());
    }
  };
  codes(meta.entity_col, meta.entity_levels, d.entity);
  codes(meta.time_col, meta.time_levels, d.time);
  d.row_ids = frame.row_ids();
  return d;
}

// ---------------------------------------------------------------------------
// Encoder / decoder plumbing

namespace {

Matrix gather_cols(const Matrix& m, std::span<const std::size_t> rows) {
  Matrix out(m.rows(), static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) out.col(static_cast<Eigen::Index>(i)) = m.col(static_cast<Eigen::Index>(rows[i]));
  return out;
}

std::vector<int> gather(const std::vector<int>& v, std::span<const std::size_t> rows) {
  std::vector<int> out(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) out[i] = v.empty() ? 0 : v[rows[i]];
  return out;
}

Matrix encoder_input(const ProManModel& model, const Matrix& x, const Matrix& y, std::span<const int> entity,
                     std::span<const int> time) {
  const Eigen::Index n = x.cols();
  Matrix in(model.trunk.in_dim(), n);
  in.topRows(model.d_x) = x;
  in.middleRows(model.d_x, model.d_y) = y;
  Eigen::Index row = model.d_x + model.d_y;
  if (model.entity_dim() > 0) {
    in.middleRows(row, model.entity_dim()) = model.entity_embedding.lookup_batch(entity);
    row += model.entity_dim();
  }
  if (model.time_dim() > 0) in.middleRows(row, model.time_dim()) = model.time_embedding.lookup_batch(time);
  return in;
}

Matrix decoder_input(const ProManModel& model, const Matrix& x, const Matrix& z, std::span<const int> entity,
                     std::span<const int> time) {
  const Eigen::Index n = x.cols();
  if (z.rows() != model.latent_dim || z.cols() != n) throw Error(ErrorCode::DimensionMismatch, "latent batch shape");
  Matrix in(model.decoder_in_dim(), n);
  in.topRows(model.d_x) = model.meta.whitening.apply_columns(x);
  in.middleRows(model.d_x, model.latent_dim) = z;
  Eigen::Index row = model.d_x + model.latent_dim;
  if (model.entity_dim() > 0) {
    in.middleRows(row, model.entity_dim()) = model.entity_embedding.lookup_batch(entity);
    row += model.entity_dim();
  }
  if (model.time_dim() > 0) in.middleRows(row, model.time_dim()) = model.time_embedding.lookup_batch(time);
  return in;
}

// Scatter embedding-row gradients from an input-gradient batch.
void scatter_embeddings(const ProManModel& model, const Matrix& grad_in, Eigen::Index first_row,
                        std::span<const int> entity, std::span<const int> time, ProManGrads& grads) {
  Eigen::Index row = first_row;
  if (model.entity_dim() > 0) {
    model.entity_embedding.accumulate(entity, grad_in.middleRows(row, model.entity_dim()), grads.entity);
    row += model.entity_dim();
  }
  if (model.time_dim() > 0) {
    model.time_embedding.accumulate(time, grad_in.middleRows(row, model.time_dim()), grads.time);
  }
}

void check_dims(const ProManModel& model, Eigen::Index x_rows, Eigen::Index y_rows) {
  if (model.trunk.n_layers() == 0) throw Error(ErrorCode::UnfittedModel, "model has no parameters");
  if (x_rows != model.d_x) throw Error(ErrorCode::DimensionMismatch, "input dimension");
  if (y_rows >= 0 && y_rows != model.d_y) throw Error(ErrorCode::DimensionMismatch, "output dimension");
}

}  // namespace

PosteriorBatch encode_batch(const ProManModel& model, const ModelData& data) {
  check_dims(model, data.x.rows(), data.y.rows());
  const Matrix in = encoder_input(model, data.x, data.y, data.entity, data.time);
  const Matrix h = model.trunk.forward(in, ForwardOptions{}, nullptr);
  const Matrix pz = model.head_z.forward(h, ForwardOptions{}, nullptr);
  const Matrix pu = model.head_u.forward(h, ForwardOptions{}, nullptr);
  PosteriorBatch p;
  p.mu_z = pz.topRows(model.latent_dim);
  p.logvar_z = pz.bottomRows(model.latent_dim);
  p.mu_u = pu.row(0).transpose();
  p.logvar_u = pu.row(1).transpose();
  return p;
}

LatentPosterior encode(const ProManModel& model, const Vector& x, const Vector& y, int entity, int time) {
  ModelData d;
  d.x = x;
  d.y = y;
  d.entity = {entity};
  d.time = {time};
  const PosteriorBatch b = encode_batch(model, d);
  return LatentPosterior{b.mu_z.col(0), b.logvar_z.col(0), b.mu_u(0), b.logvar_u(0)};
}

LatentSample reparameterize(const LatentPosterior& posterior, RngStream& rng) {
  LatentSample s;
  s.z.resize(posterior.mu_z.size());
  for (Eigen::Index k = 0; k < posterior.mu_z.size(); ++k) {
    s.z(k) = posterior.mu_z(k) + std::exp(0.5 * posterior.logvar_z(k)) * rng.normal();
  }
  s.u = std::exp(posterior.mu_u + std::exp(0.5 * posterior.logvar_u) * rng.normal());
  return s;
}

Matrix decode_frontier_batch(const ProManModel& model, const Matrix& x, const Matrix& z, std::span<const int> entity,
                             std::span<const int> time) {
  check_dims(model, x.rows(), -1);
  return model.decoder.forward(decoder_input(model, x, z, entity, time), ForwardOptions{}, nullptr);
}

Vector decode_frontier(const ProManModel& model, const Vector& x, const Vector& z, int entity, int time) {
  const int e[1] = {entity};
  const int t[1] = {time};
  return decode_frontier_batch(model, Matrix(x), Matrix(z), e, t).col(0);
}

// ---------------------------------------------------------------------------
// Loss pieces

double huber(double r, double delta) {
  const double a = std::abs(r);
  return a <= delta ? 0.5 * r * r : delta * (a - 0.5 * delta);
}

double huber_derivative(double r, double delta) {
  if (r > delta) return delta;
  if (r < -delta) return -delta;
  return r;
}

double reconstruction_loss(const Vector& reconstructed, const Vector& observed, double delta) {
  if (reconstructed.size() != observed.size()) throw Error(ErrorCode::DimensionMismatch, "reconstruction dims");
  double s = 0.0;
  for (Eigen::Index k = 0; k < observed.size(); ++k) s += huber(reconstructed(k) - observed(k), delta);
  return s;
}

double kl_gaussian(const Vector& mu, const Vector& logvar) {
  double s = 0.0;
  for (Eigen::Index j = 0; j < mu.size(); ++j) s += 1.0 + logvar(j) - mu(j) * mu(j) - std::exp(logvar(j));
  return -0.5 * s;
}

double kl_lognormal_exponential(double mu, double logvar, double rate) {
  if (!(rate > 0.0)) throw Error(ErrorCode::NonPositiveRate, "exponential prior rate must be positive");
  return -mu - kHalfLog2PiE - 0.5 * logvar - std::log(rate) + rate * std::exp(mu + 0.5 * std::exp(logvar));
}

ProManGrads ProManGrads::zeros_like(const ProManModel& model) {
  ProManGrads g;
  g.trunk = model.trunk.make_grads();
  g.head_z = model.head_z.make_grads();
  g.head_u = model.head_u.make_grads();
  g.decoder = model.decoder.make_grads();
  g.entity = Matrix::Zero(model.entity_embedding.table.rows(), model.entity_embedding.table.cols());
  g.time = Matrix::Zero(model.time_embedding.table.rows(), model.time_embedding.table.cols());
  g.log_lambda = 0.0;
  return g;
}

void ProManGrads::set_zero() {
  trunk.set_zero();
  head_z.set_zero();
  head_u.set_zero();
  decoder.set_zero();
  entity.setZero();
  time.setZero();
  log_lambda = 0.0;
}

std::vector<std::span<double>> ProManGrads::spans() {
  std::vector<std::span<double>> out;
  for (MlpGrads* g : {&trunk, &head_z, &head_u, &decoder}) {
    auto s = Mlp::grad_spans(*g);
    out.insert(out.end(), s.begin(), s.end());
  }
  out.emplace_back(entity.data(), static_cast<std::size_t>(entity.size()));
  out.emplace_back(time.data(), static_cast<std::size_t>(time.size()));
  out.emplace_back(&log_lambda, 1);
  return out;
}

// ---------------------------------------------------------------------------
// Monotonicity

namespace {

struct MonoEval {
  Matrix base;     // d_y x (G*S)
  Matrix shifted;  // d_y x (G*S*J)
  Matrix input;    // decoder input for [base, shifted]
  MlpTrace trace;
};

// Column layout: base (g, s) at g*S + s; shifted (g, s, j) at G*S + (g*S + s)*J + j.
MonoEval evaluate_mono(const ProManModel& model, const MonoProbe& probe, const Matrix& z_samples, double delta,
                       std::span<const int> dims, bool keep_trace) {
  const Eigen::Index g_count = probe.x.cols();
  const Eigen::Index s_count = z_samples.cols();
  const Eigen::Index j_count = static_cast<Eigen::Index>(dims.size());
  const Eigen::Index n_base = g_count * s_count;
  const Eigen::Index n_all = n_base * (1 + j_count);
  Matrix x(model.d_x, n_all);
  Matrix z(model.latent_dim, n_all);
  std::vector<int> ent(static_cast<std::size_t>(n_all), 0);
  std::vector<int> tim(static_cast<std::size_t>(n_all), 0);
  for (Eigen::Index g = 0; g < g_count; ++g) {
    for (Eigen::Index s = 0; s < s_count; ++s) {
      const Eigen::Index b = g * s_count + s;
      const int e = probe.entity.empty() ? 0 : probe.entity[static_cast<std::size_t>(g)];
      const int t = probe.time.empty() ? 0 : probe.time[static_cast<std::size_t>(g)];
      x.col(b) = probe.x.col(g);
      z.col(b) = z_samples.col(s);
      ent[static_cast<std::size_t>(b)] = e;
      tim[static_cast<std::size_t>(b)] = t;
      for (Eigen::Index j = 0; j < j_count; ++j) {
        const Eigen::Index c = n_base + b * j_count + j;
        x.col(c) = probe.x.col(g);
        x(dims[static_cast<std::size_t>(j)], c) += delta;
        z.col(c) = z_samples.col(s);
        ent[static_cast<std::size_t>(c)] = e;
        tim[static_cast<std::size_t>(c)] = t;
      }
    }
  }
  MonoEval ev;
  ev.input = decoder_input(model, x, z, ent, tim);
  const Matrix out = model.decoder.forward(ev.input, ForwardOptions{}, keep_trace ? &ev.trace : nullptr);
  ev.base = out.leftCols(n_base);
  ev.shifted = out.rightCols(n_all - n_base);
  return ev;
}

void check_probe(const ProManModel& model, const MonoProbe& probe, const Matrix& z_samples, double delta,
                 std::span<const int> dims) {
  if (!(delta > 0.0)) throw Error(ErrorCode::InvalidArgument, "monotonicity step must be positive");
  if (probe.x.rows() != model.d_x) throw Error(ErrorCode::DimensionMismatch, "probe dimension");
  if (z_samples.rows() != model.latent_dim) throw Error(ErrorCode::DimensionMismatch, "z sample dimension");
  for (int j : dims) {
    if (j < 0 || j >= model.d_x) throw Error(ErrorCode::DimensionMismatch, "monotone dim out of range");
  }
}

}  // namespace

double monotonicity_penalty(const ProManModel& model, const MonoProbe& probe, const Matrix& z_samples, double delta,
                            std::span<const int> dims, ProManGrads* grads, double scale) {
  check_probe(model, probe, z_samples, delta, dims);
  if (probe.x.cols() == 0 || z_samples.cols() == 0 || dims.empty()) return 0.0;
  MonoEval ev = evaluate_mono(model, probe, z_samples, delta, dims, grads != nullptr);
  const Eigen::Index n_base = ev.base.cols();
  const Eigen::Index j_count = static_cast<Eigen::Index>(dims.size());
  double penalty = 0.0;
  Matrix grad_out;
  if (grads) grad_out = Matrix::Zero(model.d_y, n_base * (1 + j_count));
  for (Eigen::Index b = 0; b < n_base; ++b) {
    for (Eigen::Index j = 0; j < j_count; ++j) {
      const Eigen::Index c = b * j_count + j;
      for (Eigen::Index k = 0; k < model.d_y; ++k) {
        const double inc = ev.shifted(k, c) - ev.base(k, b);
        if (inc < 0.0) {
          penalty -= inc;
          if (grads) {
            grad_out(k, n_base + c) -= scale;
            grad_out(k, b) += scale;
          }
        }
      }
    }
  }
  if (grads && penalty > 0.0) {
    const Matrix gin = model.decoder.backward(ev.trace, grad_out, grads->decoder);
    std::vector<int> ent(static_cast<std::size_t>(gin.cols()), 0);
    std::vector<int> tim(static_cast<std::size_t>(gin.cols()), 0);
    const Eigen::Index s_count = z_samples.cols();
    for (Eigen::Index c = 0; c < gin.cols(); ++c) {
      const Eigen::Index b = c < n_base ? c : (c - n_base) / j_count;
      const std::size_t g = static_cast<std::size_t>(b / s_count);
      ent[static_cast<std::size_t>(c)] = probe.entity.empty() ? 0 : probe.entity[g];
      tim[static_cast<std::size_t>(c)] = probe.time.empty() ? 0 : probe.time[g];
    }
    scatter_embeddings(model, gin, model.d_x + model.latent_dim, ent, tim, *grads);
  }
  return penalty;
}

double monotonicity_violation_fraction(const ProManModel& model, const MonoProbe& probe, const Matrix& z_samples,
                                       double delta, std::span<const int> dims) {
  check_probe(model, probe, z_samples, delta, dims);
  if (probe.x.cols() == 0 || z_samples.cols() == 0 || dims.empty()) return 0.0;
  const MonoEval ev = evaluate_mono(model, probe, z_samples, delta, dims, false);
  const Eigen::Index j_count = static_cast<Eigen::Index>(dims.size());
  std::size_t bad = 0;
  std::size_t total = 0;
  for (Eigen::Index b = 0; b < ev.base.cols(); ++b) {
    for (Eigen::Index j = 0; j < j_count; ++j) {
      for (Eigen::Index k = 0; k < model.d_y; ++k) {
        ++total;
        if (ev.shifted(k, b * j_count + j) < ev.base(k, b)) ++bad;
      }
    }
  }
  return total ? static_cast<double>(bad) / static_cast<double>(total) : 0.0;
}

// ---------------------------------------------------------------------------
// Objective

nlohmann::json LossBreakdown::to_json() const {
  return {{"reconstruction", reconstruction}, {"kl_z", kl_z},       {"kl_u", kl_u},
          {"mono_penalty", mono_penalty},     {"total", total},     {"beta", weights.beta},
          {"gamma", weights.gamma},           {"lambda_mono", weights.lambda_mono}};
}

LossBreakdown elbo_loss(const ProManModel& model, const ModelData& data, std::span<const std::size_t> rows,
                        const LossWeights& weights, double huber_delta, RngStream& rng, ProManGrads* grads,
                        const ElboOptions& options) {
  if (rows.empty()) throw Error(ErrorCode::EmptySplit, "empty batch");
  check_dims(model, data.x.rows(), data.y.rows());
  const Eigen::Index bsz = static_cast<Eigen::Index>(rows.size());
  const double inv_b = 1.0 / static_cast<double>(bsz);
  const int kdim = model.latent_dim;

  const Matrix xb = gather_cols(data.x, rows);
  const Matrix yb = gather_cols(data.y, rows);
  const std::vector<int> ent = gather(data.entity, rows);
  const std::vector<int> tim = gather(data.time, rows);

  ForwardOptions fo;
  fo.train = options.train;
  fo.rng = &rng;
  MlpTrace tr_trunk, tr_hz, tr_hu, tr_dec;
  const Matrix enc_in = encoder_input(model, xb, yb, ent, tim);
  const Matrix h = model.trunk.forward(enc_in, fo, &tr_trunk);
  const Matrix pz = model.head_z.forward(h, fo, &tr_hz);
  const Matrix pu = model.head_u.forward(h, fo, &tr_hu);

  Matrix eps_z(kdim, bsz);
  Vector eps_u(bsz);
  for (Eigen::Index i = 0; i < bsz; ++i) {
    for (int k = 0; k < kdim; ++k) eps_z(k, i) = rng.normal();
    eps_u(i) = rng.normal();
  }
  const Matrix mu_z = pz.topRows(kdim);
  const Matrix lv_z = pz.bottomRows(kdim);
  const Matrix sd_z = (0.5 * lv_z).array().exp().matrix();
  const Matrix z = mu_z + sd_z.cwiseProduct(eps_z);
  const Vector mu_u = pu.row(0).transpose();
  const Vector lv_u = pu.row(1).transpose();
  const Vector sd_u = (0.5 * lv_u).array().exp().matrix();
  const Vector u = (mu_u + sd_u.cwiseProduct(eps_u)).array().exp().matrix();

  ForwardOptions fo_dec = fo;
  fo_dec.update_spectral = options.update_spectral;
  const Matrix dec_in = decoder_input(model, xb, z, ent, tim);
  const Matrix frontier = model.decoder.forward(dec_in, fo_dec, &tr_dec);

  const double lambda = model.rate();
  const double log_lambda = std::log(lambda);
  LossBreakdown lb;
  lb.weights = weights;
  Matrix g_front(model.d_y, bsz);
  Vector expected_u(bsz);
  for (Eigen::Index i = 0; i < bsz; ++i) {
    for (Eigen::Index k = 0; k < model.d_y; ++k) {
      const double r = frontier(k, i) - u(i) - yb(k, i);
      lb.reconstruction += huber(r, huber_delta);
      g_front(k, i) = huber_derivative(r, huber_delta) * inv_b;
    }
    for (int k = 0; k < kdim; ++k) {
      lb.kl_z += -0.5 * (1.0 + lv_z(k, i) - mu_z(k, i) * mu_z(k, i) - std::exp(lv_z(k, i)));
    }
    expected_u(i) = std::exp(mu_u(i) + 0.5 * std::exp(lv_u(i)));
    lb.kl_u += -mu_u(i) - kHalfLog2PiE - 0.5 * lv_u(i) - log_lambda + lambda * expected_u(i);
  }
  lb.reconstruction *= inv_b;
  lb.kl_z *= inv_b;
  lb.kl_u *= inv_b;

  // Monotonicity probes: points drawn from the batch, z from the prior.
  MonoProbe probe;
  Matrix z_prior;
  std::vector<int> dims(static_cast<std::size_t>(model.d_x));
  std::iota(dims.begin(), dims.end(), 0);
  const bool use_mono = weights.lambda_mono > 0.0 && options.mono_points > 0 && options.mono_z_samples > 0;
  if (use_mono) {
    probe.x.resize(model.d_x, options.mono_points);
    for (int g = 0; g < options.mono_points; ++g) {
      const std::size_t pick = rng.index(rows.size());
      probe.x.col(g) = xb.col(static_cast<Eigen::Index>(pick));
      if (!data.entity.empty()) probe.entity.push_back(ent[pick]);
      if (!data.time.empty()) probe.time.push_back(tim[pick]);
    }
    z_prior.resize(kdim, options.mono_z_samples);
    for (int s = 0; s < options.mono_z_samples; ++s) {
      for (int k = 0; k < kdim; ++k) z_prior(k, s) = rng.normal();
    }
    lb.mono_penalty =
        monotonicity_penalty(model, probe, z_prior, options.mono_delta, dims, grads, weights.lambda_mono);
  }

  lb.total = lb.reconstruction + weights.beta * lb.kl_z + weights.gamma * lb.kl_u +
             weights.lambda_mono * lb.mono_penalty;
  if (!grads) return lb;

  // Backward through decoder.
  const Matrix g_dec_in = model.decoder.backward(tr_dec, g_front, grads->decoder);
  const Matrix g_z = g_dec_in.middleRows(model.d_x, kdim);
  scatter_embeddings(model, g_dec_in, model.d_x + kdim, ent, tim, *grads);

  Matrix g_pz(2 * kdim, bsz);
  Matrix g_pu(2, bsz);
  const double beta_b = weights.beta * inv_b;
  const double gamma_b = weights.gamma * inv_b;
  double g_lambda = 0.0;
  for (Eigen::Index i = 0; i < bsz; ++i) {
    for (int k = 0; k < kdim; ++k) {
      const double gz = g_z(k, i);
      g_pz(k, i) = gz + beta_b * mu_z(k, i);
      g_pz(kdim + k, i) = gz * eps_z(k, i) * sd_z(k, i) * 0.5 + beta_b * 0.5 * (std::exp(lv_z(k, i)) - 1.0);
    }
    double gu = 0.0;
    for (Eigen::Index k = 0; k < model.d_y; ++k) gu -= g_front(k, i);
    const double var_u = std::exp(lv_u(i));
    g_pu(0, i) = gu * u(i) + gamma_b * (-1.0 + lambda * expected_u(i));
    g_pu(1, i) = gu * u(i) * eps_u(i) * sd_u(i) * 0.5 + gamma_b * (-0.5 + 0.5 * lambda * expected_u(i) * var_u);
    g_lambda += gamma_b * (-1.0 / lambda + expected_u(i));
  }
  grads->log_lambda += g_lambda * sigmoid(model.log_lambda);

  Matrix g_h = model.head_z.backward(tr_hz, g_pz, grads->head_z);
  g_h += model.head_u.backward(tr_hu, g_pu, grads->head_u);
  const Matrix g_enc_in = model.trunk.backward(tr_trunk, g_h, grads->trunk);
  scatter_embeddings(model, g_enc_in, model.d_x + model.d_y, ent, tim, *grads);
  return lb;
}

LossBreakdown evaluation_loss(const ProManModel& model, const ModelData& data, const LossWeights& weights,
                              double huber_delta) {
  LossBreakdown lb;
  lb.weights = weights;
  const std::size_t n = data.size();
  if (n == 0) return lb;
  const PosteriorBatch post = encode_batch(model, data);
  const Matrix frontier = decode_frontier_batch(model, data.x, post.mu_z, data.entity, data.time);
  const double lambda = model.rate();
  for (std::size_t ii = 0; ii < n; ++ii) {
    const auto i = static_cast<Eigen::Index>(ii);
    const double eu = std::exp(post.mu_u(i) + 0.5 * std::exp(post.logvar_u(i)));
    for (Eigen::Index k = 0; k < model.d_y; ++k) lb.reconstruction += huber(frontier(k, i) - eu - data.y(k, i), huber_delta);
    lb.kl_z += kl_gaussian(post.mu_z.col(i), post.logvar_z.col(i));
    lb.kl_u += kl_lognormal_exponential(post.mu_u(i), post.logvar_u(i), lambda);
  }
  const double inv = 1.0 / static_cast<double>(n);
  lb.reconstruction *= inv;
  lb.kl_z *= inv;
  lb.kl_u *= inv;
  lb.total = lb.reconstruction + weights.beta * lb.kl_z + weights.gamma * lb.kl_u;
  return lb;
}

// ---------------------------------------------------------------------------
// Training

nlohmann::json TrainReport::to_json() const {
  nlohmann::json e = nlohmann::json::array();
  for (const auto& r : epochs) {
    e.push_back({{"epoch", r.epoch},
                 {"beta", r.beta},
                 {"dropout", r.dropout},
                 {"train", r.train.to_json()},
                 {"validation", r.validation.to_json()}});
  }
  return {{"best_epoch", best_epoch},
          {"early_stopped", early_stopped},
          {"initial_validation_reconstruction", initial_validation_reconstruction},
          {"mono_violation_fraction", mono_violation_fraction},
          {"epochs", e}};
}

double beta_schedule(int epoch, int anneal_epochs) {
  if (anneal_epochs <= 0) return 1.0;
  return std::min(1.0, static_cast<double>(epoch) / static_cast<double>(anneal_epochs));
}

double dropout_schedule(int epoch, int epochs, double rate) { return epoch < epochs / 2 ? rate : 0.0; }

namespace {

MonoProbe probe_from_data(const ModelData& data, std::size_t max_points, RngStream& rng) {
  MonoProbe p;
  const std::size_t n = data.size();
  const std::size_t g = std::min(max_points, n);
  p.x.resize(data.x.rows(), static_cast<Eigen::Index>(g));
  for (std::size_t i = 0; i < g; ++i) {
    const std::size_t pick = n <= max_points ? i : rng.index(n);
    p.x.col(static_cast<Eigen::Index>(i)) = data.x.col(static_cast<Eigen::Index>(pick));
    if (!data.entity.empty()) p.entity.push_back(data.entity[pick]);
    if (!data.time.empty()) p.time.push_back(data.time[pick]);
  }
  return p;
}

bool finite(const LossBreakdown& lb) {
  return std::isfinite(lb.total) && std::isfinite(lb.reconstruction) && std::isfinite(lb.kl_z) &&
         std::isfinite(lb.kl_u) && std::isfinite(lb.mono_penalty);
}

}  // namespace

TrainResult train(const DatasetFrame& train_frame, const DatasetFrame& validation_frame, const TrainConfig& config) {
  if (train_frame.n_rows() == 0) throw Error(ErrorCode::EmptySplit, "training split is empty");
  RngStream init_rng(config.seed, 1);
  RngStream rng(config.seed, 2);

  TrainResult result;
  ProManModel& model = result.model;
  model = make_model(fit_features(train_frame, config), config, init_rng);
  const ModelData train_data = prepare(model, train_frame);
  const ModelData val_data = validation_frame.n_rows() > 0 ? prepare(model, validation_frame) : train_data;

  AdamConfig ac;
  ac.learning_rate = config.learning_rate;
  ac.weight_decay = config.weight_decay;
  AdamState adam = make_adam_state(ac, model.parameter_spans());
  ProManGrads grads = ProManGrads::zeros_like(model);

  ElboOptions eo;
  eo.train = true;
  eo.update_spectral = config.spectral_norm;
  eo.mono_points = config.mono_points;
  eo.mono_z_samples = config.mono_z_samples;
  eo.mono_delta = config.mono_delta;

  const std::size_t n = train_data.size();
  const std::size_t bs = static_cast<std::size_t>(config.batch_size);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainReport& report = result.report;
  report.initial_validation_reconstruction =
      evaluation_loss(model, val_data, LossWeights{0.0, config.gamma_u, 0.0}, config.huber_delta).reconstruction;

  ProManModel best = model;
  double best_val = std::numeric_limits<double>::infinity();
  int since_best = 0;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const LossWeights w{beta_schedule(epoch, config.beta_anneal_epochs), config.gamma_u, config.lambda_mono};
    const double drop = dropout_schedule(epoch, config.epochs, config.dropout);
    model.set_dropout(drop);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.beta = w.beta;
    rec.dropout = drop;
    rec.train.weights = w;
    for (std::size_t start = 0; start < n; start += bs) {
      const std::size_t len = std::min(bs, n - start);
      std::span<const std::size_t> batch(order.data() + start, len);
      grads.set_zero();
      const LossBreakdown lb = elbo_loss(model, train_data, batch, w, config.huber_delta, rng, &grads, eo);
      if (!finite(lb)) {
        throw Error(ErrorCode::NonFiniteLoss,
                    "epoch " + std::to_string(epoch) + ": reconstruction=" + std::to_string(lb.reconstruction) +
                        " kl_z=" + std::to_string(lb.kl_z) + " kl_u=" + std::to_string(lb.kl_u) +
                        " mono=" + std::to_string(lb.mono_penalty));
      }
      const double frac = static_cast<double>(len) / static_cast<double>(n);
      rec.train.reconstruction += frac * lb.reconstruction;
      rec.train.kl_z += frac * lb.kl_z;
      rec.train.kl_u += frac * lb.kl_u;
      rec.train.mono_penalty += frac * lb.mono_penalty;
      rec.train.total += frac * lb.total;
      adam_step(adam, model.parameter_spans(), grads.spans());
    }
    model.set_dropout(0.0);
    rec.validation = evaluation_loss(model, val_data, w, config.huber_delta);
    report.epochs.push_back(rec);

    if (rec.validation.reconstruction < best_val) {
      best_val = rec.validation.reconstruction;
      best = model;
      report.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= config.patience && config.patience > 0) {
      report.early_stopped = true;
      break;
    }
  }
  if (!report.epochs.empty()) model = best;
  model.set_dropout(0.0);
  model.fitted = true;

  RngStream probe_rng(config.seed, 3);
  MonoProbe probe = probe_from_data(train_data, 256, probe_rng);
  Matrix zs(model.latent_dim, std::max(1, config.mono_z_samples));
  for (Eigen::Index s = 0; s < zs.cols(); ++s) {
    for (int k = 0; k < model.latent_dim; ++k) zs(k, s) = probe_rng.normal();
  }
  std::vector<int> dims(static_cast<std::size_t>(model.d_x));
  std::iota(dims.begin(), dims.end(), 0);
  report.mono_violation_fraction = monotonicity_violation_fraction(model, probe, zs, config.mono_delta, dims);
  return result;
}

TrainResult fit(const DatasetFrame& frame, const TrainConfig& config) {
  const auto parts = split(frame, config.split_fractions, config.seed);
  return train(parts[0], parts[1], config);
}

// ---------------------------------------------------------------------------
// Scores

std::vector<EfficiencyRow> efficiency_scores(const ProManModel& model, const DatasetFrame& frame) {
  if (!model.fitted) throw Error(ErrorCode::UnfittedModel, "model has not been trained");
  const ModelData data = prepare(model, frame);
  const PosteriorBatch post = encode_batch(model, data);
  std::vector<EfficiencyRow> out(data.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    EfficiencyRow r;
    r.mu_u = post.mu_u(ii);
    r.var_u = std::exp(post.logvar_u(ii));
    r.expected_u = std::exp(r.mu_u + 0.5 * r.var_u);
    r.efficiency = std::exp(-r.expected_u);
    out[i] = r;
  }
  return out;
}

Matrix latent_technology(const ProManModel& model, const DatasetFrame& frame) {
  const ModelData data = prepare(model, frame);
  return encode_batch(model, data).mu_z.transpose();
}

Matrix frontier_raw(const ProManModel& model, const Matrix& raw_inputs, const Vector& z) {
  const auto& meta = model.meta;
  const Eigen::Index n = raw_inputs.rows();
  if (raw_inputs.cols() != model.d_x) throw Error(ErrorCode::DimensionMismatch, "raw input columns");
  Matrix x(model.d_x, n);
  for (int j = 0; j < model.d_x; ++j) {
    const std::size_t s = meta.scaler.index_of(meta.input_cols[static_cast<std::size_t>(j)]);
    for (Eigen::Index i = 0; i < n; ++i) {
      x(j, i) = (apply_log_transform(raw_inputs(i, j), meta.transform) - meta.scaler.mean[s]) / meta.scaler.std[s];
    }
  }
  Matrix zz = z.replicate(1, n);
  std::vector<int> codes(static_cast<std::size_t>(n), 0);
  const Matrix f = decode_frontier_batch(model, x, zz, codes, codes);
  Matrix out(n, model.d_y);
  for (int k = 0; k < model.d_y; ++k) {
    const std::size_t s = meta.scaler.index_of(meta.output_cols[static_cast<std::size_t>(k)]);
    for (Eigen::Index i = 0; i < n; ++i) {
      out(i, k) = invert_log_transform(f(k, i) * meta.scaler.std[s] + meta.scaler.mean[s], meta.transform);
    }
  }
  return out;
}

}  // namespace gema
