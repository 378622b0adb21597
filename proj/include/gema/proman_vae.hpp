#pragma once

#include "gema/data_model.hpp"
#include "gema/linalg.hpp"
#include "gema/mlp.hpp"
#include "gema/rng.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace gema {

/// Training hyperparameters. JSON keys match the field names.
struct TrainConfig {
  int latent_dim = 2;
  int hidden_dim = 64;
  int epochs = 200;
  int batch_size = 128;
  double learning_rate = 2e-3;
  double gamma_u = 1.0;
  double lambda_mono = 1e-3;
  int beta_anneal_epochs = 20;
  int patience = 30;
  double dropout = 0.1;
  double weight_decay = 1e-5;
  double huber_delta = 1.0;
  Activation activation = Activation::Gelu;
  bool spectral_norm = false;
  std::uint64_t seed = 0;

  // Extensions beyond the core key set.
  Activation output_activation = Activation::Linear;
  LogTransform transform = LogTransform::Log1p;
  int entity_embed_dim = 4;
  int time_embed_dim = 2;
  int mono_points = 64;
  int mono_z_samples = 4;
  double mono_delta = 0.05;
  double whitening_epsilon = 1e-6;
  std::array<double, 3> split_fractions{0.8, 0.1, 0.1};

  nlohmann::json to_json() const;
  // Missing keys keep their defaults; unknown keys are rejected.
  static TrainConfig from_json(const nlohmann::json& j);
  static TrainConfig from_json(const nlohmann::json& j, const TrainConfig& base);
};

/// Everything needed to map a raw frame onto model coordinates.
struct FeatureMeta {
  std::vector<std::string> input_cols;
  std::vector<std::string> output_cols;
  std::optional<std::string> entity_col;
  std::optional<std::string> time_col;
  std::vector<std::string> entity_levels;
  std::vector<std::string> time_levels;
  LogTransform transform = LogTransform::Log1p;
  Scaler scaler;                    // inputs then outputs, after the log transform
  WhiteningTransform whitening;     // on standardised training inputs
};

FeatureMeta fit_features(const DatasetFrame& train, const TrainConfig& config);

/// Model-space view of a frame: columns are observations.
struct ModelData {
  Matrix x;  // d_x x n, standardised
  Matrix y;  // d_y x n, standardised
  std::vector<int> entity;
  std::vector<int> time;
  std::vector<std::size_t> row_ids;

  std::size_t size() const { return static_cast<std::size_t>(x.cols()); }
};

class ProManModel {
 public:
  int d_x = 0;
  int d_y = 0;
  int latent_dim = 0;
  Mlp trunk;    // [x; y; e_ent; e_time] -> hidden
  Mlp head_z;   // hidden -> [mu_z; logvar_z]
  Mlp head_u;   // hidden -> [mu_u; logvar_u]
  Mlp decoder;  // [W(x - mu); z; e_ent; e_time] -> y frontier
  EmbeddingTable entity_embedding;
  EmbeddingTable time_embedding;
  double log_lambda = 0.0;
  FeatureMeta meta;
  TrainConfig config;
  bool fitted = false;

  double rate() const;  // softplus(log_lambda)
  int entity_dim() const { return entity_embedding.dim(); }
  int time_dim() const { return time_embedding.dim(); }
  int decoder_in_dim() const { return d_x + latent_dim + entity_dim() + time_dim(); }

  std::vector<std::span<double>> parameter_spans();
  void set_dropout(double rate);
};

ProManModel make_model(const FeatureMeta& meta, const TrainConfig& config, RngStream& rng);

ModelData prepare(const ProManModel& model, const DatasetFrame& frame);

struct LatentPosterior {
  Vector mu_z;
  Vector logvar_z;
  double mu_u = 0.0;
  double logvar_u = 0.0;
};

struct PosteriorBatch {
  Matrix mu_z;      // K x n
  Matrix logvar_z;  // K x n
  Vector mu_u;
  Vector logvar_u;
};

LatentPosterior encode(const ProManModel& model, const Vector& x, const Vector& y, int entity = 0,
                       int time = 0);
PosteriorBatch encode_batch(const ProManModel& model, const ModelData& data);

struct LatentSample {
  Vector z;
  double u = 0.0;
};
LatentSample reparameterize(const LatentPosterior& posterior, RngStream& rng);

Vector decode_frontier(const ProManModel& model, const Vector& x, const Vector& z, int entity = 0,
                       int time = 0);
// x: d_x x n (standardised), z: K x n.
Matrix decode_frontier_batch(const ProManModel& model, const Matrix& x, const Matrix& z,
                             std::span<const int> entity, std::span<const int> time);

double huber(double r, double delta);
double huber_derivative(double r, double delta);
double reconstruction_loss(const Vector& reconstructed, const Vector& observed, double delta);
double kl_gaussian(const Vector& mu, const Vector& logvar);
double kl_lognormal_exponential(double mu, double logvar, double rate);

/// Parameter gradients in the same block order as ProManModel::parameter_spans.
struct ProManGrads {
  MlpGrads trunk;
  MlpGrads head_z;
  MlpGrads head_u;
  MlpGrads decoder;
  Matrix entity;
  Matrix time;
  double log_lambda = 0.0;

  static ProManGrads zeros_like(const ProManModel& model);
  void set_zero();
  std::vector<std::span<double>> spans();
};

struct MonoProbe {
  Matrix x;  // d_x x G, standardised
  std::vector<int> entity;
  std::vector<int> time;
};

/// Sum over probe points, input dims, z samples and outputs of
/// |min(0, g(x + delta e_j, z) - g(x, z))|. When `grads` is given,
/// scale * dPenalty/dtheta is accumulated into it.
double monotonicity_penalty(const ProManModel& model, const MonoProbe& probe, const Matrix& z_samples,
                            double delta, std::span<const int> dims, ProManGrads* grads = nullptr,
                            double scale = 1.0);

/// Fraction of (point, dim, z, output) probes whose increment is negative.
double monotonicity_violation_fraction(const ProManModel& model, const MonoProbe& probe,
                                       const Matrix& z_samples, double delta,
                                       std::span<const int> dims);

struct LossWeights {
  double beta = 1.0;
  double gamma = 1.0;
  double lambda_mono = 0.0;
};

struct LossBreakdown {
  double reconstruction = 0.0;
  double kl_z = 0.0;
  double kl_u = 0.0;
  double mono_penalty = 0.0;
  double total = 0.0;
  LossWeights weights;

  nlohmann::json to_json() const;
};

struct ElboOptions {
  bool train = true;              // dropout on
  bool update_spectral = false;   // advance the decoder power iteration
  int mono_points = 64;
  int mono_z_samples = 4;
  double mono_delta = 0.05;
};

/// Minibatch objective: mean over rows of Huber reconstruction plus
/// beta KL(z) plus gamma KL(u), plus lambda_mono times the monotonicity
/// penalty on probes drawn from the batch. One reparameterised sample per row.
LossBreakdown elbo_loss(const ProManModel& model, const ModelData& data, std::span<const std::size_t> rows,
                        const LossWeights& weights, double huber_delta, RngStream& rng, ProManGrads* grads,
                        const ElboOptions& options = ElboOptions{});

/// Deterministic loss using posterior means (z = mu_z, u = E[u]); no penalty.
LossBreakdown evaluation_loss(const ProManModel& model, const ModelData& data, const LossWeights& weights,
                              double huber_delta);

struct EpochRecord {
  int epoch = 0;
  double beta = 0.0;
  double dropout = 0.0;
  LossBreakdown train;
  LossBreakdown validation;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  bool early_stopped = false;
  double initial_validation_reconstruction = 0.0;
  double mono_violation_fraction = 0.0;

  nlohmann::json to_json() const;
};

struct TrainResult {
  ProManModel model;
  TrainReport report;
};

double beta_schedule(int epoch, int anneal_epochs);
double dropout_schedule(int epoch, int epochs, double rate);

TrainResult train(const DatasetFrame& train_frame, const DatasetFrame& validation_frame,
                  const TrainConfig& config);

/// Splits `frame` with config.split_fractions and config.seed, then trains.
TrainResult fit(const DatasetFrame& frame, const TrainConfig& config);

struct EfficiencyRow {
  double efficiency = 1.0;  // exp(-E[u])
  double expected_u = 0.0;  // exp(mu_u + var_u / 2)
  double mu_u = 0.0;
  double var_u = 0.0;
};

std::vector<EfficiencyRow> efficiency_scores(const ProManModel& model, const DatasetFrame& frame);
Matrix latent_technology(const ProManModel& model, const DatasetFrame& frame);  // n x K

/// Frontier in raw output units at raw inputs (rows), decoding at a fixed z.
Matrix frontier_raw(const ProManModel& model, const Matrix& raw_inputs, const Vector& z);

}  // namespace gema
