#pragma once

#include "gema/baselines.hpp"
#include "gema/linalg.hpp"
#include "gema/proman_vae.hpp"
#include "gema/synthetic.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

namespace gema {

double pearson(const std::vector<double>& a, const std::vector<double>& b);

/// Average ranks (1-based), ties share their mean rank.
std::vector<double> mid_ranks(const std::vector<double>& v);
double spearman(const std::vector<double>& a, const std::vector<double>& b);

double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b);

struct FrontierGrid {
  double lo = 0.0;
  double hi = 1.0;
  int points = 30;  // per axis; cells are sampled at their midpoints

  Matrix nodes() const;  // points^2 x 2
};

using FrontierFn = std::function<double(double, double)>;

/// RMSE of est - truth over the grid nodes.
double frontier_error(const FrontierFn& est, const FrontierFn& truth, const FrontierGrid& grid = {});
double frontier_error(const Vector& est, const FrontierFn& truth, const FrontierGrid& grid = {});

struct ClusterResult {
  std::vector<int> labels;
  Matrix centers;                  // k x d
  std::vector<Matrix> covariances; // GMM only
  Vector weights;                  // GMM only
  Matrix responsibilities;         // n x k, GMM only
  std::vector<double> history;     // SSE (k-means) or log-likelihood (GMM) per iteration
  double objective = 0.0;
  int iterations = 0;
};

/// Lloyd's algorithm with k-means++ seeding; best of `restarts` by SSE.
ClusterResult kmeans(const Matrix& x, int k, std::uint64_t seed, int restarts = 10, int max_iter = 300);

/// Full-covariance Gaussian mixture fitted by EM, started from k-means.
ClusterResult gmm_em(const Matrix& x, int k, std::uint64_t seed, int max_iter = 500, double tol = 1e-8);

struct PcaResult {
  Matrix scores;      // n x dims
  Matrix components;  // d x dims
  Vector variances;   // explained variance per component
  Vector mean;
};

PcaResult pca_project(const Matrix& x, int dims = 2);

// ---------------------------------------------------------------------------
// Monte Carlo benchmark

/// Training configuration used for GeMA on synthetic scenarios.
TrainConfig synthetic_train_config();

struct BenchmarkConfig {
  Scenario scenario = Scenario::A;
  std::vector<std::string> methods{"gema", "dea", "fdh", "sfa", "rf"};
  int n = 500;
  int n_reps = 10;
  std::uint64_t master_seed = 0;
  int jobs = 1;
  TrainConfig gema = synthetic_train_config();
  SfaOptions sfa;
  ForestOptions forest;
  FrontierGrid grid;

  nlohmann::json to_json() const;
  static BenchmarkConfig from_json(const nlohmann::json& j);
  static BenchmarkConfig from_json(const nlohmann::json& j, const BenchmarkConfig& base);
};

struct MetricCell {
  std::string method;
  std::string metric;
  double mean = 0.0;
  double std = 0.0;
  int n_reps = 0;   // replications with a value
  int missing = 0;
  std::vector<double> values;
  std::vector<std::string> reasons;  // one per missing replication
};

struct BenchmarkResult {
  Scenario scenario = Scenario::A;
  int n = 0;
  int n_reps = 0;
  std::uint64_t master_seed = 0;
  BenchmarkConfig config;
  std::vector<MetricCell> cells;

  const MetricCell* find(const std::string& method, const std::string& metric) const;
  nlohmann::json to_json() const;
  static BenchmarkResult from_json(const nlohmann::json& j);
  std::string to_text() const;
};

std::vector<std::string> scenario_metrics(Scenario s);

/// Per-replication metric values for one method; throws on method failure.
std::vector<std::pair<std::string, double>> evaluate_method(const std::string& method, const SynthSample& sample,
                                                            const BenchmarkConfig& config, std::uint64_t rep_seed);

BenchmarkResult run_benchmark(const BenchmarkConfig& config);

}  // namespace gema
