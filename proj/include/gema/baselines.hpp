#pragma once

#include "gema/data_model.hpp"
#include "gema/rng.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace gema {

// ---------------------------------------------------------------------------
// Linear programming

enum class Sense { Le, Eq, Ge };

/// maximize c^T x subject to A x (sense) b, x >= lower.
struct LinearProgram {
  Vector c;
  Matrix a;
  std::vector<Sense> senses;
  Vector b;
  Vector lower;  // empty means all zero

  void check() const;
};

enum class LpStatus { Optimal, Infeasible, Unbounded, MaxIterations };

std::string_view to_string(LpStatus s);

struct LpResult {
  LpStatus status = LpStatus::Optimal;
  double value = 0.0;
  Vector x;
  int iterations = 0;
};

/// Dense two-phase simplex with Bland's rule.
LpResult simplex_solve(const LinearProgram& lp, int max_iterations = 100000);

// ---------------------------------------------------------------------------
// Envelopment estimators (raw positive data; rows are DMUs)

/// Output-oriented VRS efficiency 1/phi for every DMU.
std::vector<double> dea_vrs_output(const Matrix& inputs, const Matrix& outputs);
std::vector<double> dea_vrs_output(const DatasetFrame& frame);

/// Free disposal hull, output orientation:
/// eff_o = 1 / max_{k : x_k <= x_o} min_r y_kr / y_or.
std::vector<double> fdh_output(const Matrix& inputs, const Matrix& outputs);
std::vector<double> fdh_output(const DatasetFrame& frame);

// ---------------------------------------------------------------------------
// Translog stochastic frontier

struct SfaModel {
  std::vector<std::string> input_cols;
  std::string output_col;
  Vector beta;  // intercept, linear, then (j <= k) products of log inputs
  double sigma_u = 0.0;
  double sigma_v = 0.0;
  double log_likelihood = 0.0;
  double ols_log_likelihood = 0.0;
  bool converged = false;
  bool fitted = false;
};

/// Translog design row for log inputs.
Vector translog_row(const Vector& log_x);

/// Normal / half-normal composed-error log-likelihood.
double sfa_log_likelihood(const Vector& residuals, double sigma_u, double sigma_v);

struct SfaOptions {
  int restarts = 5;
  int max_evaluations = 40000;
  std::uint64_t seed = 0;
};

SfaModel sfa_translog_fit(const DatasetFrame& frame, const SfaOptions& options = {});

/// Composed residual eps = log y - translog(x).
std::vector<double> sfa_residuals(const SfaModel& model, const DatasetFrame& frame);

/// Conditional mean E[u | eps] for the normal / half-normal model.
double jlms(double eps, double sigma_u, double sigma_v);

struct SfaScore {
  double efficiency = 1.0;  // exp(-E[u|eps])
  double expected_u = 0.0;
  double residual = 0.0;
};

std::vector<SfaScore> sfa_efficiency(const SfaModel& model, const DatasetFrame& frame);

/// exp(translog(log x)) at raw input rows.
Vector sfa_frontier(const SfaModel& model, const Matrix& raw_inputs);

// ---------------------------------------------------------------------------
// Random forest

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  double value = 0.0;
  int left = -1;
  int right = -1;
};

struct RegressionTree {
  std::vector<TreeNode> nodes;
  double predict(const double* row) const;
};

struct ForestOptions {
  int n_trees = 100;
  int max_depth = 12;
  int min_leaf = 5;
  double shift_quantile = 0.95;
  std::uint64_t seed = 0;
};

struct ForestModel {
  std::vector<std::string> input_cols;
  std::string output_col;
  std::vector<RegressionTree> trees;
  std::vector<std::uint64_t> tree_seeds;
  ForestOptions options;
  double shift = 0.0;  // quantile of in-bag residuals log y - prediction

  double predict(const Vector& features) const;
};

/// Bagged CART on log output over log inputs.
ForestModel forest_fit(const DatasetFrame& frame, const ForestOptions& options = {});

struct ForestScore {
  double efficiency = 1.0;  // exp(-u_hat)
  double u_hat = 0.0;       // max(0, prediction + shift - log y)
  double residual = 0.0;    // log y - prediction
};

std::vector<ForestScore> forest_efficiency(const ForestModel& model, const DatasetFrame& frame);

}  // namespace gema
