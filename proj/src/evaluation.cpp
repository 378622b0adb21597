#include "gema/evaluation.hpp"

#include "gema/error.hpp"
#include "gema/quotient.hpp"
#include "gema/rng.hpp"

#include <algorithm>
#include <atomic>
#include <cassert>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>
#include <optional>
#include <sstream>
#include <thread>

namespace gema {

// ---------------------------------------------------------------------------
// Metrics

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw Error(ErrorCode::LengthMismatch, "pearson: lengths differ");
  if (a.size() < 2) throw Error(ErrorCode::TooFewPoints, "pearson needs at least 2 values");
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa <= 0.0 || sbb <= 0.0) throw Error(ErrorCode::DegenerateVariance, "pearson: zero variance");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

std::vector<double> mid_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
  std::vector<double> r(v.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = rank;
    i = j + 1;
  }
  return r;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw Error(ErrorCode::LengthMismatch, "spearman: lengths differ");
  if (a.size() < 3) throw Error(ErrorCode::TooFewPoints, "spearman needs at least 3 values");
  try {
    return pearson(mid_ranks(a), mid_ranks(b));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::DegenerateVariance) throw Error(ErrorCode::DegenerateRanks, "spearman: constant ranks");
    throw;
  }
}

namespace {

std::vector<int> dense_codes(const std::vector<int>& labels, int& n_levels) {
  std::map<int, int> code;
  for (int l : labels) code.emplace(l, 0);
  int next = 0;
  for (auto& [l, c] : code) c = next++;
  n_levels = next;
  std::vector<int> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) out[i] = code[labels[i]];
  return out;
}

double choose2(double x) { return 0.5 * x * (x - 1.0); }

}  // namespace

double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size()) throw Error(ErrorCode::LengthMismatch, "ari: lengths differ");
  if (a.size() < 2) throw Error(ErrorCode::TooFewPoints, "ari needs at least 2 labels");
  int ka = 0, kb = 0;
  const auto ca = dense_codes(a, ka);
  const auto cb = dense_codes(b, kb);
  Eigen::MatrixXd table = Eigen::MatrixXd::Zero(ka, kb);
  for (std::size_t i = 0; i < a.size(); ++i) table(ca[i], cb[i]) += 1.0;
  double index = 0.0, sum_a = 0.0, sum_b = 0.0;
  for (Eigen::Index i = 0; i < table.rows(); ++i) {
    for (Eigen::Index j = 0; j < table.cols(); ++j) index += choose2(table(i, j));
  }
  for (Eigen::Index i = 0; i < table.rows(); ++i) sum_a += choose2(table.row(i).sum());
  for (Eigen::Index j = 0; j < table.cols(); ++j) sum_b += choose2(table.col(j).sum());
  const double expected = sum_a * sum_b / choose2(static_cast<double>(a.size()));
  const double max_index = 0.5 * (sum_a + sum_b);
  if (max_index == expected) return 1.0;
  return (index - expected) / (max_index - expected);
}

Matrix FrontierGrid::nodes() const {
  if (points < 1 || !(hi > lo)) throw Error(ErrorCode::InvalidArgument, "frontier grid is empty");
  Matrix g(points * points, 2);
  const double h = (hi - lo) / points;
  for (int i = 0; i < points; ++i) {
    for (int j = 0; j < points; ++j) {
      g(i * points + j, 0) = lo + (i + 0.5) * h;
      g(i * points + j, 1) = lo + (j + 0.5) * h;
    }
  }
  return g;
}

double frontier_error(const Vector& est, const FrontierFn& truth, const FrontierGrid& grid) {
  const Matrix g = grid.nodes();
  if (est.size() != g.rows()) throw Error(ErrorCode::LengthMismatch, "frontier estimate does not match the grid");
  double se = 0.0;
  for (Eigen::Index i = 0; i < g.rows(); ++i) {
    const double d = est(i) - truth(g(i, 0), g(i, 1));
    se += d * d;
  }
  return std::sqrt(se / static_cast<double>(g.rows()));
}

double frontier_error(const FrontierFn& est, const FrontierFn& truth, const FrontierGrid& grid) {
  const Matrix g = grid.nodes();
  Vector v(g.rows());
  for (Eigen::Index i = 0; i < g.rows(); ++i) v(i) = est(g(i, 0), g(i, 1));
  return frontier_error(v, truth, grid);
}

// ---------------------------------------------------------------------------
// Clustering

namespace {

double assign(const Matrix& x, const Matrix& centers, std::vector<int>& labels) {
  double sse = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    Eigen::Index best = 0;
    const double d = (centers.rowwise() - x.row(i)).rowwise().squaredNorm().minCoeff(&best);
    labels[static_cast<std::size_t>(i)] = static_cast<int>(best);
    sse += d;
  }
  return sse;
}

ClusterResult lloyd(const Matrix& x, int k, RngStream& rng, int max_iter) {
  const Eigen::Index n = x.rows();
  Matrix centers(k, x.cols());
  centers.row(0) = x.row(static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(n))));
  Vector d2 = (x.rowwise() - centers.row(0)).rowwise().squaredNorm();
  for (int c = 1; c < k; ++c) {
    const double total = d2.sum();
    Eigen::Index pick = 0;
    if (total > 0.0) {
      double target = rng.uniform() * total;
      pick = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        target -= d2(i);
        if (target < 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(n)));
    }
    centers.row(c) = x.row(pick);
    d2 = d2.cwiseMin((x.rowwise() - centers.row(c)).rowwise().squaredNorm());
  }

  ClusterResult r;
  r.labels.assign(static_cast<std::size_t>(n), -1);
  std::vector<int> next(static_cast<std::size_t>(n));
  for (int it = 0; it < max_iter; ++it) {
    const double sse = assign(x, centers, next);
    assert(r.history.empty() || sse <= r.history.back() * (1.0 + 1e-12) + 1e-12);
    r.history.push_back(sse);
    r.iterations = it + 1;
    if (next == r.labels) break;
    r.labels = next;
    Matrix sum = Matrix::Zero(k, x.cols());
    std::vector<int> count(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sum.row(r.labels[static_cast<std::size_t>(i)]) += x.row(i);
      ++count[static_cast<std::size_t>(r.labels[static_cast<std::size_t>(i)])];
    }
    for (int c = 0; c < k; ++c) {
      if (count[static_cast<std::size_t>(c)] > 0) centers.row(c) = sum.row(c) / count[static_cast<std::size_t>(c)];
    }
  }
  r.centers = centers;
  r.objective = r.history.back();
  return r;
}

}  // namespace

ClusterResult kmeans(const Matrix& x, int k, std::uint64_t seed, int restarts, int max_iter) {
  if (k < 1) throw Error(ErrorCode::InvalidArgument, "k must be positive");
  if (x.rows() < k) throw Error(ErrorCode::TooFewPoints, "kmeans needs at least k rows");
  if (!x.allFinite()) throw Error(ErrorCode::InvalidArgument, "kmeans input has non-finite values");
  ClusterResult best;
  bool have = false;
  for (int r = 0; r < std::max(1, restarts); ++r) {
    RngStream rng(seed, static_cast<std::uint64_t>(r));
    ClusterResult cand = lloyd(x, k, rng, max_iter);
    if (!have || cand.objective < best.objective) {
      best = std::move(cand);
      have = true;
    }
  }
  return best;
}

namespace {

// log N(x_i | mu, cov) for every row.
Vector log_gaussian(const Matrix& x, const Vector& mu, const Matrix& cov) {
  Eigen::LLT<Matrix> llt(cov);
  if (llt.info() != Eigen::Success) throw Error(ErrorCode::SingularCovariance, "component covariance is not positive definite");
  const Matrix l = llt.matrixL();
  const double log_det = 2.0 * l.diagonal().array().log().sum();
  if (!std::isfinite(log_det)) throw Error(ErrorCode::SingularCovariance, "component covariance has zero determinant");
  const Matrix centered = (x.rowwise() - mu.transpose()).transpose();
  const Matrix solved = llt.matrixL().solve(centered);
  const double d = static_cast<double>(x.cols());
  return (-0.5 * (solved.colwise().squaredNorm().array() + log_det + d * std::log(2.0 * std::numbers::pi))).matrix().transpose();
}

}  // namespace

ClusterResult gmm_em(const Matrix& x, int k, std::uint64_t seed, int max_iter, double tol) {
  constexpr double ridge = 1e-6;
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  if (k < 1) throw Error(ErrorCode::InvalidArgument, "k must be positive");
  if (n < static_cast<Eigen::Index>(k) * (d + 1)) throw Error(ErrorCode::TooFewPoints, "gmm needs n >= k (d + 1)");

  const ClusterResult init = kmeans(x, k, seed);
  ClusterResult r;
  r.centers = init.centers;
  r.weights = Vector::Zero(k);
  r.covariances.assign(static_cast<std::size_t>(k), Matrix::Identity(d, d) * ridge);
  for (int c = 0; c < k; ++c) {
    Matrix pts(0, d);
    std::vector<Eigen::Index> rows;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (init.labels[static_cast<std::size_t>(i)] == c) rows.push_back(i);
    }
    r.weights(c) = static_cast<double>(rows.size()) / static_cast<double>(n);
    if (rows.size() > 1) {
      Matrix m(static_cast<Eigen::Index>(rows.size()), d);
      for (std::size_t i = 0; i < rows.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = x.row(rows[i]);
      r.covariances[static_cast<std::size_t>(c)] = covariance(m) + Matrix::Identity(d, d) * ridge;
    } else {
      r.covariances[static_cast<std::size_t>(c)] = covariance(x) + Matrix::Identity(d, d) * ridge;
    }
  }

  Matrix logp(n, k);
  auto e_step = [&]() {
    for (int c = 0; c < k; ++c) {
      if (!(r.weights(c) > 0.0)) throw Error(ErrorCode::SingularCovariance, "component " + std::to_string(c) + " has zero weight");
      logp.col(c) = log_gaussian(x, r.centers.row(c).transpose(), r.covariances[static_cast<std::size_t>(c)]).array() +
                    std::log(r.weights(c));
    }
    double ll = 0.0;
    r.responsibilities.resize(n, k);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double m = logp.row(i).maxCoeff();
      const double lse = m + std::log((logp.row(i).array() - m).exp().sum());
      r.responsibilities.row(i) = (logp.row(i).array() - lse).exp();
      r.responsibilities.row(i) /= r.responsibilities.row(i).sum();
      ll += lse;
    }
    return ll;
  };

  double ll = e_step();
  r.history.push_back(ll);
  for (int it = 0; it < max_iter; ++it) {
    for (int c = 0; c < k; ++c) {
      const Vector w = r.responsibilities.col(c);
      const double nk = w.sum();
      if (!(nk > 1e-10)) throw Error(ErrorCode::SingularCovariance, "component " + std::to_string(c) + " collapsed");
      const Vector mu = x.transpose() * w / nk;
      const Matrix centered = x.rowwise() - mu.transpose();
      r.covariances[static_cast<std::size_t>(c)] =
          centered.transpose() * w.asDiagonal() * centered / nk + Matrix::Identity(d, d) * ridge;
      r.centers.row(c) = mu.transpose();
      r.weights(c) = nk / static_cast<double>(n);
    }
    const double next = e_step();
    assert(next >= ll - 1e-8 * (1.0 + std::abs(ll)));
    r.history.push_back(next);
    r.iterations = it + 1;
    const bool done = std::abs(next - ll) <= tol * (1.0 + std::abs(ll));
    ll = next;
    if (done) break;
  }
  r.objective = ll;
  r.labels.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index best = 0;
    r.responsibilities.row(i).maxCoeff(&best);
    r.labels[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return r;
}

PcaResult pca_project(const Matrix& x, int dims) {
  if (x.rows() < 2) throw Error(ErrorCode::TooFewPoints, "pca needs at least 2 rows");
  if (dims < 1 || dims > x.cols()) throw Error(ErrorCode::InvalidArgument, "pca dims out of range");
  PcaResult p;
  p.mean = x.colwise().mean().transpose();
  const Matrix centered = x.rowwise() - p.mean.transpose();
  const Matrix cov = centered.transpose() * centered / static_cast<double>(x.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
  const Eigen::Index d = x.cols();
  p.components.resize(d, dims);
  p.variances.resize(dims);
  for (int c = 0; c < dims; ++c) {
    Vector v = es.eigenvectors().col(d - 1 - c);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0.0) v = -v;
    p.components.col(c) = v;
    p.variances(c) = std::max(0.0, es.eigenvalues()(d - 1 - c));
  }
  p.scores = centered * p.components;
  return p;
}

// ---------------------------------------------------------------------------
// Benchmark

TrainConfig synthetic_train_config() {
  TrainConfig c;
  c.transform = LogTransform::Log;
  c.gamma_u = 0.1;
  c.epochs = 400;
  c.patience = 50;
  return c;
}

nlohmann::json BenchmarkConfig::to_json() const {
  return {{"scenario", std::string(to_string(scenario))},
          {"methods", methods},
          {"n", n},
          {"n_reps", n_reps},
          {"master_seed", master_seed},
          {"gema", gema.to_json()},
          {"sfa", {{"restarts", sfa.restarts}, {"max_evaluations", sfa.max_evaluations}}},
          {"forest",
           {{"n_trees", forest.n_trees},
            {"max_depth", forest.max_depth},
            {"min_leaf", forest.min_leaf},
            {"shift_quantile", forest.shift_quantile}}},
          {"grid", {{"lo", grid.lo}, {"hi", grid.hi}, {"points", grid.points}}}};
}

BenchmarkConfig BenchmarkConfig::from_json(const nlohmann::json& j) { return from_json(j, BenchmarkConfig{}); }

BenchmarkConfig BenchmarkConfig::from_json(const nlohmann::json& j, const BenchmarkConfig& base) {
  if (!j.is_object()) throw Error(ErrorCode::InvalidArgument, "benchmark config must be a JSON object");
  BenchmarkConfig c = base;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "scenario") c.scenario = scenario_from_string(v.get<std::string>());
      else if (key == "methods") c.methods = v.get<std::vector<std::string>>();
      else if (key == "n") c.n = v.get<int>();
      else if (key == "n_reps") c.n_reps = v.get<int>();
      else if (key == "master_seed") c.master_seed = v.get<std::uint64_t>();
      else if (key == "jobs") c.jobs = v.get<int>();
      else if (key == "gema") c.gema = TrainConfig::from_json(v, base.gema);
      else if (key == "sfa") {
        if (v.contains("restarts")) c.sfa.restarts = v.at("restarts").get<int>();
        if (v.contains("max_evaluations")) c.sfa.max_evaluations = v.at("max_evaluations").get<int>();
      } else if (key == "forest") {
        if (v.contains("n_trees")) c.forest.n_trees = v.at("n_trees").get<int>();
        if (v.contains("max_depth")) c.forest.max_depth = v.at("max_depth").get<int>();
        if (v.contains("min_leaf")) c.forest.min_leaf = v.at("min_leaf").get<int>();
        if (v.contains("shift_quantile")) c.forest.shift_quantile = v.at("shift_quantile").get<double>();
      } else if (key == "grid") {
        if (v.contains("lo")) c.grid.lo = v.at("lo").get<double>();
        if (v.contains("hi")) c.grid.hi = v.at("hi").get<double>();
        if (v.contains("points")) c.grid.points = v.at("points").get<int>();
      } else {
        throw Error(ErrorCode::InvalidArgument, "unknown benchmark key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("benchmark config: ") + e.what());
  }
  if (c.n < 10) throw Error(ErrorCode::InvalidArgument, "benchmark n must be at least 10");
  if (c.n_reps < 1) throw Error(ErrorCode::InvalidArgument, "benchmark n_reps must be positive");
  for (const auto& m : c.methods) {
    if (m != "gema" && m != "dea" && m != "fdh" && m != "sfa" && m != "rf") {
      throw Error(ErrorCode::InvalidArgument, "unknown method '" + m + "'");
    }
  }
  return c;
}

std::vector<std::string> scenario_metrics(Scenario s) {
  switch (s) {
    case Scenario::A: return {"frontier_rmse", "spearman"};
    case Scenario::B: return {"ari", "spearman"};
    case Scenario::C: return {"size_corr", "abs_size_corr", "spearman"};
  }
  return {};
}

namespace {

struct Scores {
  std::vector<double> efficiency;
  std::vector<double> inefficiency;  // larger = less efficient
  std::vector<double> residual;      // log-output shortfall used for baseline clustering
};

Scores from_radial(const std::vector<double>& eff) {
  Scores s;
  s.efficiency = eff;
  for (double e : eff) {
    s.inefficiency.push_back(1.0 - e);
    s.residual.push_back(std::log(e));
  }
  return s;
}

double ari_against_groups(const Matrix& features, const std::vector<int>& groups, std::uint64_t seed) {
  return adjusted_rand_index(kmeans(features, 2, seed).labels, groups);
}

Matrix standardise_columns(const Matrix& m) {
  Matrix out = m;
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    const double mean = m.col(j).mean();
    const double sd = std::sqrt((m.col(j).array() - mean).square().sum() / static_cast<double>(m.rows()));
    out.col(j) = (m.col(j).array() - mean) / (sd > 0.0 ? sd : 1.0);
  }
  return out;
}

Matrix baseline_cluster_features(const DatasetFrame& frame, const std::vector<double>& residual) {
  const auto in = frame.names_with_role(ColumnRole::Input);
  const Matrix x = frame.matrix(in);
  Matrix f(x.rows(), x.cols() + 1);
  f.leftCols(x.cols()) = x.array().log().matrix();
  for (Eigen::Index i = 0; i < x.rows(); ++i) f(i, x.cols()) = residual[static_cast<std::size_t>(i)];
  return standardise_columns(f);
}

double truth_frontier_a(double x1, double x2) { return frontier_a(x1, x2); }

}  // namespace

std::vector<std::pair<std::string, double>> evaluate_method(const std::string& method, const SynthSample& sample,
                                                            const BenchmarkConfig& config, std::uint64_t rep_seed) {
  std::vector<std::pair<std::string, double>> out;
  const DatasetFrame& frame = sample.frame;
  const std::uint64_t cluster_seed = derive_seed(rep_seed, 4);
  Scores s;
  std::optional<Vector> frontier;
  std::optional<Matrix> latent;

  if (method == "gema") {
    TrainConfig cfg = config.gema;
    cfg.seed = derive_seed(rep_seed, 1);
    std::vector<EfficiencyRow> eff;
    if (sample.scenario == Scenario::C) {
      QuotientScores q = quotient_efficiency(frame, "s", cfg);
      eff = std::move(q.scores);
    } else {
      const TrainResult r = fit(frame, cfg);
      eff = efficiency_scores(r.model, frame);
      if (sample.scenario == Scenario::A) {
        frontier = frontier_raw(r.model, config.grid.nodes(), Vector::Zero(r.model.latent_dim)).col(0);
      }
      if (sample.scenario == Scenario::B) latent = latent_technology(r.model, frame);
    }
    for (const auto& e : eff) {
      s.efficiency.push_back(e.efficiency);
      s.inefficiency.push_back(e.expected_u);
    }
  } else if (method == "dea") {
    s = from_radial(dea_vrs_output(frame));
  } else if (method == "fdh") {
    s = from_radial(fdh_output(frame));
  } else if (method == "sfa") {
    SfaOptions opt = config.sfa;
    opt.seed = derive_seed(rep_seed, 2);
    const SfaModel m = sfa_translog_fit(frame, opt);
    for (const auto& e : sfa_efficiency(m, frame)) {
      s.efficiency.push_back(e.efficiency);
      s.inefficiency.push_back(e.expected_u);
      s.residual.push_back(e.residual);
    }
    if (sample.scenario == Scenario::A) frontier = sfa_frontier(m, config.grid.nodes());
  } else if (method == "rf") {
    ForestOptions opt = config.forest;
    opt.seed = derive_seed(rep_seed, 3);
    const ForestModel m = forest_fit(frame, opt);
    for (const auto& e : forest_efficiency(m, frame)) {
      s.efficiency.push_back(e.efficiency);
      s.inefficiency.push_back(e.u_hat);
      s.residual.push_back(e.residual);
    }
    if (sample.scenario == Scenario::A) {
      const Matrix g = config.grid.nodes();
      Vector f(g.rows());
      for (Eigen::Index i = 0; i < g.rows(); ++i) {
        f(i) = std::exp(m.predict(g.row(i).transpose().array().log().matrix()) + m.shift);
      }
      frontier = f;
    }
  } else {
    throw Error(ErrorCode::InvalidArgument, "unknown method '" + method + "'");
  }

  switch (sample.scenario) {
    case Scenario::A:
      if (frontier) out.emplace_back("frontier_rmse", frontier_error(*frontier, truth_frontier_a, config.grid));
      break;
    case Scenario::B: {
      const Matrix features = latent ? *latent : baseline_cluster_features(frame, s.residual);
      out.emplace_back("ari", ari_against_groups(features, sample.true_group, cluster_seed));
      break;
    }
    case Scenario::C: {
      const SizeBias b = size_bias(s.efficiency, sample.size);
      out.emplace_back("size_corr", b.r);
      out.emplace_back("abs_size_corr", std::abs(b.r));
      break;
    }
  }
  out.emplace_back("spearman", spearman(s.inefficiency, sample.true_u));
  return out;
}

const MetricCell* BenchmarkResult::find(const std::string& method, const std::string& metric) const {
  for (const auto& c : cells) {
    if (c.method == method && c.metric == metric) return &c;
  }
  return nullptr;
}

BenchmarkResult run_benchmark(const BenchmarkConfig& config) {
  const std::size_t n_methods = config.methods.size();
  const std::size_t n_tasks = static_cast<std::size_t>(config.n_reps) * n_methods;
  struct Outcome {
    std::vector<std::pair<std::string, double>> values;
    std::string error;
  };
  std::vector<Outcome> outcomes(n_tasks);
  std::vector<std::optional<SynthSample>> samples(static_cast<std::size_t>(config.n_reps));
  for (int r = 0; r < config.n_reps; ++r) {
    const std::uint64_t seed = derive_seed(config.master_seed, static_cast<std::uint64_t>(r));
    samples[static_cast<std::size_t>(r)] = generate(config.scenario, static_cast<std::size_t>(config.n), seed);
  }

  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t t = next++; t < n_tasks; t = next++) {
      const std::size_t rep = t / n_methods;
      const std::string& method = config.methods[t % n_methods];
      const std::uint64_t rep_seed = derive_seed(config.master_seed, rep);
      try {
        outcomes[t].values = evaluate_method(method, *samples[rep], config, rep_seed);
      } catch (const std::exception& e) {
        outcomes[t].error = e.what();
      }
    }
  };
  const int jobs = std::clamp(config.jobs, 1, static_cast<int>(std::max<std::size_t>(1, n_tasks)));
  std::vector<std::thread> pool;
  for (int j = 1; j < jobs; ++j) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  BenchmarkResult res;
  res.scenario = config.scenario;
  res.n = config.n;
  res.n_reps = config.n_reps;
  res.master_seed = config.master_seed;
  res.config = config;
  for (std::size_t m = 0; m < n_methods; ++m) {
    for (const auto& metric : scenario_metrics(config.scenario)) {
      MetricCell cell;
      cell.method = config.methods[m];
      cell.metric = metric;
      for (int r = 0; r < config.n_reps; ++r) {
        const Outcome& o = outcomes[static_cast<std::size_t>(r) * n_methods + m];
        const auto it = std::find_if(o.values.begin(), o.values.end(), [&](const auto& p) { return p.first == metric; });
        if (!o.error.empty()) {
          cell.reasons.push_back("rep " + std::to_string(r) + ": " + o.error);
        } else if (it == o.values.end()) {
          cell.reasons.push_back("rep " + std::to_string(r) + ": not defined");
        } else {
          cell.values.push_back(it->second);
        }
      }
      cell.n_reps = static_cast<int>(cell.values.size());
      cell.missing = config.n_reps - cell.n_reps;
      if (!cell.values.empty()) {
        const double k = static_cast<double>(cell.values.size());
        cell.mean = std::accumulate(cell.values.begin(), cell.values.end(), 0.0) / k;
        double ss = 0.0;
        for (double v : cell.values) ss += (v - cell.mean) * (v - cell.mean);
        cell.std = cell.values.size() > 1 ? std::sqrt(ss / (k - 1.0)) : 0.0;
      }
      res.cells.push_back(std::move(cell));
    }
  }
  return res;
}

nlohmann::json BenchmarkResult::to_json() const {
  nlohmann::json cj = nlohmann::json::array();
  for (const auto& c : cells) {
    nlohmann::json e = {{"method", c.method}, {"metric", c.metric}, {"missing", c.missing},
                        {"n_reps", c.n_reps}, {"values", c.values},  {"reasons", c.reasons}};
    if (c.n_reps > 0) {
      e["mean"] = c.mean;
      e["std"] = c.std;
    } else {
      e["mean"] = nullptr;
      e["std"] = nullptr;
    }
    cj.push_back(std::move(e));
  }
  return {{"scenario", std::string(to_string(scenario))},
          {"n", n},
          {"n_reps", n_reps},
          {"master_seed", master_seed},
          {"config", config.to_json()},
          {"cells", std::move(cj)}};
}

BenchmarkResult BenchmarkResult::from_json(const nlohmann::json& j) {
  BenchmarkResult r;
  try {
    r.scenario = scenario_from_string(j.at("scenario").get<std::string>());
    r.n = j.at("n").get<int>();
    r.n_reps = j.at("n_reps").get<int>();
    r.master_seed = j.at("master_seed").get<std::uint64_t>();
    if (j.contains("config")) r.config = BenchmarkConfig::from_json(j.at("config"));
    for (const auto& e : j.at("cells")) {
      MetricCell c;
      c.method = e.at("method").get<std::string>();
      c.metric = e.at("metric").get<std::string>();
      c.missing = e.at("missing").get<int>();
      c.n_reps = e.value("n_reps", r.n_reps - c.missing);
      if (!e.at("mean").is_null()) {
        c.mean = e.at("mean").get<double>();
        c.std = e.at("std").get<double>();
      } else {
        c.n_reps = 0;
      }
      if (e.contains("values")) c.values = e.at("values").get<std::vector<double>>();
      if (e.contains("reasons")) c.reasons = e.at("reasons").get<std::vector<std::string>>();
      r.cells.push_back(std::move(c));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedResultFile, e.what());
  } catch (const Error& e) {
    throw Error(ErrorCode::MalformedResultFile, e.what());
  }
  return r;
}

std::string BenchmarkResult::to_text() const {
  std::vector<std::string> methods;
  std::vector<std::string> metrics;
  for (const auto& c : cells) {
    if (std::find(methods.begin(), methods.end(), c.method) == methods.end()) methods.push_back(c.method);
    if (std::find(metrics.begin(), metrics.end(), c.metric) == metrics.end()) metrics.push_back(c.metric);
  }
  auto cell_text = [&](const std::string& method, const std::string& metric) -> std::string {
    const MetricCell* c = find(method, metric);
    if (c == nullptr || c->n_reps == 0) return "-";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3f (%.3f)", c->mean, c->std);
    return buf;
  };
  std::size_t w0 = std::string("method").size();
  for (const auto& m : methods) w0 = std::max(w0, m.size());
  std::vector<std::size_t> w(metrics.size());
  for (std::size_t k = 0; k < metrics.size(); ++k) {
    w[k] = metrics[k].size();
    for (const auto& m : methods) w[k] = std::max(w[k], cell_text(m, metrics[k]).size());
  }
  std::ostringstream os;
  os << "Scenario " << to_string(scenario) << ", n = " << n << ", " << n_reps << " replications, seed " << master_seed
     << "\n";
  auto pad = [](const std::string& s, std::size_t width) { return s + std::string(width - s.size(), ' '); };
  os << pad("method", w0);
  for (std::size_t k = 0; k < metrics.size(); ++k) os << "  " << pad(metrics[k], w[k]);
  os << "\n" << std::string(w0, '-');
  for (std::size_t k = 0; k < metrics.size(); ++k) os << "  " << std::string(w[k], '-');
  os << "\n";
  for (const auto& m : methods) {
    os << pad(m, w0);
    for (std::size_t k = 0; k < metrics.size(); ++k) os << "  " << pad(cell_text(m, metrics[k]), w[k]);
    os << "\n";
  }
  return os.str();
}

}  // namespace gema
