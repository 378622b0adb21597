#include "gema/baselines.hpp"

#include "gema/error.hpp"
#include "gema/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

namespace gema {

namespace {

void check_positive(const Matrix& m, const char* what, bool allow_zero = false) {
  if (m.rows() == 0) throw Error(ErrorCode::EmptyInput, std::string("no rows in ") + what);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      const bool ok = allow_zero ? m(i, j) >= 0.0 : m(i, j) > 0.0;
      if (!ok || !std::isfinite(m(i, j))) {
        throw Error(ErrorCode::NegativeValue, std::string(what) + " must be positive (row " + std::to_string(i) + ")");
      }
    }
  }
}

std::pair<Matrix, Matrix> io_matrices(const DatasetFrame& frame) {
  const auto in = frame.names_with_role(ColumnRole::Input);
  const auto out = frame.names_with_role(ColumnRole::Output);
  if (in.empty() || out.empty()) throw Error(ErrorCode::MissingColumn, "frame needs inputs and outputs");
  return {frame.matrix(in), frame.matrix(out)};
}

}  // namespace

// ---------------------------------------------------------------------------
// DEA / FDH

std::vector<double> dea_vrs_output(const Matrix& x, const Matrix& y) {
  check_positive(x, "inputs", true);
  check_positive(y, "outputs");
  if (x.rows() != y.rows()) throw Error(ErrorCode::LengthMismatch, "input and output rows");
  const Eigen::Index n = x.rows();
  const Eigen::Index dx = x.cols();
  const Eigen::Index dy = y.cols();

  // Variables: lambda_1..lambda_n, phi.
  LinearProgram lp;
  lp.c = Vector::Zero(n + 1);
  lp.c(n) = 1.0;
  lp.a = Matrix::Zero(dx + dy + 1, n + 1);
  lp.b = Vector::Zero(dx + dy + 1);
  lp.a.topLeftCorner(dx, n) = x.transpose();
  lp.a.block(dx, 0, dy, n) = y.transpose();
  lp.a.row(dx + dy).head(n).setOnes();
  lp.b(dx + dy) = 1.0;
  lp.senses.assign(static_cast<std::size_t>(dx), Sense::Le);
  lp.senses.insert(lp.senses.end(), static_cast<std::size_t>(dy), Sense::Ge);
  lp.senses.push_back(Sense::Eq);

  std::vector<double> eff(static_cast<std::size_t>(n));
  for (Eigen::Index o = 0; o < n; ++o) {
    lp.b.head(dx) = x.row(o).transpose();
    lp.a.block(dx, n, dy, 1) = -y.row(o).transpose();
    const LpResult r = simplex_solve(lp);
    if (r.status != LpStatus::Optimal) {
      throw Error(ErrorCode::Internal, "DEA LP for DMU " + std::to_string(o) + " ended " + std::string(to_string(r.status)));
    }
    eff[static_cast<std::size_t>(o)] = std::min(1.0, 1.0 / r.value);
  }
  return eff;
}

std::vector<double> dea_vrs_output(const DatasetFrame& frame) {
  const auto [x, y] = io_matrices(frame);
  return dea_vrs_output(x, y);
}

std::vector<double> fdh_output(const Matrix& x, const Matrix& y) {
  check_positive(x, "inputs", true);
  check_positive(y, "outputs");
  if (x.rows() != y.rows()) throw Error(ErrorCode::LengthMismatch, "input and output rows");
  const Eigen::Index n = x.rows();
  std::vector<double> eff(static_cast<std::size_t>(n));
  for (Eigen::Index o = 0; o < n; ++o) {
    double phi = 1.0;
    for (Eigen::Index k = 0; k < n; ++k) {
      if (((x.row(k).array() <= x.row(o).array())).all()) {
        phi = std::max(phi, (y.row(k).array() / y.row(o).array()).minCoeff());
      }
    }
    eff[static_cast<std::size_t>(o)] = 1.0 / phi;
  }
  return eff;
}

std::vector<double> fdh_output(const DatasetFrame& frame) {
  const auto [x, y] = io_matrices(frame);
  return fdh_output(x, y);
}

// ---------------------------------------------------------------------------
// SFA

namespace {

double log_norm_cdf(double x) {
  if (x > -30.0) return std::log(0.5 * std::erfc(-x / std::numbers::sqrt2));
  // Asymptotic tail: log(phi(x) / -x * (1 - 1/x^2 + 3/x^4)).
  const double x2 = x * x;
  return -0.5 * x2 - 0.5 * std::log(2.0 * std::numbers::pi) - std::log(-x) + std::log1p(-1.0 / x2 + 3.0 / (x2 * x2));
}

// phi(z) / (1 - Phi(z)), stable for large z.
double inverse_mills(double z) {
  if (z < 30.0) {
    const double tail = 0.5 * std::erfc(z / std::numbers::sqrt2);
    return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi) / tail;
  }
  const double z2 = z * z;
  return z / (1.0 - 1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2));
}

Matrix translog_design(const Matrix& raw_x) {
  Matrix d(raw_x.rows(), 0);
  for (Eigen::Index i = 0; i < raw_x.rows(); ++i) {
    const Vector row = translog_row(raw_x.row(i).transpose().array().log().matrix());
    if (i == 0) d.resize(raw_x.rows(), row.size());
    d.row(i) = row.transpose();
  }
  return d;
}

struct NelderMeadResult {
  Vector x;
  double f = 0.0;
  double diameter = 0.0;
  int evaluations = 0;
};

// Minimises f from x0 with the standard reflection / expansion / contraction / shrink steps.
template <class F>
NelderMeadResult nelder_mead(F&& f, const Vector& x0, const Vector& step, int max_eval, double tol) {
  const Eigen::Index d = x0.size();
  std::vector<Vector> pts(static_cast<std::size_t>(d + 1), x0);
  std::vector<double> val(static_cast<std::size_t>(d + 1));
  for (Eigen::Index i = 0; i < d; ++i) pts[static_cast<std::size_t>(i + 1)](i) += step(i);
  int evals = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    val[i] = f(pts[i]);
    ++evals;
  }
  std::vector<std::size_t> order(pts.size());
  double diameter = 0.0;
  while (true) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return val[a] < val[b]; });
    diameter = 0.0;
    for (std::size_t i = 1; i < pts.size(); ++i) {
      diameter = std::max(diameter, (pts[order[i]] - pts[order[0]]).cwiseAbs().maxCoeff());
    }
    if (diameter < tol || evals >= max_eval) break;
    const std::size_t worst = order.back();
    const std::size_t second = order[order.size() - 2];
    Vector centroid = Vector::Zero(d);
    for (std::size_t i = 0; i + 1 < order.size(); ++i) centroid += pts[order[i]];
    centroid /= static_cast<double>(d);
    const Vector xr = centroid + (centroid - pts[worst]);
    const double fr = f(xr);
    ++evals;
    if (fr < val[order[0]]) {
      const Vector xe = centroid + 2.0 * (centroid - pts[worst]);
      const double fe = f(xe);
      ++evals;
      if (fe < fr) {
        pts[worst] = xe;
        val[worst] = fe;
      } else {
        pts[worst] = xr;
        val[worst] = fr;
      }
    } else if (fr < val[second]) {
      pts[worst] = xr;
      val[worst] = fr;
    } else {
      const bool outside = fr < val[worst];
      const Vector xc = outside ? Vector(centroid + 0.5 * (xr - centroid)) : Vector(centroid + 0.5 * (pts[worst] - centroid));
      const double fc = f(xc);
      ++evals;
      if (fc < (outside ? fr : val[worst])) {
        pts[worst] = xc;
        val[worst] = fc;
      } else {
        const Vector best = pts[order[0]];
        for (std::size_t i = 1; i < order.size(); ++i) {
          pts[order[i]] = best + 0.5 * (pts[order[i]] - best);
          val[order[i]] = f(pts[order[i]]);
          ++evals;
        }
      }
    }
  }
  return {pts[order[0]], val[order[0]], diameter, evals};
}

}  // namespace

Vector translog_row(const Vector& lx) {
  const Eigen::Index d = lx.size();
  Vector r(1 + d + d * (d + 1) / 2);
  r(0) = 1.0;
  r.segment(1, d) = lx;
  Eigen::Index k = 1 + d;
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = i; j < d; ++j) r(k++) = lx(i) * lx(j);
  }
  return r;
}

double sfa_log_likelihood(const Vector& eps, double sigma_u, double sigma_v) {
  const double s2 = sigma_u * sigma_u + sigma_v * sigma_v;
  const double s = std::sqrt(s2);
  const double lambda = sigma_u / sigma_v;
  const double n = static_cast<double>(eps.size());
  double ll = n * (0.5 * std::log(2.0 / std::numbers::pi) - std::log(s));
  for (Eigen::Index i = 0; i < eps.size(); ++i) {
    ll += -eps(i) * eps(i) / (2.0 * s2) + log_norm_cdf(-eps(i) * lambda / s);
  }
  return ll;
}

SfaModel sfa_translog_fit(const DatasetFrame& frame, const SfaOptions& options) {
  SfaModel m;
  m.input_cols = frame.names_with_role(ColumnRole::Input);
  const auto outs = frame.names_with_role(ColumnRole::Output);
  if (m.input_cols.empty()) throw Error(ErrorCode::MissingColumn, "no input column");
  if (outs.size() != 1) throw Error(ErrorCode::InvalidArgument, "SFA needs exactly one output");
  m.output_col = outs[0];
  const Matrix raw_x = frame.matrix(m.input_cols);
  const Matrix raw_y = frame.matrix(outs);
  check_positive(raw_x, "inputs");
  check_positive(raw_y, "outputs");
  const Matrix design = translog_design(raw_x);
  const Vector ly = raw_y.col(0).array().log().matrix();
  const Eigen::Index p = design.cols();
  if (design.rows() <= p + 5) throw Error(ErrorCode::TooFewRows, "SFA needs more rows than coefficients + 5");
  Eigen::ColPivHouseholderQR<Matrix> qr(design);
  if (qr.rank() < p) throw Error(ErrorCode::RankDeficientDesign, "translog design has rank " + std::to_string(qr.rank()));
  Vector beta = qr.solve(ly);

  // Moment-based start from the OLS residual skewness.
  const Vector e = ly - design * beta;
  const double n = static_cast<double>(e.size());
  const double m2 = e.squaredNorm() / n;
  const double m3 = e.array().cube().sum() / n;
  const double c3 = std::sqrt(2.0 / std::numbers::pi) * (1.0 - 4.0 / std::numbers::pi);
  double su = m3 < 0.0 ? std::cbrt(m3 / c3) : 0.1 * std::sqrt(m2);
  double sv2 = m2 - (1.0 - 2.0 / std::numbers::pi) * su * su;
  if (sv2 <= 0.01 * m2) {
    su = std::sqrt(0.5 * m2 / (1.0 - 2.0 / std::numbers::pi));
    sv2 = 0.5 * m2;
  }
  Vector start(p + 2);
  start.head(p) = beta;
  start(0) += su * std::sqrt(2.0 / std::numbers::pi);
  start(p) = std::log(su);
  start(p + 1) = 0.5 * std::log(sv2);

  auto negll = [&](const Vector& theta) {
    const Vector eps = ly - design * theta.head(p);
    const double v = -sfa_log_likelihood(eps, std::exp(theta(p)), std::exp(theta(p + 1)));
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  };
  m.ols_log_likelihood = -negll(start);

  RngStream rng(options.seed, 0x5fa);
  Vector best = start;
  double best_f = negll(start);
  double best_diameter = std::numeric_limits<double>::infinity();
  const int budget = std::max(1000, options.max_evaluations / std::max(1, options.restarts));
  for (int r = 0; r < std::max(1, options.restarts); ++r) {
    Vector x0 = start;
    if (r > 0) {
      for (Eigen::Index i = 0; i < x0.size(); ++i) x0(i) += 0.1 * (std::abs(x0(i)) + 0.1) * rng.normal();
    }
    Vector step = (0.1 * (x0.cwiseAbs().array() + 0.1)).matrix();
    NelderMeadResult res = nelder_mead(negll, x0, step, budget, 1e-9);
    // Restart from the incumbent until the simplex stops moving.
    for (int polish = 0; polish < 20; ++polish) {
      step = (0.01 * (res.x.cwiseAbs().array() + 0.01)).matrix();
      NelderMeadResult again = nelder_mead(negll, res.x, step, budget, 1e-9);
      const bool moved = again.f < res.f - 1e-12 * std::abs(res.f);
      if (again.f <= res.f) res = again;
      if (!moved) break;
    }
    if (res.f < best_f || (res.f == best_f && res.diameter < best_diameter)) {
      best = res.x;
      best_f = res.f;
      best_diameter = res.diameter;
    }
  }
  m.beta = best.head(p);
  m.sigma_u = std::exp(best(p));
  m.sigma_v = std::exp(best(p + 1));
  m.log_likelihood = -best_f;

  // Central-difference gradient at the optimum.
  Vector grad(best.size());
  for (Eigen::Index i = 0; i < best.size(); ++i) {
    const double h = 1e-6 * std::max(1.0, std::abs(best(i)));
    Vector a = best, b = best;
    a(i) += h;
    b(i) -= h;
    grad(i) = (negll(a) - negll(b)) / (2.0 * h);
  }
  m.converged = best_diameter < 1e-9 || grad.norm() < 1e-6;
  m.fitted = true;
  return m;
}

std::vector<double> sfa_residuals(const SfaModel& model, const DatasetFrame& frame) {
  if (!model.fitted) throw Error(ErrorCode::UnfittedModel, "SFA model has not been fitted");
  const Matrix raw_x = frame.matrix(model.input_cols);
  const Matrix raw_y = frame.matrix(std::vector<std::string>{model.output_col});
  check_positive(raw_x, "inputs");
  check_positive(raw_y, "outputs");
  const Vector fitted = translog_design(raw_x) * model.beta;
  std::vector<double> out(static_cast<std::size_t>(raw_y.rows()));
  for (Eigen::Index i = 0; i < raw_y.rows(); ++i) out[static_cast<std::size_t>(i)] = std::log(raw_y(i, 0)) - fitted(i);
  return out;
}

double jlms(double eps, double sigma_u, double sigma_v) {
  if (sigma_u <= 0.0) return 0.0;
  if (sigma_v <= 0.0) return std::max(0.0, -eps);
  const double s = std::hypot(sigma_u, sigma_v);
  const double sigma_star = sigma_u * sigma_v / s;
  const double z = eps * (sigma_u / sigma_v) / s;
  return sigma_star * (inverse_mills(z) - z);
}

std::vector<SfaScore> sfa_efficiency(const SfaModel& model, const DatasetFrame& frame) {
  const std::vector<double> eps = sfa_residuals(model, frame);
  std::vector<SfaScore> out(eps.size());
  for (std::size_t i = 0; i < eps.size(); ++i) {
    out[i].residual = eps[i];
    out[i].expected_u = jlms(eps[i], model.sigma_u, model.sigma_v);
    out[i].efficiency = std::exp(-out[i].expected_u);
  }
  return out;
}

Vector sfa_frontier(const SfaModel& model, const Matrix& raw_inputs) {
  if (!model.fitted) throw Error(ErrorCode::UnfittedModel, "SFA model has not been fitted");
  check_positive(raw_inputs, "inputs");
  return (translog_design(raw_inputs) * model.beta).array().exp().matrix();
}

// ---------------------------------------------------------------------------
// Random forest

double RegressionTree::predict(const double* row) const {
  int i = 0;
  while (nodes[static_cast<std::size_t>(i)].feature >= 0) {
    const TreeNode& nd = nodes[static_cast<std::size_t>(i)];
    i = row[nd.feature] <= nd.threshold ? nd.left : nd.right;
  }
  return nodes[static_cast<std::size_t>(i)].value;
}

namespace {

// Row-major feature storage for cache-friendly split search.
struct TreeBuilder {
  const std::vector<double>& x;  // n x d, row-major
  const std::vector<double>& y;
  int d;
  const ForestOptions& opt;
  RngStream& rng;
  RegressionTree tree;

  double feature(std::size_t row, int f) const { return x[row * static_cast<std::size_t>(d) + static_cast<std::size_t>(f)]; }

  int build(std::vector<std::size_t>& idx, std::size_t lo, std::size_t hi, int depth) {
    const int id = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    double sum = 0.0;
    for (std::size_t i = lo; i < hi; ++i) sum += y[idx[i]];
    const std::size_t count = hi - lo;
    tree.nodes[static_cast<std::size_t>(id)].value = sum / static_cast<double>(count);
    if (depth >= opt.max_depth || count < 2 * static_cast<std::size_t>(opt.min_leaf)) return id;

    // Sample sqrt(d) candidate features without replacement.
    std::vector<int> feats(static_cast<std::size_t>(d));
    std::iota(feats.begin(), feats.end(), 0);
    const int mtry = std::max(1, static_cast<int>(std::floor(std::sqrt(static_cast<double>(d)))));
    for (int k = 0; k < mtry; ++k) {
      const std::size_t pick = static_cast<std::size_t>(k) + rng.index(static_cast<std::size_t>(d - k));
      std::swap(feats[static_cast<std::size_t>(k)], feats[pick]);
    }

    double best_gain = 1e-12;
    int best_f = -1;
    double best_thr = 0.0;
    std::vector<std::size_t> sorted(idx.begin() + static_cast<std::ptrdiff_t>(lo), idx.begin() + static_cast<std::ptrdiff_t>(hi));
    const double total_sq = sum * sum / static_cast<double>(count);
    for (int k = 0; k < mtry; ++k) {
      const int f = feats[static_cast<std::size_t>(k)];
      std::sort(sorted.begin(), sorted.end(), [&](std::size_t a, std::size_t b) {
        const double fa = feature(a, f), fb = feature(b, f);
        return fa < fb || (fa == fb && a < b);
      });
      double left = 0.0;
      for (std::size_t i = 0; i + 1 < count; ++i) {
        left += y[sorted[i]];
        const std::size_t nl = i + 1;
        const std::size_t nr = count - nl;
        if (nl < static_cast<std::size_t>(opt.min_leaf) || nr < static_cast<std::size_t>(opt.min_leaf)) continue;
        const double a = feature(sorted[i], f), b = feature(sorted[i + 1], f);
        if (a == b) continue;
        const double right = sum - left;
        const double gain = left * left / static_cast<double>(nl) + right * right / static_cast<double>(nr) - total_sq;
        if (gain > best_gain) {
          best_gain = gain;
          best_f = f;
          best_thr = 0.5 * (a + b);
        }
      }
    }
    if (best_f < 0) return id;
    const auto mid_it = std::partition(idx.begin() + static_cast<std::ptrdiff_t>(lo), idx.begin() + static_cast<std::ptrdiff_t>(hi),
                                       [&](std::size_t r) { return feature(r, best_f) <= best_thr; });
    const std::size_t mid = static_cast<std::size_t>(mid_it - idx.begin());
    const int l = build(idx, lo, mid, depth + 1);
    const int r = build(idx, mid, hi, depth + 1);
    TreeNode& nd = tree.nodes[static_cast<std::size_t>(id)];
    nd.feature = best_f;
    nd.threshold = best_thr;
    nd.left = l;
    nd.right = r;
    return id;
  }
};

std::vector<double> log_features(const Matrix& raw) {
  std::vector<double> out(static_cast<std::size_t>(raw.size()));
  for (Eigen::Index i = 0; i < raw.rows(); ++i) {
    for (Eigen::Index j = 0; j < raw.cols(); ++j) out[static_cast<std::size_t>(i * raw.cols() + j)] = std::log(raw(i, j));
  }
  return out;
}

}  // namespace

double ForestModel::predict(const Vector& features) const {
  if (trees.empty()) throw Error(ErrorCode::UnfittedModel, "forest has no trees");
  double s = 0.0;
  for (const auto& t : trees) s += t.predict(features.data());
  return s / static_cast<double>(trees.size());
}

ForestModel forest_fit(const DatasetFrame& frame, const ForestOptions& options) {
  ForestModel m;
  m.options = options;
  m.input_cols = frame.names_with_role(ColumnRole::Input);
  const auto outs = frame.names_with_role(ColumnRole::Output);
  if (m.input_cols.empty()) throw Error(ErrorCode::MissingColumn, "no input column");
  if (outs.size() != 1) throw Error(ErrorCode::InvalidArgument, "forest needs exactly one output");
  m.output_col = outs[0];
  const Matrix raw_x = frame.matrix(m.input_cols);
  const Matrix raw_y = frame.matrix(outs);
  check_positive(raw_x, "inputs");
  check_positive(raw_y, "outputs");
  const std::size_t n = static_cast<std::size_t>(raw_x.rows());
  if (n < 2 || n < static_cast<std::size_t>(options.min_leaf)) throw Error(ErrorCode::TooFewRows, "forest needs more rows");
  if (options.n_trees < 1) throw Error(ErrorCode::InvalidArgument, "forest needs at least one tree");
  const int d = static_cast<int>(raw_x.cols());
  const std::vector<double> x = log_features(raw_x);
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = std::log(raw_y(static_cast<Eigen::Index>(i), 0));

  for (int t = 0; t < options.n_trees; ++t) {
    const std::uint64_t seed = derive_seed(options.seed, static_cast<std::uint64_t>(t), 0xf0);
    RngStream rng(seed);
    std::vector<std::size_t> idx(n);
    for (auto& i : idx) i = rng.index(n);
    TreeBuilder b{x, y, d, options, rng, {}};
    b.build(idx, 0, n, 0);
    m.trees.push_back(std::move(b.tree));
    m.tree_seeds.push_back(seed);
  }
  std::vector<double> resid(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (const auto& t : m.trees) s += t.predict(&x[i * static_cast<std::size_t>(d)]);
    resid[i] = y[i] - s / static_cast<double>(m.trees.size());
  }
  m.shift = percentile(resid, 100.0 * options.shift_quantile);
  return m;
}

std::vector<ForestScore> forest_efficiency(const ForestModel& model, const DatasetFrame& frame) {
  if (model.trees.empty()) throw Error(ErrorCode::UnfittedModel, "forest has not been fitted");
  const Matrix raw_x = frame.matrix(model.input_cols);
  const Matrix raw_y = frame.matrix(std::vector<std::string>{model.output_col});
  check_positive(raw_x, "inputs");
  check_positive(raw_y, "outputs");
  std::vector<ForestScore> out(static_cast<std::size_t>(raw_x.rows()));
  for (Eigen::Index i = 0; i < raw_x.rows(); ++i) {
    const Vector f = raw_x.row(i).transpose().array().log().matrix();
    const double pred = model.predict(f);
    ForestScore& s = out[static_cast<std::size_t>(i)];
    s.residual = std::log(raw_y(i, 0)) - pred;
    s.u_hat = std::max(0.0, pred + model.shift - std::log(raw_y(i, 0)));
    s.efficiency = std::exp(-s.u_hat);
  }
  return out;
}

}  // namespace gema
