#include "gema/baselines.hpp"
#include "gema/error.hpp"

#include <cmath>
#include <limits>

namespace gema {

std::string_view to_string(LpStatus s) {
  switch (s) {
    case LpStatus::Optimal: return "optimal";
    case LpStatus::Infeasible: return "infeasible";
    case LpStatus::Unbounded: return "unbounded";
    case LpStatus::MaxIterations: return "max_iterations";
  }
  return "?";
}

void LinearProgram::check() const {
  const Eigen::Index n = c.size();
  if (a.cols() != n || a.rows() != b.size() || static_cast<Eigen::Index>(senses.size()) != b.size()) {
    throw Error(ErrorCode::DimensionMismatch, "linear program dimensions");
  }
  if (lower.size() != 0 && lower.size() != n) throw Error(ErrorCode::DimensionMismatch, "lower bound length");
  if (!c.allFinite() || !a.allFinite() || !b.allFinite()) throw Error(ErrorCode::InvalidArgument, "non-finite LP data");
}

namespace {

constexpr double kPivotTol = 1e-11;
constexpr double kCostTol = 1e-10;

class Tableau {
 public:
  Tableau(Matrix t, std::vector<int> basis) : t_(std::move(t)), basis_(std::move(basis)) {}

  Eigen::Index rows() const { return t_.rows(); }
  Eigen::Index vars() const { return t_.cols() - 1; }
  double rhs(Eigen::Index i) const { return t_(i, vars()); }
  const std::vector<int>& basis() const { return basis_; }
  Matrix& data() { return t_; }

  void pivot(Eigen::Index r, Eigen::Index col) {
    t_.row(r) /= t_(r, col);
    for (Eigen::Index i = 0; i < t_.rows(); ++i) {
      if (i != r && t_(i, col) != 0.0) t_.row(i) -= t_(i, col) * t_.row(r);
    }
    basis_[static_cast<std::size_t>(r)] = static_cast<int>(col);
  }

  void drop_row(Eigen::Index r) {
    Matrix next(t_.rows() - 1, t_.cols());
    next.topRows(r) = t_.topRows(r);
    next.bottomRows(t_.rows() - r - 1) = t_.bottomRows(t_.rows() - r - 1);
    t_ = std::move(next);
    basis_.erase(basis_.begin() + r);
  }

  // Maximises cost^T x over columns with allowed[j]; Bland's rule throughout.
  LpStatus optimise(const Vector& cost, const std::vector<bool>& allowed, int& iterations, int max_iterations) {
    while (true) {
      if (iterations >= max_iterations) return LpStatus::MaxIterations;
      Eigen::Index enter = -1;
      for (Eigen::Index j = 0; j < vars(); ++j) {
        if (!allowed[static_cast<std::size_t>(j)]) continue;
        double reduced = cost(j);
        for (Eigen::Index i = 0; i < rows(); ++i) reduced -= cost(basis_[static_cast<std::size_t>(i)]) * t_(i, j);
        if (reduced > kCostTol) {
          enter = j;
          break;
        }
      }
      if (enter < 0) return LpStatus::Optimal;
      Eigen::Index leave = -1;
      double best = std::numeric_limits<double>::infinity();
      for (Eigen::Index i = 0; i < rows(); ++i) {
        const double a = t_(i, enter);
        if (a <= kPivotTol) continue;
        const double ratio = rhs(i) / a;
        if (ratio < best - 1e-12 ||
            (ratio <= best + 1e-12 && leave >= 0 && basis_[static_cast<std::size_t>(i)] < basis_[static_cast<std::size_t>(leave)])) {
          if (ratio < best - 1e-12) best = ratio;
          leave = i;
        }
      }
      if (leave < 0) return LpStatus::Unbounded;
      pivot(leave, enter);
      ++iterations;
    }
  }

  double objective(const Vector& cost) const {
    double v = 0.0;
    for (Eigen::Index i = 0; i < rows(); ++i) v += cost(basis_[static_cast<std::size_t>(i)]) * rhs(i);
    return v;
  }

 private:
  Matrix t_;
  std::vector<int> basis_;
};

}  // namespace

LpResult simplex_solve(const LinearProgram& lp, int max_iterations) {
  lp.check();
  const Eigen::Index n = lp.c.size();
  const Eigen::Index m = lp.b.size();
  const Vector lower = lp.lower.size() ? lp.lower : Vector::Zero(n);
  Vector rhs = lp.b - lp.a * lower;

  // Normalise to rhs >= 0.
  Matrix a = lp.a;
  std::vector<Sense> senses = lp.senses;
  for (Eigen::Index i = 0; i < m; ++i) {
    if (rhs(i) < 0.0) {
      rhs(i) = -rhs(i);
      a.row(i) = -a.row(i);
      auto& s = senses[static_cast<std::size_t>(i)];
      if (s == Sense::Le) s = Sense::Ge;
      else if (s == Sense::Ge) s = Sense::Le;
    }
  }
  Eigen::Index n_slack = 0, n_art = 0;
  for (Sense s : senses) {
    if (s != Sense::Eq) ++n_slack;
    if (s != Sense::Le) ++n_art;
  }
  const Eigen::Index total = n + n_slack + n_art;
  Matrix t = Matrix::Zero(m, total + 1);
  std::vector<int> basis(static_cast<std::size_t>(m));
  Eigen::Index slack = n, art = n + n_slack;
  for (Eigen::Index i = 0; i < m; ++i) {
    t.row(i).head(n) = a.row(i);
    t(i, total) = rhs(i);
    const Sense s = senses[static_cast<std::size_t>(i)];
    if (s == Sense::Le) {
      t(i, slack) = 1.0;
      basis[static_cast<std::size_t>(i)] = static_cast<int>(slack++);
    } else {
      if (s == Sense::Ge) t(i, slack++) = -1.0;
      t(i, art) = 1.0;
      basis[static_cast<std::size_t>(i)] = static_cast<int>(art++);
    }
  }
  Tableau tab(std::move(t), std::move(basis));
  LpResult res;
  const auto is_art = [&](Eigen::Index j) { return j >= n + n_slack; };

  if (n_art > 0) {
    Vector phase1 = Vector::Zero(total);
    phase1.tail(n_art).setConstant(-1.0);
    std::vector<bool> all(static_cast<std::size_t>(total), true);
    const LpStatus s = tab.optimise(phase1, all, res.iterations, max_iterations);
    if (s == LpStatus::MaxIterations) {
      res.status = s;
      return res;
    }
    const double scale = std::max(1.0, rhs.cwiseAbs().maxCoeff());
    if (tab.objective(phase1) < -1e-9 * scale) {
      res.status = LpStatus::Infeasible;
      return res;
    }
    // Drive remaining artificials out of the basis; drop redundant rows.
    for (Eigen::Index i = tab.rows(); i-- > 0;) {
      if (!is_art(tab.basis()[static_cast<std::size_t>(i)])) continue;
      Eigen::Index col = -1;
      for (Eigen::Index j = 0; j < n + n_slack; ++j) {
        if (std::abs(tab.data()(i, j)) > 1e-9) {
          col = j;
          break;
        }
      }
      if (col >= 0) {
        tab.pivot(i, col);
      } else {
        tab.drop_row(i);
      }
    }
  }

  Vector cost = Vector::Zero(total);
  cost.head(n) = lp.c;
  std::vector<bool> allowed(static_cast<std::size_t>(total), true);
  for (Eigen::Index j = n + n_slack; j < total; ++j) allowed[static_cast<std::size_t>(j)] = false;
  res.status = tab.optimise(cost, allowed, res.iterations, max_iterations);
  if (res.status != LpStatus::Optimal) return res;

  res.x = Vector::Zero(n);
  for (Eigen::Index i = 0; i < tab.rows(); ++i) {
    const int j = tab.basis()[static_cast<std::size_t>(i)];
    if (j < n) res.x(j) = tab.rhs(i);
  }
  res.x += lower;
  res.value = lp.c.dot(res.x);
  return res;
}

}  // namespace gema
