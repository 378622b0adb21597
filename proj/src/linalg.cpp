#include "gema/linalg.hpp"

#include "gema/error.hpp"

#include <cmath>

namespace gema {

double spectral_norm(const Matrix& weight, int iters) {
  if (iters < 1) throw Error(ErrorCode::InvalidArgument, "spectral_norm needs iters >= 1");
  if (weight.size() == 0 || weight.cwiseAbs().maxCoeff() == 0.0) {
    throw Error(ErrorCode::ZeroMatrix, "spectral norm of a zero matrix");
  }
  const Eigen::Index n = weight.cols();
  // Deterministic, non-symmetric start so no singular direction is missed
  // for structured inputs such as diagonal or permutation matrices.
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = 1.0 + 0.1 * std::sin(1.0 + 2.3 * static_cast<double>(i));
  v.normalize();
  double sigma = (weight * v).norm();
  for (int k = 0; k < iters; ++k) {
    Vector wv = weight * v;
    Vector next = weight.transpose() * wv;
    const double nrm = next.norm();
    if (nrm == 0.0) break;
    v = next / nrm;
    sigma = std::max(sigma, (weight * v).norm());
  }
  return sigma;
}

double svd_min_singular(const Matrix& jacobian) {
  if (jacobian.size() == 0) return 0.0;
  Eigen::JacobiSVD<Matrix> svd(jacobian);
  const auto& s = svd.singularValues();
  return s.size() == 0 ? 0.0 : std::max(0.0, s(s.size() - 1));
}

double svd_max_singular(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  Eigen::JacobiSVD<Matrix> svd(m);
  return svd.singularValues()(0);
}

Matrix covariance(const Matrix& rows) {
  const double n = static_cast<double>(rows.rows());
  const Eigen::RowVectorXd mean = rows.colwise().mean();
  const Matrix centered = rows.rowwise() - mean;
  return (centered.transpose() * centered) / n;
}

}  // namespace gema
