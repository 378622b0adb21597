#pragma once

#include <Eigen/Dense>

namespace gema {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Power-iteration estimate of the largest singular value.
///
/// The estimate ||W v_k|| is a lower bound on the true norm at every
/// iteration and is nondecreasing in `iters`. The start vector is fixed so
/// the result is a pure function of (weight, iters). Throws ZeroMatrix.
double spectral_norm(const Matrix& weight, int iters);

/// Smallest singular value (min(m, n) of them) via Jacobi SVD.
double svd_min_singular(const Matrix& jacobian);

/// Largest singular value via Jacobi SVD; the exact counterpart of
/// spectral_norm used where a sound (not lower) bound is needed.
double svd_max_singular(const Matrix& m);

// Population covariance (denominator n) of the rows of X.
Matrix covariance(const Matrix& rows);

}  // namespace gema
