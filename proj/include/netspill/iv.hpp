#ifndef NETSPILL_IV_HPP
#define NETSPILL_IV_HPP

#include <Eigen/Dense>

#include <cmath>
#include <string>

#include "errors.hpp"

namespace netspill {

/// Result of a linear IV regression y = R theta + e with instruments Z.
struct IvFit {
  Eigen::VectorXd coef;
  Eigen::VectorXd se;
  double sigma = 0.0;     // sqrt(e'e / T), residuals from the structural regressors
  double condition = 0.0; // condition number of the projected regressors' Gram matrix
};

/// Generalized IV estimator
///   theta = (A' B^-1 A)^-1 A' B^-1 c,  A = Z'R/T, B = Z'Z/T, c = Z'y/T,
/// computed through orthogonal factorizations rather than explicit inverses:
/// with Rhat = P_Z R, A' B^-1 A = Rhat'Rhat / T and A' B^-1 c = Rhat'y / T.
/// Covariance is sigma^2 (Rhat'Rhat)^-1 with sigma^2 = e'e / T.
inline IvFit iv_fit(const Eigen::Ref<const Eigen::VectorXd> &y, const Eigen::Ref<const Eigen::MatrixXd> &R,
                    const Eigen::Ref<const Eigen::MatrixXd> &Z, double rank_tol = 1e-10) {
  const auto T = R.rows(), p = R.cols(), q = Z.cols();
  if (y.size() != T || Z.rows() != T)
    throw DimensionError("iv_fit: row counts differ");
  if (q < p)
    throw UnderidentifiedError("iv_fit: " + std::to_string(q) + " instruments for " +
                               std::to_string(p) + " regressors");
  if (T <= p)
    throw SingularDesignError("iv_fit: fewer observations than regressors");

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qz(Z);
  qz.setThreshold(rank_tol);
  if (qz.rank() < q)
    throw SingularDesignError("iv_fit: instrument matrix has rank " + std::to_string(qz.rank()) +
                              " < " + std::to_string(q));
  const Eigen::MatrixXd Q1 = qz.householderQ() * Eigen::MatrixXd::Identity(T, q);
  const Eigen::MatrixXd Rhat = Q1 * (Q1.transpose() * R);

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Rhat);
  qr.setThreshold(rank_tol);
  const auto U = qr.matrixQR().topLeftCorner(p, p).triangularView<Eigen::Upper>();
  const double umax = std::fabs(qr.matrixQR()(0, 0));
  const double umin = p > 0 ? std::fabs(qr.matrixQR()(p - 1, p - 1)) : umax;
  const double cond = umin > 0.0 ? (umax / umin) * (umax / umin) : std::numeric_limits<double>::infinity();
  if (qr.rank() < p)
    throw SingularDesignError("iv_fit: projected regressors are rank deficient (condition " +
                              std::to_string(cond) + ")");

  IvFit fit;
  fit.coef = qr.solve(y);
  const Eigen::VectorXd e = y - R * fit.coef;
  fit.sigma = std::sqrt(e.squaredNorm() / static_cast<double>(T));
  fit.condition = cond;

  const Eigen::MatrixXd Uinv = U.solve(Eigen::MatrixXd::Identity(p, p));
  const Eigen::VectorXd dperm = Uinv.rowwise().squaredNorm();
  fit.se.resize(p);
  const auto &perm = qr.colsPermutation().indices();
  for (Eigen::Index k = 0; k < p; ++k)
    fit.se(perm(k)) = fit.sigma * std::sqrt(dperm(k));
  return fit;
}

/// Fitted values P_X v of a least-squares projection (rank-revealing).
inline Eigen::VectorXd project_onto(const Eigen::Ref<const Eigen::MatrixXd> &X,
                                    const Eigen::Ref<const Eigen::VectorXd> &v) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  return X * qr.solve(v);
}

} // namespace netspill

#endif // NETSPILL_IV_HPP
