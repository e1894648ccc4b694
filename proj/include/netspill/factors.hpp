#ifndef NETSPILL_FACTORS_HPP
#define NETSPILL_FACTORS_HPP

#include <Eigen/Dense>

#include <cmath>
#include <string>
#include <vector>

#include "errors.hpp"
#include "panel.hpp"

namespace netspill {

/// Estimated common-factor space and its annihilator.
///
/// `projection` is M = I - B (B'B)^-1 B' where B = [1, f_hat] when unit fixed
/// effects are absorbed and B = f_hat otherwise, so rank(M) = T - r - 1 or
/// T - r respectively.
struct FactorModel {
  Eigen::MatrixXd f_hat;       // T x r, f_hat' f_hat / T = I
  Eigen::Index r = 0;
  Eigen::VectorXd explained;   // eigenvalue shares of the top r components
  Eigen::MatrixXd projection;  // T x T
  bool absorbs_unit_effects = true;

  Eigen::Index t() const { return projection.rows(); }

  /// Model from known factors (columns of F); no PCA involved.
  static FactorModel from_factors(const Eigen::MatrixXd &F, bool absorb_unit_effects = false);
};

namespace detail {

inline Eigen::MatrixXd annihilator(const Eigen::MatrixXd &basis) {
  const auto T = basis.rows();
  if (basis.cols() == 0)
    return Eigen::MatrixXd::Identity(T, T);
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(basis);
  const auto rank = qr.rank();
  const Eigen::MatrixXd Q =
      qr.householderQ() * Eigen::MatrixXd::Identity(T, rank);
  Eigen::MatrixXd M = Eigen::MatrixXd::Identity(T, T) - Q * Q.transpose();
  return 0.5 * (M + M.transpose());
}

/// T x (N*K) matrix of covariate series, each demeaned over time.
inline Eigen::MatrixXd pooled_covariates(const PanelDataset &panel) {
  const auto N = panel.n(), T = panel.t(), K = panel.k();
  Eigen::MatrixXd Z(T, N * K);
  for (Eigen::Index l = 0; l < K; ++l)
    for (Eigen::Index i = 0; i < N; ++i) {
      auto col = Z.col(l * N + i);
      col = panel.x[static_cast<std::size_t>(l)].row(i).transpose();
      col.array() -= col.mean();
    }
  return Z;
}

/// Eigenvalues (descending) and eigenvectors of the T x T second-moment
/// matrix of the pooled, demeaned covariates.
struct CovariateSpectrum {
  Eigen::VectorXd values;
  Eigen::MatrixXd vectors;
  Eigen::Index pooled_series = 0;
};

inline CovariateSpectrum covariate_spectrum(const PanelDataset &panel) {
  const Eigen::MatrixXd Z = pooled_covariates(panel);
  const double scale = 1.0 / (static_cast<double>(Z.cols()) * static_cast<double>(Z.rows()));
  const Eigen::MatrixXd S = scale * (Z * Z.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S);
  if (es.info() != Eigen::Success)
    throw EstimationError("eigen-decomposition of the covariate moment matrix failed");
  CovariateSpectrum out;
  out.values = es.eigenvalues().reverse();
  out.vectors = es.eigenvectors().rowwise().reverse();
  out.pooled_series = Z.cols();
  return out;
}

} // namespace detail

inline FactorModel FactorModel::from_factors(const Eigen::MatrixXd &F, bool absorb_unit_effects) {
  FactorModel fm;
  fm.f_hat = F;
  fm.r = F.cols();
  fm.explained = Eigen::VectorXd::Zero(fm.r);
  fm.absorbs_unit_effects = absorb_unit_effects;
  Eigen::MatrixXd basis = F;
  if (absorb_unit_effects) {
    basis.resize(F.rows(), F.cols() + 1);
    basis.col(0).setOnes();
    basis.rightCols(F.cols()) = F;
  }
  fm.projection = detail::annihilator(basis);
  return fm;
}

/// Principal-component factors of the covariates.
///
/// Every covariate series of every unit is demeaned over time and pooled into
/// a T x (N*K) matrix; f_hat holds the top r eigenvectors of its second-moment
/// matrix, scaled so f_hat' f_hat / T = I_r. The outcome is never used.
inline FactorModel estimate_factors(const PanelDataset &panel, Eigen::Index r,
                                    bool absorb_unit_effects = true) {
  const auto T = panel.t();
  if (r < 1 || r >= T)
    throw DimensionError("factor count must satisfy 1 <= r < T (r=" + std::to_string(r) +
                         ", T=" + std::to_string(T) + ")");
  const auto spec = detail::covariate_spectrum(panel);
  const double total = spec.values.sum();
  FactorModel fm = FactorModel::from_factors(
      std::sqrt(static_cast<double>(T)) * spec.vectors.leftCols(r), absorb_unit_effects);
  fm.explained = total > 0.0 ? Eigen::VectorXd(spec.values.head(r) / total)
                             : Eigen::VectorXd::Zero(r);
  return fm;
}

struct FactorCountSelection {
  Eigen::Index count = 1;
  /// Set when no factor structure is detected; count is then the floor of 1.
  bool low_signal = false;
  Eigen::VectorXd eigenvalues; // descending
  Eigen::VectorXd ratios;      // ratios[k-1] = lambda_k / lambda_{k+1}, k = 1..r_max
};

/// Eigenvalue-ratio choice of the number of factors, argmax over k = 1..r_max
/// of lambda_k / lambda_{k+1}. A mock zeroth eigenvalue, the eigenvalue sum
/// over ln(min(NK, T)), competes with k = 1: when its ratio to lambda_1 wins
/// there is no factor structure and the low-signal flag is raised.
inline FactorCountSelection select_num_factors(const PanelDataset &panel, Eigen::Index r_max) {
  const auto T = panel.t();
  if (r_max < 1 || 2 * r_max >= T)
    throw DimensionError("r_max must satisfy 1 <= r_max < T/2");
  const auto spec = detail::covariate_spectrum(panel);
  FactorCountSelection sel;
  sel.eigenvalues = spec.values;
  const auto &ev = spec.values;
  sel.ratios = Eigen::VectorXd::Zero(r_max);

  const double top = ev(0);
  if (!(top > 0.0) || (ev(0) - ev(ev.size() - 1)) <= 1e-14 * std::max(1.0, top)) {
    sel.count = 1;
    sel.low_signal = true;
    return sel;
  }
  for (Eigen::Index k = 1; k <= r_max; ++k) {
    const double denom = ev(k);
    sel.ratios(k - 1) = denom > 0.0 ? ev(k - 1) / denom : std::numeric_limits<double>::infinity();
  }
  Eigen::Index best = 0;
  sel.ratios.maxCoeff(&best);
  sel.count = best + 1;

  const double m = static_cast<double>(std::min(spec.pooled_series, T));
  const double mock = ev.sum() / std::log(std::max(m, 3.0));
  if (mock / top >= sel.ratios(best)) {
    sel.count = 1;
    sel.low_signal = true;
  }
  return sel;
}

/// M * series for a T x m block.
inline Eigen::MatrixXd defactor(const Eigen::Ref<const Eigen::MatrixXd> &series, const FactorModel &fm) {
  if (series.rows() != fm.t())
    throw DimensionError("series has " + std::to_string(series.rows()) + " rows, factor model has T=" +
                         std::to_string(fm.t()));
  return fm.projection * series;
}

/// Panel after projection: y is T x N (column i = unit i), x[i] is T x K.
struct DefactoredPanel {
  Eigen::MatrixXd y;
  std::vector<Eigen::MatrixXd> x;

  Eigen::Index n() const { return y.cols(); }
  Eigen::Index t() const { return y.rows(); }
  Eigen::Index k() const { return x.empty() ? 0 : x.front().cols(); }
  const Eigen::MatrixXd &unit_x(Eigen::Index i) const { return x[static_cast<std::size_t>(i)]; }
};

inline DefactoredPanel defactor_panel(const PanelDataset &panel, const FactorModel &fm) {
  DefactoredPanel out;
  out.y = defactor(panel.y.transpose(), fm);
  out.x.reserve(static_cast<std::size_t>(panel.n()));
  for (Eigen::Index i = 0; i < panel.n(); ++i)
    out.x.push_back(defactor(panel.unit_covariates(i), fm));
  return out;
}

/// Factors and eigenvalue shares as CSV: `period,f1..fr` then a share row.
inline void write_factors(std::ostream &out, const FactorModel &fm,
                          const std::vector<std::string> &periods) {
  out << "period";
  for (Eigen::Index k = 0; k < fm.r; ++k)
    out << ",f" << (k + 1);
  out << '\n';
  for (Eigen::Index t = 0; t < fm.f_hat.rows(); ++t) {
    out << (static_cast<std::size_t>(t) < periods.size() ? periods[static_cast<std::size_t>(t)]
                                                          : std::to_string(t));
    for (Eigen::Index k = 0; k < fm.r; ++k)
      out << ',' << csv::format_exact(fm.f_hat(t, k));
    out << '\n';
  }
  out << "explained_share";
  for (Eigen::Index k = 0; k < fm.r; ++k)
    out << ',' << csv::format_exact(fm.explained(k));
  out << '\n';
}

} // namespace netspill

#endif // NETSPILL_FACTORS_HPP
