#ifndef NETSPILL_IMPACT_HPP
#define NETSPILL_IMPACT_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "errors.hpp"
#include "estimation.hpp"
#include "network.hpp"
#include "parallel.hpp"
#include "rng.hpp"

namespace netspill {

/// Spectral radius must stay below 1 - kStabilityMargin before S is inverted.
inline constexpr double kStabilityMargin = 1e-6;

inline double spectral_radius(const Eigen::MatrixXd &m) {
  if (m.rows() == 0)
    return 0.0;
  Eigen::ComplexEigenSolver<Eigen::MatrixXcd> es(m.cast<std::complex<double>>(), false);
  if (es.info() != Eigen::Success)
    throw EstimationError("eigenvalue computation failed");
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

/// Reduced-form impact matrices A_l = S^-1 B_l with S = I - Psi W.
struct ImpactMatrices {
  Eigen::MatrixXd s_inv;
  std::vector<Eigen::MatrixXd> a;
  Eigen::VectorXd psi_diag;
  Eigen::MatrixXd b_diag; // N x K, column l = diagonal of B_l
  double spectral_radius = 0.0;

  Eigen::Index n() const { return s_inv.rows(); }
  Eigen::Index k() const { return static_cast<Eigen::Index>(a.size()); }
};

inline ImpactMatrices impact_matrices(const Eigen::VectorXd &psi, const NetworkMatrix &w,
                                      const Eigen::MatrixXd &betas) {
  const auto N = w.n();
  if (psi.size() != N || betas.rows() != N)
    throw DimensionError("impact_matrices: psi and beta rows must match the network size");
  const Eigen::MatrixXd PW = psi.asDiagonal() * w.to_dense();
  ImpactMatrices im;
  im.spectral_radius = spectral_radius(PW);
  if (!(im.spectral_radius < 1.0 - kStabilityMargin))
    throw StabilityError("spectral radius of Psi W is " + std::to_string(im.spectral_radius) +
                         "; need < 1 - 1e-6");
  const Eigen::MatrixXd S = Eigen::MatrixXd::Identity(N, N) - PW;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(S);
  if (!(lu.rcond() > 1e-14))
    throw SingularityError("S(Psi) is numerically singular (rcond " + std::to_string(lu.rcond()) + ")");
  im.s_inv = lu.inverse();
  im.psi_diag = psi;
  im.b_diag = betas;
  im.a.reserve(static_cast<std::size_t>(betas.cols()));
  for (Eigen::Index l = 0; l < betas.cols(); ++l)
    im.a.push_back(im.s_inv * betas.col(l).asDiagonal());
  return im;
}

/// Impacts at the population-average parameters: Psi = psi_mg I, B_l = beta_l,mg I.
inline ImpactMatrices population_impacts(const MGResult &mg, const NetworkMatrix &w) {
  const auto N = w.n();
  const auto K = mg.theta_mg.size() - 1;
  Eigen::MatrixXd betas(N, K);
  for (Eigen::Index l = 0; l < K; ++l)
    betas.col(l).setConstant(mg.theta_mg(l + 1));
  return impact_matrices(Eigen::VectorXd::Constant(N, mg.theta_mg(0)), w, betas);
}

/// Impacts at the unit-level estimates (psi_i = 0 for units without neighbours).
inline ImpactMatrices heterogeneous_impacts(const UnitEstimates &units, const NetworkMatrix &w) {
  const auto N = w.n();
  if (static_cast<Eigen::Index>(units.size()) != N)
    throw DimensionError("unit estimates and network sizes differ");
  const auto K = units.front().beta().size();
  Eigen::VectorXd psi(N);
  Eigen::MatrixXd betas(N, K);
  for (Eigen::Index i = 0; i < N; ++i) {
    psi(i) = units[static_cast<std::size_t>(i)].psi();
    betas.row(i) = units[static_cast<std::size_t>(i)].beta().transpose();
  }
  return impact_matrices(psi, w, betas);
}

struct Effect {
  double de = 0.0, ie = 0.0, te = 0.0;
  double se_de = 0.0, se_ie = 0.0, se_te = 0.0;
};

struct EffectsTable {
  std::vector<Effect> effects; // one per covariate
  Eigen::Index draws_used = 0;
  Eigen::Index draws_discarded = 0;
  std::string se_method = "none";
};

/// Sum of the off-diagonal entries, accumulated directly so that a diagonal A gives exactly 0.
inline double off_diagonal_sum(const Eigen::MatrixXd &A) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < A.rows(); ++i)
    for (Eigen::Index j = 0; j < A.cols(); ++j)
      if (i != j)
        s += A(i, j);
  return s;
}

/// DE = tr(A)/N, IE = off-diagonal mass / N, TE = DE + IE for every covariate.
inline EffectsTable effects(const ImpactMatrices &im) {
  EffectsTable tab;
  const double N = static_cast<double>(im.n());
  for (const auto &A : im.a) {
    Effect e;
    e.de = A.trace() / N;
    e.ie = off_diagonal_sum(A) / N;
    e.te = e.de + e.ie;
    tab.effects.push_back(e);
  }
  return tab;
}

/// Evaluates tr((I - psi W)^-1) and 1'(I - psi W)^-1 1 for many scalar psi
/// using one complex Schur factorization W = Q U Q*.
class HomogeneousImpactEvaluator {
public:
  explicit HomogeneousImpactEvaluator(const NetworkMatrix &w) : n_(w.n()) {
    if (n_ == 0)
      return;
    Eigen::ComplexSchur<Eigen::MatrixXcd> schur(w.to_dense().cast<std::complex<double>>());
    if (schur.info() != Eigen::Success)
      throw EstimationError("Schur decomposition of W failed");
    u_ = schur.matrixT();
    q1_ = schur.matrixU().adjoint() * Eigen::VectorXcd::Ones(n_);
    rho_ = u_.diagonal().cwiseAbs().maxCoeff();
  }

  double spectral_radius_w() const { return rho_; }
  bool stable(double psi) const { return std::fabs(psi) * rho_ < 1.0 - kStabilityMargin; }

  /// {tr(S^-1)/N, 1'S^-1 1/N}.
  std::pair<double, double> evaluate(double psi) const {
    const Eigen::MatrixXcd S = Eigen::MatrixXcd::Identity(n_, n_) - psi * u_;
    std::complex<double> tr = 0.0;
    for (Eigen::Index k = 0; k < n_; ++k)
      tr += 1.0 / S(k, k);
    const Eigen::VectorXcd z = S.triangularView<Eigen::Upper>().solve(q1_);
    const std::complex<double> total = q1_.dot(z); // conj(q1)' z
    const double N = static_cast<double>(n_);
    return {tr.real() / N, total.real() / N};
  }

private:
  Eigen::Index n_ = 0;
  Eigen::MatrixXcd u_;
  Eigen::VectorXcd q1_;
  double rho_ = 0.0;
};

/// Point effects at the mean-group parameters with simulation standard errors.
///
/// Each draw samples (psi, beta) from N(theta_mg, MG covariance), evaluates
/// homogeneous impacts on W, and discards draws with |psi| rho(W) >= 1 - 1e-6.
/// Draw d uses its own substream of `seed`, so output is independent of the
/// thread count.
inline EffectsTable effects_se(const MGResult &mg, const NetworkMatrix &w, Eigen::Index draws,
                               std::uint64_t seed) {
  if (draws < 100)
    throw ConfigError("effects_se needs at least 100 draws");
  const auto P = mg.theta_mg.size();
  const auto K = P - 1;
  EffectsTable tab = effects(population_impacts(mg, w));
  const HomogeneousImpactEvaluator eval(w);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (mg.covariance + mg.covariance.transpose()));
  const Eigen::MatrixXd L =
      es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();

  // rows: draws; cols: (de, te) per covariate; NaN marks a discarded draw
  Eigen::MatrixXd out(draws, 2 * K);
  parallel_for(static_cast<std::size_t>(draws), [&](std::size_t d) {
    Rng rng(seed, "effects_se", d);
    Eigen::VectorXd z(P);
    for (Eigen::Index a = 0; a < P; ++a)
      z(a) = rng.normal();
    const Eigen::VectorXd theta = mg.theta_mg + L * z;
    const auto row = static_cast<Eigen::Index>(d);
    if (!eval.stable(theta(0))) {
      out.row(row).setConstant(std::numeric_limits<double>::quiet_NaN());
      return;
    }
    const auto [tr, tot] = eval.evaluate(theta(0));
    for (Eigen::Index l = 0; l < K; ++l) {
      out(row, 2 * l) = theta(l + 1) * tr;
      out(row, 2 * l + 1) = theta(l + 1) * tot;
    }
  });

  std::vector<Eigen::Index> kept;
  for (Eigen::Index d = 0; d < draws; ++d)
    if (!std::isnan(out(d, 0)) || K == 0)
      kept.push_back(d);
  tab.draws_used = static_cast<Eigen::Index>(kept.size());
  tab.draws_discarded = draws - tab.draws_used;
  tab.se_method = "simulation";
  if (static_cast<double>(tab.draws_discarded) > 0.2 * static_cast<double>(draws))
    throw UnreliableSEError(std::to_string(tab.draws_discarded) + " of " + std::to_string(draws) +
                            " parameter draws were unstable (more than 20%)");
  // shifted by the first kept draw, so identical draws give exactly zero
  auto sd = [&](auto &&value) {
    const double m = static_cast<double>(kept.size());
    const double v0 = value(kept.front());
    double s1 = 0.0, s2 = 0.0;
    for (auto d : kept) {
      const double v = value(d) - v0;
      s1 += v;
      s2 += v * v;
    }
    return std::sqrt(std::max(0.0, (s2 - s1 * s1 / m) / (m - 1.0)));
  };
  for (Eigen::Index l = 0; l < K; ++l) {
    auto &e = tab.effects[static_cast<std::size_t>(l)];
    e.se_de = sd([&](Eigen::Index d) { return out(d, 2 * l); });
    e.se_te = sd([&](Eigen::Index d) { return out(d, 2 * l + 1); });
    e.se_ie = sd([&](Eigen::Index d) { return out(d, 2 * l + 1) - out(d, 2 * l); });
  }
  return tab;
}

/// Same as above; the unit estimates are accepted for interface symmetry with
/// the heterogeneous diagnostics and are not used by the homogeneous draws.
inline EffectsTable effects_se(const UnitEstimates &, const MGResult &mg, const NetworkMatrix &w,
                               Eigen::Index draws, std::uint64_t seed) {
  return effects_se(mg, w, draws, seed);
}

struct SpillinRow {
  double within = 0.0;
  double between = 0.0;
  double all = 0.0;          // the indirect effect
  double within_share = 0.0; // within / (within + between); NaN when both vanish
};

/// Splits each covariate's indirect effect by whether receiver and source
/// share a group label. Higher-order paths are attributed to their endpoints.
inline std::vector<SpillinRow> spillins(const ImpactMatrices &im, const std::vector<std::string> &groups) {
  const auto N = im.n();
  if (static_cast<Eigen::Index>(groups.size()) != N)
    throw DimensionError("spillins: one label per unit required");
  for (const auto &g : groups)
    if (g.empty())
      throw MetadataError("spillins: every unit needs a group label");
  const double n = static_cast<double>(N);
  std::vector<SpillinRow> out;
  for (const auto &A : im.a) {
    SpillinRow r;
    for (Eigen::Index i = 0; i < N; ++i)
      for (Eigen::Index j = 0; j < N; ++j) {
        if (i == j)
          continue;
        if (groups[static_cast<std::size_t>(i)] == groups[static_cast<std::size_t>(j)])
          r.within += A(i, j);
        else
          r.between += A(i, j);
      }
    r.within /= n;
    r.between /= n;
    r.all = off_diagonal_sum(A) / n;
    const double denom = r.within + r.between;
    r.within_share = denom != 0.0 ? r.within / denom : std::numeric_limits<double>::quiet_NaN();
    out.push_back(r);
  }
  return out;
}

/// Quintile (0..4) of every unit after sorting on (value, index).
inline std::vector<int> quintile_assignment(const Eigen::VectorXd &size) {
  const auto N = size.size();
  if (N < 5)
    throw QuantileError("quintiles need at least 5 units");
  std::vector<Eigen::Index> order(static_cast<std::size_t>(N));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    return size(a) < size(b) || (size(a) == size(b) && a < b);
  });
  std::vector<int> q(static_cast<std::size_t>(N));
  for (Eigen::Index r = 0; r < N; ++r)
    q[static_cast<std::size_t>(order[static_cast<std::size_t>(r)])] = static_cast<int>((5 * r) / N);
  return q;
}

struct QuintileSpillin {
  int quintile = 0; // 1..5
  Eigen::Index units = 0;
  double within = 0.0;
  double between = 0.0;
  double within_share = 0.0;
};

/// result[l][q]: for receivers in quintile q, the row-averaged off-diagonal
/// impact from sources in the same quintile (within) and in all others (between).
inline std::vector<std::vector<QuintileSpillin>> quintile_spillins(const ImpactMatrices &im,
                                                                   const Eigen::VectorXd &size) {
  if (size.size() != im.n())
    throw DimensionError("quintile_spillins: one size value per unit required");
  for (Eigen::Index i = 0; i < size.size(); ++i)
    if (!std::isfinite(size(i)))
      throw QuantileError("size measure must be finite for every unit");
  const auto q = quintile_assignment(size);
  const auto N = im.n();
  std::vector<std::vector<QuintileSpillin>> out;
  for (const auto &A : im.a) {
    std::vector<QuintileSpillin> rows(5);
    for (int b = 0; b < 5; ++b)
      rows[static_cast<std::size_t>(b)].quintile = b + 1;
    for (Eigen::Index i = 0; i < N; ++i) {
      auto &r = rows[static_cast<std::size_t>(q[static_cast<std::size_t>(i)])];
      ++r.units;
      for (Eigen::Index j = 0; j < N; ++j) {
        if (j == i)
          continue;
        if (q[static_cast<std::size_t>(j)] == q[static_cast<std::size_t>(i)])
          r.within += A(i, j);
        else
          r.between += A(i, j);
      }
    }
    for (auto &r : rows) {
      if (r.units > 0) {
        r.within /= static_cast<double>(r.units);
        r.between /= static_cast<double>(r.units);
      }
      const double denom = r.within + r.between;
      r.within_share = denom != 0.0 ? r.within / denom : std::numeric_limits<double>::quiet_NaN();
    }
    out.push_back(std::move(rows));
  }
  return out;
}

} // namespace netspill

#endif // NETSPILL_IMPACT_HPP
