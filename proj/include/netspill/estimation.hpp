#ifndef NETSPILL_ESTIMATION_HPP
#define NETSPILL_ESTIMATION_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "errors.hpp"
#include "factors.hpp"
#include "iv.hpp"
#include "network.hpp"
#include "panel.hpp"
#include "parallel.hpp"

namespace netspill {

/// Per-unit spatial IV estimate. theta = (psi, beta_1..beta_K) when the unit
/// has network neighbours, (beta_1..beta_K) when its row of W is empty.
struct UnitEstimate {
  Eigen::VectorXd theta;
  Eigen::VectorXd se;
  double sigma = 0.0;
  bool psi_identified = false;
  double condition = 0.0;

  double psi() const { return psi_identified ? theta(0) : 0.0; }
  Eigen::VectorXd beta() const { return psi_identified ? Eigen::VectorXd(theta.tail(theta.size() - 1)) : theta; }
};

using UnitEstimates = std::vector<UnitEstimate>;

/// Spatial IV regression for unit i given a weight matrix.
///
/// Regressors C = (sum_j w_ij y_j, X_i), instruments Z = (X_i, X_j for j in
/// the support of row i). Rows with K(s+1) > T/4 neighbours' instruments, or
/// whose neighbour instruments are collinear, use Z = (X_i, sum_j w_ij X_j).
/// Units without neighbours are fitted by least squares on X_i alone.
inline UnitEstimate unit_iv(Eigen::Index i, const NetworkMatrix &w, const DefactoredPanel &data) {
  if (w.n() != data.n())
    throw DimensionError("network and panel sizes differ");
  const auto T = data.t(), K = data.k();
  const auto &row = w.row(i);
  UnitEstimate est;
  IvFit fit;
  try {
    if (row.empty()) {
      fit = iv_fit(data.y.col(i), data.unit_x(i), data.unit_x(i));
      est.psi_identified = false;
    } else {
      const auto s = static_cast<Eigen::Index>(row.size());
      Eigen::MatrixXd C(T, K + 1), lagged = Eigen::MatrixXd::Zero(T, K);
      C.col(0).setZero();
      for (const auto &l : row) {
        C.col(0) += l.weight * data.y.col(l.to);
        lagged += l.weight * data.unit_x(l.to);
      }
      C.rightCols(K) = data.unit_x(i);
      // (X_i, W_i X) when the neighbour-by-neighbour set would be too large for T
      Eigen::MatrixXd Zlag(T, 2 * K);
      Zlag << data.unit_x(i), lagged;
      if (K * (s + 1) <= T / 4) {
        Eigen::MatrixXd Z(T, K * (s + 1));
        Z.leftCols(K) = data.unit_x(i);
        for (Eigen::Index k = 0; k < s; ++k)
          Z.middleCols(K * (k + 1), K) = data.unit_x(row[static_cast<std::size_t>(k)].to);
        try {
          fit = iv_fit(data.y.col(i), C, Z);
        } catch (const SingularDesignError &) {
          fit = iv_fit(data.y.col(i), C, Zlag);
        }
      } else {
        fit = iv_fit(data.y.col(i), C, Zlag);
      }
      est.psi_identified = true;
    }
  } catch (const SingularDesignError &e) {
    throw SingularDesignError("unit " + std::to_string(i) + ": " + e.what());
  } catch (const UnderidentifiedError &e) {
    throw UnderidentifiedError("unit " + std::to_string(i) + ": " + e.what());
  }
  est.theta = fit.coef;
  est.se = fit.se;
  est.sigma = fit.sigma;
  est.condition = fit.condition;
  return est;
}

/// unit_iv for every unit, parallel across units.
inline UnitEstimates estimate_units(const NetworkMatrix &w, const DefactoredPanel &data) {
  UnitEstimates out(static_cast<std::size_t>(data.n()));
  parallel_for(out.size(), [&](std::size_t i) { out[i] = unit_iv(static_cast<Eigen::Index>(i), w, data); });
  return out;
}

struct MGResult {
  Eigen::VectorXd theta_mg;            // (psi, beta_1..beta_K)
  Eigen::VectorXd se;
  Eigen::VectorXi n_units_used;
  Eigen::MatrixXd covariance;          // (K+1) x (K+1)
};

struct MGOptions {
  /// Winsorize each parameter at [q, 1-q] before averaging (diagnostics only).
  std::optional<double> winsorize;
};

/// Mean-group aggregate. psi averages only units with an identified spatial
/// lag; each beta averages all units. Covariance entries use the units that
/// contribute to both parameters: sum (theta_i - mean)(theta_i - mean)' / (m (m-1)).
inline MGResult mgiv(const UnitEstimates &units, const MGOptions &opt = {}) {
  if (units.empty())
    throw InsufficientUnitsError("no unit estimates");
  Eigen::Index K = -1;
  for (const auto &u : units) {
    const auto k = u.psi_identified ? u.theta.size() - 1 : u.theta.size();
    if (K >= 0 && k != K)
      throw DimensionError("unit estimates have inconsistent lengths");
    K = k;
  }
  const auto P = K + 1;
  const auto N = static_cast<Eigen::Index>(units.size());
  // full parameter table with NaN for psi when not identified
  Eigen::MatrixXd table(N, P);
  for (Eigen::Index i = 0; i < N; ++i) {
    const auto &u = units[static_cast<std::size_t>(i)];
    table(i, 0) = u.psi_identified ? u.theta(0) : std::numeric_limits<double>::quiet_NaN();
    table.row(i).tail(K) = u.beta().transpose();
  }
  if (opt.winsorize) {
    const double q = *opt.winsorize;
    if (!(q >= 0.0 && q < 0.5))
      throw ConfigError("winsorize quantile must lie in [0, 0.5)");
    for (Eigen::Index a = 0; a < P; ++a) {
      std::vector<double> v;
      for (Eigen::Index i = 0; i < N; ++i)
        if (!std::isnan(table(i, a)))
          v.push_back(table(i, a));
      if (v.size() < 2)
        continue;
      std::sort(v.begin(), v.end());
      auto at = [&](double p) {
        const double pos = p * static_cast<double>(v.size() - 1);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const auto hi = std::min(lo + 1, v.size() - 1);
        return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
      };
      const double lo = at(q), hi = at(1.0 - q);
      for (Eigen::Index i = 0; i < N; ++i)
        if (!std::isnan(table(i, a)))
          table(i, a) = std::clamp(table(i, a), lo, hi);
    }
  }

  MGResult res;
  res.theta_mg = Eigen::VectorXd::Zero(P);
  res.n_units_used = Eigen::VectorXi::Zero(P);
  for (Eigen::Index a = 0; a < P; ++a) {
    double sum = 0.0;
    int m = 0;
    for (Eigen::Index i = 0; i < N; ++i)
      if (!std::isnan(table(i, a))) {
        sum += table(i, a);
        ++m;
      }
    if (m < 2)
      throw InsufficientUnitsError("parameter " + std::to_string(a) + " has " + std::to_string(m) +
                                   " contributing units; mean-group inference needs at least 2");
    res.theta_mg(a) = sum / m;
    res.n_units_used(a) = m;
  }
  res.covariance = Eigen::MatrixXd::Zero(P, P);
  for (Eigen::Index a = 0; a < P; ++a)
    for (Eigen::Index b = a; b < P; ++b) {
      double s = 0.0;
      int m = 0;
      for (Eigen::Index i = 0; i < N; ++i)
        if (!std::isnan(table(i, a)) && !std::isnan(table(i, b))) {
          s += (table(i, a) - res.theta_mg(a)) * (table(i, b) - res.theta_mg(b));
          ++m;
        }
      const double v = m >= 2 ? s / (static_cast<double>(m) * (m - 1)) : 0.0;
      res.covariance(a, b) = res.covariance(b, a) = v;
    }
  res.se = res.covariance.diagonal().array().sqrt();
  return res;
}

enum class FixedEffects { firm, facility };

struct TwfeResult {
  Eigen::VectorXd beta;
  Eigen::VectorXd se;        // clustered by group
  Eigen::Index groups = 0;
  Eigen::Index observations = 0;
};

/// Pooled OLS of y on x after removing group and period means
/// (z - zbar_g - zbar_t + zbar). Standard errors are clustered by group with
/// the usual G/(G-1) * (n-1)/(n-k) small-sample factor.
inline TwfeResult twfe(const PanelDataset &panel, FixedEffects effects) {
  const auto N = panel.n(), T = panel.t(), K = panel.k();
  std::vector<Eigen::Index> group(static_cast<std::size_t>(N));
  std::map<std::string, Eigen::Index> ids;
  for (Eigen::Index i = 0; i < N; ++i) {
    const auto &m = panel.meta[static_cast<std::size_t>(i)];
    const std::string key = effects == FixedEffects::firm ? m.firm_id : m.unit_id;
    if (key.empty())
      throw MetadataError("unit " + std::to_string(i) + " has no firm label");
    group[static_cast<std::size_t>(i)] = ids.try_emplace(key, static_cast<Eigen::Index>(ids.size())).first->second;
  }
  const auto G = static_cast<Eigen::Index>(ids.size());
  std::vector<Eigen::Index> group_units(static_cast<std::size_t>(G), 0);
  for (auto g : group)
    ++group_units[static_cast<std::size_t>(g)];
  for (Eigen::Index g = 0; g < G; ++g)
    if (group_units[static_cast<std::size_t>(g)] * T < 2)
      throw DegenerateGroupError("group " + std::to_string(g) + " has a single observation");
  if (G < 2)
    throw DegenerateGroupError("clustered standard errors need at least two groups");

  // demean an N x T array by group and period
  auto within = [&](const Eigen::MatrixXd &z) {
    Eigen::MatrixXd gm = Eigen::MatrixXd::Zero(G, 1);
    for (Eigen::Index i = 0; i < N; ++i)
      gm(group[static_cast<std::size_t>(i)], 0) += z.row(i).sum();
    for (Eigen::Index g = 0; g < G; ++g)
      gm(g, 0) /= static_cast<double>(group_units[static_cast<std::size_t>(g)] * T);
    const Eigen::RowVectorXd tm = z.colwise().mean();
    const double all = z.mean();
    Eigen::MatrixXd out = z;
    for (Eigen::Index i = 0; i < N; ++i)
      out.row(i).array() -= gm(group[static_cast<std::size_t>(i)], 0);
    out.rowwise() -= tm;
    out.array() += all;
    return out;
  };

  const Eigen::Index n_obs = N * T;
  Eigen::VectorXd yv(n_obs);
  Eigen::MatrixXd X(n_obs, K);
  {
    const Eigen::MatrixXd yw = within(panel.y);
    for (Eigen::Index i = 0; i < N; ++i)
      yv.segment(i * T, T) = yw.row(i).transpose();
    for (Eigen::Index l = 0; l < K; ++l) {
      const Eigen::MatrixXd xw = within(panel.x[static_cast<std::size_t>(l)]);
      for (Eigen::Index i = 0; i < N; ++i)
        X.col(l).segment(i * T, T) = xw.row(i).transpose();
    }
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  qr.setThreshold(1e-10);
  if (qr.rank() < K)
    throw SingularDesignError("TWFE design is rank deficient after demeaning");
  TwfeResult res;
  res.beta = qr.solve(yv);
  res.groups = G;
  res.observations = n_obs;
  const Eigen::VectorXd e = yv - X * res.beta;
  const Eigen::MatrixXd XtXinv = (X.transpose() * X).inverse();
  Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(K, K);
  std::vector<Eigen::VectorXd> score(static_cast<std::size_t>(G), Eigen::VectorXd::Zero(K));
  for (Eigen::Index i = 0; i < N; ++i)
    score[static_cast<std::size_t>(group[static_cast<std::size_t>(i)])] +=
        X.middleRows(i * T, T).transpose() * e.segment(i * T, T);
  for (const auto &s : score)
    meat += s * s.transpose();
  const double adj = (static_cast<double>(G) / (G - 1)) *
                     (static_cast<double>(n_obs - 1) / static_cast<double>(n_obs - K));
  const Eigen::MatrixXd V = adj * XtXinv * meat * XtXinv;
  res.se = V.diagonal().array().sqrt();
  return res;
}

} // namespace netspill

#endif // NETSPILL_ESTIMATION_HPP
