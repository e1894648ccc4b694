#ifndef NETSPILL_HOMOPHILY_HPP
#define NETSPILL_HOMOPHILY_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <nlohmann/json.hpp>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "csv.hpp"
#include "errors.hpp"
#include "network.hpp"
#include "normal.hpp"
#include "panel.hpp"
#include "parallel.hpp"
#include "rng.hpp"

namespace netspill {

struct HomophilyReport {
  std::string dimension;
  double l_same = 0.0;
  double l_total = 0.0;
  double h = 0.0;
  double h_null = 0.0;
  double excess = 0.0;
  double p_value = 1.0;
  Eigen::Index permutations = 0;
  bool weighted = false;
};

namespace detail {

inline std::vector<int> encode_labels(const std::vector<std::string> &labels) {
  std::map<std::string, int> ids;
  std::vector<int> out;
  out.reserve(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i].empty())
      throw MetadataError("unit " + std::to_string(i) + " has an empty label");
    out.push_back(ids.try_emplace(labels[i], static_cast<int>(ids.size())).first->second);
  }
  return out;
}

struct Edge {
  Eigen::Index i, j;
  double v;
};

inline double same_label_mass(const std::vector<Edge> &edges, const std::vector<int> &g) {
  double s = 0.0;
  for (const auto &e : edges)
    if (g[static_cast<std::size_t>(e.i)] == g[static_cast<std::size_t>(e.j)])
      s += e.v;
  return s;
}

} // namespace detail

/// Permutation test for same-category clustering of links.
///
/// Links are counted (weight 1 each) unless `weighted`, in which case the
/// entries of w are summed. p is the share of label permutations whose
/// same-category mass is at least the observed one; permutation b draws from
/// its own substream of `seed`.
inline HomophilyReport category_homophily(const NetworkMatrix &w, const std::vector<std::string> &labels,
                                          Eigen::Index permutations, std::uint64_t seed,
                                          bool weighted = false, std::string dimension = "") {
  if (static_cast<Eigen::Index>(labels.size()) != w.n())
    throw DimensionError("one label per unit required");
  if (permutations < 100)
    throw ConfigError("homophily needs at least 100 permutations");
  const auto g = detail::encode_labels(labels);
  if (std::all_of(g.begin(), g.end(), [](int v) { return v == 0; }))
    throw DegenerateLabelsError("all units share one label; homophily is 1 under any permutation");

  std::vector<detail::Edge> edges;
  for (Eigen::Index i = 0; i < w.n(); ++i)
    for (const auto &l : w.row(i))
      edges.push_back({i, l.to, weighted ? l.weight : 1.0});
  HomophilyReport rep;
  rep.dimension = std::move(dimension);
  rep.weighted = weighted;
  rep.permutations = permutations;
  for (const auto &e : edges)
    rep.l_total += e.v;
  if (!(rep.l_total != 0.0))
    throw EstimationError("network has no links to test");
  rep.l_same = detail::same_label_mass(edges, g);
  rep.h = rep.l_same / rep.l_total;

  std::vector<double> null(static_cast<std::size_t>(permutations));
  parallel_for(null.size(), [&](std::size_t b) {
    Rng rng(seed, "homophily", b);
    auto perm = g;
    rng.shuffle(perm);
    null[b] = detail::same_label_mass(edges, perm);
  });
  // relative slack so reordered floating sums of equal mass still count as ties
  const double tol = weighted ? 1e-12 * std::fabs(rep.l_total) : 0.0;
  Eigen::Index exceed = 0;
  double mean = 0.0;
  for (double v : null) {
    if (v >= rep.l_same - tol)
      ++exceed;
    mean += v;
  }
  rep.h_null = mean / static_cast<double>(permutations) / rep.l_total;
  rep.excess = rep.h - rep.h_null;
  rep.p_value = static_cast<double>(exceed) / static_cast<double>(permutations);
  return rep;
}

struct LinkFormationFit {
  double alpha = 0.0;
  Eigen::VectorXd delta;
  Eigen::VectorXd odds_ratios;
  double se_alpha = 0.0;
  Eigen::VectorXd se_delta; // infinite for distance columns without variation
  std::vector<bool> degenerate;
  bool converged = false;
  int iterations = 0;
  Eigen::Index pairs = 0;
  Eigen::Index links = 0;
};

namespace detail {

inline double log1pexp(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

inline double sigmoid(double z) {
  if (z >= 0)
    return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

struct FirthState {
  Eigen::VectorXd pi;
  Eigen::MatrixXd info;
  double penalized_ll = -std::numeric_limits<double>::infinity();
  bool ok = false;
};

inline FirthState firth_state(const Eigen::MatrixXd &X, const Eigen::VectorXd &y, const Eigen::VectorXd &b) {
  FirthState s;
  const Eigen::VectorXd eta = X * b;
  s.pi.resize(eta.size());
  double ll = 0.0;
  for (Eigen::Index m = 0; m < eta.size(); ++m) {
    s.pi(m) = sigmoid(eta(m));
    ll += y(m) * eta(m) - log1pexp(eta(m));
  }
  const Eigen::VectorXd wts = s.pi.array() * (1.0 - s.pi.array());
  s.info = X.transpose() * wts.asDiagonal() * X;
  Eigen::LLT<Eigen::MatrixXd> llt(s.info);
  if (llt.info() != Eigen::Success)
    return s;
  const Eigen::MatrixXd L = llt.matrixL();
  const double logdet = 2.0 * L.diagonal().array().log().sum();
  s.penalized_ll = ll + 0.5 * logdet;
  s.ok = std::isfinite(s.penalized_ll);
  return s;
}

} // namespace detail

/// Bias-reduced logit for y_ij = 1[w_ij != 0] on |xbar_i - xbar_j| over all
/// ordered pairs i != j, with the Jeffreys-prior penalty. Finite estimates
/// exist even under complete separation. Distance columns that are
/// identically zero are left out of the fit and reported with coefficient 0
/// and infinite standard error.
inline LinkFormationFit link_formation_logit(const NetworkMatrix &w, const PanelDataset &panel,
                                             int max_iter = 1000, double tol = 1e-9) {
  const auto N = w.n(), K = panel.k();
  if (panel.n() != N)
    throw DimensionError("network and panel sizes differ");
  const Eigen::Index M = N * (N - 1);
  if (M < 10 * (K + 1))
    throw DimensionError("link-formation logit needs N(N-1) >= 10(K+1) pairs");

  Eigen::MatrixXd xbar(N, K);
  for (Eigen::Index l = 0; l < K; ++l)
    xbar.col(l) = panel.time_average(l);
  Eigen::MatrixXd D(M, K);
  Eigen::VectorXd y(M);
  Eigen::Index m = 0;
  for (Eigen::Index i = 0; i < N; ++i)
    for (Eigen::Index j = 0; j < N; ++j) {
      if (i == j)
        continue;
      D.row(m) = (xbar.row(i) - xbar.row(j)).cwiseAbs();
      y(m) = w.get(i, j) != 0.0 ? 1.0 : 0.0;
      ++m;
    }
  LinkFormationFit fit;
  fit.pairs = M;
  fit.links = static_cast<Eigen::Index>(y.sum());
  if (fit.links == 0 || fit.links == M)
    throw DomainError("link-formation logit needs at least one linked and one unlinked pair");

  fit.degenerate.assign(static_cast<std::size_t>(K), false);
  std::vector<Eigen::Index> active;
  for (Eigen::Index l = 0; l < K; ++l) {
    if (D.col(l).cwiseAbs().maxCoeff() == 0.0)
      fit.degenerate[static_cast<std::size_t>(l)] = true;
    else
      active.push_back(l);
  }
  const auto P = static_cast<Eigen::Index>(active.size()) + 1;
  Eigen::MatrixXd X(M, P);
  X.col(0).setOnes();
  for (Eigen::Index a = 0; a + 1 < P; ++a)
    X.col(a + 1) = D.col(active[static_cast<std::size_t>(a)]);

  Eigen::VectorXd b = Eigen::VectorXd::Zero(P);
  const double share = static_cast<double>(fit.links) / static_cast<double>(M);
  b(0) = std::log(share / (1.0 - share));
  auto st = detail::firth_state(X, y, b);
  if (!st.ok)
    throw SingularDesignError("link-formation design is rank deficient");
  double grad_norm = std::numeric_limits<double>::infinity();
  for (int it = 0; it < max_iter; ++it) {
    fit.iterations = it + 1;
    const Eigen::LDLT<Eigen::MatrixXd> solver(st.info);
    // hat diagonal h_m = w_m x_m' I^-1 x_m
    const Eigen::MatrixXd IX = solver.solve(X.transpose());
    Eigen::VectorXd score = Eigen::VectorXd::Zero(P);
    for (Eigen::Index r = 0; r < M; ++r) {
      const double p = st.pi(r);
      const double h = p * (1.0 - p) * X.row(r).dot(IX.col(r));
      score += (y(r) - p + h * (0.5 - p)) * X.row(r).transpose();
    }
    grad_norm = score.lpNorm<Eigen::Infinity>();
    if (grad_norm < tol * static_cast<double>(M)) {
      fit.converged = true;
      break;
    }
    Eigen::VectorXd step = solver.solve(score);
    // keep Newton steps bounded; separation can make early steps huge
    const double big = step.lpNorm<Eigen::Infinity>();
    if (big > 5.0)
      step *= 5.0 / big;
    double scale = 1.0;
    detail::FirthState next;
    for (int half = 0; half < 40; ++half) {
      next = detail::firth_state(X, y, b + scale * step);
      if (next.ok && next.penalized_ll >= st.penalized_ll - 1e-12 * std::fabs(st.penalized_ll))
        break;
      scale *= 0.5;
    }
    if (!next.ok)
      break;
    b += scale * step;
    st = std::move(next);
    if ((scale * step).lpNorm<Eigen::Infinity>() < 1e-12) {
      fit.converged = true;
      break;
    }
  }
  if (!fit.converged)
    throw ConvergenceError("bias-reduced logit did not converge (gradient norm " + std::to_string(grad_norm) + ")");

  const Eigen::MatrixXd cov = st.info.inverse();
  fit.alpha = b(0);
  fit.se_alpha = std::sqrt(cov(0, 0));
  fit.delta = Eigen::VectorXd::Zero(K);
  fit.se_delta = Eigen::VectorXd::Constant(K, std::numeric_limits<double>::infinity());
  for (Eigen::Index a = 0; a + 1 < P; ++a) {
    const auto l = active[static_cast<std::size_t>(a)];
    fit.delta(l) = b(a + 1);
    fit.se_delta(l) = std::sqrt(cov(a + 1, a + 1));
  }
  fit.odds_ratios = fit.delta.array().exp();
  return fit;
}

struct RankSumResult {
  double z = 0.0;
  double p_value = 0.5;
  double rank_sum = 0.0;
  Eigen::Index linked = 0;
  Eigen::Index unlinked = 0;
};

/// Wilcoxon rank-sum comparison of |a_i - a_j| between linked and unlinked
/// ordered pairs; normal approximation with average ranks and tie-corrected
/// variance, no continuity correction. One-sided: linked distances smaller.
inline RankSumResult rank_sum_test(const NetworkMatrix &w, const Eigen::VectorXd &attr) {
  const auto N = w.n();
  if (attr.size() != N)
    throw DimensionError("one attribute value per unit required");
  struct Obs {
    double d;
    bool linked;
  };
  std::vector<Obs> obs;
  obs.reserve(static_cast<std::size_t>(N * (N - 1)));
  for (Eigen::Index i = 0; i < N; ++i)
    for (Eigen::Index j = 0; j < N; ++j)
      if (i != j)
        obs.push_back({std::fabs(attr(i) - attr(j)), w.get(i, j) != 0.0});
  RankSumResult res;
  for (const auto &o : obs)
    (o.linked ? res.linked : res.unlinked)++;
  if (res.linked == 0 || res.unlinked == 0)
    throw DomainError("rank-sum test needs at least one linked and one unlinked pair");
  std::sort(obs.begin(), obs.end(), [](const Obs &a, const Obs &b) { return a.d < b.d; });
  const double n = static_cast<double>(obs.size());
  double tie_term = 0.0;
  for (std::size_t a = 0; a < obs.size();) {
    std::size_t b = a;
    while (b < obs.size() && obs[b].d == obs[a].d)
      ++b;
    const double avg = 0.5 * (static_cast<double>(a + 1) + static_cast<double>(b));
    for (std::size_t c = a; c < b; ++c)
      if (obs[c].linked)
        res.rank_sum += avg;
    const double t = static_cast<double>(b - a);
    tie_term += t * t * t - t;
    a = b;
  }
  const double n1 = static_cast<double>(res.linked), n2 = static_cast<double>(res.unlinked);
  const double mean = n1 * (n + 1.0) / 2.0;
  const double var = n1 * n2 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
  if (var <= 0.0) {
    res.z = 0.0;
    res.p_value = 0.5;
    return res;
  }
  res.z = (res.rank_sum - mean) / std::sqrt(var);
  res.p_value = normal_cdf(res.z);
  return res;
}

inline void write_homophily_csv(std::ostream &out, const std::vector<HomophilyReport> &reports) {
  out << "dimension,l_same,l_total,h,h_null,excess,p_value,permutations,weighted\n";
  for (const auto &r : reports)
    out << csv::escape(r.dimension) << ',' << csv::format_exact(r.l_same) << ','
        << csv::format_exact(r.l_total) << ',' << csv::format_exact(r.h) << ','
        << csv::format_exact(r.h_null) << ',' << csv::format_exact(r.excess) << ','
        << csv::format_exact(r.p_value) << ',' << r.permutations << ',' << (r.weighted ? 1 : 0) << '\n';
}

inline nlohmann::json homophily_json(const std::vector<HomophilyReport> &reports) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto &r : reports)
    rows.push_back({{"dimension", r.dimension},
                    {"same_category_links", r.l_same},
                    {"total_links", r.l_total},
                    {"homophily", r.h},
                    {"null_mean", r.h_null},
                    {"excess", r.excess},
                    {"p_value", r.p_value},
                    {"permutations", r.permutations},
                    {"weighted", r.weighted}});
  return rows;
}

inline nlohmann::json link_formation_json(const LinkFormationFit &fit, const std::vector<std::string> &names) {
  auto finite = [](double v) -> nlohmann::json { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  nlohmann::json coefs = nlohmann::json::array();
  for (Eigen::Index l = 0; l < fit.delta.size(); ++l)
    coefs.push_back({{"variable", static_cast<std::size_t>(l) < names.size() ? names[static_cast<std::size_t>(l)]
                                                                             : "x" + std::to_string(l + 1)},
                     {"delta", fit.delta(l)},
                     {"se", finite(fit.se_delta(l))},
                     {"odds_ratio", fit.odds_ratios(l)},
                     {"degenerate", static_cast<bool>(fit.degenerate[static_cast<std::size_t>(l)])}});
  return {{"alpha", fit.alpha}, {"se_alpha", fit.se_alpha}, {"distances", coefs},
          {"pairs", fit.pairs}, {"links", fit.links},       {"converged", fit.converged},
          {"iterations", fit.iterations}, {"estimator", "bias-reduced logit (Jeffreys penalty)"}};
}

inline nlohmann::json rank_sum_json(const RankSumResult &r) {
  return {{"z", r.z}, {"p_value", r.p_value}, {"rank_sum", r.rank_sum},
          {"linked_pairs", r.linked}, {"unlinked_pairs", r.unlinked}};
}

} // namespace netspill

#endif // NETSPILL_HOMOPHILY_HPP
