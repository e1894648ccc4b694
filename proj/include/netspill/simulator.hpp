#ifndef NETSPILL_SIMULATOR_HPP
#define NETSPILL_SIMULATOR_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numeric>
#include <string>
#include <vector>

#include "bolmt.hpp"
#include "errors.hpp"
#include "estimation.hpp"
#include "factors.hpp"
#include "impact.hpp"
#include "network.hpp"
#include "panel.hpp"
#include "parallel.hpp"
#include "rng.hpp"

namespace netspill {

/// Data-generating process
///   y_it = psi_i sum_j w_ij y_jt + x_it' beta_i + u_it,  u_it = lambda_i' g_t + eps_it,
///   x_lit = gamma_li' f_t + v_lit.
/// The outcome factors g_t are the first r_y covariate factors, so the
/// covariate factor space spans the error's factor space.
struct DGPConfig {
  Eigen::Index n = 50;
  Eigen::Index t = 200;
  Eigen::Index k = 1;
  Eigen::Index r_y = 1;
  Eigen::Index r_x = 1;
  Eigen::Index k_links = 2;     // links per unit drawn uniformly from [k_links, k_links_max]
  Eigen::Index k_links_max = -1; // -1: same as k_links
  double psi_lo = 0.8;
  double psi_hi = 0.95;
  double psi_negative_share = 0.0; // probability that a unit's psi is drawn from -[psi_lo, psi_hi]
  std::vector<double> beta_means{1.0};
  double beta_sd = 0.2;
  double loading_sd = 1.0;
  double noise_sd = 1.0;   // eps
  double x_noise_sd = 1.0; // v
  double x_ar = 0.0;       // AR(1) coefficient of v
  double proxy_fraction = 0.0;
  double proxy_corr = 0.7;
  bool heterogeneous_weights = false;
  Eigen::Index firms = 10;
  Eigen::Index industries = 4;
  Eigen::Index states = 5;
  std::uint64_t seed = 1;

  Eigen::Index max_links() const { return k_links_max < 0 ? k_links : k_links_max; }

  void validate() const {
    if (n < 3)
      throw ConfigError("n must be at least 3 (got " + std::to_string(n) + ")");
    if (k < 1)
      throw ConfigError("k must be at least 1");
    if (t < k + 2)
      throw ConfigError("t must be at least k + 2");
    if (k_links < 0 || max_links() < k_links)
      throw ConfigError("need 0 <= k_links <= k_links_max");
    if (max_links() >= n - 1)
      throw ConfigError("k_links must be smaller than n - 1 (k_links=" + std::to_string(max_links()) +
                        ", n=" + std::to_string(n) + ")");
    if (!(psi_lo > -1.0 && psi_hi < 1.0 && psi_lo <= psi_hi))
      throw ConfigError("psi_range must be an interval inside (-1, 1)");
    if (r_y < 0 || r_x < 0 || r_y > r_x)
      throw ConfigError("factor counts need 0 <= r_y <= r_x");
    if (r_x >= t)
      throw ConfigError("r_x must be smaller than t");
    if (static_cast<Eigen::Index>(beta_means.size()) != k)
      throw ConfigError("beta_means needs k = " + std::to_string(k) + " values");
    if (!(beta_sd >= 0.0 && loading_sd >= 0.0 && noise_sd >= 0.0 && x_noise_sd >= 0.0))
      throw ConfigError("scale parameters must be non-negative");
    if (!(x_ar > -1.0 && x_ar < 1.0))
      throw ConfigError("x_ar must lie in (-1, 1)");
    if (!(psi_negative_share >= 0.0 && psi_negative_share <= 1.0))
      throw ConfigError("psi_negative_share must lie in [0, 1]");
    if (!(proxy_fraction >= 0.0 && proxy_fraction <= 1.0))
      throw ConfigError("proxy_fraction must lie in [0, 1]");
    if (!(proxy_corr >= -1.0 && proxy_corr <= 1.0))
      throw ConfigError("proxy_corr must lie in [-1, 1]");
    if (firms < 1 || industries < 1 || states < 1)
      throw ConfigError("label counts must be positive");
  }
};

inline nlohmann::json to_json(const DGPConfig &c) {
  return {{"n", c.n},
          {"t", c.t},
          {"k", c.k},
          {"r_y", c.r_y},
          {"r_x", c.r_x},
          {"k_links", c.k_links},
          {"k_links_max", c.max_links()},
          {"psi_range", {c.psi_lo, c.psi_hi}},
          {"psi_negative_share", c.psi_negative_share},
          {"beta_means", c.beta_means},
          {"beta_sd", c.beta_sd},
          {"loading_sd", c.loading_sd},
          {"noise_sd", c.noise_sd},
          {"x_noise_sd", c.x_noise_sd},
          {"x_ar", c.x_ar},
          {"proxy_fraction", c.proxy_fraction},
          {"proxy_corr", c.proxy_corr},
          {"heterogeneous_weights", c.heterogeneous_weights},
          {"firms", c.firms},
          {"industries", c.industries},
          {"states", c.states},
          {"seed", c.seed}};
}

struct SyntheticDataset {
  PanelDataset panel;
  NetworkMatrix true_w;
  Eigen::VectorXd psi;        // N; 0 for units without links
  Eigen::MatrixXd beta;       // N x K
  Eigen::MatrixXd factors_x;  // T x r_x
  Eigen::MatrixXd factors_y;  // T x r_y
  std::vector<Eigen::MatrixXd> loadings_x; // per unit, r_x x K
  Eigen::MatrixXd loadings_y; // N x r_y
  Eigen::MatrixXd u;          // N x T
  std::vector<std::pair<Eigen::Index, Eigen::Index>> proxy_pairs; // (proxy unit, correlated true link)
  DGPConfig config;

  /// Max-abs structural residual y - Psi W y - sum B_l x_l - u over all periods.
  double structural_residual() const {
    Eigen::MatrixXd r = panel.y - psi.asDiagonal() * true_w.multiply(panel.y) - u;
    for (Eigen::Index l = 0; l < panel.k(); ++l)
      r -= beta.col(l).asDiagonal() * panel.x[static_cast<std::size_t>(l)];
    return r.cwiseAbs().maxCoeff();
  }
};

/// Draws one synthetic panel. Every random block uses its own labelled
/// substream of config.seed, so output depends on nothing but the config.
inline SyntheticDataset generate(const DGPConfig &cfg) {
  cfg.validate();
  const auto N = cfg.n, T = cfg.t, K = cfg.k;
  SyntheticDataset ds;
  ds.config = cfg;

  Rng rf(cfg.seed, "factors");
  ds.factors_x.resize(T, cfg.r_x);
  for (Eigen::Index s = 0; s < T; ++s)
    for (Eigen::Index a = 0; a < cfg.r_x; ++a)
      ds.factors_x(s, a) = rf.normal();
  ds.factors_y = ds.factors_x.leftCols(cfg.r_y);

  Rng rl(cfg.seed, "loadings");
  ds.loadings_x.assign(static_cast<std::size_t>(N), Eigen::MatrixXd());
  ds.loadings_y.resize(N, cfg.r_y);
  for (Eigen::Index i = 0; i < N; ++i) {
    auto &g = ds.loadings_x[static_cast<std::size_t>(i)];
    g.resize(cfg.r_x, K);
    for (Eigen::Index a = 0; a < cfg.r_x; ++a)
      for (Eigen::Index l = 0; l < K; ++l)
        g(a, l) = cfg.loading_sd * rl.normal();
    for (Eigen::Index a = 0; a < cfg.r_y; ++a)
      ds.loadings_y(i, a) = cfg.loading_sd * rl.normal();
  }

  // network
  Rng rn(cfg.seed, "network");
  ds.true_w = NetworkMatrix(N, Provenance::simulated);
  std::vector<Eigen::Index> others(static_cast<std::size_t>(N - 1));
  for (Eigen::Index i = 0; i < N; ++i) {
    const auto span = static_cast<std::uint64_t>(cfg.max_links() - cfg.k_links + 1);
    const auto ki = cfg.k_links + static_cast<Eigen::Index>(rn.below(span));
    for (Eigen::Index j = 0, m = 0; j < N; ++j)
      if (j != i)
        others[static_cast<std::size_t>(m++)] = j;
    // partial Fisher-Yates: first ki entries form a uniform sample
    for (Eigen::Index a = 0; a < ki; ++a) {
      const auto b = a + static_cast<Eigen::Index>(rn.below(static_cast<std::uint64_t>(N - 1 - a)));
      std::swap(others[static_cast<std::size_t>(a)], others[static_cast<std::size_t>(b)]);
    }
    std::vector<Link> links;
    double total = 0.0;
    for (Eigen::Index a = 0; a < ki; ++a) {
      const double wt = cfg.heterogeneous_weights ? rn.uniform(0.5, 1.5) : 1.0;
      links.push_back({others[static_cast<std::size_t>(a)], wt});
      total += wt;
    }
    for (auto &l : links)
      l.weight /= total;
    ds.true_w.set_row(i, std::move(links));
  }
  ds.true_w.mark_normalized(true);

  Rng rp(cfg.seed, "params");
  ds.psi = Eigen::VectorXd::Zero(N);
  ds.beta.resize(N, K);
  for (Eigen::Index i = 0; i < N; ++i) {
    double draw = rp.uniform(cfg.psi_lo, cfg.psi_hi);
    if (rp.uniform() < cfg.psi_negative_share)
      draw = -draw;
    if (ds.true_w.out_degree(i) > 0)
      ds.psi(i) = draw;
    for (Eigen::Index l = 0; l < K; ++l)
      ds.beta(i, l) = cfg.beta_means[static_cast<std::size_t>(l)] + cfg.beta_sd * rp.normal();
  }

  // covariate innovations, optionally AR(1) with unit stationary variance scale
  Rng rv(cfg.seed, "innovations");
  std::vector<Eigen::MatrixXd> v(static_cast<std::size_t>(K), Eigen::MatrixXd(N, T));
  const double innov = std::sqrt(1.0 - cfg.x_ar * cfg.x_ar);
  for (Eigen::Index l = 0; l < K; ++l)
    for (Eigen::Index i = 0; i < N; ++i) {
      auto &vl = v[static_cast<std::size_t>(l)];
      vl(i, 0) = cfg.x_noise_sd * rv.normal();
      for (Eigen::Index s = 1; s < T; ++s)
        vl(i, s) = cfg.x_ar * vl(i, s - 1) + cfg.x_noise_sd * innov * rv.normal();
    }

  // proxy links: a non-neighbour whose innovations track a true neighbour's
  Rng rpx(cfg.seed, "proxies");
  if (cfg.proxy_fraction > 0.0) {
    const double keep = std::sqrt(1.0 - cfg.proxy_corr * cfg.proxy_corr);
    for (Eigen::Index i = 0; i < N; ++i) {
      const auto &row = ds.true_w.row(i);
      const double u = rpx.uniform();
      if (row.empty() || !(u < cfg.proxy_fraction))
        continue;
      const auto j = row[static_cast<std::size_t>(rpx.below(row.size()))].to;
      std::vector<Eigen::Index> pool;
      for (Eigen::Index p = 0; p < N; ++p)
        if (p != i && p != j && ds.true_w.get(i, p) == 0.0)
          pool.push_back(p);
      if (pool.empty())
        continue;
      const auto p = pool[static_cast<std::size_t>(rpx.below(pool.size()))];
      for (Eigen::Index l = 0; l < K; ++l) {
        auto &vl = v[static_cast<std::size_t>(l)];
        vl.row(p) = cfg.proxy_corr * vl.row(j) + keep * vl.row(p);
      }
      ds.proxy_pairs.emplace_back(p, j);
    }
  }

  PanelDataset &panel = ds.panel;
  panel.x.assign(static_cast<std::size_t>(K), Eigen::MatrixXd(N, T));
  for (Eigen::Index l = 0; l < K; ++l) {
    Eigen::MatrixXd common(N, T);
    for (Eigen::Index i = 0; i < N; ++i)
      common.row(i) = (ds.factors_x * ds.loadings_x[static_cast<std::size_t>(i)].col(l)).transpose();
    panel.x[static_cast<std::size_t>(l)] = common + v[static_cast<std::size_t>(l)];
  }
  Rng re(cfg.seed, "errors");
  ds.u = ds.loadings_y * ds.factors_y.transpose();
  for (Eigen::Index i = 0; i < N; ++i)
    for (Eigen::Index s = 0; s < T; ++s)
      ds.u(i, s) += cfg.noise_sd * re.normal();

  const Eigen::MatrixXd PW = ds.psi.asDiagonal() * ds.true_w.to_dense();
  const double rho = spectral_radius(PW);
  if (!(rho < 1.0 - kStabilityMargin))
    throw ConfigError("simulated system is unstable: spectral radius " + std::to_string(rho));
  Eigen::MatrixXd rhs = ds.u;
  for (Eigen::Index l = 0; l < K; ++l)
    rhs += ds.beta.col(l).asDiagonal() * panel.x[static_cast<std::size_t>(l)];
  const Eigen::MatrixXd S = Eigen::MatrixXd::Identity(N, N) - PW;
  const Eigen::PartialPivLU<Eigen::MatrixXd> lu(S);
  panel.y = lu.solve(rhs);
  // one step of iterative refinement keeps the plug-back residual at rounding level
  panel.y += lu.solve(rhs - S * panel.y);

  Rng rm(cfg.seed, "metadata");
  panel.meta.resize(static_cast<std::size_t>(N));
  for (Eigen::Index i = 0; i < N; ++i) {
    auto &m = panel.meta[static_cast<std::size_t>(i)];
    m.unit_id = "u" + std::to_string(i + 1);
    m.firm_id = "f" + std::to_string(1 + static_cast<Eigen::Index>(rm.below(static_cast<std::uint64_t>(cfg.firms))));
    m.industry = "ind" + std::to_string(1 + static_cast<Eigen::Index>(rm.below(static_cast<std::uint64_t>(cfg.industries))));
    m.state = "s" + std::to_string(1 + static_cast<Eigen::Index>(rm.below(static_cast<std::uint64_t>(cfg.states))));
    m.latitude = rm.uniform(25.0, 49.0);
    m.longitude = rm.uniform(-124.0, -67.0);
  }
  for (Eigen::Index l = 0; l < K; ++l)
    panel.var_names.push_back("x" + std::to_string(l + 1));
  for (Eigen::Index s = 0; s < T; ++s)
    panel.periods.push_back(std::to_string(s + 1));
  return ds;
}

inline nlohmann::json truth_params_json(const SyntheticDataset &ds) {
  nlohmann::json units = nlohmann::json::array();
  for (Eigen::Index i = 0; i < ds.panel.n(); ++i) {
    std::vector<double> b;
    for (Eigen::Index l = 0; l < ds.beta.cols(); ++l)
      b.push_back(ds.beta(i, l));
    units.push_back({{"unit_id", ds.panel.meta[static_cast<std::size_t>(i)].unit_id},
                     {"psi", ds.psi(i)},
                     {"beta", b},
                     {"out_degree", ds.true_w.out_degree(i)}});
  }
  nlohmann::json proxies = nlohmann::json::array();
  for (const auto &[p, j] : ds.proxy_pairs)
    proxies.push_back({{"proxy", p}, {"tracks", j}});
  return {{"config", to_json(ds.config)},
          {"psi_mean", 0.5 * (ds.config.psi_lo + ds.config.psi_hi)},
          {"beta_means", ds.config.beta_means},
          {"units", units},
          {"proxy_pairs", proxies}};
}

/// Writes panel.csv, truth_edges.csv and truth_params.json into dir.
inline void export_dataset(const SyntheticDataset &ds, const std::filesystem::path &dir) {
  std::filesystem::create_directories(dir);
  write_panel((dir / "panel.csv").string(), ds.panel);
  write_edge_list((dir / "truth_edges.csv").string(), ds.true_w);
  std::ofstream js(dir / "truth_params.json");
  if (!js)
    throw Error("cannot write " + (dir / "truth_params.json").string());
  js << truth_params_json(ds).dump(2) << '\n';
}

struct RecoveryOptions {
  /// Choose r by eigenvalue ratio instead of using the true r_x.
  bool select_factors = false;
  Eigen::Index r_max = 4;
  bool estimate_theta = true;
};

struct ReplicationOutcome {
  bool ok = false;
  std::string error;
  Eigen::Index true_links = 0;
  Eigen::Index true_positives = 0;
  Eigen::Index false_positives = 0;
  Eigen::Index units_with_links = 0; // units acquiring any selected link
  bool exact = false;
  Eigen::VectorXd theta_true_w; // MGIV with the true network
  Eigen::VectorXd theta_est_w;  // MGIV with the estimated network (empty if unavailable)
};

struct RecoveryMetrics {
  Eigen::Index replications = 0;
  Eigen::Index failures = 0;
  double tpr = std::numeric_limits<double>::quiet_NaN(); // NaN when there are no true links
  double fp_per_unit = 0.0;
  double any_link_share = 0.0;
  double exact_recovery_share = 0.0;
  Eigen::VectorXd theta_dgp;      // (mean psi, beta_means)
  Eigen::VectorXd mean_true_w, bias_true_w, rmse_true_w, mcse_true_w;
  Eigen::VectorXd mean_est_w, bias_est_w, rmse_est_w, mcse_est_w;
  Eigen::Index est_w_replications = 0;
  std::vector<ReplicationOutcome> outcomes;
};

/// One replication of generate -> defactor -> select -> estimate.
inline ReplicationOutcome run_replication(const DGPConfig &cfg, const BolmtConfig &bolmt,
                                          const RecoveryOptions &opt = {}) {
  ReplicationOutcome out;
  try {
    const auto ds = generate(cfg);
    FactorModel fm;
    Eigen::Index r = cfg.r_x;
    if (opt.select_factors)
      r = select_num_factors(ds.panel, std::min(opt.r_max, (ds.panel.t() - 1) / 2)).count;
    fm = r > 0 ? estimate_factors(ds.panel, r)
               : FactorModel::from_factors(Eigen::MatrixXd(ds.panel.t(), 0), true);
    const auto data = defactor_panel(ds.panel, fm);
    const auto est = estimate_network(data, bolmt);
    const auto N = ds.panel.n();
    out.exact = true;
    for (Eigen::Index i = 0; i < N; ++i) {
      const auto &truth = ds.true_w.row(i);
      const auto &sel = est.w_hat.row(i);
      out.true_links += static_cast<Eigen::Index>(truth.size());
      if (!sel.empty())
        ++out.units_with_links;
      for (const auto &l : sel) {
        if (ds.true_w.get(i, l.to) != 0.0)
          ++out.true_positives;
        else
          ++out.false_positives;
      }
    }
    out.exact = est.w_hat.same_support(ds.true_w);
    if (opt.estimate_theta) {
      out.theta_true_w = mgiv(estimate_units(ds.true_w, data)).theta_mg;
      try {
        out.theta_est_w = mgiv(estimate_units(est.w_hat, data)).theta_mg;
      } catch (const Error &) {
        out.theta_est_w.resize(0);
      }
    }
    out.ok = true;
  } catch (const Error &e) {
    out.ok = false;
    out.error = e.what();
  }
  return out;
}

/// Monte Carlo over `replications` independent datasets; replication r uses
/// seed substream (config.seed, "replication", r). Failures are recorded,
/// not thrown.
inline RecoveryMetrics recovery_experiment(const DGPConfig &config, Eigen::Index replications,
                                           const BolmtConfig &bolmt, const RecoveryOptions &opt = {}) {
  config.validate();
  bolmt.validate();
  if (replications < 10)
    throw ConfigError("recovery experiment needs at least 10 replications");
  RecoveryMetrics m;
  m.replications = replications;
  m.outcomes.resize(static_cast<std::size_t>(replications));
  parallel_for(m.outcomes.size(), [&](std::size_t r) {
    DGPConfig c = config;
    c.seed = substream_seed(config.seed, "replication", r);
    m.outcomes[r] = run_replication(c, bolmt, opt);
  });

  const auto K = config.k;
  m.theta_dgp.resize(K + 1);
  m.theta_dgp(0) = 0.5 * (config.psi_lo + config.psi_hi);
  for (Eigen::Index l = 0; l < K; ++l)
    m.theta_dgp(l + 1) = config.beta_means[static_cast<std::size_t>(l)];

  Eigen::Index true_links = 0, tp = 0, fp = 0, with_links = 0, exact = 0, ok = 0;
  std::vector<Eigen::VectorXd> tw, ew;
  for (const auto &o : m.outcomes) {
    if (!o.ok) {
      ++m.failures;
      continue;
    }
    ++ok;
    true_links += o.true_links;
    tp += o.true_positives;
    fp += o.false_positives;
    with_links += o.units_with_links;
    exact += o.exact ? 1 : 0;
    if (o.theta_true_w.size() == K + 1)
      tw.push_back(o.theta_true_w);
    if (o.theta_est_w.size() == K + 1)
      ew.push_back(o.theta_est_w);
  }
  if (ok > 0) {
    const double units = static_cast<double>(ok * config.n);
    if (true_links > 0)
      m.tpr = static_cast<double>(tp) / static_cast<double>(true_links);
    m.fp_per_unit = static_cast<double>(fp) / units;
    m.any_link_share = static_cast<double>(with_links) / units;
    m.exact_recovery_share = static_cast<double>(exact) / static_cast<double>(ok);
  }
  auto summarize = [&](const std::vector<Eigen::VectorXd> &draws, Eigen::VectorXd &mean, Eigen::VectorXd &bias,
                       Eigen::VectorXd &rmse, Eigen::VectorXd &mcse) {
    const auto P = K + 1;
    mean = bias = rmse = mcse = Eigen::VectorXd::Constant(P, std::numeric_limits<double>::quiet_NaN());
    if (draws.size() < 2)
      return;
    const double R = static_cast<double>(draws.size());
    mean.setZero();
    for (const auto &d : draws)
      mean += d;
    mean /= R;
    Eigen::VectorXd ss = Eigen::VectorXd::Zero(P), sq = Eigen::VectorXd::Zero(P);
    for (const auto &d : draws) {
      ss += (d - mean).cwiseAbs2();
      sq += (d - m.theta_dgp).cwiseAbs2();
    }
    bias = mean - m.theta_dgp;
    rmse = (sq / R).cwiseSqrt();
    mcse = (ss / (R - 1.0) / R).cwiseSqrt();
  };
  summarize(tw, m.mean_true_w, m.bias_true_w, m.rmse_true_w, m.mcse_true_w);
  summarize(ew, m.mean_est_w, m.bias_est_w, m.rmse_est_w, m.mcse_est_w);
  m.est_w_replications = static_cast<Eigen::Index>(ew.size());
  return m;
}

} // namespace netspill

#endif // NETSPILL_SIMULATOR_HPP
