#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <sstream>

#include "netspill/factors.hpp"
#include "netspill/rng.hpp"

using namespace netspill;

namespace {

struct FactorDraw {
  PanelDataset panel;
  Eigen::MatrixXd f; // T x r
};

// x_i = F gamma_i + noise, K covariates
FactorDraw factor_panel(Eigen::Index n, Eigen::Index t, Eigen::Index r, Eigen::Index k, double noise,
                        std::uint64_t seed) {
  Rng g(seed, "factor_panel");
  FactorDraw d;
  d.f.resize(t, r);
  for (Eigen::Index s = 0; s < t; ++s)
    for (Eigen::Index a = 0; a < r; ++a)
      d.f(s, a) = g.normal();
  d.panel.y = Eigen::MatrixXd::Zero(n, t);
  d.panel.x.assign(static_cast<std::size_t>(k), Eigen::MatrixXd(n, t));
  for (Eigen::Index l = 0; l < k; ++l)
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::VectorXd gamma(r);
      for (Eigen::Index a = 0; a < r; ++a)
        gamma(a) = 1.0 + g.normal();
      Eigen::VectorXd row = d.f * gamma;
      for (Eigen::Index s = 0; s < t; ++s)
        row(s) += noise * g.normal();
      d.panel.x[static_cast<std::size_t>(l)].row(i) = row.transpose();
    }
  for (Eigen::Index i = 0; i < n; ++i) {
    FacilityMeta m;
    m.unit_id = "u" + std::to_string(i);
    d.panel.meta.push_back(m);
  }
  for (Eigen::Index l = 0; l < k; ++l)
    d.panel.var_names.push_back("x" + std::to_string(l + 1));
  for (Eigen::Index s = 0; s < t; ++s)
    d.panel.periods.push_back(std::to_string(s));
  return d;
}

// largest principal angle between two column spaces, in degrees
double max_principal_angle(const Eigen::MatrixXd &a, const Eigen::MatrixXd &b) {
  const Eigen::MatrixXd qa = Eigen::HouseholderQR<Eigen::MatrixXd>(a).householderQ() *
                             Eigen::MatrixXd::Identity(a.rows(), a.cols());
  const Eigen::MatrixXd qb = Eigen::HouseholderQR<Eigen::MatrixXd>(b).householderQ() *
                             Eigen::MatrixXd::Identity(b.rows(), b.cols());
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(qa.transpose() * qb);
  const double smin = std::min(1.0, svd.singularValues().minCoeff());
  return std::acos(smin) * 180.0 / std::numbers::pi;
}

} // namespace

TEST_CASE("projection is symmetric, idempotent and annihilates the factors", "[factors]") {
  const auto d = factor_panel(30, 40, 2, 1, 0.5, 1);
  for (bool absorb : {true, false}) {
    const auto fm = estimate_factors(d.panel, 2, absorb);
    const auto &M = fm.projection;
    CHECK((M * M - M).cwiseAbs().maxCoeff() <= 1e-10);
    CHECK((M - M.transpose()).cwiseAbs().maxCoeff() <= 1e-10);
    CHECK((M * fm.f_hat).cwiseAbs().maxCoeff() <= 1e-10);
    // rank = trace of an orthogonal projector
    CHECK(std::abs(M.trace() - static_cast<double>(40 - 2 - (absorb ? 1 : 0))) <= 1e-9);
    // normalization f'f / T = I
    const Eigen::MatrixXd ff = fm.f_hat.transpose() * fm.f_hat / 40.0;
    CHECK((ff - Eigen::MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff() <= 1e-10);
  }
}

TEST_CASE("noiseless factor model recovers the factor space", "[factors]") {
  const auto d = factor_panel(20, 30, 2, 2, 0.0, 4);
  const auto fm = estimate_factors(d.panel, 2, false);
  // the pooled series are demeaned, so compare against the demeaned factors
  Eigen::MatrixXd fc = d.f;
  fc.rowwise() -= fc.colwise().mean();
  CHECK((fm.projection * fc).cwiseAbs().maxCoeff() <= 1e-8);
  const auto absorbed = estimate_factors(d.panel, 2, true);
  CHECK((absorbed.projection * d.f).cwiseAbs().maxCoeff() <= 1e-8);
}

TEST_CASE("factor count outside the contract", "[factors]") {
  const auto d = factor_panel(10, 12, 1, 1, 1.0, 2);
  CHECK_THROWS_AS(estimate_factors(d.panel, 0), DimensionError);
  CHECK_THROWS_AS(estimate_factors(d.panel, 12), DimensionError);
  CHECK_THROWS_AS(select_num_factors(d.panel, 6), DimensionError);
  CHECK_THROWS_AS(select_num_factors(d.panel, 0), DimensionError);
}

TEST_CASE("defactor fixed points and orthogonality", "[factors]") {
  const auto d = factor_panel(25, 35, 2, 1, 1.0, 6);
  const auto fm = estimate_factors(d.panel, 2);
  CHECK(defactor(fm.f_hat, fm).cwiseAbs().maxCoeff() <= 1e-10);

  Rng g(6, "series");
  Eigen::MatrixXd s(35, 5);
  for (Eigen::Index i = 0; i < s.size(); ++i)
    s(i) = g.normal();
  const Eigen::MatrixXd once = defactor(s, fm);
  CHECK((fm.f_hat.transpose() * once).cwiseAbs().maxCoeff() <= 1e-8);
  CHECK((defactor(once, fm) - once).cwiseAbs().maxCoeff() <= 1e-10);
  CHECK_THROWS_AS(defactor(Eigen::MatrixXd::Zero(34, 2), fm), DimensionError);
}

TEST_CASE("defactoring nests the two-way within transformation", "[factors]") {
  const Eigen::Index N = 12, T = 18;
  Rng g(8, "twe");
  Eigen::VectorXd a(N), dt(T);
  for (Eigen::Index i = 0; i < N; ++i)
    a(i) = 3.0 * g.normal();
  for (Eigen::Index s = 0; s < T; ++s)
    dt(s) = g.normal();
  // idiosyncratic part with zero row and column means, orthogonal to d
  Eigen::MatrixXd e(N, T);
  for (Eigen::Index k = 0; k < e.size(); ++k)
    e(k) = g.normal();
  e.rowwise() -= e.colwise().mean();
  e.colwise() -= e.rowwise().mean();
  Eigen::VectorXd dc = dt.array() - dt.mean();
  for (Eigen::Index i = 0; i < N; ++i)
    e.row(i) -= (e.row(i).dot(dc) / dc.squaredNorm()) * dc.transpose();

  Eigen::MatrixXd s(N, T);
  for (Eigen::Index i = 0; i < N; ++i)
    for (Eigen::Index t = 0; t < T; ++t)
      s(i, t) = a(i) + dt(t) + e(i, t);

  // two-way demeaning by direct means
  Eigen::MatrixXd twe = s;
  const Eigen::VectorXd rm = s.rowwise().mean();
  const Eigen::RowVectorXd cm = s.colwise().mean();
  const double gm = s.mean();
  for (Eigen::Index i = 0; i < N; ++i)
    for (Eigen::Index t = 0; t < T; ++t)
      twe(i, t) = s(i, t) - rm(i) - cm(t) + gm;

  const auto fm = FactorModel::from_factors(dt, true);
  const Eigen::MatrixXd proj = defactor(s.transpose(), fm).transpose();
  CHECK((proj - twe).cwiseAbs().maxCoeff() <= 1e-8);
}

TEST_CASE("factor space recovery in repeated draws", "[factors]") {
  int good = 0;
  for (int rep = 0; rep < 200; ++rep) {
    const auto d = factor_panel(50, 100, 2, 1, 0.3, 1000 + static_cast<std::uint64_t>(rep));
    const auto fm = estimate_factors(d.panel, 2, false);
    Eigen::MatrixXd fc = d.f;
    fc.rowwise() -= fc.colwise().mean();
    if (max_principal_angle(fm.f_hat, fc) < 5.0)
      ++good;
  }
  CHECK(good >= 190);
}

TEST_CASE("eigenvalue ratio selects the true count", "[factors]") {
  int hits = 0;
  for (int rep = 0; rep < 200; ++rep) {
    // loadings have unit-scale signal, noise at a tenth of it
    const auto d = factor_panel(40, 60, 2, 1, 0.1, 5000 + static_cast<std::uint64_t>(rep));
    const auto sel = select_num_factors(d.panel, 4);
    if (sel.count == 2 && !sel.low_signal)
      ++hits;
  }
  CHECK(hits >= 190);
}

TEST_CASE("white noise selects one factor with a low-signal flag", "[factors]") {
  int flagged = 0;
  for (int rep = 0; rep < 50; ++rep) {
    const auto d = factor_panel(40, 60, 1, 1, 1.0, 9000 + static_cast<std::uint64_t>(rep));
    auto p = d.panel;
    Rng g(static_cast<std::uint64_t>(rep), "noise");
    for (Eigen::Index k = 0; k < p.x[0].size(); ++k)
      p.x[0](k) = g.normal();
    const auto sel = select_num_factors(p, 4);
    CHECK(sel.count == 1);
    flagged += sel.low_signal ? 1 : 0;
  }
  CHECK(flagged >= 45);
}

TEST_CASE("degenerate spectrum", "[factors]") {
  auto d = factor_panel(10, 12, 1, 1, 1.0, 3);
  d.panel.x[0].setConstant(2.0);
  const auto sel = select_num_factors(d.panel, 3);
  CHECK(sel.count == 1);
  CHECK(sel.low_signal);
}

TEST_CASE("factor csv export", "[factors]") {
  const auto d = factor_panel(10, 12, 1, 1, 1.0, 3);
  const auto fm = estimate_factors(d.panel, 2);
  std::ostringstream s;
  write_factors(s, fm, d.panel.periods);
  const auto text = s.str();
  CHECK(text.rfind("period,f1,f2\n", 0) == 0);
  CHECK(text.find("explained_share,") != std::string::npos);
  CHECK(std::count(text.begin(), text.end(), '\n') == 14);
}
