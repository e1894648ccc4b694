#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "netspill/homophily.hpp"
#include "netspill/network.hpp"
#include "netspill/normal.hpp"

using namespace netspill;

namespace {

// panel whose covariate time averages equal the given attribute rows (T = 1)
PanelDataset attribute_panel(const Eigen::MatrixXd &attrs) {
  PanelDataset p;
  const auto N = attrs.rows(), K = attrs.cols();
  p.y = Eigen::MatrixXd::Zero(N, 1);
  for (Eigen::Index l = 0; l < K; ++l) {
    p.x.push_back(attrs.col(l));
    p.var_names.push_back("a" + std::to_string(l + 1));
  }
  for (Eigen::Index i = 0; i < N; ++i) {
    FacilityMeta m;
    m.unit_id = "u" + std::to_string(i);
    p.meta.push_back(m);
  }
  p.periods = {"1"};
  return p;
}

NetworkMatrix fixture_links() {
  NetworkMatrix w(8);
  for (auto [i, j] : std::vector<std::pair<int, int>>{
           {0, 1}, {0, 5}, {1, 0}, {2, 3}, {3, 2}, {4, 7}, {5, 0}, {6, 4}, {7, 4}, {1, 2}})
    w.set(i, j, 1.0);
  return row_normalize(w);
}

} // namespace

TEST_CASE("rank-sum fixture against reference values", "[homophily]") {
  Eigen::VectorXd attr(8);
  attr << 0.3, 1.2, 2.5, 2.5, 4.0, 0.3, 5.1, 3.3;
  const auto r = rank_sum_test(fixture_links(), attr);
  CHECK(r.linked == 10);
  CHECK(r.unlinked == 46);
  CHECK(r.rank_sum == 80.0);
  CHECK(r.z == Catch::Approx(-4.399143209445935).epsilon(1e-12));
  CHECK(r.p_value == Catch::Approx(5.433954711589568e-06).epsilon(1e-9));
}

TEST_CASE("rank-sum extreme separation", "[homophily]") {
  // two groups of four at attribute 0 and 1; every within-group pair linked
  std::vector<std::string> labels{"a", "a", "a", "a", "b", "b", "b", "b"};
  const auto w = category_network(labels);
  Eigen::VectorXd attr(8);
  attr << 0, 0, 0, 0, 1, 1, 1, 1;
  const auto r = rank_sum_test(w, attr);
  // exact ranks: 24 linked ties occupy ranks 1..24, 32 unlinked ties 25..56
  const double n1 = 24, n2 = 32, n = 56;
  const double w_stat = n1 * (1.0 + n1) / 2.0;
  const double ties = (n1 * n1 * n1 - n1) + (n2 * n2 * n2 - n2);
  const double var = n1 * n2 / 12.0 * ((n + 1) - ties / (n * (n - 1)));
  const double z = (w_stat - n1 * (n + 1) / 2.0) / std::sqrt(var);
  CHECK(r.rank_sum == w_stat);
  CHECK(r.z == Catch::Approx(z).epsilon(1e-12));
  CHECK(r.p_value < 1e-6);
}

TEST_CASE("rank-sum full ties", "[homophily]") {
  const auto r = rank_sum_test(fixture_links(), Eigen::VectorXd::Constant(8, 2.0));
  CHECK(r.z == 0.0);
  CHECK(r.p_value == 0.5);
  CHECK_THROWS_AS(rank_sum_test(NetworkMatrix(8), Eigen::VectorXd::Zero(8)), DomainError);
}

TEST_CASE("bias-reduced logit fixture", "[homophily]") {
  Eigen::MatrixXd a(8, 2);
  a << 0.3, 1.0, 1.2, 0.5, 2.5, 0.7, 2.5, 2.0, 4.0, 1.5, 0.3, 0.2, 5.1, 0.9, 3.3, 1.1;
  const auto fit = link_formation_logit(fixture_links(), attribute_panel(a));
  REQUIRE(fit.converged);
  // reference maximizer of the Jeffreys-penalized likelihood from a derivative-free optimizer
  CHECK(fit.alpha == Catch::Approx(3.20207906).margin(1e-5));
  CHECK(fit.delta(0) == Catch::Approx(-3.16544406).margin(1e-5));
  CHECK(fit.delta(1) == Catch::Approx(-1.17498231).margin(1e-5));
  CHECK(fit.se_alpha == Catch::Approx(1.67752157).margin(1e-5));
  CHECK(fit.se_delta(0) == Catch::Approx(1.11257142).margin(1e-5));
  CHECK(fit.se_delta(1) == Catch::Approx(1.56935871).margin(1e-5));
  CHECK(fit.pairs == 56);
  CHECK(fit.links == 10);
  for (Eigen::Index l = 0; l < 2; ++l)
    CHECK(fit.odds_ratios(l) == std::exp(fit.delta(l)));
}

TEST_CASE("logit is invariant to unit order", "[homophily]") {
  Rng g(3, "logit_perm");
  const Eigen::Index N = 30;
  Eigen::MatrixXd a(N, 2);
  for (Eigen::Index k = 0; k < a.size(); ++k)
    a(k) = g.normal();
  NetworkMatrix w(N);
  for (Eigen::Index i = 0; i < N; ++i)
    for (Eigen::Index j = 0; j < N; ++j)
      if (i != j && g.uniform() < 1.0 / (1.0 + std::exp(1.0 + 0.8 * std::abs(a(i, 0) - a(j, 0)))))
        w.set(i, j, 1.0);
  const auto base = link_formation_logit(w, attribute_panel(a));

  // i -> 7i + 4 mod 30 is a bijection
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(N));
  for (Eigen::Index i = 0; i < N; ++i)
    perm[static_cast<std::size_t>(i)] = (i * 7 + 4) % N;
  Eigen::MatrixXd ap(N, 2);
  NetworkMatrix wp(N);
  for (Eigen::Index i = 0; i < N; ++i) {
    ap.row(perm[static_cast<std::size_t>(i)]) = a.row(i);
    for (const auto &l : w.row(i))
      wp.set(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(l.to)], 1.0);
  }
  const auto moved = link_formation_logit(wp, attribute_panel(ap));
  CHECK(std::abs(moved.alpha - base.alpha) <= 1e-10);
  CHECK((moved.delta - base.delta).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("logit stays finite under complete separation", "[homophily]") {
  // links exactly between units with identical attributes: distance 0 <=> link
  std::vector<std::string> labels;
  Eigen::MatrixXd a(12, 1);
  for (int i = 0; i < 12; ++i) {
    labels.push_back(std::to_string(i / 3));
    a(i, 0) = static_cast<double>(i / 3);
  }
  const auto fit = link_formation_logit(category_network(labels), attribute_panel(a));
  CHECK(fit.converged);
  CHECK(std::isfinite(fit.alpha));
  CHECK(std::isfinite(fit.delta(0)));
  CHECK(fit.delta(0) < -1.0);
  CHECK(std::isfinite(fit.se_delta(0)));
}

TEST_CASE("logit with constant attributes flags the distance column", "[homophily]") {
  Eigen::MatrixXd a(8, 2);
  a.col(0).setConstant(3.0);
  a.col(1) << 1, 2, 3, 4, 5, 6, 7, 8;
  const auto fit = link_formation_logit(fixture_links(), attribute_panel(a));
  CHECK(fit.degenerate[0]);
  CHECK_FALSE(fit.degenerate[1]);
  CHECK(fit.delta(0) == 0.0);
  CHECK(std::isinf(fit.se_delta(0)));
  CHECK(std::isfinite(fit.se_delta(1)));
}

TEST_CASE("logit preconditions", "[homophily]") {
  Eigen::MatrixXd a(3, 1);
  a << 1, 2, 3;
  NetworkMatrix w(3);
  w.set(0, 1, 1.0);
  CHECK_THROWS_AS(link_formation_logit(w, attribute_panel(a)), DimensionError);
  Eigen::MatrixXd b(8, 1);
  b << 1, 2, 3, 4, 5, 6, 7, 8;
  CHECK_THROWS_AS(link_formation_logit(NetworkMatrix(8), attribute_panel(b)), DomainError);
}

TEST_CASE("category network over the same labels has h = 1", "[homophily]") {
  std::vector<std::string> labels{"a", "b", "a", "c", "b", "a", "c", "c", "b"};
  const auto rep = category_homophily(category_network(labels), labels, 500, 1);
  CHECK(rep.h == 1.0);
  CHECK(rep.l_same == rep.l_total);
  CHECK(rep.p_value >= 0.0);
  CHECK(rep.p_value <= 1.0);
  CHECK(rep.excess == Catch::Approx(rep.h - rep.h_null));
}

TEST_CASE("category homophily guards and determinism", "[homophily]") {
  const auto w = fixture_links();
  std::vector<std::string> labels{"x", "x", "y", "y", "z", "x", "z", "z"};
  CHECK_THROWS_AS(category_homophily(w, std::vector<std::string>(8, "same"), 200, 1), DegenerateLabelsError);
  CHECK_THROWS_AS(category_homophily(w, labels, 99, 1), ConfigError);
  CHECK_THROWS_AS(category_homophily(NetworkMatrix(8), labels, 200, 1), EstimationError);
  const auto a = category_homophily(w, labels, 1000, 9);
  set_thread_count(3);
  const auto b = category_homophily(w, labels, 1000, 9);
  set_thread_count(0);
  CHECK(a.p_value == b.p_value);
  CHECK(a.h_null == b.h_null);
}

TEST_CASE("permutation p agrees with exhaustive enumeration", "[homophily]") {
  // links all within two equal groups of four
  std::vector<std::string> labels{"a", "b", "a", "b", "a", "b", "a", "b"};
  NetworkMatrix w(8);
  w.set(0, 2, 1.0);
  w.set(2, 4, 1.0);
  w.set(6, 0, 1.0);
  w.set(1, 3, 1.0);
  w.set(5, 7, 1.0);
  w.set(7, 1, 1.0);
  w.set(3, 5, 1.0);
  const auto rep = category_homophily(w, labels, 20000, 4);
  CHECK(rep.h == 1.0);

  std::vector<int> g{0, 1, 0, 1, 0, 1, 0, 1};
  std::vector<int> idx{0, 1, 2, 3, 4, 5, 6, 7};
  long hit = 0, total = 0;
  double mean_share = 0.0;
  do {
    int same = 0, links = 0;
    for (Eigen::Index i = 0; i < 8; ++i)
      for (const auto &l : w.row(i)) {
        ++links;
        same += g[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])] ==
                g[static_cast<std::size_t>(idx[static_cast<std::size_t>(l.to)])];
      }
    hit += same >= links;
    mean_share += static_cast<double>(same) / links;
    ++total;
  } while (std::next_permutation(idx.begin(), idx.end()));
  const double p_exact = static_cast<double>(hit) / static_cast<double>(total);
  const double se = std::sqrt(p_exact * (1.0 - p_exact) / 20000.0);
  INFO("exact p " << p_exact << ", permutation p " << rep.p_value);
  CHECK(std::abs(rep.p_value - p_exact) <= 4.0 * se);
  CHECK(std::abs(rep.h_null - mean_share / static_cast<double>(total)) <= 0.01);
}

TEST_CASE("weighted mode sums link weights", "[homophily]") {
  NetworkMatrix w(4);
  w.set(0, 1, 0.25);
  w.set(0, 2, 0.75);
  w.set(3, 2, 1.0);
  std::vector<std::string> labels{"a", "a", "b", "b"};
  const auto rep = category_homophily(w, labels, 200, 1, true, "firm");
  CHECK(rep.l_total == 2.0);
  CHECK(rep.l_same == 1.25);
  CHECK(rep.weighted);
  CHECK(rep.dimension == "firm");
  const auto count = category_homophily(w, labels, 200, 1);
  CHECK(count.l_total == 3.0);
  CHECK(count.l_same == 2.0);
}

TEST_CASE("homophily exports", "[homophily]") {
  std::vector<std::string> labels{"a", "b", "a", "c", "b", "a", "c", "c", "b"};
  auto rep = category_homophily(category_network(labels), labels, 200, 1, false, "industry");
  std::ostringstream s;
  write_homophily_csv(s, {rep});
  CHECK(s.str().rfind("dimension,l_same,l_total,h,h_null,excess,p_value,permutations,weighted\n", 0) == 0);
  CHECK(s.str().find("industry,") != std::string::npos);
  const auto j = homophily_json({rep});
  CHECK(j.dump().find("industry") != std::string::npos);
}
