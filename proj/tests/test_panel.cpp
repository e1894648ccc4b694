#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>

#include "netspill/panel.hpp"
#include "netspill/simulator.hpp"

using namespace netspill;

namespace {

const char *kHeader = "unit_id,period,firm_id,industry,state,lat,lon,y,x1\n";

std::string levels_csv() {
  std::ostringstream s;
  s << kHeader;
  // two units, levels 1,2,4 and 10,10,10
  s << "a,2001,f1,i1,NY,40,-74,1,0.5\n"
    << "a,2002,f1,i1,NY,40,-74,2,0.6\n"
    << "a,2003,f1,i1,NY,40,-74,4,0.7\n"
    << "b,2001,f2,i1,CA,34,-118,10,1.5\n"
    << "b,2002,f2,i1,CA,34,-118,10,1.6\n"
    << "b,2003,f2,i1,CA,34,-118,10,1.7\n";
  return s.str();
}

} // namespace

TEST_CASE("first difference of levels", "[panel]") {
  std::istringstream in(levels_csv());
  PanelOptions opt;
  opt.difference = true;
  const auto p = load_panel(in, opt);
  REQUIRE(p.n() == 2);
  REQUIRE(p.t() == 2);
  CHECK(p.y(0, 0) == 1.0);
  CHECK(p.y(0, 1) == 2.0);
  // a constant series differences to zero
  CHECK(p.y(1, 0) == 0.0);
  CHECK(p.y(1, 1) == 0.0);
  CHECK(p.periods == std::vector<std::string>{"2002", "2003"});
  CHECK(p.x[0](0, 0) == 0.6);
}

TEST_CASE("levels kept without differencing", "[panel]") {
  std::istringstream in(levels_csv());
  const auto p = load_panel(in);
  CHECK(p.t() == 3);
  CHECK(p.y(0, 2) == 4.0);
  CHECK(p.meta[1].state == "CA");
  CHECK(p.meta[1].latitude == 34.0);
}

TEST_CASE("rows may arrive in any order", "[panel]") {
  std::istringstream in(std::string(kHeader) + "b,3,f,i,s,1,1,6,0\n"
                                               "a,10,f,i,s,2,2,3,1\n"
                                               "a,3,f,i,s,2,2,1,2\n"
                                               "b,10,f,i,s,1,1,5,3\n"
                                               "a,4,f,i,s,2,2,2,4\n"
                                               "b,4,f,i,s,1,1,7,5\n");
  const auto p = load_panel(in);
  // numeric period labels sort numerically: 3 < 4 < 10
  CHECK(p.periods == std::vector<std::string>{"3", "4", "10"});
  CHECK(p.meta[0].unit_id == "b");
  CHECK(p.y(1, 0) == 1.0);
  CHECK(p.y(1, 2) == 3.0);
}

TEST_CASE("missing cell names unit and period", "[panel]") {
  std::ostringstream s;
  s << kHeader;
  for (int u = 1; u <= 8; ++u)
    for (int yr = 2010; yr <= 2012; ++yr) {
      if (u == 7 && yr == 2011)
        continue;
      s << u << ',' << yr << ",f,i,s,0,0," << u + yr << ",1\n";
    }
  std::istringstream in(s.str());
  try {
    (void)load_panel(in);
    FAIL("expected BalanceError");
  } catch (const BalanceError &e) {
    CHECK(e.unit() == "7");
    CHECK(e.period() == "2011");
  }
}

TEST_CASE("empty value counts as a missing cell", "[panel]") {
  std::istringstream in(std::string(kHeader) + "a,1,f,i,s,0,0,1,\n"
                                               "a,2,f,i,s,0,0,1,1\n"
                                               "a,3,f,i,s,0,0,1,1\n"
                                               "b,1,f,i,s,0,0,1,1\n"
                                               "b,2,f,i,s,0,0,1,1\n"
                                               "b,3,f,i,s,0,0,1,1\n");
  CHECK_THROWS_AS(load_panel(in), BalanceError);
}

TEST_CASE("duplicate unit-period rejected", "[panel]") {
  std::istringstream in(std::string(kHeader) + "a,1,f,i,s,0,0,1,1\n"
                                               "a,1,f,i,s,0,0,2,1\n");
  CHECK_THROWS_AS(load_panel(in), DuplicateError);
}

TEST_CASE("non-numeric field reports row number", "[panel]") {
  std::istringstream in(std::string(kHeader) + "a,1,f,i,s,0,0,1,1\n"
                                               "a,2,f,i,s,0,0,oops,1\n");
  try {
    (void)load_panel(in);
    FAIL("expected ParseError");
  } catch (const ParseError &e) {
    CHECK(std::string(e.what()).find("3") != std::string::npos);
  }
}

TEST_CASE("wrong header is a parse error", "[panel]") {
  std::istringstream in("unit,period,y\n");
  CHECK_THROWS_AS(load_panel(in), ParseError);
}

TEST_CASE("too small panels load but are not estimable", "[panel]") {
  // K=1 needs N >= 3 and T >= 3
  std::istringstream in(levels_csv());
  PanelOptions opt;
  opt.difference = true;
  const auto p = load_panel(in, opt);
  CHECK_NOTHROW(p.validate_structure());
  CHECK_THROWS_AS(p.validate(), DimensionError);
}

TEST_CASE("covariate selection follows options order", "[panel]") {
  const std::string csv = "unit_id,period,firm_id,industry,state,lat,lon,y,x1,x2\n"
                          "a,1,f,i,s,0,0,1,10,20\n"
                          "a,2,f,i,s,0,0,1,11,21\n";
  PanelOptions opt;
  opt.covariates = {"x2", "x1"};
  std::istringstream in(csv);
  const auto p = load_panel(in, opt);
  CHECK(p.var_names == std::vector<std::string>{"x2", "x1"});
  CHECK(p.x[0](0, 1) == 21.0);
  CHECK(p.x[1](0, 1) == 11.0);
  opt.covariates = {"nope"};
  std::istringstream again(csv);
  CHECK_THROWS_AS(load_panel(again, opt), ConfigError);
}

TEST_CASE("inconsistent metadata within a unit", "[panel]") {
  std::istringstream in(std::string(kHeader) + "a,1,f,i,s,0,0,1,1\n"
                                               "a,2,g,i,s,0,0,1,1\n");
  CHECK_THROWS_AS(load_panel(in), ParseError);
}

TEST_CASE("out of range latitude", "[panel]") {
  std::istringstream in(std::string(kHeader) + "a,1,f,i,s,91,0,1,1\n");
  CHECK_THROWS_AS(load_panel(in), DomainError);
}

TEST_CASE("simulator export round-trips bit for bit", "[panel]") {
  DGPConfig cfg;
  cfg.n = 12;
  cfg.t = 15;
  cfg.k = 2;
  cfg.beta_means = {1.0, -0.5};
  cfg.k_links = 1;
  cfg.seed = 99;
  const auto ds = generate(cfg);
  std::stringstream buf;
  write_panel(buf, ds.panel);
  const auto back = load_panel(buf);
  CHECK(back.y == ds.panel.y);
  REQUIRE(back.k() == 2);
  CHECK(back.x[0] == ds.panel.x[0]);
  CHECK(back.x[1] == ds.panel.x[1]);
  CHECK(back.var_names == ds.panel.var_names);
  CHECK(back.periods == ds.panel.periods);
  for (std::size_t i = 0; i < back.meta.size(); ++i) {
    CHECK(back.meta[i].unit_id == ds.panel.meta[i].unit_id);
    CHECK(back.meta[i].industry == ds.panel.meta[i].industry);
    CHECK(back.meta[i].latitude == ds.panel.meta[i].latitude);
    CHECK(back.meta[i].longitude == ds.panel.meta[i].longitude);
  }
  // and a second export is byte identical
  std::stringstream again;
  write_panel(again, back);
  CHECK(again.str() == buf.str());
}

TEST_CASE("summary of a constant variable", "[panel]") {
  const Eigen::MatrixXd c = Eigen::MatrixXd::Constant(4, 6, 2.5);
  const auto s = summarize_values("c", c);
  CHECK(s.mean == 2.5);
  CHECK(s.median == 2.5);
  CHECK(s.sd == 0.0);
}

TEST_CASE("summary matches a streaming oracle", "[panel]") {
  DGPConfig cfg;
  cfg.n = 20;
  cfg.t = 50;
  cfg.k_links = 1;
  cfg.seed = 3;
  const auto ds = generate(cfg);
  const auto stats = summarize(ds.panel);
  REQUIRE(stats.size() == 2);

  // Welford recursion over all 1000 cells
  double mean = 0.0, m2 = 0.0;
  long n = 0;
  std::vector<double> vals;
  for (Eigen::Index i = 0; i < ds.panel.n(); ++i)
    for (Eigen::Index t = 0; t < ds.panel.t(); ++t) {
      const double v = ds.panel.y(i, t);
      ++n;
      const double d = v - mean;
      mean += d / static_cast<double>(n);
      m2 += d * (v - mean);
      vals.push_back(v);
    }
  std::sort(vals.begin(), vals.end());
  const double median = 0.5 * (vals[499] + vals[500]);
  CHECK(stats[0].count == 1000);
  CHECK(std::abs(stats[0].mean - mean) <= 1e-12 * std::max(1.0, std::abs(mean)));
  CHECK(std::abs(stats[0].sd - std::sqrt(m2 / 999.0)) <= 1e-12 * std::max(1.0, stats[0].sd));
  CHECK(stats[0].median == median);
}

TEST_CASE("json options file", "[panel]") {
  const auto path = std::filesystem::temp_directory_path() / "netspill_panel_opts.json";
  {
    std::ofstream o(path);
    o << R"({"covariates": ["x1"], "difference": true})";
  }
  const auto opt = load_panel_options(path.string());
  CHECK(opt.difference);
  CHECK(opt.covariates == std::vector<std::string>{"x1"});
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_panel_options("/nonexistent/x.json"), ConfigError);
}
