// netspill command-line front end.
//
// Exit codes: 0 success, 1 runtime/estimation failure, 2 invalid configuration or input.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <netspill/pipeline.hpp>
#include <netspill/simulator.hpp>

namespace fs = std::filesystem;
using namespace netspill;

namespace {

std::string default_out_dir() {
  if (const char *env = std::getenv("NETSPILL_OUTPUT_DIR"); env && *env)
    return env;
  return "netspill_out";
}

struct DataOptions {
  std::string panel;
  std::string panel_config;
  bool difference = false;
  std::vector<std::string> covariates;
  std::string factors = "auto";
  Eigen::Index r_max = 4;
  BolmtConfig bolmt;
  std::string network = "estimated";
  std::uint64_t seed = 1;
  Eigen::Index draws = 1000;
  Eigen::Index permutations = 10000;
  std::vector<std::string> dimensions{"firm", "industry", "state"};
  std::string size_variable;
  std::string impact_mode = "homogeneous";
  bool weighted = false;
  bool no_benchmarks = false;
  double winsorize = -1.0;
  std::string truth;
  std::string out;

  PipelineConfig to_config() const {
    PipelineConfig c;
    c.panel_path = panel;
    if (!panel_config.empty())
      c.panel_options = load_panel_options(panel_config);
    if (difference)
      c.panel_options.difference = true;
    if (!covariates.empty())
      c.panel_options.covariates = covariates;
    if (factors != "auto") {
      const auto v = csv::parse_double(factors);
      if (!v || *v != std::floor(*v))
        throw ConfigError("--factors must be a positive integer or 'auto'");
      c.factors.r = static_cast<Eigen::Index>(*v);
    }
    c.factors.r_max = r_max;
    c.bolmt = bolmt;
    c.network = network;
    c.seed = seed;
    c.draws = draws;
    c.permutations = permutations;
    c.dimensions = dimensions;
    c.size_variable = size_variable;
    if (impact_mode != "homogeneous" && impact_mode != "heterogeneous")
      throw ConfigError("--impact-mode must be homogeneous or heterogeneous");
    c.heterogeneous_impacts = impact_mode == "heterogeneous";
    c.weighted_homophily = weighted;
    c.benchmarks = !no_benchmarks;
    if (winsorize >= 0.0)
      c.winsorize = winsorize;
    c.truth_dir = truth;
    c.out_dir = out.empty() ? default_out_dir() : out;
    c.validate();
    return c;
  }
};

void add_panel_options(CLI::App *cmd, DataOptions &o) {
  cmd->add_option("--panel", o.panel, "panel CSV (unit_id,period,firm_id,industry,state,lat,lon,y,x...)")->required();
  cmd->add_option("--panel-config", o.panel_config, "JSON with covariates/difference settings");
  cmd->add_flag("--difference", o.difference, "first-difference the outcome on load");
  cmd->add_option("--covariates", o.covariates, "covariate columns to use, in order")->delimiter(',');
  cmd->add_option("--factors", o.factors, "number of factors or 'auto'")->capture_default_str();
  cmd->add_option("--r-max", o.r_max, "largest factor count considered by 'auto'")->capture_default_str();
  cmd->add_option("--out", o.out, "output directory (default $NETSPILL_OUTPUT_DIR or ./netspill_out)");
}

void add_selection_options(CLI::App *cmd, DataOptions &o) {
  cmd->add_option("--p", o.bolmt.p, "nominal size of each selection test")->capture_default_str();
  cmd->add_option("--c", o.bolmt.c, "critical value scale")->capture_default_str();
  cmd->add_option("--delta", o.bolmt.delta, "critical value exponent")->capture_default_str();
  cmd->add_option("--max-links", o.bolmt.max_links, "cap on links per unit (-1: none)")->capture_default_str();
}

void add_network_option(CLI::App *cmd, DataOptions &o) {
  add_selection_options(cmd, o);
  cmd->add_option("--network", o.network,
                  "estimated | file:PATH | knn:K | threshold:P | gaussian:auto|SIGMA | category:DIM")
      ->capture_default_str();
}

void add_seed(CLI::App *cmd, std::uint64_t &seed) {
  cmd->add_option("--seed", seed, "root seed for all random draws")->capture_default_str();
}

/// Runs fn with an OutputDir; on failure the partial outputs are quarantined.
template <typename Fn> void with_outputs(const std::string &dir, Fn &&fn) {
  OutputDir out(dir);
  try {
    fn(out);
  } catch (const std::exception &e) {
    out.quarantine(e.what());
    throw;
  }
}

void write_manifest(OutputDir &out, const std::string &command, const nlohmann::json &config,
                    nlohmann::json extra = nlohmann::json::object()) {
  auto files = out.files();
  files.push_back("manifest.json");
  auto m = build_manifest(command, config, files);
  for (auto it = extra.begin(); it != extra.end(); ++it)
    m[it.key()] = it.value();
  out.write("manifest.json", [&](std::ostream &o) { o << m.dump(2) << '\n'; });
}

struct FitState {
  PreparedData prep;
  BuiltNetwork net;
  UnitEstimates units;
  MGResult mg;
};

FitState fit_model(const PipelineConfig &cfg) {
  FitState s;
  s.prep = prepare(load_panel(cfg.panel_path, cfg.panel_options), cfg.factors);
  s.net = build_network(parse_network_spec(cfg.network), s.prep, cfg.bolmt);
  s.units = estimate_units(s.net.w, s.prep.data);
  MGOptions mgo;
  mgo.winsorize = cfg.winsorize;
  s.mg = mgiv(s.units, mgo);
  return s;
}

void write_network_files(OutputDir &out, const PreparedData &prep, const BuiltNetwork &net, const BolmtConfig &bolmt) {
  out.write("network_edges.csv", [&](std::ostream &o) { write_edge_list(o, net.w); });
  out.write("network.dot", [&](std::ostream &o) {
    std::vector<std::string> ids;
    for (const auto &m : prep.panel.meta)
      ids.push_back(m.unit_id);
    write_dot(o, net.w, ids);
  });
  if (net.estimate)
    out.write("selection_trace.json",
              [&](std::ostream &o) { o << selection_trace_json(*net.estimate, bolmt).dump(1) << '\n'; });
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"netspill: network spillover estimation for heterogeneous panels"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "worker threads (0: all cores)")->capture_default_str();

  // simulate
  DGPConfig dgp;
  std::string sim_out;
  auto *sim = app.add_subcommand("simulate", "generate a synthetic panel with a known network");
  sim->add_option("--n", dgp.n, "units")->capture_default_str();
  sim->add_option("--t", dgp.t, "periods")->capture_default_str();
  sim->add_option("--k", dgp.k, "covariates")->capture_default_str();
  sim->add_option("--r-y", dgp.r_y, "factors in the outcome error")->capture_default_str();
  sim->add_option("--r-x", dgp.r_x, "factors in the covariates")->capture_default_str();
  sim->add_option("--k-links", dgp.k_links, "links per unit (lower bound)")->capture_default_str();
  sim->add_option("--k-links-max", dgp.k_links_max, "links per unit upper bound (-1: same as --k-links)");
  sim->add_option("--psi-lo", dgp.psi_lo, "lower end of the psi range")->capture_default_str();
  sim->add_option("--psi-hi", dgp.psi_hi, "upper end of the psi range")->capture_default_str();
  sim->add_option("--psi-negative-share", dgp.psi_negative_share, "share of units with negative psi");
  std::vector<double> beta_means;
  sim->add_option("--beta-means", beta_means, "mean slope per covariate")->delimiter(',');
  sim->add_option("--beta-sd", dgp.beta_sd, "slope heterogeneity")->capture_default_str();
  sim->add_option("--loading-sd", dgp.loading_sd, "factor loading scale")->capture_default_str();
  sim->add_option("--noise-sd", dgp.noise_sd, "outcome noise scale")->capture_default_str();
  sim->add_option("--x-noise-sd", dgp.x_noise_sd, "covariate innovation scale")->capture_default_str();
  sim->add_option("--x-ar", dgp.x_ar, "AR(1) coefficient of covariate innovations")->capture_default_str();
  sim->add_option("--proxy-fraction", dgp.proxy_fraction, "share of units with a planted proxy link");
  sim->add_option("--proxy-corr", dgp.proxy_corr, "correlation of planted proxies");
  sim->add_flag("--heterogeneous-weights", dgp.heterogeneous_weights, "unequal true link weights");
  add_seed(sim, dgp.seed);
  sim->add_option("--out", sim_out, "output directory");

  DataOptions sel_o, fit_o, imp_o, spl_o, hom_o, pipe_o;
  auto *sel = app.add_subcommand("select-network", "estimate the network by one-link-at-a-time selection");
  add_panel_options(sel, sel_o);
  add_selection_options(sel, sel_o);

  auto *fit = app.add_subcommand("fit", "unit-level spatial IV and mean-group estimates");
  add_panel_options(fit, fit_o);
  add_network_option(fit, fit_o);
  fit->add_flag("--no-benchmarks", fit_o.no_benchmarks, "skip the two-way fixed-effects benchmarks");
  fit->add_option("--winsorize", fit_o.winsorize, "winsorize unit estimates at [q, 1-q] before averaging");

  auto *imp = app.add_subcommand("impacts", "direct, indirect and total effects");
  add_panel_options(imp, imp_o);
  add_network_option(imp, imp_o);
  add_seed(imp, imp_o.seed);
  imp->add_option("--draws", imp_o.draws, "parameter draws for standard errors")->capture_default_str();
  imp->add_option("--impact-mode", imp_o.impact_mode, "homogeneous or heterogeneous")->capture_default_str();

  auto *spl = app.add_subcommand("spillins", "indirect effects split by shared group and by size quintile");
  add_panel_options(spl, spl_o);
  add_network_option(spl, spl_o);
  spl->add_option("--dimensions", spl_o.dimensions, "grouping dimensions")->delimiter(',');
  spl->add_option("--size-variable", spl_o.size_variable, "covariate whose time average defines quintiles");
  spl->add_option("--impact-mode", spl_o.impact_mode, "homogeneous or heterogeneous")->capture_default_str();

  auto *hom = app.add_subcommand("homophily", "category permutation tests, link-formation logit, rank-sum test");
  add_panel_options(hom, hom_o);
  add_network_option(hom, hom_o);
  add_seed(hom, hom_o.seed);
  hom->add_option("--permutations", hom_o.permutations, "label permutations")->capture_default_str();
  hom->add_option("--dimensions", hom_o.dimensions, "category dimensions")->delimiter(',');
  hom->add_option("--size-variable", hom_o.size_variable, "attribute for the rank-sum test");
  hom->add_flag("--weighted", hom_o.weighted, "sum link weights instead of counting links");

  auto *pipe = app.add_subcommand("pipeline", "run every stage and write all tables plus a manifest");
  add_panel_options(pipe, pipe_o);
  add_network_option(pipe, pipe_o);
  add_seed(pipe, pipe_o.seed);
  pipe->add_option("--draws", pipe_o.draws, "parameter draws for standard errors")->capture_default_str();
  pipe->add_option("--permutations", pipe_o.permutations, "label permutations")->capture_default_str();
  pipe->add_option("--dimensions", pipe_o.dimensions, "grouping dimensions")->delimiter(',');
  pipe->add_option("--size-variable", pipe_o.size_variable, "covariate defining size quintiles");
  pipe->add_option("--impact-mode", pipe_o.impact_mode, "homogeneous or heterogeneous")->capture_default_str();
  pipe->add_flag("--weighted", pipe_o.weighted, "weighted homophily counts");
  pipe->add_flag("--no-benchmarks", pipe_o.no_benchmarks, "skip the two-way fixed-effects benchmarks");
  pipe->add_option("--winsorize", pipe_o.winsorize, "winsorize unit estimates at [q, 1-q] before averaging");
  pipe->add_option("--truth", pipe_o.truth, "simulator output directory for recovery diagnostics");

  std::string report_dir;
  auto *rep = app.add_subcommand("report", "render the tables of a run directory as text");
  rep->add_option("--dir", report_dir, "run directory (default $NETSPILL_OUTPUT_DIR or ./netspill_out)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (threads < 0)
      throw ConfigError("--threads must be non-negative");
    set_thread_count(threads);

    if (*sim) {
      if (!beta_means.empty())
        dgp.beta_means = beta_means;
      else
        dgp.beta_means.assign(static_cast<std::size_t>(std::max<Eigen::Index>(dgp.k, 0)), 1.0);
      dgp.validate();
      const std::string dir = sim_out.empty() ? default_out_dir() : sim_out;
      with_outputs(dir, [&](OutputDir &out) {
        const auto ds = generate(dgp);
        out.write("panel.csv", [&](std::ostream &o) { write_panel(o, ds.panel); });
        out.write("truth_edges.csv", [&](std::ostream &o) { write_edge_list(o, ds.true_w); });
        out.write("truth_params.json", [&](std::ostream &o) { o << truth_params_json(ds).dump(2) << '\n'; });
        write_manifest(out, "simulate", to_json(dgp));
      });
    } else if (*sel) {
      const auto cfg = sel_o.to_config();
      with_outputs(cfg.out_dir, [&](OutputDir &out) {
        const auto prep = prepare(load_panel(cfg.panel_path, cfg.panel_options), cfg.factors);
        out.write("factors.csv", [&](std::ostream &o) { write_factors(o, prep.factors, prep.panel.periods); });
        const auto net = build_network(parse_network_spec("estimated"), prep, cfg.bolmt);
        write_network_files(out, prep, net, cfg.bolmt);
        const auto st = network_stats(net.w);
        write_manifest(out, "select-network", cfg.to_json(),
                       {{"factors", {{"r", prep.factors.r}}}, {"network", {{"links", st.links}, {"density", st.density}}}});
      });
    } else if (*fit) {
      const auto cfg = fit_o.to_config();
      with_outputs(cfg.out_dir, [&](OutputDir &out) {
        const auto s = fit_model(cfg);
        write_network_files(out, s.prep, s.net, cfg.bolmt);
        out.write("unit_estimates.csv", [&](std::ostream &o) { write_unit_estimates_csv(o, s.units, s.prep.panel); });
        out.write("coefficients.csv", [&](std::ostream &o) { write_coefficients_csv(o, s.mg, s.prep.panel.var_names); });
        if (cfg.benchmarks) {
          std::vector<std::pair<std::string, TwfeResult>> fits;
          fits.emplace_back("twfe_firm", twfe(s.prep.panel, FixedEffects::firm));
          fits.emplace_back("twfe_facility", twfe(s.prep.panel, FixedEffects::facility));
          out.write("benchmarks.csv", [&](std::ostream &o) { write_benchmarks_csv(o, fits, s.prep.panel.var_names); });
        }
        write_manifest(out, "fit", cfg.to_json());
      });
    } else if (*imp) {
      const auto cfg = imp_o.to_config();
      with_outputs(cfg.out_dir, [&](OutputDir &out) {
        const auto s = fit_model(cfg);
        out.write("coefficients.csv", [&](std::ostream &o) { write_coefficients_csv(o, s.mg, s.prep.panel.var_names); });
        const auto r = compute_impacts(s.units, s.mg, s.net.w, cfg.draws, cfg.seed, cfg.heterogeneous_impacts);
        out.write("effects.csv", [&](std::ostream &o) { write_effects_csv(o, r.effects, s.prep.panel.var_names); });
        write_manifest(out, "impacts", cfg.to_json());
      });
    } else if (*spl) {
      const auto cfg = spl_o.to_config();
      with_outputs(cfg.out_dir, [&](OutputDir &out) {
        const auto s = fit_model(cfg);
        const auto &panel = s.prep.panel;
        const auto size_idx = size_index(panel, cfg.size_variable);
        const auto im = cfg.heterogeneous_impacts ? heterogeneous_impacts(s.units, s.net.w)
                                                  : population_impacts(s.mg, s.net.w);
        const auto rows = compute_spillins(im, panel, cfg.dimensions);
        out.write("spillins.csv", [&](std::ostream &o) { write_spillins_csv(o, rows, panel.var_names); });
        const auto q = quintile_spillins(im, panel.time_average(size_idx));
        out.write("quintile_spillins.csv", [&](std::ostream &o) {
          write_quintile_spillins_csv(o, q, panel.var_names, variable_name(panel.var_names, size_idx));
        });
        write_manifest(out, "spillins", cfg.to_json());
      });
    } else if (*hom) {
      const auto cfg = hom_o.to_config();
      with_outputs(cfg.out_dir, [&](OutputDir &out) {
        const auto prep = prepare(load_panel(cfg.panel_path, cfg.panel_options), cfg.factors);
        const auto net = build_network(parse_network_spec(cfg.network), prep, cfg.bolmt);
        const auto h = compute_homophily(net.w, prep.panel, cfg.dimensions, cfg.permutations, cfg.seed,
                                         cfg.weighted_homophily, cfg.size_variable);
        out.write("homophily.csv", [&](std::ostream &o) { write_homophily_csv(o, h.categories); });
        out.write("homophily.json",
                  [&](std::ostream &o) { o << homophily_report_json(h, prep.panel).dump(2) << '\n'; });
        write_manifest(out, "homophily", cfg.to_json());
      });
    } else if (*pipe) {
      run_pipeline(pipe_o.to_config());
    } else if (*rep) {
      const fs::path dir = report_dir.empty() ? default_out_dir() : report_dir;
      const auto text = render_report(dir);
      std::cout << text;
      std::ofstream(dir / "report.txt", std::ios::binary) << text;
    }
  } catch (const InputError &e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const nlohmann::json::exception &e) {
    std::cerr << "error: invalid JSON input: " << e.what() << '\n';
    return 2;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
