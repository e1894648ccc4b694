#ifndef NETSPILL_PIPELINE_HPP
#define NETSPILL_PIPELINE_HPP

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "bolmt.hpp"
#include "csv.hpp"
#include "errors.hpp"
#include "estimation.hpp"
#include "factors.hpp"
#include "homophily.hpp"
#include "impact.hpp"
#include "network.hpp"
#include "normal.hpp"
#include "panel.hpp"
#include "rng.hpp"

namespace netspill {

inline constexpr const char *kVersion = "0.1.0";

// ---------------------------------------------------------------- formatting

/// Two-sided normal p-value of estimate / se; NaN when se is not positive.
inline double two_sided_p(double estimate, double se) {
  if (!(se > 0.0) || !std::isfinite(se))
    return std::numeric_limits<double>::quiet_NaN();
  return 2.0 * normal_sf(std::fabs(estimate / se));
}

/// * p < 0.10, ** p < 0.05, *** p < 0.01.
inline std::string stars(double p) {
  if (std::isnan(p))
    return "";
  if (p < 0.01)
    return "***";
  if (p < 0.05)
    return "**";
  if (p < 0.10)
    return "*";
  return "";
}

inline std::string num(double v) { return std::isfinite(v) ? csv::format_exact(v) : (std::isnan(v) ? "NA" : (v > 0 ? "Inf" : "-Inf")); }

inline std::string variable_name(const std::vector<std::string> &names, Eigen::Index l) {
  return static_cast<std::size_t>(l) < names.size() ? names[static_cast<std::size_t>(l)] : "x" + std::to_string(l + 1);
}

// ---------------------------------------------------------------- table writers

inline void write_unit_estimates_csv(std::ostream &out, const UnitEstimates &units, const PanelDataset &panel) {
  out << "unit_id,psi_identified,psi,se_psi";
  for (Eigen::Index l = 0; l < panel.k(); ++l)
    out << ",beta_" << variable_name(panel.var_names, l) << ",se_" << variable_name(panel.var_names, l);
  out << ",sigma\n";
  for (std::size_t i = 0; i < units.size(); ++i) {
    const auto &u = units[i];
    const Eigen::Index off = u.psi_identified ? 1 : 0;
    out << csv::escape(panel.meta[i].unit_id) << ',' << (u.psi_identified ? 1 : 0) << ','
        << (u.psi_identified ? num(u.theta(0)) : "NA") << ',' << (u.psi_identified ? num(u.se(0)) : "NA");
    for (Eigen::Index l = 0; l < panel.k(); ++l)
      out << ',' << num(u.theta(off + l)) << ',' << num(u.se(off + l));
    out << ',' << num(u.sigma) << '\n';
  }
}

/// Mean-group coefficients: psi first, then one row per covariate.
inline void write_coefficients_csv(std::ostream &out, const MGResult &mg, const std::vector<std::string> &names) {
  out << "parameter,estimate,se,z,p_value,stars,units\n";
  for (Eigen::Index a = 0; a < mg.theta_mg.size(); ++a) {
    const double est = mg.theta_mg(a), se = mg.se(a);
    const double p = two_sided_p(est, se);
    out << (a == 0 ? std::string("psi") : csv::escape(variable_name(names, a - 1))) << ',' << num(est) << ','
        << num(se) << ',' << num(se > 0 ? est / se : std::numeric_limits<double>::quiet_NaN()) << ','
        << num(p) << ',' << stars(p) << ',' << mg.n_units_used(a) << '\n';
  }
}

inline void write_benchmarks_csv(std::ostream &out, const std::vector<std::pair<std::string, TwfeResult>> &fits,
                                 const std::vector<std::string> &names) {
  out << "estimator,variable,estimate,se,p_value,stars,groups,observations\n";
  for (const auto &[label, r] : fits)
    for (Eigen::Index l = 0; l < r.beta.size(); ++l) {
      const double p = two_sided_p(r.beta(l), r.se(l));
      out << label << ',' << csv::escape(variable_name(names, l)) << ',' << num(r.beta(l)) << ','
          << num(r.se(l)) << ',' << num(p) << ',' << stars(p) << ',' << r.groups << ',' << r.observations
          << '\n';
    }
}

inline void write_effects_csv(std::ostream &out, const EffectsTable &tab, const std::vector<std::string> &names) {
  out << "variable,effect,estimate,se,z,p_value,stars,se_method,draws_used,draws_discarded\n";
  const char *kinds[] = {"direct", "indirect", "total"};
  for (int kind = 0; kind < 3; ++kind)
    for (std::size_t l = 0; l < tab.effects.size(); ++l) {
      const auto &e = tab.effects[l];
      const double est = kind == 0 ? e.de : kind == 1 ? e.ie : e.te;
      double se = kind == 0 ? e.se_de : kind == 1 ? e.se_ie : e.se_te;
      if (tab.se_method == "none")
        se = std::numeric_limits<double>::quiet_NaN();
      const double p = two_sided_p(est, se);
      out << csv::escape(variable_name(names, static_cast<Eigen::Index>(l))) << ',' << kinds[kind] << ','
          << num(est) << ',' << num(se) << ','
          << num(se > 0 ? est / se : std::numeric_limits<double>::quiet_NaN()) << ',' << num(p) << ','
          << stars(p) << ',' << tab.se_method << ',' << tab.draws_used << ',' << tab.draws_discarded << '\n';
    }
}

inline void write_spillins_csv(std::ostream &out, const std::vector<std::pair<std::string, std::vector<SpillinRow>>> &dims,
                               const std::vector<std::string> &names) {
  out << "dimension,variable,within,between,all,within_share\n";
  for (const auto &[dim, rows] : dims)
    for (std::size_t l = 0; l < rows.size(); ++l) {
      const auto &r = rows[l];
      out << csv::escape(dim) << ',' << csv::escape(variable_name(names, static_cast<Eigen::Index>(l))) << ','
          << num(r.within) << ',' << num(r.between) << ',' << num(r.all) << ',' << num(r.within_share) << '\n';
    }
}

inline void write_quintile_spillins_csv(std::ostream &out, const std::vector<std::vector<QuintileSpillin>> &q,
                                        const std::vector<std::string> &names, const std::string &size_variable) {
  out << "size_variable,variable,quintile,units,within,between,within_share\n";
  for (std::size_t l = 0; l < q.size(); ++l)
    for (const auto &r : q[l])
      out << csv::escape(size_variable) << ',' << csv::escape(variable_name(names, static_cast<Eigen::Index>(l)))
          << ",Q" << r.quintile << ',' << r.units << ',' << num(r.within) << ',' << num(r.between) << ','
          << num(r.within_share) << '\n';
}

// ---------------------------------------------------------------- network specs

struct NetworkSpec {
  enum class Kind { estimated, file, knn, threshold, gaussian, category } kind = Kind::estimated;
  std::string text = "estimated";
  std::string argument; // path or category dimension
  double value = 0.0;   // k, percentile, or sigma (0 = automatic bandwidth)
};

/// estimated | file:PATH | knn:K | threshold:P | gaussian:auto | gaussian:SIGMA | category:DIM
inline NetworkSpec parse_network_spec(const std::string &text) {
  NetworkSpec s;
  s.text = text;
  const auto colon = text.find(':');
  const std::string head = text.substr(0, colon);
  const std::string arg = colon == std::string::npos ? "" : text.substr(colon + 1);
  auto number = [&](const char *what) {
    const auto v = csv::parse_double(arg);
    if (!v)
      throw ConfigError(std::string("network spec '") + text + "': " + what + " must be a number");
    return *v;
  };
  if (head == "estimated" && arg.empty()) {
    s.kind = NetworkSpec::Kind::estimated;
  } else if (head == "file" && !arg.empty()) {
    s.kind = NetworkSpec::Kind::file;
    s.argument = arg;
  } else if (head == "knn") {
    s.kind = NetworkSpec::Kind::knn;
    s.value = number("k");
    if (!(s.value >= 1.0) || s.value != std::floor(s.value))
      throw ConfigError("network spec '" + text + "': k must be a positive integer");
  } else if (head == "threshold") {
    s.kind = NetworkSpec::Kind::threshold;
    s.value = number("percentile");
    if (!(s.value > 0.0 && s.value <= 1.0))
      throw ConfigError("network spec '" + text + "': percentile must lie in (0, 1]");
  } else if (head == "gaussian") {
    s.kind = NetworkSpec::Kind::gaussian;
    s.value = arg == "auto" || arg.empty() ? 0.0 : number("sigma");
    if (s.value < 0.0)
      throw ConfigError("network spec '" + text + "': sigma must be positive or 'auto'");
  } else if (head == "category") {
    s.kind = NetworkSpec::Kind::category;
    s.argument = arg;
    if (arg != "firm" && arg != "industry" && arg != "state")
      throw ConfigError("network spec '" + text + "': dimension must be firm, industry or state");
  } else {
    throw ConfigError("unknown network spec '" + text +
                      "' (expected estimated, file:PATH, knn:K, threshold:P, gaussian:auto|SIGMA, category:DIM)");
  }
  return s;
}

// ---------------------------------------------------------------- stages

struct FactorChoice {
  std::optional<Eigen::Index> r; // empty: eigenvalue-ratio selection
  Eigen::Index r_max = 4;
};

struct PreparedData {
  PanelDataset panel;
  FactorModel factors;
  std::optional<FactorCountSelection> selection;
  DefactoredPanel data;
};

inline PreparedData prepare(PanelDataset panel, const FactorChoice &choice) {
  panel.validate();
  PreparedData p;
  Eigen::Index r = 0;
  if (choice.r) {
    r = *choice.r;
  } else {
    const auto r_max = std::min(choice.r_max, (panel.t() - 1) / 2);
    if (r_max < 1)
      throw DimensionError("panel too short for factor-count selection");
    p.selection = select_num_factors(panel, r_max);
    r = p.selection->count;
  }
  p.factors = estimate_factors(panel, r);
  p.data = defactor_panel(panel, p.factors);
  p.panel = std::move(panel);
  return p;
}

struct BuiltNetwork {
  NetworkMatrix w;
  std::optional<AdjacencyEstimate> estimate;
};

inline BuiltNetwork build_network(const NetworkSpec &spec, const PreparedData &prep, const BolmtConfig &bolmt) {
  BuiltNetwork b;
  const auto &meta = prep.panel.meta;
  switch (spec.kind) {
  case NetworkSpec::Kind::estimated:
    b.estimate = estimate_network(prep.data, bolmt);
    b.w = b.estimate->w_hat;
    break;
  case NetworkSpec::Kind::file:
    b.w = read_edge_list(spec.argument, prep.panel.n());
    break;
  case NetworkSpec::Kind::knn:
    b.w = knn_network(meta, static_cast<Eigen::Index>(spec.value));
    break;
  case NetworkSpec::Kind::threshold:
    b.w = threshold_distance_network(meta, spec.value);
    break;
  case NetworkSpec::Kind::gaussian:
    b.w = gaussian_network(meta, spec.value);
    break;
  case NetworkSpec::Kind::category:
    b.w = category_network(meta, spec.argument);
    break;
  }
  return b;
}

// ---------------------------------------------------------------- pipeline

struct PipelineConfig {
  std::string panel_path;
  PanelOptions panel_options;
  FactorChoice factors;
  BolmtConfig bolmt;
  std::string network = "estimated";
  std::uint64_t seed = 1;
  Eigen::Index draws = 1000;
  Eigen::Index permutations = 10000;
  std::vector<std::string> dimensions{"firm", "industry", "state"};
  std::string size_variable; // empty: first covariate
  bool heterogeneous_impacts = false;
  bool weighted_homophily = false;
  bool benchmarks = true;
  std::optional<double> winsorize;
  std::string truth_dir; // optional simulator sidecar for recovery diagnostics
  std::string out_dir = "netspill_out";

  /// Checks every numeric setting before any data is read.
  void validate() const {
    if (panel_path.empty())
      throw ConfigError("a panel file is required");
    if (factors.r && *factors.r < 1)
      throw ConfigError("factor count r must be at least 1");
    if (factors.r_max < 1)
      throw ConfigError("r_max must be at least 1");
    bolmt.validate();
    parse_network_spec(network);
    if (draws < 100)
      throw ConfigError("draws must be at least 100");
    if (permutations < 100)
      throw ConfigError("permutations must be at least 100");
    for (const auto &d : dimensions)
      if (d != "firm" && d != "industry" && d != "state")
        throw ConfigError("unknown grouping dimension '" + d + "'");
    if (winsorize && !(*winsorize >= 0.0 && *winsorize < 0.5))
      throw ConfigError("winsorize quantile must lie in [0, 0.5)");
  }

  nlohmann::json to_json() const {
    return {{"panel", panel_path},
            {"difference", panel_options.difference},
            {"covariates", panel_options.covariates},
            {"factors", factors.r ? nlohmann::json(*factors.r) : nlohmann::json("auto")},
            {"r_max", factors.r_max},
            {"bolmt", {{"p", bolmt.p}, {"c", bolmt.c}, {"delta", bolmt.delta}, {"max_links", bolmt.max_links}}},
            {"network", network},
            {"seed", seed},
            {"draws", draws},
            {"permutations", permutations},
            {"dimensions", dimensions},
            {"size_variable", size_variable},
            {"impact_mode", heterogeneous_impacts ? "heterogeneous" : "homogeneous"},
            {"weighted_homophily", weighted_homophily},
            {"benchmarks", benchmarks},
            {"winsorize", winsorize ? nlohmann::json(*winsorize) : nlohmann::json(nullptr)},
            {"truth", truth_dir}};
  }
};

/// Collects output files so a failed run can move them aside.
class OutputDir {
public:
  explicit OutputDir(std::filesystem::path root) : root_(std::move(root)) {
    std::filesystem::create_directories(root_);
    std::filesystem::remove_all(root_ / "quarantine");
  }

  const std::filesystem::path &root() const { return root_; }
  const std::vector<std::string> &files() const { return files_; }

  template <typename Fn> void write(const std::string &name, Fn &&fn) {
    std::ofstream out(root_ / name, std::ios::binary);
    if (!out)
      throw Error("cannot write " + (root_ / name).string());
    fn(out);
    out.flush();
    if (!out)
      throw Error("write failed for " + (root_ / name).string());
    files_.push_back(name);
  }

  /// Moves everything written so far into quarantine/ with an error note.
  void quarantine(const std::string &message) {
    const auto q = root_ / "quarantine";
    std::filesystem::create_directories(q);
    for (const auto &f : files_) {
      std::error_code ec;
      std::filesystem::rename(root_ / f, q / f, ec);
    }
    std::ofstream(q / "error.txt") << message << '\n';
  }

private:
  std::filesystem::path root_;
  std::vector<std::string> files_;
};

inline std::uint64_t stage_seed(std::uint64_t seed, const std::string &label) {
  return substream_seed(seed, label, 0);
}

/// Impact tables for a fitted model, shared by the impacts/spillins commands and the pipeline.
struct ImpactResults {
  ImpactMatrices matrices;
  EffectsTable effects;
};

inline ImpactResults compute_impacts(const UnitEstimates &units, const MGResult &mg, const NetworkMatrix &w,
                                     Eigen::Index draws, std::uint64_t seed, bool heterogeneous) {
  ImpactResults r;
  if (heterogeneous) {
    r.matrices = heterogeneous_impacts(units, w);
    r.effects = effects(r.matrices);
    r.effects.se_method = "none";
  } else {
    r.matrices = population_impacts(mg, w);
    r.effects = effects_se(units, mg, w, draws, stage_seed(seed, "effects"));
  }
  return r;
}

inline std::vector<std::pair<std::string, std::vector<SpillinRow>>>
compute_spillins(const ImpactMatrices &im, const PanelDataset &panel, const std::vector<std::string> &dims) {
  std::vector<std::pair<std::string, std::vector<SpillinRow>>> out;
  for (const auto &d : dims)
    out.emplace_back(d, spillins(im, panel.labels(d)));
  return out;
}

inline Eigen::Index size_index(const PanelDataset &panel, const std::string &name) {
  return name.empty() ? 0 : panel.covariate_index(name);
}

struct HomophilyResults {
  std::vector<HomophilyReport> categories;
  nlohmann::json skipped = nlohmann::json::array();
  std::optional<LinkFormationFit> logit;
  std::optional<RankSumResult> rank_sum;
  std::string size_variable;
};

inline HomophilyResults compute_homophily(const NetworkMatrix &w, const PanelDataset &panel,
                                          const std::vector<std::string> &dims, Eigen::Index permutations,
                                          std::uint64_t seed, bool weighted, const std::string &size_variable) {
  HomophilyResults h;
  for (const auto &d : dims) {
    try {
      h.categories.push_back(
          category_homophily(w, panel.labels(d), permutations, stage_seed(seed, "homophily:" + d), weighted, d));
    } catch (const DegenerateLabelsError &e) {
      h.skipped.push_back({{"dimension", d}, {"reason", e.what()}});
    }
  }
  if (w.link_count() > 0 && w.link_count() < w.n() * (w.n() - 1)) {
    h.logit = link_formation_logit(w, panel);
    const auto s = size_index(panel, size_variable);
    h.size_variable = variable_name(panel.var_names, s);
    h.rank_sum = rank_sum_test(w, panel.time_average(s));
  } else {
    h.skipped.push_back({{"dimension", "link_formation"}, {"reason", "network has no links or is complete"}});
  }
  return h;
}

inline nlohmann::json homophily_report_json(const HomophilyResults &h, const PanelDataset &panel) {
  nlohmann::json j{{"categories", homophily_json(h.categories)}, {"skipped", h.skipped}};
  if (h.logit)
    j["link_formation"] = link_formation_json(*h.logit, panel.var_names);
  if (h.rank_sum) {
    j["rank_sum"] = rank_sum_json(*h.rank_sum);
    j["rank_sum"]["attribute"] = h.size_variable;
  }
  return j;
}

/// Support comparison of a network against the simulator's truth sidecar.
inline nlohmann::json truth_recovery_json(const NetworkMatrix &w, const std::filesystem::path &truth_dir) {
  const auto truth = read_edge_list((truth_dir / "truth_edges.csv").string(), w.n());
  Eigen::Index tp = 0, fp = 0;
  for (Eigen::Index i = 0; i < w.n(); ++i)
    for (const auto &l : w.row(i))
      (truth.get(i, l.to) != 0.0 ? tp : fp)++;
  const auto total = truth.link_count();
  nlohmann::json j{{"true_links", total},
                   {"true_positives", tp},
                   {"false_positives", fp},
                   {"true_positive_rate", total > 0 ? nlohmann::json(static_cast<double>(tp) / total) : nlohmann::json(nullptr)},
                   {"false_positives_per_unit", static_cast<double>(fp) / static_cast<double>(w.n())},
                   {"exact_support", w.same_support(truth)}};
  std::ifstream pj(truth_dir / "truth_params.json");
  if (pj) {
    nlohmann::json params;
    pj >> params;
    j["psi_mean"] = params.value("psi_mean", 0.0);
    j["beta_means"] = params.value("beta_means", std::vector<double>{});
  }
  return j;
}

inline nlohmann::json build_manifest(const std::string &command, const nlohmann::json &config,
                                     const std::vector<std::string> &outputs) {
  return {{"tool", "netspill"},
          {"version", kVersion},
          {"command", command},
          {"config", config},
          {"libraries",
           {{"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                          std::to_string(EIGEN_MINOR_VERSION)},
            {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                  std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                  std::to_string(NLOHMANN_JSON_VERSION_PATCH)}}},
          {"outputs", outputs}};
}

/// load -> factors -> network -> unit IV -> MGIV -> impacts -> spillins -> homophily.
/// Any error moves the partial outputs to OUT/quarantine and is rethrown.
inline nlohmann::json run_pipeline(const PipelineConfig &cfg) {
  cfg.validate();
  OutputDir out(cfg.out_dir);
  try {
    auto prep = prepare(load_panel(cfg.panel_path, cfg.panel_options), cfg.factors);
    const auto &panel = prep.panel;
    const auto &names = panel.var_names;
    // fail on a bad size variable before the expensive stages
    const auto size_idx = size_index(panel, cfg.size_variable);

    out.write("factors.csv", [&](std::ostream &o) { write_factors(o, prep.factors, panel.periods); });
    const auto net = build_network(parse_network_spec(cfg.network), prep, cfg.bolmt);
    out.write("network_edges.csv", [&](std::ostream &o) { write_edge_list(o, net.w); });
    out.write("network.dot", [&](std::ostream &o) {
      std::vector<std::string> ids;
      for (const auto &m : panel.meta)
        ids.push_back(m.unit_id);
      write_dot(o, net.w, ids);
    });
    if (net.estimate)
      out.write("selection_trace.json",
                [&](std::ostream &o) { o << selection_trace_json(*net.estimate, cfg.bolmt).dump(1) << '\n'; });

    const auto units = estimate_units(net.w, prep.data);
    out.write("unit_estimates.csv", [&](std::ostream &o) { write_unit_estimates_csv(o, units, panel); });
    MGOptions mgo;
    mgo.winsorize = cfg.winsorize;
    const auto mg = mgiv(units, mgo);
    out.write("coefficients.csv", [&](std::ostream &o) { write_coefficients_csv(o, mg, names); });
    if (cfg.benchmarks) {
      std::vector<std::pair<std::string, TwfeResult>> fits;
      fits.emplace_back("twfe_firm", twfe(panel, FixedEffects::firm));
      fits.emplace_back("twfe_facility", twfe(panel, FixedEffects::facility));
      out.write("benchmarks.csv", [&](std::ostream &o) { write_benchmarks_csv(o, fits, names); });
    }

    const auto imp = compute_impacts(units, mg, net.w, cfg.draws, cfg.seed, cfg.heterogeneous_impacts);
    out.write("effects.csv", [&](std::ostream &o) { write_effects_csv(o, imp.effects, names); });
    const auto spill = compute_spillins(imp.matrices, panel, cfg.dimensions);
    out.write("spillins.csv", [&](std::ostream &o) { write_spillins_csv(o, spill, names); });
    const auto quint = quintile_spillins(imp.matrices, panel.time_average(size_idx));
    out.write("quintile_spillins.csv", [&](std::ostream &o) {
      write_quintile_spillins_csv(o, quint, names, variable_name(names, size_idx));
    });

    const auto hom = compute_homophily(net.w, panel, cfg.dimensions, cfg.permutations, cfg.seed,
                                       cfg.weighted_homophily, cfg.size_variable);
    out.write("homophily.csv", [&](std::ostream &o) { write_homophily_csv(o, hom.categories); });
    out.write("homophily.json", [&](std::ostream &o) { o << homophily_report_json(hom, panel).dump(2) << '\n'; });

    auto outputs = out.files();
    outputs.push_back("manifest.json");
    auto manifest = build_manifest("pipeline", cfg.to_json(), outputs);
    manifest["panel"] = {{"units", panel.n()}, {"periods", panel.t()}, {"covariates", names}};
    manifest["factors"] = {{"r", prep.factors.r}, {"selected_automatically", prep.selection.has_value()}};
    if (prep.selection)
      manifest["factors"]["low_signal"] = prep.selection->low_signal;
    const auto stats = network_stats(net.w);
    manifest["network"] = {{"spec", cfg.network},
                           {"provenance", to_string(net.w.provenance())},
                           {"links", stats.links},
                           {"density", stats.density},
                           {"mean_out_degree", stats.mean_out_degree}};
    if (!cfg.truth_dir.empty())
      manifest["truth_recovery"] = truth_recovery_json(net.w, cfg.truth_dir);
    out.write("manifest.json", [&](std::ostream &o) { o << manifest.dump(2) << '\n'; });
    return manifest;
  } catch (const std::exception &e) {
    out.quarantine(e.what());
    throw;
  }
}

// ---------------------------------------------------------------- report

namespace detail {

inline std::vector<std::vector<std::string>> read_csv_file(const std::filesystem::path &p) {
  std::ifstream in(p);
  if (!in)
    throw ConfigError("cannot open " + p.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty())
      rows.push_back(csv::split_line(line));
  return rows;
}

inline std::string cell3(const std::string &s) {
  const auto v = csv::parse_double(s);
  return v ? csv::format_fixed(*v, 3) : s;
}

inline std::string pct1(const std::string &s) {
  const auto v = csv::parse_double(s);
  return v && std::isfinite(*v) ? csv::format_fixed(100.0 * *v, 1) + "%" : "NA";
}

} // namespace detail

/// Renders the CSV outputs of a run directory as plain-text tables.
inline std::string render_report(const std::filesystem::path &dir) {
  std::ostringstream os;
  bool any = false;
  if (std::filesystem::exists(dir / "coefficients.csv")) {
    any = true;
    const auto rows = detail::read_csv_file(dir / "coefficients.csv");
    os << "Mean-group IV estimates\n";
    os << std::left << std::setw(24) << "parameter" << std::right << std::setw(14) << "estimate" << std::setw(12)
       << "se" << '\n';
    for (std::size_t r = 1; r < rows.size(); ++r)
      os << std::left << std::setw(24) << rows[r][0] << std::right << std::setw(11) << detail::cell3(rows[r][1])
         << std::left << std::setw(3) << rows[r][5] << std::right << std::setw(12)
         << ("(" + detail::cell3(rows[r][2]) + ")") << '\n';
    os << "* p<0.10, ** p<0.05, *** p<0.01\n\n";
  }
  if (std::filesystem::exists(dir / "effects.csv")) {
    any = true;
    const auto rows = detail::read_csv_file(dir / "effects.csv");
    os << "Impact decomposition";
    if (rows.size() > 1)
      os << " (standard errors: " << rows[1][7] << ")";
    os << '\n';
    std::string current;
    for (std::size_t r = 1; r < rows.size(); ++r) {
      if (rows[r][1] != current) {
        current = rows[r][1];
        os << "  " << current << " effects\n";
      }
      os << "    " << std::left << std::setw(20) << rows[r][0] << std::right << std::setw(11)
         << detail::cell3(rows[r][2]) << std::left << std::setw(3) << rows[r][6] << std::right << std::setw(12)
         << ("(" + detail::cell3(rows[r][3]) + ")") << '\n';
    }
    os << '\n';
  }
  if (std::filesystem::exists(dir / "spillins.csv")) {
    any = true;
    const auto rows = detail::read_csv_file(dir / "spillins.csv");
    os << "Spillins by shared group (within share in percent)\n";
    for (std::size_t r = 1; r < rows.size(); ++r)
      os << "  " << std::left << std::setw(10) << rows[r][0] << std::setw(20) << rows[r][1] << std::right
         << " within " << std::setw(9) << detail::cell3(rows[r][2]) << "  between " << std::setw(9)
         << detail::cell3(rows[r][3]) << "  all " << std::setw(9) << detail::cell3(rows[r][4]) << "  ("
         << detail::pct1(rows[r][5]) << ")\n";
    os << '\n';
  }
  if (std::filesystem::exists(dir / "quintile_spillins.csv")) {
    any = true;
    const auto rows = detail::read_csv_file(dir / "quintile_spillins.csv");
    os << "Spillins by size quintile\n";
    for (std::size_t r = 1; r < rows.size(); ++r)
      os << "  " << std::left << std::setw(20) << rows[r][1] << std::setw(4) << rows[r][2] << std::right
         << " within " << std::setw(9) << detail::cell3(rows[r][4]) << "  between " << std::setw(9)
         << detail::cell3(rows[r][5]) << "  (" << detail::pct1(rows[r][6]) << ")\n";
    os << '\n';
  }
  if (std::filesystem::exists(dir / "homophily.csv")) {
    any = true;
    const auto rows = detail::read_csv_file(dir / "homophily.csv");
    os << "Category homophily\n";
    os << "  " << std::left << std::setw(12) << "dimension" << std::right << std::setw(10) << "links"
       << std::setw(10) << "h" << std::setw(10) << "null" << std::setw(10) << "p" << '\n';
    for (std::size_t r = 1; r < rows.size(); ++r)
      os << "  " << std::left << std::setw(12) << rows[r][0] << std::right << std::setw(10)
         << detail::cell3(rows[r][1]) << std::setw(10) << detail::pct1(rows[r][3]) << std::setw(10)
         << detail::pct1(rows[r][4]) << std::setw(10) << detail::cell3(rows[r][6]) << '\n';
    os << '\n';
  }
  if (!any)
    throw ConfigError("no result tables found in " + dir.string());
  return os.str();
}

} // namespace netspill

#endif // NETSPILL_PIPELINE_HPP
