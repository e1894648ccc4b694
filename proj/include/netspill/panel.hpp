#ifndef NETSPILL_PANEL_HPP
#define NETSPILL_PANEL_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "csv.hpp"
#include "errors.hpp"

namespace netspill {

struct FacilityMeta {
  std::string unit_id;
  std::string firm_id;
  std::string industry;
  std::string state;
  double latitude = std::numeric_limits<double>::quiet_NaN();
  double longitude = std::numeric_limits<double>::quiet_NaN();

  bool has_coordinates() const { return !std::isnan(latitude) && !std::isnan(longitude); }
};

/// Balanced panel of N units over T periods with K covariates.
///
/// `y` is N x T; `x[l]` is the N x T array of covariate l. Covariates are
/// stored exactly as supplied: if the model calls for lagged regressors, the
/// file must already contain the lagged values.
struct PanelDataset {
  Eigen::MatrixXd y;
  std::vector<Eigen::MatrixXd> x;
  std::vector<FacilityMeta> meta;
  std::vector<std::string> var_names;
  std::vector<std::string> periods;

  Eigen::Index n() const { return y.rows(); }
  Eigen::Index t() const { return y.cols(); }
  Eigen::Index k() const { return static_cast<Eigen::Index>(x.size()); }

  /// T x K design block of unit i.
  Eigen::MatrixXd unit_covariates(Eigen::Index i) const {
    Eigen::MatrixXd out(t(), k());
    for (Eigen::Index l = 0; l < k(); ++l)
      out.col(l) = x[static_cast<std::size_t>(l)].row(i).transpose();
    return out;
  }

  /// Per-unit time average of covariate l (length N).
  Eigen::VectorXd time_average(Eigen::Index l) const {
    return x[static_cast<std::size_t>(l)].rowwise().mean();
  }

  Eigen::Index covariate_index(const std::string &name) const {
    const auto it = std::find(var_names.begin(), var_names.end(), name);
    if (it == var_names.end())
      throw ConfigError("unknown covariate '" + name + "'");
    return static_cast<Eigen::Index>(it - var_names.begin());
  }

  std::vector<std::string> labels(const std::string &dimension) const;

  /// Checks shapes, metadata ranges and unit-id uniqueness.
  void validate_structure() const;
  /// validate_structure() plus N, T >= K + 2, so every unit regression is estimable.
  void validate() const;
};

inline std::vector<std::string> PanelDataset::labels(const std::string &dimension) const {
  std::vector<std::string> out;
  out.reserve(meta.size());
  for (const auto &m : meta) {
    if (dimension == "firm")
      out.push_back(m.firm_id);
    else if (dimension == "industry")
      out.push_back(m.industry);
    else if (dimension == "state")
      out.push_back(m.state);
    else
      throw ConfigError("unknown grouping dimension '" + dimension +
                        "' (expected firm, industry or state)");
  }
  return out;
}

inline void PanelDataset::validate_structure() const {
  const auto N = n(), T = t(), K = k();
  if (static_cast<Eigen::Index>(meta.size()) != N)
    throw DimensionError("metadata length does not match the number of units");
  if (static_cast<Eigen::Index>(var_names.size()) != K)
    throw DimensionError("covariate names do not match the number of covariates");
  if (static_cast<Eigen::Index>(periods.size()) != T)
    throw DimensionError("period labels do not match the number of periods");
  for (const auto &xl : x)
    if (xl.rows() != N || xl.cols() != T)
      throw DimensionError("covariate array is not N x T");
  std::unordered_map<std::string, int> seen;
  for (const auto &m : meta) {
    if (++seen[m.unit_id] > 1)
      throw DuplicateError("duplicate unit_id '" + m.unit_id + "'");
    if (!std::isnan(m.latitude) && (m.latitude < -90.0 || m.latitude > 90.0))
      throw DomainError("latitude out of range for unit '" + m.unit_id + "'");
    if (!std::isnan(m.longitude) && (m.longitude < -180.0 || m.longitude > 180.0))
      throw DomainError("longitude out of range for unit '" + m.unit_id + "'");
  }
}

inline void PanelDataset::validate() const {
  validate_structure();
  const auto N = n(), T = t(), K = k();
  if (N < K + 2 || T < K + 2)
    throw DimensionError("panel too small: need N >= K+2 and T >= K+2 (N=" +
                         std::to_string(N) + ", T=" + std::to_string(T) +
                         ", K=" + std::to_string(K) + ")");
}

struct PanelOptions {
  /// Outcome column holds levels; first-difference it on load.
  bool difference = false;
  /// Covariate columns to keep, in order. Empty keeps every column after y.
  std::vector<std::string> covariates;
};

/// Reads {"covariates": [...], "difference": bool} from a JSON config file.
inline PanelOptions load_panel_options(const std::string &path) {
  std::ifstream in(path);
  if (!in)
    throw ConfigError("cannot open panel config '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception &e) {
    throw ConfigError("invalid panel config '" + path + "': " + e.what());
  }
  PanelOptions opt;
  if (j.contains("difference"))
    opt.difference = j.at("difference").get<bool>();
  if (j.contains("covariates"))
    opt.covariates = j.at("covariates").get<std::vector<std::string>>();
  return opt;
}

namespace detail {

inline bool all_numeric(const std::vector<std::string> &v) {
  return std::all_of(v.begin(), v.end(),
                     [](const std::string &s) { return csv::parse_double(s).has_value(); });
}

} // namespace detail

/// Loads a panel from CSV with header
/// `unit_id,period,firm_id,industry,state,lat,lon,y,x1,...,xK`.
///
/// Units keep their order of first appearance; periods are sorted numerically
/// when every label parses as a number, lexicographically otherwise. With
/// `difference` set, y becomes level[t] - level[t-1] and the first period is
/// dropped from y, x, and the period labels.
inline PanelDataset load_panel(std::istream &in, const PanelOptions &options = {}) {
  std::string line;
  if (!std::getline(in, line))
    throw ParseError("empty panel file");
  auto header = csv::split_line(line);
  for (auto &h : header)
    h = csv::trim(h);
  static const char *fixed[] = {"unit_id", "period", "firm_id", "industry",
                                "state", "lat", "lon", "y"};
  if (header.size() < 9)
    throw ParseError("row 1: header needs unit_id,period,firm_id,industry,state,lat,lon,y and at least one covariate");
  for (std::size_t c = 0; c < 8; ++c)
    if (header[c] != fixed[c])
      throw ParseError("row 1: expected column '" + std::string(fixed[c]) + "' at position " +
                       std::to_string(c + 1) + ", found '" + header[c] + "'");

  std::vector<std::size_t> cov_cols;
  std::vector<std::string> names;
  if (options.covariates.empty()) {
    for (std::size_t c = 8; c < header.size(); ++c) {
      cov_cols.push_back(c);
      names.push_back(header[c]);
    }
  } else {
    for (const auto &want : options.covariates) {
      const auto it = std::find(header.begin() + 8, header.end(), want);
      if (it == header.end())
        throw ConfigError("covariate '" + want + "' not found in panel header");
      cov_cols.push_back(static_cast<std::size_t>(it - header.begin()));
      names.push_back(want);
    }
  }
  const std::size_t K = cov_cols.size();

  struct Cell {
    std::optional<double> y;
    std::vector<std::optional<double>> x;
  };
  std::vector<FacilityMeta> meta;
  std::unordered_map<std::string, std::size_t> unit_index;
  std::vector<std::string> period_labels;
  std::unordered_map<std::string, std::size_t> period_index;
  std::vector<std::map<std::size_t, Cell>> cells; // unit -> period -> values

  auto parse_value = [](const std::string &field, std::size_t row,
                        const std::string &col) -> std::optional<double> {
    if (csv::trim(field).empty())
      return std::nullopt;
    auto v = csv::parse_double(field);
    if (!v)
      throw ParseError("row " + std::to_string(row) + ": non-numeric value '" + field +
                       "' in column '" + col + "'");
    return v;
  };

  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (csv::trim(line).empty())
      continue;
    auto f = csv::split_line(line);
    if (f.size() != header.size())
      throw ParseError("row " + std::to_string(row) + ": expected " +
                       std::to_string(header.size()) + " fields, found " +
                       std::to_string(f.size()));
    const std::string unit = csv::trim(f[0]);
    const std::string period = csv::trim(f[1]);
    if (unit.empty() || period.empty())
      throw ParseError("row " + std::to_string(row) + ": empty unit_id or period");

    FacilityMeta m;
    m.unit_id = unit;
    m.firm_id = csv::trim(f[2]);
    m.industry = csv::trim(f[3]);
    m.state = csv::trim(f[4]);
    if (auto lat = parse_value(f[5], row, "lat"))
      m.latitude = *lat;
    if (auto lon = parse_value(f[6], row, "lon"))
      m.longitude = *lon;

    auto [uit, new_unit] = unit_index.try_emplace(unit, meta.size());
    if (new_unit) {
      meta.push_back(m);
      cells.emplace_back();
    } else {
      const auto &prev = meta[uit->second];
      auto same = [](double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; };
      if (prev.firm_id != m.firm_id || prev.industry != m.industry || prev.state != m.state ||
          !same(prev.latitude, m.latitude) || !same(prev.longitude, m.longitude))
        throw ParseError("row " + std::to_string(row) + ": metadata for unit '" + unit +
                         "' differs from its first row");
    }
    auto [pit, new_period] = period_index.try_emplace(period, period_labels.size());
    if (new_period)
      period_labels.push_back(period);

    auto &unit_cells = cells[uit->second];
    if (unit_cells.count(pit->second))
      throw DuplicateError("row " + std::to_string(row) + ": duplicate (unit, period) = (" +
                           unit + ", " + period + ")");
    Cell c;
    c.y = parse_value(f[7], row, "y");
    c.x.reserve(K);
    for (std::size_t l = 0; l < K; ++l)
      c.x.push_back(parse_value(f[cov_cols[l]], row, names[l]));
    unit_cells.emplace(pit->second, std::move(c));
  }
  if (meta.empty())
    throw ParseError("panel file has no data rows");

  // period order
  std::vector<std::size_t> order(period_labels.size());
  for (std::size_t p = 0; p < order.size(); ++p)
    order[p] = p;
  if (detail::all_numeric(period_labels)) {
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return *csv::parse_double(period_labels[a]) < *csv::parse_double(period_labels[b]);
    });
  } else {
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return period_labels[a] < period_labels[b];
    });
  }

  const auto N = static_cast<Eigen::Index>(meta.size());
  const auto Tin = static_cast<Eigen::Index>(order.size());
  Eigen::MatrixXd y(N, Tin);
  std::vector<Eigen::MatrixXd> x(K, Eigen::MatrixXd(N, Tin));
  for (Eigen::Index i = 0; i < N; ++i) {
    const auto &unit_cells = cells[static_cast<std::size_t>(i)];
    for (Eigen::Index t = 0; t < Tin; ++t) {
      const auto p = order[static_cast<std::size_t>(t)];
      const auto it = unit_cells.find(p);
      const auto &uid = meta[static_cast<std::size_t>(i)].unit_id;
      if (it == unit_cells.end() || !it->second.y)
        throw BalanceError(uid, period_labels[p]);
      y(i, t) = *it->second.y;
      for (std::size_t l = 0; l < K; ++l) {
        if (!it->second.x[l])
          throw BalanceError(uid, period_labels[p]);
        x[l](i, t) = *it->second.x[l];
      }
    }
  }

  PanelDataset panel;
  panel.meta = std::move(meta);
  panel.var_names = std::move(names);
  for (auto p : order)
    panel.periods.push_back(period_labels[p]);

  if (options.difference) {
    if (Tin < 2)
      throw DimensionError("differencing needs at least two periods");
    panel.y = y.rightCols(Tin - 1) - y.leftCols(Tin - 1);
    panel.x.reserve(K);
    for (auto &xl : x)
      panel.x.push_back(xl.rightCols(Tin - 1));
    panel.periods.erase(panel.periods.begin());
  } else {
    panel.y = std::move(y);
    panel.x = std::move(x);
  }
  panel.validate_structure();
  return panel;
}

inline PanelDataset load_panel(const std::string &path, const PanelOptions &options = {}) {
  std::ifstream in(path);
  if (!in)
    throw ParseError("cannot open panel file '" + path + "'");
  return load_panel(in, options);
}

/// Writes the panel in the ingestion schema; values use 17 significant digits
/// so that reading the file back reproduces every double exactly.
inline void write_panel(std::ostream &out, const PanelDataset &panel) {
  out << "unit_id,period,firm_id,industry,state,lat,lon,y";
  for (const auto &v : panel.var_names)
    out << ',' << csv::escape(v);
  out << '\n';
  auto coord = [](double v) { return std::isnan(v) ? std::string() : csv::format_exact(v); };
  for (Eigen::Index i = 0; i < panel.n(); ++i) {
    const auto &m = panel.meta[static_cast<std::size_t>(i)];
    for (Eigen::Index t = 0; t < panel.t(); ++t) {
      out << csv::escape(m.unit_id) << ',' << csv::escape(panel.periods[static_cast<std::size_t>(t)])
          << ',' << csv::escape(m.firm_id) << ',' << csv::escape(m.industry) << ','
          << csv::escape(m.state) << ',' << coord(m.latitude) << ',' << coord(m.longitude) << ','
          << csv::format_exact(panel.y(i, t));
      for (const auto &xl : panel.x)
        out << ',' << csv::format_exact(xl(i, t));
      out << '\n';
    }
  }
}

inline void write_panel(const std::string &path, const PanelDataset &panel) {
  std::ofstream out(path);
  if (!out)
    throw ConfigError("cannot write panel file '" + path + "'");
  write_panel(out, panel);
}

struct VariableSummary {
  std::string name;
  double mean = 0.0;
  double median = 0.0;
  double sd = 0.0; // sample standard deviation (n - 1)
  Eigen::Index count = 0;
};

inline VariableSummary summarize_values(std::string name, const Eigen::Ref<const Eigen::MatrixXd> &v) {
  VariableSummary s;
  s.name = std::move(name);
  s.count = v.size();
  if (s.count == 0)
    return s;
  std::vector<double> vals(v.data(), v.data() + v.size());
  s.mean = v.mean();
  double ss = 0.0;
  for (double a : vals)
    ss += (a - s.mean) * (a - s.mean);
  s.sd = s.count > 1 ? std::sqrt(ss / static_cast<double>(s.count - 1)) : 0.0;
  const auto mid = vals.size() / 2;
  std::nth_element(vals.begin(), vals.begin() + static_cast<std::ptrdiff_t>(mid), vals.end());
  if (vals.size() % 2 == 1) {
    s.median = vals[mid];
  } else {
    const double hi = vals[mid];
    const double lo = *std::max_element(vals.begin(), vals.begin() + static_cast<std::ptrdiff_t>(mid));
    s.median = 0.5 * (lo + hi);
  }
  return s;
}

/// Mean, median and standard deviation of y and every covariate over all cells.
inline std::vector<VariableSummary> summarize(const PanelDataset &panel) {
  std::vector<VariableSummary> out;
  out.push_back(summarize_values("y", panel.y));
  for (std::size_t l = 0; l < panel.x.size(); ++l)
    out.push_back(summarize_values(panel.var_names[l], panel.x[l]));
  return out;
}

} // namespace netspill

#endif // NETSPILL_PANEL_HPP
