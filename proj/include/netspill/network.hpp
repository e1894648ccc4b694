#ifndef NETSPILL_NETWORK_HPP
#define NETSPILL_NETWORK_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "csv.hpp"
#include "errors.hpp"
#include "panel.hpp"

namespace netspill {

enum class Provenance { estimated, threshold_distance, knn, gaussian, category, simulated, imported };

inline const char *to_string(Provenance p) {
  switch (p) {
  case Provenance::estimated: return "estimated";
  case Provenance::threshold_distance: return "threshold_distance";
  case Provenance::knn: return "knn";
  case Provenance::gaussian: return "gaussian";
  case Provenance::category: return "category";
  case Provenance::simulated: return "simulated";
  case Provenance::imported: return "imported";
  }
  return "unknown";
}

struct Link {
  Eigen::Index to = 0;
  double weight = 0.0;
};

/// Sparse N x N weight matrix. Rows hold nonzero off-diagonal entries sorted
/// by column.
class NetworkMatrix {
public:
  NetworkMatrix() = default;
  explicit NetworkMatrix(Eigen::Index n, Provenance p = Provenance::imported)
      : rows_(static_cast<std::size_t>(n)), provenance_(p) {}

  Eigen::Index n() const { return static_cast<Eigen::Index>(rows_.size()); }
  Provenance provenance() const { return provenance_; }
  void set_provenance(Provenance p) { provenance_ = p; }
  bool normalized() const { return normalized_; }

  const std::vector<Link> &row(Eigen::Index i) const { return rows_[static_cast<std::size_t>(i)]; }

  /// Adds or overwrites entry (i, j). Zero weights erase the entry.
  void set(Eigen::Index i, Eigen::Index j, double w) {
    check_index(i);
    check_index(j);
    if (i == j)
      throw DomainError("network entries must be off-diagonal (i == j == " + std::to_string(i) + ")");
    auto &r = rows_[static_cast<std::size_t>(i)];
    auto it = std::lower_bound(r.begin(), r.end(), j,
                               [](const Link &l, Eigen::Index c) { return l.to < c; });
    if (it != r.end() && it->to == j) {
      if (w == 0.0)
        r.erase(it);
      else
        it->weight = w;
    } else if (w != 0.0) {
      r.insert(it, Link{j, w});
    }
    normalized_ = false;
  }

  double get(Eigen::Index i, Eigen::Index j) const {
    const auto &r = rows_[static_cast<std::size_t>(i)];
    auto it = std::lower_bound(r.begin(), r.end(), j,
                               [](const Link &l, Eigen::Index c) { return l.to < c; });
    return (it != r.end() && it->to == j) ? it->weight : 0.0;
  }

  Eigen::Index out_degree(Eigen::Index i) const { return static_cast<Eigen::Index>(row(i).size()); }

  Eigen::Index link_count() const {
    Eigen::Index c = 0;
    for (const auto &r : rows_)
      c += static_cast<Eigen::Index>(r.size());
    return c;
  }

  double row_sum(Eigen::Index i) const {
    double s = 0.0;
    for (const auto &l : row(i))
      s += l.weight;
    return s;
  }

  Eigen::MatrixXd to_dense() const {
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n(), n());
    for (Eigen::Index i = 0; i < n(); ++i)
      for (const auto &l : row(i))
        d(i, l.to) = l.weight;
    return d;
  }

  /// W * v for a length-N vector, or W * V for an N x m block.
  Eigen::MatrixXd multiply(const Eigen::Ref<const Eigen::MatrixXd> &v) const {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n(), v.cols());
    for (Eigen::Index i = 0; i < n(); ++i)
      for (const auto &l : row(i))
        out.row(i) += l.weight * v.row(l.to);
    return out;
  }

  bool same_support(const NetworkMatrix &other) const {
    if (other.n() != n())
      return false;
    for (Eigen::Index i = 0; i < n(); ++i) {
      const auto &a = row(i), &b = other.row(i);
      if (a.size() != b.size())
        return false;
      for (std::size_t k = 0; k < a.size(); ++k)
        if (a[k].to != b[k].to)
          return false;
    }
    return true;
  }

  /// Replace row i wholesale (entries need not be sorted; zeros dropped).
  void set_row(Eigen::Index i, std::vector<Link> links) {
    check_index(i);
    std::erase_if(links, [](const Link &l) { return l.weight == 0.0; });
    std::sort(links.begin(), links.end(), [](const Link &a, const Link &b) { return a.to < b.to; });
    for (std::size_t k = 0; k < links.size(); ++k) {
      check_index(links[k].to);
      if (links[k].to == i)
        throw DomainError("network entries must be off-diagonal");
      if (k > 0 && links[k].to == links[k - 1].to)
        throw DuplicateError("duplicate link (" + std::to_string(i) + ", " +
                             std::to_string(links[k].to) + ")");
    }
    rows_[static_cast<std::size_t>(i)] = std::move(links);
    normalized_ = false;
  }

  void mark_normalized(bool v) { normalized_ = v; }

private:
  void check_index(Eigen::Index i) const {
    if (i < 0 || i >= n())
      throw DimensionError("network index " + std::to_string(i) + " out of range [0, " +
                           std::to_string(n()) + ")");
  }

  std::vector<std::vector<Link>> rows_;
  Provenance provenance_ = Provenance::imported;
  bool normalized_ = false;
};

/// Mean Earth radius in miles.
inline constexpr double kEarthRadiusMiles = 3958.7613;

struct GeoPoint {
  double lat = 0.0; // degrees
  double lon = 0.0; // degrees
};

/// Great-circle distance in miles (haversine formula, spherical Earth).
inline double haversine(GeoPoint a, GeoPoint b) {
  auto check = [](GeoPoint p) {
    if (!(p.lat >= -90.0 && p.lat <= 90.0) || !(p.lon >= -180.0 && p.lon <= 180.0))
      throw DomainError("coordinate out of range: (" + std::to_string(p.lat) + ", " +
                        std::to_string(p.lon) + ")");
  };
  check(a);
  check(b);
  constexpr double deg = std::numbers::pi / 180.0;
  const double dlat = (b.lat - a.lat) * deg;
  const double dlon = (b.lon - a.lon) * deg;
  const double s1 = std::sin(0.5 * dlat);
  const double s2 = std::sin(0.5 * dlon);
  double h = s1 * s1 + std::cos(a.lat * deg) * std::cos(b.lat * deg) * s2 * s2;
  h = std::clamp(h, 0.0, 1.0);
  return 2.0 * kEarthRadiusMiles * std::asin(std::sqrt(h));
}

/// Full symmetric matrix of pairwise haversine distances.
inline Eigen::MatrixXd distance_matrix(const std::vector<FacilityMeta> &meta) {
  const auto n = static_cast<Eigen::Index>(meta.size());
  for (const auto &m : meta)
    if (!m.has_coordinates())
      throw MetadataError("unit '" + m.unit_id + "' has no coordinates");
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const auto &a = meta[static_cast<std::size_t>(i)];
      const auto &b = meta[static_cast<std::size_t>(j)];
      d(i, j) = d(j, i) = haversine({a.latitude, a.longitude}, {b.latitude, b.longitude});
    }
  return d;
}

/// Divides each nonzero row by its sum. All-zero rows are left alone.
/// Throws NormalizationError when a nonempty row sums to exactly zero.
inline NetworkMatrix row_normalize(const NetworkMatrix &w) {
  NetworkMatrix out = w;
  for (Eigen::Index i = 0; i < w.n(); ++i) {
    const auto &r = w.row(i);
    if (r.empty())
      continue;
    const double s = w.row_sum(i);
    if (s == 0.0)
      throw NormalizationError("row " + std::to_string(i) +
                               " has nonzero entries that sum to zero");
    std::vector<Link> scaled = r;
    for (auto &l : scaled)
      l.weight /= s;
    out.set_row(i, std::move(scaled));
  }
  out.mark_normalized(true);
  return out;
}

namespace detail {

/// Linear-interpolation sample quantile (the "type 7" definition).
inline double quantile_type7(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline std::vector<double> upper_triangle(const Eigen::MatrixXd &d) {
  std::vector<double> v;
  v.reserve(static_cast<std::size_t>(d.rows() * (d.rows() - 1) / 2));
  for (Eigen::Index i = 0; i < d.rows(); ++i)
    for (Eigen::Index j = i + 1; j < d.cols(); ++j)
      v.push_back(d(i, j));
  return v;
}

inline void require_units(const std::vector<FacilityMeta> &meta, std::size_t min) {
  if (meta.size() < min)
    throw DimensionError("network builder needs at least " + std::to_string(min) + " units");
}

} // namespace detail

/// Inverse-distance links for pairs no farther apart than the given empirical
/// percentile of all pairwise distances, row-normalized.
inline NetworkMatrix threshold_distance_network(const std::vector<FacilityMeta> &meta, double percentile) {
  if (!(percentile > 0.0 && percentile <= 1.0))
    throw DomainError("percentile must lie in (0, 1]");
  detail::require_units(meta, 2);
  const Eigen::MatrixXd d = distance_matrix(meta);
  const double cutoff = detail::quantile_type7(detail::upper_triangle(d), percentile);
  const auto n = d.rows();
  NetworkMatrix w(n, Provenance::threshold_distance);
  for (Eigen::Index i = 0; i < n; ++i) {
    std::vector<Link> row;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i || d(i, j) > cutoff)
        continue;
      if (d(i, j) == 0.0)
        throw DegenerateDistanceError("units " + std::to_string(std::min(i, j)) + " and " +
                                      std::to_string(std::max(i, j)) +
                                      " are co-located; 1/d weight undefined");
      row.push_back({j, 1.0 / d(i, j)});
    }
    w.set_row(i, std::move(row));
  }
  auto out = row_normalize(w);
  out.set_provenance(Provenance::threshold_distance);
  return out;
}

/// Each unit links to its k nearest units (ties broken by lower index), weight 1/k.
inline NetworkMatrix knn_network(const std::vector<FacilityMeta> &meta, Eigen::Index k) {
  const auto n = static_cast<Eigen::Index>(meta.size());
  if (k < 1 || k >= n)
    throw DomainError("knn requires 1 <= k < N (k=" + std::to_string(k) + ", N=" +
                      std::to_string(n) + ")");
  const Eigen::MatrixXd d = distance_matrix(meta);
  NetworkMatrix w(n, Provenance::knn);
  std::vector<Eigen::Index> idx;
  for (Eigen::Index i = 0; i < n; ++i) {
    idx.clear();
    for (Eigen::Index j = 0; j < n; ++j)
      if (j != i)
        idx.push_back(j);
    std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](Eigen::Index a, Eigen::Index b) {
      return d(i, a) < d(i, b) || (d(i, a) == d(i, b) && a < b);
    });
    std::vector<Link> row;
    for (Eigen::Index s = 0; s < k; ++s)
      row.push_back({idx[static_cast<std::size_t>(s)], 1.0 / static_cast<double>(k)});
    w.set_row(i, std::move(row));
  }
  w.mark_normalized(true);
  return w;
}

/// Sample sd of pairwise distances divided by 3.
inline double auto_gaussian_bandwidth(const std::vector<FacilityMeta> &meta) {
  detail::require_units(meta, 3);
  const auto v = detail::upper_triangle(distance_matrix(meta));
  double mean = 0.0;
  for (double a : v)
    mean += a;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double a : v)
    ss += (a - mean) * (a - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1)) / 3.0;
}

/// Gaussian-kernel weights exp(-d^2 / (2 sigma^2)); entries below 1e-12 are
/// not stored. sigma <= 0 requests the automatic bandwidth.
inline NetworkMatrix gaussian_network(const std::vector<FacilityMeta> &meta, double sigma) {
  detail::require_units(meta, 2);
  if (sigma <= 0.0)
    sigma = auto_gaussian_bandwidth(meta);
  if (!(sigma > 0.0) || !std::isfinite(sigma))
    throw DomainError("gaussian bandwidth must be positive and finite");
  const Eigen::MatrixXd d = distance_matrix(meta);
  const auto n = d.rows();
  NetworkMatrix w(n, Provenance::gaussian);
  for (Eigen::Index i = 0; i < n; ++i) {
    std::vector<Link> row;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i)
        continue;
      const double k = std::exp(-d(i, j) * d(i, j) / (2.0 * sigma * sigma));
      if (k >= 1e-12)
        row.push_back({j, k});
    }
    w.set_row(i, std::move(row));
  }
  auto out = row_normalize(w);
  out.set_provenance(Provenance::gaussian);
  return out;
}

/// Links every pair sharing a label; singletons get empty rows.
inline NetworkMatrix category_network(const std::vector<std::string> &labels) {
  const auto n = static_cast<Eigen::Index>(labels.size());
  std::map<std::string, std::vector<Eigen::Index>> groups;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto &g = labels[static_cast<std::size_t>(i)];
    if (g.empty())
      throw MetadataError("unit " + std::to_string(i) + " has no category label");
    groups[g].push_back(i);
  }
  NetworkMatrix w(n, Provenance::category);
  for (const auto &[label, members] : groups) {
    if (members.size() < 2)
      continue;
    const double wt = 1.0 / static_cast<double>(members.size() - 1);
    for (auto i : members) {
      std::vector<Link> row;
      for (auto j : members)
        if (j != i)
          row.push_back({j, wt});
      w.set_row(i, std::move(row));
    }
  }
  w.mark_normalized(true);
  return w;
}

inline NetworkMatrix category_network(const std::vector<FacilityMeta> &meta, const std::string &dimension) {
  PanelDataset tmp;
  tmp.meta = meta;
  return category_network(tmp.labels(dimension));
}

struct NetworkStats {
  double density = 0.0;
  double mean_out_degree = 0.0;
  Eigen::Index max_out_degree = 0;
  Eigen::Index links = 0;
  /// histogram[d] = number of units with out-degree d
  std::vector<Eigen::Index> degree_histogram;
};

/// Density and out-degree summary. Only entries with |w| > min_weight count as
/// links (0 counts every stored entry; reported Gaussian densities use 0.01).
inline NetworkStats network_stats(const NetworkMatrix &w, double min_weight = 0.0) {
  NetworkStats s;
  const auto n = w.n();
  std::vector<Eigen::Index> deg(static_cast<std::size_t>(n), 0);
  for (Eigen::Index i = 0; i < n; ++i)
    for (const auto &l : w.row(i))
      if (std::fabs(l.weight) > min_weight)
        ++deg[static_cast<std::size_t>(i)];
  for (auto d : deg) {
    s.links += d;
    s.max_out_degree = std::max(s.max_out_degree, d);
  }
  s.degree_histogram.assign(static_cast<std::size_t>(s.max_out_degree + 1), 0);
  for (auto d : deg)
    ++s.degree_histogram[static_cast<std::size_t>(d)];
  if (n > 1)
    s.density = static_cast<double>(s.links) / (static_cast<double>(n) * static_cast<double>(n - 1));
  if (n > 0)
    s.mean_out_degree = static_cast<double>(s.links) / static_cast<double>(n);
  return s;
}

// ---- edge-list and DOT I/O ------------------------------------------------

/// `i,j,weight` rows (0-based unit indices), weights to 17 significant digits.
inline void write_edge_list(std::ostream &out, const NetworkMatrix &w) {
  out << "i,j,weight\n";
  for (Eigen::Index i = 0; i < w.n(); ++i)
    for (const auto &l : w.row(i))
      out << i << ',' << l.to << ',' << csv::format_exact(l.weight) << '\n';
}

inline void write_edge_list(const std::string &path, const NetworkMatrix &w) {
  std::ofstream out(path);
  if (!out)
    throw ConfigError("cannot write edge list '" + path + "'");
  write_edge_list(out, w);
}

inline NetworkMatrix read_edge_list(std::istream &in, Eigen::Index n) {
  std::string line;
  if (!std::getline(in, line))
    throw ParseError("empty edge list");
  auto header = csv::split_line(line);
  if (header.size() != 3 || csv::trim(header[0]) != "i" || csv::trim(header[1]) != "j" ||
      csv::trim(header[2]) != "weight")
    throw ParseError("row 1: edge list header must be i,j,weight");
  std::vector<std::vector<Link>> rows(static_cast<std::size_t>(n));
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (csv::trim(line).empty())
      continue;
    auto f = csv::split_line(line);
    if (f.size() != 3)
      throw ParseError("row " + std::to_string(row) + ": expected 3 fields");
    auto i = csv::parse_double(f[0]), j = csv::parse_double(f[1]), wt = csv::parse_double(f[2]);
    if (!i || !j || !wt || *i != std::floor(*i) || *j != std::floor(*j))
      throw ParseError("row " + std::to_string(row) + ": malformed edge");
    const auto ii = static_cast<Eigen::Index>(*i), jj = static_cast<Eigen::Index>(*j);
    if (ii < 0 || ii >= n || jj < 0 || jj >= n)
      throw ParseError("row " + std::to_string(row) + ": unit index out of range");
    rows[static_cast<std::size_t>(ii)].push_back({jj, *wt});
  }
  NetworkMatrix w(n, Provenance::imported);
  for (Eigen::Index i = 0; i < n; ++i)
    w.set_row(i, std::move(rows[static_cast<std::size_t>(i)]));
  return w;
}

inline NetworkMatrix read_edge_list(const std::string &path, Eigen::Index n) {
  std::ifstream in(path);
  if (!in)
    throw ParseError("cannot open edge list '" + path + "'");
  return read_edge_list(in, n);
}

/// Graphviz digraph; nodes are labelled with unit ids when supplied.
inline void write_dot(std::ostream &out, const NetworkMatrix &w,
                      const std::vector<std::string> &names = {}) {
  auto node = [&](Eigen::Index i) {
    return names.empty() ? std::to_string(i) : names[static_cast<std::size_t>(i)];
  };
  out << "digraph network {\n";
  for (Eigen::Index i = 0; i < w.n(); ++i)
    out << "  \"" << node(i) << "\";\n";
  for (Eigen::Index i = 0; i < w.n(); ++i)
    for (const auto &l : w.row(i))
      out << "  \"" << node(i) << "\" -> \"" << node(l.to) << "\" [weight=" << csv::format_exact(l.weight)
          << "];\n";
  out << "}\n";
}

} // namespace netspill

#endif // NETSPILL_NETWORK_HPP
