#ifndef NETSPILL_BOLMT_HPP
#define NETSPILL_BOLMT_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"
#include "factors.hpp"
#include "iv.hpp"
#include "network.hpp"
#include "normal.hpp"
#include "parallel.hpp"

namespace netspill {

/// Tuning of the one-link-at-a-time selection.
struct BolmtConfig {
  double p = 0.05;     // nominal size of each test
  double c = 1.0;      // scale in f(n) = c n^delta
  double delta = 1.0;  // critical value exponent
  Eigen::Index max_links = -1; // optional cap per unit; -1 = limited only by T

  void validate() const {
    if (!(p > 0.0 && p < 1.0))
      throw ConfigError("selection size p must lie in (0, 1)");
    if (!(c > 0.0))
      throw ConfigError("critical value constant c must be positive");
    if (!(delta > 0.0))
      throw ConfigError("critical value exponent delta must be positive");
  }
};

/// Phi^-1(1 - p / (2 c n^delta)), the multiple-testing threshold for n candidates.
inline double critical_value(double p, double n, double c, double delta) {
  if (!(p > 0.0 && p < 1.0) || !(n >= 1.0) || !(c > 0.0) || !(delta > 0.0))
    throw DomainError("critical_value: need 0 < p < 1, n >= 1, c > 0, delta > 0");
  const double alpha = p / (2.0 * c * std::pow(n, delta));
  if (!(alpha < 1.0))
    throw DomainError("critical_value: tail mass p/(2 c n^delta) = " + std::to_string(alpha) +
                      " is not below 1");
  return normal_upper_quantile(alpha);
}

struct SkippedCandidate {
  Eigen::Index unit = 0;
  std::string reason;
};

/// One stage of the selection for a unit.
struct StageRecord {
  Eigen::Index stage = 1;
  Eigen::Index candidates = 0;  // |candidate set| = n used in the threshold
  double threshold = 0.0;
  Eigen::Index best = -1;       // candidate with the largest |t|, -1 if none
  double t_ratio = 0.0;
  bool accepted = false;
  std::vector<SkippedCandidate> skipped;
};

struct SelectionState {
  Eigen::Index unit = 0;
  std::vector<Eigen::Index> selected;       // in order of acceptance
  std::vector<Eigen::Index> candidate_set;  // remaining candidates, ascending
  Eigen::Index stage = 1;                   // = |selected| + 1
  std::vector<StageRecord> trace;
  std::string stop_reason;
};

/// Defactored data plus the first-stage fitted values P_{X_m} y_m of every
/// unit, which serve as the instrument for y_m whenever it enters a regression.
class LinkSelector {
public:
  explicit LinkSelector(const DefactoredPanel &data) : data_(&data) {
    const auto N = data.n(), T = data.t();
    fitted_.resize(T, N);
    for (Eigen::Index m = 0; m < N; ++m)
      fitted_.col(m) = project_onto(data.unit_x(m), data.y.col(m));
  }

  const DefactoredPanel &data() const { return *data_; }
  const Eigen::MatrixXd &fitted() const { return fitted_; }

  /// t-ratio of the coefficient on y_j in the IV regression of y_i on
  /// (y_included..., X_i, y_j), each y_m instrumented by P_{X_m} y_m.
  /// With nothing included this is the closed-form single-candidate ratio up to
  /// the sign of yhat_j' M_{X_i} y_j.
  double t_ratio(Eigen::Index i, Eigen::Index j, std::span<const Eigen::Index> included) const {
    const auto &d = *data_;
    const auto T = d.t(), K = d.k();
    const auto s = static_cast<Eigen::Index>(included.size());
    if (j == i || std::find(included.begin(), included.end(), j) != included.end())
      throw DomainError("candidate must differ from the unit and from included links");

    const double yj_norm = d.y.col(j).norm();
    if (yj_norm == 0.0 || fitted_.col(j).norm() <= 1e-12 * yj_norm)
      throw WeakInstrumentError("first-stage fit of unit " + std::to_string(j) + " is identically zero");

    const Eigen::Index p = s + K + 1;
    Eigen::MatrixXd R(T, p), Z(T, p);
    for (Eigen::Index k = 0; k < s; ++k) {
      const auto m = included[static_cast<std::size_t>(k)];
      R.col(k) = d.y.col(m);
      Z.col(k) = fitted_.col(m);
    }
    R.middleCols(s, K) = d.unit_x(i);
    Z.middleCols(s, K) = d.unit_x(i);
    R.col(p - 1) = d.y.col(j);
    Z.col(p - 1) = fitted_.col(j);

    const auto fit = iv_fit(d.y.col(i), R, Z);
    const double yi_rms = d.y.col(i).norm() / std::sqrt(static_cast<double>(T));
    const double b = fit.coef(p - 1);
    if (fit.sigma <= 1e-13 * yi_rms) {
      // exact fit: zero coefficient means no link, anything else is decisive
      const double scale = yj_norm / std::sqrt(static_cast<double>(T));
      if (std::fabs(b) * scale <= 1e-9 * std::max(yi_rms, 1e-300))
        return 0.0;
      return std::copysign(1e12, b);
    }
    return b / fit.se(p - 1);
  }

  /// Staged selection for one unit; see BolmtConfig.
  SelectionState select(Eigen::Index i, const BolmtConfig &cfg) const {
    const auto &d = *data_;
    const auto N = d.n(), T = d.t(), K = d.k();
    SelectionState st;
    st.unit = i;
    for (Eigen::Index j = 0; j < N; ++j)
      if (j != i)
        st.candidate_set.push_back(j);

    while (!st.candidate_set.empty()) {
      const auto s = static_cast<Eigen::Index>(st.selected.size());
      if (cfg.max_links >= 0 && s >= cfg.max_links) {
        st.stop_reason = "max_links reached";
        break;
      }
      if (s + K + 1 >= T) {
        st.stop_reason = "regressor count reached T";
        break;
      }
      StageRecord rec;
      rec.stage = s + 1;
      rec.candidates = static_cast<Eigen::Index>(st.candidate_set.size());
      rec.threshold = critical_value(cfg.p, static_cast<double>(rec.candidates), cfg.c, cfg.delta);
      double best_abs = -1.0;
      for (auto j : st.candidate_set) {
        double t;
        try {
          t = t_ratio(i, j, st.selected);
        } catch (const WeakInstrumentError &) {
          rec.skipped.push_back({j, "weak_instrument"});
          continue;
        } catch (const SingularDesignError &) {
          rec.skipped.push_back({j, "singular_design"});
          continue;
        }
        if (std::fabs(t) > best_abs) {
          best_abs = std::fabs(t);
          rec.best = j;
          rec.t_ratio = t;
        }
      }
      rec.accepted = rec.best >= 0 && best_abs > rec.threshold;
      st.trace.push_back(rec);
      if (!rec.accepted) {
        st.stop_reason = rec.best >= 0 ? "no candidate above threshold" : "no valid candidate";
        break;
      }
      st.selected.push_back(rec.best);
      std::erase(st.candidate_set, rec.best);
    }
    if (st.candidate_set.empty() && st.stop_reason.empty())
      st.stop_reason = "candidate set exhausted";
    st.stage = static_cast<Eigen::Index>(st.selected.size()) + 1;
    return st;
  }

private:
  const DefactoredPanel *data_;
  Eigen::MatrixXd fitted_;
};

inline double iv_t_ratio(Eigen::Index i, Eigen::Index j, std::span<const Eigen::Index> included,
                         const DefactoredPanel &data) {
  return LinkSelector(data).t_ratio(i, j, included);
}

inline SelectionState select_links_for_unit(Eigen::Index i, const DefactoredPanel &data,
                                            const BolmtConfig &cfg) {
  cfg.validate();
  return LinkSelector(data).select(i, cfg);
}

struct AdjacencyEstimate {
  NetworkMatrix w_hat;
  /// Raw re-estimated coefficients (omega = psi_i w_ij) before normalization.
  std::vector<std::vector<Link>> omega_hat;
  std::vector<SelectionState> traces;
  /// Units whose signed coefficient sum was below 1e-8 in magnitude and were
  /// normalized by the absolute sum instead.
  std::vector<Eigen::Index> abs_normalized;
};

/// Re-estimates each unit's selected links jointly, instrumenting with
/// (X_i, X_j1, ..., X_jk), and normalizes each row of coefficients to sum to 1.
inline AdjacencyEstimate normalize_selection(const DefactoredPanel &data,
                                             std::vector<SelectionState> states) {
  const auto N = data.n(), T = data.t(), K = data.k();
  AdjacencyEstimate est;
  est.w_hat = NetworkMatrix(N, Provenance::estimated);
  est.omega_hat.resize(static_cast<std::size_t>(N));
  for (Eigen::Index i = 0; i < N; ++i) {
    const auto &sel = states[static_cast<std::size_t>(i)].selected;
    if (sel.empty())
      continue;
    std::vector<Eigen::Index> links = sel;
    std::sort(links.begin(), links.end());
    const auto s = static_cast<Eigen::Index>(links.size());
    Eigen::MatrixXd R(T, s + K), Z(T, K * (s + 1));
    Z.leftCols(K) = data.unit_x(i);
    for (Eigen::Index k = 0; k < s; ++k) {
      const auto j = links[static_cast<std::size_t>(k)];
      R.col(k) = data.y.col(j);
      Z.middleCols(K * (k + 1), K) = data.unit_x(j);
    }
    R.rightCols(K) = data.unit_x(i);
    Eigen::VectorXd coef;
    try {
      coef = iv_fit(data.y.col(i), R, Z).coef;
    } catch (const EstimationError &) {
      // too many instruments for T: fall back to the selection-stage instruments
      LinkSelector sel_ctx(data);
      Eigen::MatrixXd Zg = R;
      for (Eigen::Index k = 0; k < s; ++k)
        Zg.col(k) = sel_ctx.fitted().col(links[static_cast<std::size_t>(k)]);
      coef = iv_fit(data.y.col(i), R, Zg).coef;
    }
    std::vector<Link> raw;
    double sum = 0.0, abs_sum = 0.0;
    for (Eigen::Index k = 0; k < s; ++k) {
      raw.push_back({links[static_cast<std::size_t>(k)], coef(k)});
      sum += coef(k);
      abs_sum += std::fabs(coef(k));
    }
    est.omega_hat[static_cast<std::size_t>(i)] = raw;
    double norm = sum;
    if (std::fabs(sum) < 1e-8) {
      norm = abs_sum;
      est.abs_normalized.push_back(i);
    }
    if (norm == 0.0)
      throw NormalizationError("unit " + std::to_string(i) + ": all re-estimated link coefficients are zero");
    for (auto &l : raw)
      l.weight /= norm;
    est.w_hat.set_row(i, std::move(raw));
  }
  est.w_hat.mark_normalized(true);
  est.w_hat.set_provenance(Provenance::estimated);
  est.traces = std::move(states);
  return est;
}

/// Runs the selection for every unit (in parallel, merged by unit index) and
/// builds the normalized estimated network.
inline AdjacencyEstimate estimate_network(const DefactoredPanel &data, const BolmtConfig &cfg) {
  cfg.validate();
  const LinkSelector selector(data);
  std::vector<SelectionState> states(static_cast<std::size_t>(data.n()));
  parallel_for(states.size(), [&](std::size_t i) {
    states[i] = selector.select(static_cast<Eigen::Index>(i), cfg);
  });
  return normalize_selection(data, std::move(states));
}

inline nlohmann::json selection_trace_json(const AdjacencyEstimate &est, const BolmtConfig &cfg) {
  using nlohmann::json;
  auto finite = [](double v) -> json { return std::isfinite(v) ? json(v) : json(nullptr); };
  json units = json::array();
  for (const auto &st : est.traces) {
    json stages = json::array();
    for (const auto &r : st.trace) {
      json skipped = json::array();
      for (const auto &s : r.skipped)
        skipped.push_back({{"unit", s.unit}, {"reason", s.reason}});
      stages.push_back({{"stage", r.stage},
                        {"candidates", r.candidates},
                        {"threshold", finite(r.threshold)},
                        {"best", r.best},
                        {"t_ratio", finite(r.t_ratio)},
                        {"accepted", r.accepted},
                        {"skipped", skipped}});
    }
    units.push_back({{"unit", st.unit},
                     {"selected", st.selected},
                     {"stop_reason", st.stop_reason},
                     {"stages", stages}});
  }
  return json{{"config", {{"p", cfg.p}, {"c", cfg.c}, {"delta", cfg.delta}}},
              {"abs_normalized_units", est.abs_normalized},
              {"units", units}};
}

} // namespace netspill

#endif // NETSPILL_BOLMT_HPP
