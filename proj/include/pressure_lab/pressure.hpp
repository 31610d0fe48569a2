#pragma once

// Pressure estimation on top of the preimage-tree sums: P(f,t,z0) is the
// growth rate of ln S_n, estimated as the least-squares slope over the
// second half of the depth range. Houses the Bowen-zero bisection and the
// pressure-regime classifier.

#include <optional>

#include "pressure_lab/tree.hpp"

namespace plab {

class InsufficientDepthError : public std::runtime_error {
 public:
  explicit InsufficientDepthError(int n) : std::runtime_error("n_max must be >= 4, got " + std::to_string(n)) {}
};

class BadBracketError : public std::runtime_error {
 public:
  explicit BadBracketError(const std::string& msg) : std::runtime_error(msg) {}
};

struct PressureEstimate {
  double t = 0.0;
  double pressure = 0.0;
  double error = 0.0;
  int window_lo = 0;
  int window_hi = 0;
  bool divergent = false;      // evidence that P = +infinity at this t
  bool degenerate = false;     // empty sums inside the window
  bool truncation_ok = true;   // all window tail bounds under eps_trunc
  double worst_tail = 0.0;
  std::vector<double> log_sums;  // ln S_n for n = 1..n_max
};

namespace detail {

// Slope-window estimate from ln S_n, n = 1..n_max (1-based values vector).
inline PressureEstimate estimate_from_log_sums(double t, const std::vector<double>& log_sums,
                                               const std::vector<double>& tails,
                                               const std::vector<bool>& divergent_flags,
                                               double eps_trunc) {
  const int n_max = static_cast<int>(log_sums.size());
  if (n_max < 4) throw InsufficientDepthError(n_max);
  PressureEstimate est;
  est.t = t;
  est.log_sums = log_sums;
  est.window_lo = (n_max + 1) / 2;
  est.window_hi = n_max;

  for (int n = est.window_lo; n <= est.window_hi; ++n) {
    if (log_sums[static_cast<std::size_t>(n) - 1] == kNegInf) est.degenerate = true;
    if (!tails.empty()) est.worst_tail = std::max(est.worst_tail, tails[static_cast<std::size_t>(n) - 1]);
  }
  est.truncation_ok = est.worst_tail <= eps_trunc;
  if (est.degenerate) {
    est.pressure = kNegInf;
    return est;
  }

  std::vector<double> xs, ys;
  for (int n = est.window_lo; n <= est.window_hi; ++n) {
    xs.push_back(static_cast<double>(n));
    ys.push_back(log_sums[static_cast<std::size_t>(n) - 1]);
  }
  LineFit fit = fit_line(xs, ys);
  est.pressure = fit.slope;

  double dmin = kPosInf, dmax = kNegInf;
  for (int n = est.window_lo; n < est.window_hi; ++n) {
    double d = log_sums[static_cast<std::size_t>(n)] - log_sums[static_cast<std::size_t>(n) - 1];
    dmin = std::min(dmin, d);
    dmax = std::max(dmax, d);
  }
  est.error = std::max(fit.slope_stderr, dmax - dmin);

  // divergence heuristic: ln S_n / n jumping by > 1 at the three largest depths
  bool grows = n_max >= 4;
  for (int n = n_max - 2; n <= n_max && grows; ++n) {
    double q1 = log_sums[static_cast<std::size_t>(n) - 1] / n;
    double q0 = log_sums[static_cast<std::size_t>(n) - 2] / (n - 1);
    if (!(q1 - q0 > 1.0)) grows = false;
  }
  bool sheet_divergent = false;
  for (std::size_t i = 0; i < divergent_flags.size(); ++i) sheet_divergent |= divergent_flags[i] != 0;
  est.divergent = grows || sheet_divergent;
  if (est.divergent) est.pressure = kPosInf;
  return est;
}

}  // namespace detail

struct PressureOptions {
  int n_max = 8;
  Cutoff cutoff = Cutoff::adaptive(1e-4);
  std::size_t node_budget = 10'000'000;
  BudgetPolicy budget_policy = BudgetPolicy::Clamp;
  double prune_weight_rel = 1e-16;
  // Estimator policy: expand through a compact window (restricted pressure
  // stabilizes for large radii) with coarse sheet brackets and frontier cell
  // merging, so the depth-to-depth growth rate stays stationary instead of
  // starving once populations outgrow the node budget.
  double window_radius = 1e4;  // 0 disables the window
  bool coarse_sheets = true;
  bool merge_cells = true;

  ExpansionOptions expansion(int depth) const {
    ExpansionOptions opt;
    opt.max_depth = depth;
    opt.cutoff = cutoff;
    opt.node_budget = node_budget;
    opt.budget_policy = budget_policy;
    opt.prune_weight_rel = prune_weight_rel;
    if (window_radius > 0.0) opt.node_window = Restriction::disc(window_radius);
    opt.coarse_sheets = coarse_sheets;
    opt.merge_cells = merge_cells;
    return opt;
  }
};

inline PressureEstimate estimate_pressure(const TranscendentalMap& map, double t, Complex z0,
                                          const PressureOptions& popt = {},
                                          Restriction restr = Restriction::none()) {
  if (popt.n_max < 4) throw InsufficientDepthError(popt.n_max);
  ExpansionOptions opt = popt.expansion(popt.n_max);
  std::size_t ridx = 0;
  if (restr.kind != Restriction::Kind::None) {
    opt.restrictions.push_back(restr);
    ridx = 1;
  }
  ExpansionResult res = expand_preimage_tree(map, t, z0, opt);
  std::vector<double> ls, tails;
  std::vector<bool> div;
  for (int n = 1; n <= popt.n_max; ++n) {
    ls.push_back(res.record(n, ridx).log_sum);
    tails.push_back(res.record(n, ridx).tail_bound);
    div.push_back(res.record(n, ridx).divergent_tail);
  }
  return detail::estimate_from_log_sums(t, ls, tails, div, popt.cutoff.eps_trunc);
}

// Default good-pressure starting point: a repelling fixed point, scanning
// sheets outward until one is found.
inline Complex default_gps_point(const TranscendentalMap& map) {
  for (long k : {0L, 1L, -1L, 2L, -2L, 3L}) {
    auto z = find_repelling_fixed_point(map, k);
    if (z) return *z;
  }
  throw std::runtime_error("no repelling fixed point found; supply z0 explicitly");
}

// ---------------------------------------------------------------------------
// Pressure curve over a grid
// ---------------------------------------------------------------------------

struct PressureCurvePoint {
  double t = 0.0;
  double pressure = 0.0;
  double error = 0.0;
  bool divergent = false;
  bool truncation_ok = true;
  double worst_tail = 0.0;
  int window_lo = 0, window_hi = 0;
};

struct PressureCurve {
  std::vector<PressureCurvePoint> entries;  // sorted by t
  std::optional<double> t0;
  std::optional<double> t_inf;

  // non-increasing within error bars, and P(2) <= 0 within its bar
  bool monotone_within_errors() const {
    for (std::size_t i = 1; i < entries.size(); ++i) {
      if (entries[i - 1].divergent) continue;
      if (entries[i].pressure > entries[i - 1].pressure + entries[i].error + entries[i - 1].error)
        return false;
    }
    return true;
  }
};

inline PressureCurve build_pressure_curve(const TranscendentalMap& map, Complex z0,
                                          const std::vector<double>& t_grid,
                                          const PressureOptions& popt = {}) {
  PressureCurve curve;
  for (double t : t_grid) {
    PressureEstimate est = estimate_pressure(map, t, z0, popt);
    PressureCurvePoint p;
    p.t = t;
    p.pressure = est.pressure;
    p.error = est.error;
    p.divergent = est.divergent;
    p.truncation_ok = est.truncation_ok;
    p.worst_tail = est.worst_tail;
    p.window_lo = est.window_lo;
    p.window_hi = est.window_hi;
    curve.entries.push_back(p);
    if (est.divergent) {
      if (!curve.t_inf || t > *curve.t_inf) curve.t_inf = t;
    }
  }
  // crossing on the finite part
  for (std::size_t i = 1; i < curve.entries.size(); ++i) {
    const auto& a = curve.entries[i - 1];
    const auto& b = curve.entries[i];
    if (a.divergent || b.divergent) continue;
    if (a.pressure > 0.0 && b.pressure <= 0.0) {
      double dt = b.t - a.t;
      double frac = a.pressure / (a.pressure - b.pressure);
      curve.t0 = a.t + frac * dt;
      break;
    }
  }
  return curve;
}

// ---------------------------------------------------------------------------
// Restricted pressure (stabilization in the disc radius)
// ---------------------------------------------------------------------------

struct RestrictedPressureRow {
  double r = 0.0;
  double pressure = 0.0;
  double error = 0.0;
  bool degenerate = false;  // empty restricted sums inside the window
  std::vector<double> log_sums;  // ln S_n^{D(r)}, exactly monotone in r per depth
};

struct RestrictedPressureTable {
  std::vector<RestrictedPressureRow> rows;  // in the order of r_list
  double unrestricted_pressure = 0.0;
  double unrestricted_error = 0.0;
  std::optional<double> stabilization_radius;
  bool no_stabilization = false;
};

inline RestrictedPressureTable restricted_pressure_check(const TranscendentalMap& map, double t,
                                                         Complex z0,
                                                         const std::vector<double>& r_list,
                                                         const PressureOptions& popt = {},
                                                         double stab_tol = 0.05) {
  if (r_list.size() < 2) throw std::invalid_argument("restricted_pressure_check: need >= 2 radii");
  for (std::size_t i = 1; i < r_list.size(); ++i)
    if (r_list[i] <= r_list[i - 1])
      throw std::invalid_argument("restricted_pressure_check: radii must increase");

  ExpansionOptions opt = popt.expansion(popt.n_max);
  for (double r : r_list) opt.restrictions.push_back(Restriction::disc(r));
  ExpansionResult res = expand_preimage_tree(map, t, z0, opt);

  RestrictedPressureTable table;
  auto estimate_for = [&](std::size_t ridx) {
    std::vector<double> ls, tails;
    std::vector<bool> div;
    for (int n = 1; n <= popt.n_max; ++n) {
      ls.push_back(res.record(n, ridx).log_sum);
      tails.push_back(res.record(n, ridx).tail_bound);
      div.push_back(res.record(n, ridx).divergent_tail);
    }
    return detail::estimate_from_log_sums(t, ls, tails, div, popt.cutoff.eps_trunc);
  };
  PressureEstimate full = estimate_for(0);
  table.unrestricted_pressure = full.pressure;
  table.unrestricted_error = full.error;
  for (std::size_t i = 0; i < r_list.size(); ++i) {
    PressureEstimate est = estimate_for(i + 1);
    RestrictedPressureRow row;
    row.r = r_list[i];
    row.pressure = est.pressure;
    row.error = est.error;
    row.degenerate = est.degenerate;
    row.log_sums = est.log_sums;
    table.rows.push_back(row);
  }
  const auto& last = table.rows.back();
  const auto& prev = table.rows[table.rows.size() - 2];
  if (last.degenerate || prev.degenerate || std::abs(last.pressure - prev.pressure) > stab_tol) {
    table.no_stabilization = true;
  } else {
    double ref = last.pressure;
    for (const auto& row : table.rows) {
      if (!row.degenerate && std::abs(row.pressure - ref) <= stab_tol) {
        table.stabilization_radius = row.r;
        break;
      }
    }
  }
  return table;
}

// ---------------------------------------------------------------------------
// Bowen zero by sign bisection
// ---------------------------------------------------------------------------

struct BowenIteration {
  double t = 0.0;
  double pressure = 0.0;
  double error = 0.0;
};

struct BowenResult {
  double t0 = 0.0;
  double bracket_lo = 0.0, bracket_hi = 0.0;
  PressureEstimate p_lo, p_hi;  // endpoint certificates
  std::vector<BowenIteration> iterations;
  bool sign_ambiguous = false;  // final estimate's error bar straddles 0
};

inline BowenResult find_bowen_zero(const TranscendentalMap& map, Complex z0, double t_lo,
                                   double t_hi, double tol, const PressureOptions& popt = {}) {
  if (!(t_lo > 0.0 && t_hi > t_lo && tol > 0.0))
    throw std::invalid_argument("find_bowen_zero: need 0 < t_lo < t_hi and tol > 0");
  BowenResult out;
  out.p_lo = estimate_pressure(map, t_lo, z0, popt);
  out.p_hi = estimate_pressure(map, t_hi, z0, popt);
  bool lo_pos = out.p_lo.divergent || (out.p_lo.pressure - out.p_lo.error > 0.0);
  bool hi_neg = !out.p_hi.divergent && (out.p_hi.pressure + out.p_hi.error < 0.0);
  if (!lo_pos || !hi_neg)
    throw BadBracketError("bracket invalid: P(" + format_full(t_lo) + ") = " +
                          format_full(out.p_lo.pressure) + " +- " + format_full(out.p_lo.error) +
                          ", P(" + format_full(t_hi) + ") = " + format_full(out.p_hi.pressure) +
                          " +- " + format_full(out.p_hi.error));
  double lo = t_lo, hi = t_hi;
  while (hi - lo > tol) {
    double mid = 0.5 * (lo + hi);
    PressureEstimate est = estimate_pressure(map, mid, z0, popt);
    out.iterations.push_back({mid, est.pressure, est.error});
    out.sign_ambiguous = !est.divergent && std::abs(est.pressure) <= est.error;
    if (est.divergent || est.pressure > 0.0)
      lo = mid;
    else
      hi = mid;
  }
  out.bracket_lo = lo;
  out.bracket_hi = hi;
  out.t0 = 0.5 * (lo + hi);
  return out;
}

// ---------------------------------------------------------------------------
// Regime classification (three-way alternative for the pressure function)
// ---------------------------------------------------------------------------

enum class PressureRegime { A, B, C, Inconclusive };

inline const char* regime_name(PressureRegime r) {
  switch (r) {
    case PressureRegime::A: return "A";
    case PressureRegime::B: return "B";
    case PressureRegime::C: return "C";
    case PressureRegime::Inconclusive: return "INCONCLUSIVE";
  }
  return "?";
}

struct RegimeReport {
  PressureRegime regime = PressureRegime::Inconclusive;
  std::optional<double> t0;
  std::optional<double> t_inf;
  std::string evidence;
};

inline RegimeReport classify_regime(const PressureCurve& curve) {
  RegimeReport rep;
  rep.t0 = curve.t0;
  rep.t_inf = curve.t_inf;
  if (curve.entries.size() < 2) {
    rep.evidence = "grid too small";
    return rep;
  }
  const bool has_divergence = curve.t_inf.has_value();
  const bool has_zero = curve.t0.has_value();
  if (has_zero && has_divergence && *curve.t0 > *curve.t_inf) {
    rep.regime = PressureRegime::A;
    rep.evidence = "divergence below t_inf and a finite zero above it";
  } else if (has_zero && !has_divergence) {
    rep.regime = PressureRegime::B;
    rep.evidence = "finite pressure on the whole grid with a zero crossing";
  } else if (!has_zero && has_divergence) {
    // jump below zero: first finite estimate already negative beyond its bar
    for (const auto& e : curve.entries) {
      if (e.divergent) continue;
      if (e.pressure + e.error < 0.0) {
        rep.regime = PressureRegime::C;
        rep.evidence = "pressure jumps from +inf to negative at t_inf = " + format_full(*curve.t_inf);
      }
      break;
    }
    if (rep.regime == PressureRegime::Inconclusive) rep.evidence = "no zero and no clean jump";
  } else {
    rep.evidence = "no divergence and no zero on the grid";
  }
  return rep;
}

}  // namespace plab
