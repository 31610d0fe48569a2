#pragma once

// Backward-orbit (preimage tree) expansion and the partial sums
//   S_n(t, z0) = sum over w in f^{-n}(z0) of |(f^n)*(w)|^{-t},
// optionally restricted to discs/annuli in the endpoint. Sums are
// accumulated in log space; the sheet index is truncated either at a fixed
// K per level or adaptively. Adaptive mode expands children best-first
// across the whole level and keeps an explicit ledger of the estimated
// remaining sheet mass (integral comparison against k^{-2t} decay); the
// level stops once that ledger drops below eps_trunc of the running sum.
// The ledger value is reported as the record's tail bound, so budget-capped
// levels stay honest about what was left out.

#include <cstdint>
#include <cstdlib>
#include <map>
#include <queue>
#include <string>
#include <vector>

#include "pressure_lab/maps.hpp"
#include "pressure_lab/util.hpp"

namespace plab {

struct Restriction {
  enum class Kind { None, Disc, Annulus };
  Kind kind = Kind::None;
  double r1 = 0.0;
  double r2 = 0.0;

  static Restriction none() { return {}; }
  static Restriction disc(double r) { return {Kind::Disc, r, 0.0}; }
  static Restriction annulus(double lo, double hi) { return {Kind::Annulus, lo, hi}; }

  bool contains(Complex w) const {
    switch (kind) {
      case Kind::None: return true;
      case Kind::Disc: return std::abs(w) < r1;
      case Kind::Annulus: {
        double m = std::abs(w);
        return r1 <= m && m < r2;
      }
    }
    return true;
  }

  std::string label() const {
    switch (kind) {
      case Kind::None: return "none";
      case Kind::Disc: return "disc:" + format_full(r1);
      case Kind::Annulus: return "annulus:" + format_full(r1) + ":" + format_full(r2);
    }
    return "?";
  }
};

struct Cutoff {
  enum class Mode { Fixed, Adaptive };
  Mode mode = Mode::Adaptive;
  int fixed_K = 10;
  double eps_trunc = 1e-4;

  static Cutoff fixed(int K) {
    Cutoff c;
    c.mode = Mode::Fixed;
    c.fixed_K = K;
    return c;
  }
  static Cutoff adaptive(double eps) {
    Cutoff c;
    c.mode = Mode::Adaptive;
    c.eps_trunc = eps;
    return c;
  }
};

enum class BudgetPolicy { Clamp, Strict };

struct ExpansionOptions {
  int max_depth = 8;
  Cutoff cutoff{};
  std::size_t node_budget = 10'000'000;  // generated children per depth
  BudgetPolicy budget_policy = BudgetPolicy::Clamp;
  double prune_weight_rel = 1e-16;  // orbits below this share of the level sum are not expanded
  // Frontier cap: only the heaviest this-many orbits of a level are expanded
  // further. Keeps the per-level capture ratio stationary when the sums are
  // too spread out for the node budget, so depth-to-depth growth rates stay
  // comparable; the dropped mass is carried into the tail ledger.
  std::size_t max_parents = 2'000'000;
  // Compact expansion window: preimages falling outside are dropped from the
  // tree altogether (terms and subtrees), so the computed sums are those of
  // the windowed subsystem. Pressure restricted to large compact windows
  // recovers the full pressure, while keeping level populations and weight
  // profiles bounded; dropped mass is carried into the tail ledger.
  Restriction node_window = Restriction::none();
  // Coarse sheet aggregation: beyond coarse_base, sheets are grouped into
  // geometric brackets [k, k*ratio) represented by the point at the bracket's
  // log-midpoint carrying the bracket's k^{-2t}-model mass. Keeps every
  // node's full in-window sheet ladder represented at ~O(log) cost, which is
  // what lets deep levels stay mass-faithful inside a node budget. Not
  // compatible with keep_levels (atom weights must be per-point).
  bool coarse_sheets = false;
  long coarse_base = 8;
  double coarse_ratio = 1.25;
  // Frontier cell merging: before expanding the next level, nodes are binned
  // on a log-polar grid and each occupied cell continues as a single node at
  // the mass centroid carrying the cell's total mass. Bounds the frontier by
  // the cell count, so depth-to-depth growth converges to the growth rate of
  // the grid-discretized one-step operator. Not compatible with keep_levels.
  bool merge_cells = false;
  double cell_log_step = 0.05;  // radial bin width in log|z|
  double cell_arg_step = 0.05;  // angular bin width
  std::vector<Restriction> restrictions;  // evaluated at every depth, besides the unrestricted sum
  bool keep_levels = false;
};

struct PartialSumRecord {
  int n = 0;
  double t = 0.0;
  Restriction restriction{};
  long max_k = 0;  // largest |sheet index| used anywhere up to this depth
  double log_sum = kNegInf;
  std::size_t term_count = 0;
  double tail_bound = 0.0;  // estimated relative truncation error, cumulative over levels
  double window_dropped_rel = 0.0;  // mass excluded by the node window, cumulative
  bool budget_clamped = false;
  bool divergent_tail = false;  // one-step sheet sums diverge at this t
};

struct TreeIssue {
  int depth = 0;
  Complex node{};
  std::string what;
};

struct LevelNode {
  Complex value{};
  double log_deriv = 0.0;  // log |(f^n)*(value)| accumulated along the orbit
};

class TreeBudgetExceededError : public std::runtime_error {
 public:
  TreeBudgetExceededError(int depth, std::size_t budget)
      : std::runtime_error("node budget " + std::to_string(budget) + " exceeded at depth " +
                           std::to_string(depth)) {}
};

struct ExpansionResult {
  // records[n-1][r]: depth n, restriction r (index 0 = unrestricted).
  std::vector<std::vector<PartialSumRecord>> records;
  std::vector<std::vector<LevelNode>> levels;  // filled when keep_levels
  std::vector<TreeIssue> issues;
  bool budget_clamped = false;

  const PartialSumRecord& record(int n, std::size_t restriction_index = 0) const {
    return records.at(static_cast<std::size_t>(n) - 1).at(restriction_index);
  }
};

namespace detail {

// Closed-form estimate of log f* at the sheet-m child of a node with value
// v, used to order work and to seed tail ledgers before any branch is
// materialized. Sheets translate by 2*pi*i (Exp/Zexp), 2*pi (Sin) or pi
// (Tan) away from the principal preimage; |f'| is sheet-independent for
// Exp/Sin/Tan and nearly so for Zexp.
struct SheetEstimator {
  Complex z0{};        // principal preimage (estimate for Zexp)
  Complex shift{};     // per-sheet translate
  double log_df = 0.0; // log |f'| at the preimages
  double log1p_v2 = 0.0;
  bool zexp = false;
  Complex v{};
  bool valid = false;

  SheetEstimator(const TranscendentalMap& map, Complex value) : v(value) {
    log1p_v2 = std::log1p(abs2(v));
    switch (map.family()) {
      case MapFamily::Exp: {
        if (v == Complex(0, 0)) return;
        z0 = std::log(v / map.lambda());
        shift = Complex(0.0, kTwoPi);
        log_df = std::log(std::abs(v));
        valid = true;
        break;
      }
      case MapFamily::Sin: {
        Complex c = v / map.lambda();
        z0 = std::asin(c);
        shift = Complex(kTwoPi, 0.0);
        log_df = std::log(std::abs(map.lambda())) +
                 0.5 * std::log(std::max(std::abs(Complex(1, 0) - c * c), 1e-300));
        valid = true;
        break;
      }
      case MapFamily::Tan: {
        Complex c = v / map.lambda();
        if (c == Complex(0, 1) || c == Complex(0, -1)) return;
        z0 = std::atan(c);
        shift = Complex(kPi, 0.0);
        log_df = std::log(std::abs(map.lambda() * (Complex(1, 0) + c * c)));
        valid = true;
        break;
      }
      case MapFamily::Zexp: {
        if (v == Complex(0, 0)) return;
        Complex L = std::log(v);
        z0 = (std::abs(L) > 1.8) ? L - std::log(L) : L + Complex(0.567, 0);
        shift = Complex(0.0, kTwoPi);
        zexp = true;
        valid = true;
        break;
      }
    }
  }

  double est_log_fstar(long m) const {
    if (!valid) return kPosInf;
    Complex z = z0 + static_cast<double>(m) * shift;
    double df = log_df;
    if (zexp)
      df = std::log(std::abs(v)) - std::log(std::max(std::abs(z), 1e-12)) +
           std::log(std::abs(Complex(1, 0) + z));
    return std::log1p(abs2(z)) + df - log1p_v2;
  }
};

struct LevelAccumulators {
  std::vector<LogSumExp> acc;
  std::vector<std::size_t> counts;

  explicit LevelAccumulators(std::size_t nrestr) : acc(nrestr + 1), counts(nrestr + 1, 0) {}

  void add_term(double log_term, Complex endpoint, const std::vector<Restriction>& restr) {
    acc[0].add_log(log_term);
    ++counts[0];
    for (std::size_t i = 0; i < restr.size(); ++i) {
      if (restr[i].contains(endpoint)) {
        acc[i + 1].add_log(log_term);
        ++counts[i + 1];
      }
    }
  }
};

struct LevelOutcome {
  LevelAccumulators sums;
  std::vector<LevelNode> children;
  std::vector<double> child_logw;
  LogSumExp window_dropped;
  double tail_rel = 0.0;
  double window_rel = 0.0;
  bool clamped = false;
  bool divergent = false;
  long max_k = 0;

  explicit LevelOutcome(std::size_t nrestr) : sums(nrestr) {}
};

}  // namespace detail

inline void expand_level_adaptive(const TranscendentalMap& map, double t,
                                  const std::vector<LevelNode>& parents,
                                  const std::vector<double>& parent_logw,
                                  const ExpansionOptions& opt, int depth,
                                  double extra_tail_mass_log, detail::LevelOutcome& lvl,
                                  std::vector<TreeIssue>& issues);

// Expands the preimage tree of z0 level by level, producing partial-sum
// records for every depth 1..max_depth in a single pass.
inline ExpansionResult expand_preimage_tree(const TranscendentalMap& map, double t, Complex z0,
                                            const ExpansionOptions& opt) {
  if (opt.max_depth < 1) throw std::invalid_argument("expand_preimage_tree: max_depth >= 1");
  if (t <= 0.0) throw std::invalid_argument("expand_preimage_tree: t > 0 required");
  if (opt.node_window.kind == Restriction::Kind::Annulus)
    throw std::invalid_argument("node_window must be a disc or none");
  if ((opt.coarse_sheets || opt.merge_cells) && opt.keep_levels)
    throw std::invalid_argument("coarse_sheets/merge_cells are incompatible with keep_levels");
  if (opt.coarse_sheets && opt.cutoff.mode == Cutoff::Mode::Fixed)
    throw std::invalid_argument("coarse_sheets requires the adaptive cutoff");
  for (Complex om : map.omitted_values())
    if (z0 == om) throw OmittedValueError("z0 is an omitted value of the family");

  ExpansionResult out;
  const std::size_t nrestr = opt.restrictions.size();
  const bool divergent_t = (2.0 * t - 1.0) <= 1e-9;
  // crude upper bound for sum over k of k^{-2t}, used to seed tail ledgers
  const double shape = divergent_t ? kPosInf : (3.0 + 2.0 / (2.0 * t - 1.0));

  std::vector<LevelNode> parents{LevelNode{z0, 0.0}};
  std::vector<double> parent_logw{0.0};
  double extra_tail_mass_log = kNegInf;  // mass dropped by the weight floor, forwarded one level
  double cum_tail = 0.0;
  double cum_window = 0.0;
  long max_k_running = 0;

  for (int depth = 1; depth <= opt.max_depth; ++depth) {
    detail::LevelOutcome lvl(nrestr);
    lvl.divergent = divergent_t;

    if (opt.cutoff.mode == Cutoff::Mode::Fixed) {
      const int K = opt.cutoff.fixed_K;
      double boundary_tail = 0.0, boundary_ref = kNegInf;
      for (std::size_t p = 0; p < parents.size(); ++p) {
        if (lvl.sums.counts[0] + static_cast<std::size_t>(2 * K + 1) > opt.node_budget) {
          if (opt.budget_policy == BudgetPolicy::Strict)
            throw TreeBudgetExceededError(depth, opt.node_budget);
          lvl.clamped = true;
          break;
        }
        BranchSet bs;
        try {
          bs = map.inverse_branches(parents[p].value, K);
        } catch (const OmittedValueError& e) {
          out.issues.push_back({depth, parents[p].value, std::string("omitted value at node: ") + e.what()});
          continue;
        }
        for (const auto& iss : bs.issues)
          out.issues.push_back({depth, parents[p].value, iss.what + " (k=" + std::to_string(iss.k) + ")"});
        for (const auto& b : bs.branches) {
          double lf = map.log_spherical_derivative(b.z);
          if (!std::isfinite(lf)) {
            out.issues.push_back({depth, b.z, "non-finite log f* at preimage"});
            continue;
          }
          double ld = parents[p].log_deriv + lf;
          double lw = -t * ld;
          if (!opt.node_window.contains(b.z)) {
            lvl.window_dropped.add_log(lw);
            continue;
          }
          lvl.sums.add_term(lw, b.z, opt.restrictions);
          lvl.children.push_back({b.z, ld});
          lvl.child_logw.push_back(lw);
          lvl.max_k = std::max(lvl.max_k, std::labs(b.k));
          if (std::labs(b.k) == K) {
            if (lw > boundary_ref) {
              boundary_tail *= std::exp(boundary_ref - lw);
              boundary_ref = lw;
            }
            boundary_tail += std::exp(lw - boundary_ref) * static_cast<double>(K) /
                             std::max(2.0 * t - 1.0, 1e-9);
          }
        }
      }
      if (divergent_t)
        lvl.tail_rel = kPosInf;
      else if (boundary_ref != kNegInf && lvl.sums.acc[0].count() > 0)
        lvl.tail_rel = std::exp(std::log(boundary_tail) + boundary_ref - lvl.sums.acc[0].log_sum());
    } else {
      expand_level_adaptive(map, t, parents, parent_logw, opt, depth, extra_tail_mass_log, lvl, out.issues);
    }

    max_k_running = std::max(max_k_running, lvl.max_k);
    out.budget_clamped = out.budget_clamped || lvl.clamped;
    if (lvl.divergent)
      cum_tail = kPosInf;
    else
      cum_tail += lvl.tail_rel;

    const double log_unrestricted = lvl.sums.acc[0].log_sum();
    if (lvl.window_dropped.count() > 0 && log_unrestricted != kNegInf)
      lvl.window_rel = std::exp(lvl.window_dropped.log_sum() - log_unrestricted);
    cum_window += lvl.window_rel;
    std::vector<PartialSumRecord> recs;
    recs.reserve(nrestr + 1);
    for (std::size_t r = 0; r <= nrestr; ++r) {
      PartialSumRecord rec;
      rec.n = depth;
      rec.t = t;
      rec.restriction = (r == 0) ? Restriction::none() : opt.restrictions[r - 1];
      rec.max_k = max_k_running;
      rec.log_sum = lvl.sums.acc[r].log_sum();
      rec.term_count = lvl.sums.counts[r];
      rec.budget_clamped = out.budget_clamped;
      rec.divergent_tail = lvl.divergent;
      rec.window_dropped_rel = cum_window;
      if (lvl.divergent) {
        rec.tail_bound = kPosInf;
      } else if (r == 0 || rec.log_sum == kNegInf) {
        rec.tail_bound = cum_tail;
      } else {
        // same absolute missing mass, relative to the restricted sum
        double abs_tail_log =
            (log_unrestricted == kNegInf) ? kNegInf : std::log(std::max(cum_tail, 0.0)) + log_unrestricted;
        rec.tail_bound = (abs_tail_log == kNegInf) ? 0.0 : std::exp(abs_tail_log - rec.log_sum);
      }
      recs.push_back(rec);
    }
    out.records.push_back(std::move(recs));
    if (opt.keep_levels) out.levels.push_back(lvl.children);

    if (depth == opt.max_depth) break;

    // next level's parents: drop orbits below the weight floor, then cap the
    // frontier at the heaviest max_parents orbits
    std::vector<LevelNode> next;
    std::vector<double> next_logw;
    next.reserve(lvl.children.size());
    next_logw.reserve(lvl.children.size());
    double floor_log = (opt.prune_weight_rel > 0.0 && log_unrestricted != kNegInf)
                           ? log_unrestricted + std::log(opt.prune_weight_rel)
                           : kNegInf;
    LogSumExp dropped;
    for (std::size_t i = 0; i < lvl.children.size(); ++i) {
      if (lvl.child_logw[i] >= floor_log) {
        next.push_back(lvl.children[i]);
        next_logw.push_back(lvl.child_logw[i]);
      } else {
        dropped.add_log(lvl.child_logw[i]);
      }
    }
    if (opt.merge_cells && !next.empty()) {
      // bin the frontier on a log-polar grid; each occupied cell continues as
      // one node at the mass centroid with the cell's total mass
      struct CellAgg {
        double max_logw = kNegInf;
        double mass = 0.0;     // scaled by e^{-max_logw}
        Complex moment{};      // sum of w * z, same scaling
      };
      std::map<std::uint64_t, CellAgg> cells;
      for (std::size_t i = 0; i < next.size(); ++i) {
        const Complex z = next[i].value;
        const double az = std::abs(z);
        std::uint64_t key;
        if (az <= 1e-12) {
          key = ~std::uint64_t{0};
        } else {
          auto ri = static_cast<std::int64_t>(std::floor(std::log(az) / opt.cell_log_step));
          auto ai = static_cast<std::int64_t>(std::floor((std::arg(z) + kPi) / opt.cell_arg_step));
          key = (static_cast<std::uint64_t>(ri + (std::int64_t{1} << 30)) << 32) |
                static_cast<std::uint64_t>(ai + (std::int64_t{1} << 16));
        }
        CellAgg& c = cells[key];
        double lw = next_logw[i];
        if (lw > c.max_logw) {
          double f = std::exp(c.max_logw - lw);
          c.mass *= f;
          c.moment *= f;
          c.max_logw = lw;
        }
        double w = std::exp(lw - c.max_logw);
        c.mass += w;
        c.moment += w * z;
      }
      std::vector<LevelNode> merged;
      std::vector<double> merged_logw;
      merged.reserve(cells.size());
      merged_logw.reserve(cells.size());
      for (const auto& [key, c] : cells) {
        (void)key;
        if (c.mass <= 0.0) continue;
        double lw = c.max_logw + std::log(c.mass);
        merged.push_back({c.moment / c.mass, -lw / t});
        merged_logw.push_back(lw);
      }
      next = std::move(merged);
      next_logw = std::move(merged_logw);
    }
    if (next.size() > opt.max_parents) {
      std::vector<std::size_t> order(next.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(opt.max_parents),
                       order.end(), [&](std::size_t a, std::size_t b) {
                         if (next_logw[a] != next_logw[b]) return next_logw[a] > next_logw[b];
                         return a < b;
                       });
      std::vector<LevelNode> kept;
      std::vector<double> kept_logw;
      kept.reserve(opt.max_parents);
      kept_logw.reserve(opt.max_parents);
      for (std::size_t i = 0; i < opt.max_parents; ++i) {
        kept.push_back(next[order[i]]);
        kept_logw.push_back(next_logw[order[i]]);
      }
      for (std::size_t i = opt.max_parents; i < order.size(); ++i)
        dropped.add_log(next_logw[order[i]]);
      next = std::move(kept);
      next_logw = std::move(kept_logw);
      out.budget_clamped = true;
    }
    extra_tail_mass_log =
        (dropped.count() > 0 && !divergent_t) ? dropped.log_sum() + std::log(shape) : kNegInf;
    parents = std::move(next);
    parent_logw = std::move(next_logw);
    if (parents.empty()) {
      // nothing left to expand; emit empty records for the remaining depths
      for (int d = depth + 1; d <= opt.max_depth; ++d) {
        std::vector<PartialSumRecord> empty_recs;
        for (std::size_t r = 0; r <= nrestr; ++r) {
          PartialSumRecord rec;
          rec.n = d;
          rec.t = t;
          rec.restriction = (r == 0) ? Restriction::none() : opt.restrictions[r - 1];
          rec.max_k = max_k_running;
          rec.budget_clamped = out.budget_clamped;
          rec.divergent_tail = divergent_t;
          rec.tail_bound = divergent_t ? kPosInf : cum_tail;
          empty_recs.push_back(rec);
        }
        out.records.push_back(std::move(empty_recs));
        if (opt.keep_levels) out.levels.emplace_back();
      }
      break;
    }
  }
  return out;
}

namespace detail {

struct Candidate {
  double key;  // estimated log weight of the next child
  std::uint32_t parent;
  std::int32_t next_m;  // 0: principal child pending, m >= 1: pair +-m pending

  bool operator<(const Candidate& o) const {
    if (key != o.key) return key < o.key;  // max-heap on key
    if (parent != o.parent) return parent > o.parent;
    return next_m > o.next_m;
  }
};

}  // namespace detail

// Best-first adaptive expansion of one level. Defined out of line for
// readability; only used by expand_preimage_tree.
inline void expand_level_adaptive(const TranscendentalMap& map, double t,
                                  const std::vector<LevelNode>& parents,
                                  const std::vector<double>& parent_logw,
                                  const ExpansionOptions& opt, int depth,
                                  double extra_tail_mass_log, detail::LevelOutcome& lvl,
                                  std::vector<TreeIssue>& issues) {
  const double eps = opt.cutoff.eps_trunc;
  const bool divergent_t = lvl.divergent;
  const double inv_2t1 = divergent_t ? 0.0 : 1.0 / (2.0 * t - 1.0);

  // candidate keys: estimated log weights of the principal child and of the
  // first sheet pair, from the closed-form branch geometry
  std::vector<double> key0(parents.size(), kNegInf), key1(parents.size(), kNegInf);
  double frame = kNegInf;
  for (std::size_t p = 0; p < parents.size(); ++p) {
    detail::SheetEstimator est(map, parents[p].value);
    if (!est.valid) continue;
    key0[p] = parent_logw[p] - t * est.est_log_fstar(0);
    key1[p] = parent_logw[p] - t * std::min(est.est_log_fstar(1), est.est_log_fstar(-1));
    if (!std::isfinite(key1[p])) key1[p] = key0[p] - 2.0 * t;
    if (std::isfinite(key0[p])) frame = std::max(frame, key0[p]);
  }
  if (frame == kNegInf) frame = 0.0;

  CompensatedSum tail_ledger;  // linear, scaled by e^{-frame}
  std::vector<double> tau(parents.size(), 0.0);
  std::priority_queue<detail::Candidate> pq;
  for (std::size_t p = 0; p < parents.size(); ++p) {
    if (!std::isfinite(key0[p])) continue;
    if (!divergent_t) {
      // not-yet-generated mass: center term plus both sheet tails
      tau[p] = std::exp(key0[p] - frame) +
               2.0 * std::exp(key1[p] - frame) * (1.0 + inv_2t1);
      tail_ledger.add(tau[p]);
    }
    pq.push({key0[p], static_cast<std::uint32_t>(p), 0});
  }
  if (extra_tail_mass_log != kNegInf && !divergent_t)
    tail_ledger.add(std::exp(extra_tail_mass_log - frame));

  const double log_eps = std::log(eps);
  auto should_stop = [&]() -> bool {
    if (divergent_t) return false;
    double T = std::max(tail_ledger.value(), 0.0);
    if (T <= 0.0) return true;
    double ls = lvl.sums.acc[0].log_sum();
    if (ls == kNegInf) return false;
    return std::log(T) + frame <= log_eps + ls;
  };

  struct ChildGen {
    double logw = kNegInf;       // propagated mass (includes any bracket multiplicity)
    double log_point = kNegInf;  // single-point weight, used for tail extrapolation
    bool exists = false;
    bool in_window = false;
  };
  // log_mass_offset > 0 when the point stands for a whole sheet bracket
  auto make_child = [&](std::size_t p, long k, double log_mass_offset) -> ChildGen {
    ChildGen g;
    BranchIssue bi;
    std::optional<Complex> z;
    try {
      z = map.inverse_branch(parents[p].value, k, &bi);
    } catch (const OmittedValueError& e) {
      issues.push_back({depth, parents[p].value, std::string("omitted value at node: ") + e.what()});
      return g;
    }
    if (!z) {
      issues.push_back({depth, parents[p].value, bi.what + " (k=" + std::to_string(k) + ")"});
      return g;
    }
    double lf = map.log_spherical_derivative(*z);
    if (!std::isfinite(lf)) {
      issues.push_back({depth, *z, "non-finite log f* at preimage"});
      return g;
    }
    g.exists = true;
    g.log_point = parent_logw[p] - t * lf;
    g.logw = g.log_point + log_mass_offset;
    if (!opt.node_window.contains(*z)) {
      lvl.window_dropped.add_log(g.logw);
      return g;
    }
    g.in_window = true;
    double ld = parents[p].log_deriv + lf;
    lvl.sums.add_term(g.logw, *z, opt.restrictions);
    lvl.children.push_back({*z, ld});
    lvl.child_logw.push_back(g.logw);
    lvl.max_k = std::max(lvl.max_k, std::labs(k));
    return g;
  };

  auto retire = [&](std::size_t p, bool to_window) {
    if (divergent_t) return;
    if (to_window && tau[p] > 0.0) lvl.window_dropped.add_scaled(tau[p], frame);
    tail_ledger.add(-tau[p]);
    tau[p] = 0.0;
  };

  while (!pq.empty()) {
    if (should_stop()) break;
    if (lvl.sums.counts[0] + 2 > opt.node_budget) {
      if (opt.budget_policy == BudgetPolicy::Strict)
        throw TreeBudgetExceededError(depth, opt.node_budget);
      lvl.clamped = true;
      break;
    }
    detail::Candidate c = pq.top();
    pq.pop();
    const std::size_t p = c.parent;
    double next_key;
    std::int32_t next_m;
    if (c.next_m == 0) {
      ChildGen g = make_child(p, 0, 0.0);
      if (g.exists && !g.in_window) {
        // the principal preimage is the innermost; the whole node is outside
        retire(p, true);
        continue;
      }
      if (!g.exists && map.family() != MapFamily::Zexp) {
        retire(p, false);  // omitted node
        continue;
      }
      if (!divergent_t) {
        // remaining mass: both sheet tails, estimated from the first pair
        double tau_new = 2.0 * std::exp(key1[p] - frame) * (1.0 + inv_2t1);
        tail_ledger.add(tau_new - tau[p]);
        tau[p] = tau_new;
      }
      next_key = key1[p];
      next_m = 1;
    } else if (!opt.coarse_sheets || c.next_m <= opt.coarse_base) {
      const long m = c.next_m;
      ChildGen gp = make_child(p, m, 0.0);
      ChildGen gm = make_child(p, -m, 0.0);
      if (!gp.in_window && !gm.in_window) {
        // sheets have left the window (or the sheets are missing): the
        // remaining tail of this node lies outside
        bool outside = gp.exists || gm.exists;
        retire(p, outside);
        continue;
      }
      if (!divergent_t) {
        double lin = 0.0;
        if (gp.in_window) lin += std::exp(gp.logw - frame);
        if (gm.in_window) lin += std::exp(gm.logw - frame);
        double tau_new = lin * static_cast<double>(m) * inv_2t1;
        tail_ledger.add(tau_new - tau[p]);
        tau[p] = tau_new;
      }
      next_key = std::max(gp.in_window ? gp.logw : kNegInf, gm.in_window ? gm.logw : kNegInf);
      next_m = c.next_m + 1;
    } else {
      // geometric sheet bracket [k_lo, k_hi) represented at the log-midpoint
      const long k_lo = c.next_m;
      const long k_hi = std::max(k_lo + 1, static_cast<long>(std::ceil(k_lo * opt.coarse_ratio)));
      long k_star = std::lround(std::sqrt(static_cast<double>(k_lo) * static_cast<double>(k_hi - 1)));
      k_star = std::clamp(k_star, k_lo, k_hi - 1);
      // bracket mass multiplier under the k^{-2t} model, normalized at k_star
      double log_mult;
      const double p2 = 2.0 * t;
      if (std::abs(p2 - 1.0) > 1e-9) {
        double s = (std::pow(static_cast<double>(k_lo), 1.0 - p2) -
                    std::pow(static_cast<double>(k_hi), 1.0 - p2)) /
                   (p2 - 1.0);
        log_mult = p2 * std::log(static_cast<double>(k_star)) + std::log(std::max(s, 1e-300));
      } else {
        log_mult = std::log(static_cast<double>(k_star)) +
                   std::log(std::log(static_cast<double>(k_hi) / static_cast<double>(k_lo)));
      }
      ChildGen gp = make_child(p, k_star, log_mult);
      ChildGen gm = make_child(p, -k_star, log_mult);
      if (!gp.in_window && !gm.in_window) {
        bool outside = gp.exists || gm.exists;
        retire(p, outside);
        continue;
      }
      if (!divergent_t) {
        double lin = 0.0;
        if (gp.in_window) lin += std::exp(gp.log_point - frame);
        if (gm.in_window) lin += std::exp(gm.log_point - frame);
        // remaining mass beyond k_hi under the same model
        double tau_new = lin * std::pow(static_cast<double>(k_star) / static_cast<double>(k_hi), p2) *
                         static_cast<double>(k_hi) * inv_2t1;
        tail_ledger.add(tau_new - tau[p]);
        tau[p] = tau_new;
      }
      next_key = std::max(gp.in_window ? gp.logw : kNegInf, gm.in_window ? gm.logw : kNegInf);
      next_m = static_cast<std::int32_t>(k_hi);
    }
    // retire enumeration below the weight floor
    double ls = lvl.sums.acc[0].log_sum();
    if (opt.prune_weight_rel > 0.0 && ls != kNegInf &&
        next_key < ls + std::log(opt.prune_weight_rel)) {
      retire(p, false);
      continue;
    }
    pq.push({next_key, c.parent, next_m});
  }

  if (divergent_t) {
    lvl.tail_rel = kPosInf;
  } else {
    double T = std::max(tail_ledger.value(), 0.0);
    double ls = lvl.sums.acc[0].log_sum();
    lvl.tail_rel = (T <= 0.0 || ls == kNegInf) ? 0.0 : std::exp(std::log(T) + frame - ls);
  }
}

// ---------------------------------------------------------------------------
// Single-step sums and address-carrying orbits (small-scale utilities)
// ---------------------------------------------------------------------------

struct OneStepSum {
  double log_sum = kNegInf;
  std::size_t term_count = 0;
  double tail_rel = 0.0;
  long max_k = 0;
};

// S_1(t, z) restricted to `restr`, with the same adaptive sheet rule as the
// tree engine (or a fixed cutoff).
inline OneStepSum one_step_sum(const TranscendentalMap& map, double t, Complex z,
                               Cutoff cutoff = Cutoff::adaptive(1e-8),
                               Restriction restr = Restriction::none(), long hard_cap = 2000000) {
  OneStepSum out;
  LogSumExp acc, acc_all;
  const bool divergent_t = (2.0 * t - 1.0) <= 1e-9;
  auto term = [&](long k) -> double {
    auto zk = map.inverse_branch(z, k);
    if (!zk) return kNegInf;
    double lw = -t * map.log_spherical_derivative(*zk);
    acc_all.add_log(lw);
    if (restr.contains(*zk)) {
      acc.add_log(lw);
      ++out.term_count;
    }
    out.max_k = std::max(out.max_k, std::labs(k));
    return lw;
  };
  if (cutoff.mode == Cutoff::Mode::Fixed) {
    for (long k = -cutoff.fixed_K; k <= cutoff.fixed_K; ++k) term(k);
    out.log_sum = acc.log_sum();
    return out;
  }
  double w0 = term(0);
  double frame = (w0 == kNegInf) ? 0.0 : w0;
  bool satisfied = false;
  for (long m = 1; m <= hard_cap; ++m) {
    double wp = term(m), wm = term(-m);
    double lin = 0.0;
    if (wp != kNegInf) lin += std::exp(wp - frame);
    if (wm != kNegInf) lin += std::exp(wm - frame);
    if (!divergent_t) {
      double tail = lin * static_cast<double>(m) / (2.0 * t - 1.0);
      double ls = acc_all.log_sum();
      if (ls != kNegInf && lin > 0.0 &&
          std::log(tail) + frame <= std::log(cutoff.eps_trunc) + ls) {
        out.tail_rel = std::exp(std::log(tail) + frame - ls);
        satisfied = true;
        break;
      }
    }
    if (lin == 0.0 && m > 4) {
      satisfied = true;
      break;
    }
  }
  if (!satisfied) out.tail_rel = kPosInf;
  out.log_sum = acc.log_sum();
  return out;
}

struct BranchOrbit {
  std::vector<long> address;  // address[j] = sheet chosen at step j+1 of the backward orbit
  Complex endpoint{};
  double log_deriv = 0.0;  // log |(f^n)*(endpoint)|
  int depth = 0;
};

// Exhaustive fixed-K enumeration with full addresses; intended for tests and
// distortion checks at small depth.
inline std::vector<BranchOrbit> enumerate_branch_orbits(const TranscendentalMap& map, Complex z0,
                                                        int depth, int K,
                                                        std::size_t max_orbits = 2000000) {
  std::vector<BranchOrbit> cur{BranchOrbit{{}, z0, 0.0, 0}};
  for (int d = 1; d <= depth; ++d) {
    std::vector<BranchOrbit> next;
    next.reserve(cur.size() * (2 * static_cast<std::size_t>(K) + 1));
    for (const auto& o : cur) {
      BranchSet bs = map.inverse_branches(o.endpoint, K);
      for (const auto& b : bs.branches) {
        double lf = map.log_spherical_derivative(b.z);
        if (!std::isfinite(lf)) continue;
        BranchOrbit no;
        no.address = o.address;
        no.address.push_back(b.k);
        no.endpoint = b.z;
        no.log_deriv = o.log_deriv + lf;
        no.depth = d;
        next.push_back(std::move(no));
        if (next.size() > max_orbits)
          throw TreeBudgetExceededError(d, max_orbits);
      }
    }
    cur = std::move(next);
  }
  return cur;
}

// Spec'd single-record entry point; n = 0 returns the empty-composition
// convention S_0 = 1.
inline PartialSumRecord partial_sum(const TranscendentalMap& map, double t, Complex z0, int n,
                                    Cutoff cutoff, Restriction restr = Restriction::none(),
                                    std::size_t node_budget = 10'000'000,
                                    BudgetPolicy policy = BudgetPolicy::Clamp) {
  if (n == 0) {
    PartialSumRecord rec;
    rec.n = 0;
    rec.t = t;
    rec.restriction = restr;
    rec.log_sum = 0.0;
    rec.term_count = 1;
    return rec;
  }
  ExpansionOptions opt;
  opt.max_depth = n;
  opt.cutoff = cutoff;
  opt.node_budget = node_budget;
  opt.budget_policy = policy;
  if (restr.kind != Restriction::Kind::None) opt.restrictions.push_back(restr);
  ExpansionResult res = expand_preimage_tree(map, t, z0, opt);
  return res.record(n, restr.kind == Restriction::Kind::None ? 0 : 1);
}

}  // namespace plab
