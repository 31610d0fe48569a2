#pragma once

// Map families f(z) = lambda*e^z, lambda*sin z, lambda*tan z, z*e^z with
// exact evaluation, spherical derivatives in log form, and indexed inverse
// branches. Branch indexing: sheet k is the 2*pi*i*k translate for Exp/Zexp,
// the arcsin sheet-plus-parity for Sin, and the arctan sheet for Tan.

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pressure_lab/util.hpp"

namespace plab {

enum class MapFamily { Exp, Sin, Tan, Zexp };

inline const char* family_name(MapFamily f) {
  switch (f) {
    case MapFamily::Exp: return "exp";
    case MapFamily::Sin: return "sin";
    case MapFamily::Tan: return "tan";
    case MapFamily::Zexp: return "zexp";
  }
  return "?";
}

inline std::optional<MapFamily> family_from_name(const std::string& s) {
  if (s == "exp") return MapFamily::Exp;
  if (s == "sin") return MapFamily::Sin;
  if (s == "tan") return MapFamily::Tan;
  if (s == "zexp") return MapFamily::Zexp;
  return std::nullopt;
}

struct SphericalPoint {
  Complex value{};
  bool at_infinity = false;

  static SphericalPoint finite(Complex z) { return {z, false}; }
  static SphericalPoint infinity() { return {Complex{}, true}; }

  double chordal_to(const SphericalPoint& o) const {
    if (at_infinity && o.at_infinity) return 0.0;
    if (at_infinity) return chordal_distance_to_infinity(o.value);
    if (o.at_infinity) return chordal_distance_to_infinity(value);
    return chordal_distance(value, o.value);
  }
};

struct BranchIndex {
  long k = 0;
};

struct InverseBranch {
  long k = 0;
  Complex z{};
};

struct BranchIssue {
  long k = 0;
  Complex w{};
  std::string what;
};

struct BranchSet {
  std::vector<InverseBranch> branches;
  std::vector<BranchIssue> issues;  // Newton failures and missing sheets, never dropped silently
};

class OmittedValueError : public std::runtime_error {
 public:
  explicit OmittedValueError(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {

// tan(x+iy) = (sin 2x + i sinh 2y) / (cos 2x + cosh 2y); stable for large |y|.
inline SphericalPoint stable_tan(Complex z) {
  const double x2 = 2.0 * z.real(), y2 = 2.0 * z.imag();
  if (std::abs(y2) > 700.0) return SphericalPoint::finite(Complex(0.0, y2 > 0 ? 1.0 : -1.0));
  const double den = std::cos(x2) + std::cosh(y2);
  if (den == 0.0) return SphericalPoint::infinity();
  return SphericalPoint::finite(Complex(std::sin(x2) / den, std::sinh(y2) / den));
}

// log(sin^2 x + sinh^2 y) and log(cos^2 x + sinh^2 y) without overflow.
inline double log_abs2_sin(Complex z) {
  const double x = z.real(), ay = std::abs(z.imag());
  if (ay > 20.0) return 2.0 * ay - std::log(4.0);
  const double sh = std::sinh(ay);
  double v = sq(std::sin(x)) + sh * sh;
  return v > 0 ? std::log(v) : kNegInf;
}

inline double log_abs2_cos(Complex z) {
  const double x = z.real(), ay = std::abs(z.imag());
  if (ay > 20.0) return 2.0 * ay - std::log(4.0);
  const double sh = std::sinh(ay);
  double v = sq(std::cos(x)) + sh * sh;
  return v > 0 ? std::log(v) : kNegInf;
}

inline long floor_div(long a, long b) {
  long q = a / b, r = a % b;
  return (r != 0 && ((r < 0) != (b < 0))) ? q - 1 : q;
}

}  // namespace detail

class TranscendentalMap {
 public:
  TranscendentalMap(MapFamily family, Complex lambda = Complex(1.0, 0.0))
      : family_(family), lambda_(lambda) {
    if (family_ != MapFamily::Zexp && lambda_ == Complex(0.0, 0.0))
      throw std::invalid_argument("lambda must be nonzero for exp/sin/tan families");
  }

  MapFamily family() const { return family_; }
  Complex lambda() const { return lambda_; }
  bool is_entire() const { return family_ != MapFamily::Tan; }

  // Finite singular (critical and asymptotic) values.
  std::vector<Complex> singular_values() const {
    switch (family_) {
      case MapFamily::Exp: return {Complex(0, 0)};
      case MapFamily::Sin: return {lambda_, -lambda_};
      case MapFamily::Tan: return {Complex(0, 1) * lambda_, Complex(0, -1) * lambda_};
      case MapFamily::Zexp: return {Complex(0, 0), Complex(-std::exp(-1.0), 0)};
    }
    return {};
  }

  // Values with no preimage on any sheet. For Zexp the value 0 is exceptional
  // rather than omitted: f^{-1}(0) = {0}.
  std::vector<Complex> omitted_values() const {
    switch (family_) {
      case MapFamily::Exp: return {Complex(0, 0)};
      case MapFamily::Tan: return {Complex(0, 1) * lambda_, Complex(0, -1) * lambda_};
      default: return {};
    }
  }

  SphericalPoint evaluate(Complex z) const {
    Complex v;
    switch (family_) {
      case MapFamily::Exp: {
        if (z.real() > 700.0) return SphericalPoint::infinity();
        v = lambda_ * std::exp(z);
        break;
      }
      case MapFamily::Sin: {
        if (std::abs(z.imag()) > 700.0) return SphericalPoint::infinity();
        v = lambda_ * std::sin(z);
        break;
      }
      case MapFamily::Tan: {
        SphericalPoint t = detail::stable_tan(z);
        if (t.at_infinity) return t;
        v = lambda_ * t.value;
        break;
      }
      case MapFamily::Zexp: {
        if (z.real() > 690.0 && std::abs(z) > 0.0) return SphericalPoint::infinity();
        v = z * std::exp(z);
        break;
      }
    }
    if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) return SphericalPoint::infinity();
    return SphericalPoint::finite(v);
  }

  Complex derivative(Complex z) const {
    switch (family_) {
      case MapFamily::Exp: return lambda_ * std::exp(z);
      case MapFamily::Sin: return lambda_ * std::cos(z);
      case MapFamily::Tan: {
        SphericalPoint t = detail::stable_tan(z);
        if (t.at_infinity) return Complex(kPosInf, 0);
        return lambda_ * (Complex(1, 0) + t.value * t.value);
      }
      case MapFamily::Zexp: return std::exp(z) * (Complex(1, 0) + z);
    }
    return {};
  }

  Complex second_derivative(Complex z) const {
    switch (family_) {
      case MapFamily::Exp: return lambda_ * std::exp(z);
      case MapFamily::Sin: return -lambda_ * std::sin(z);
      case MapFamily::Tan: {
        SphericalPoint t = detail::stable_tan(z);
        if (t.at_infinity) return Complex(kPosInf, 0);
        Complex sec2 = Complex(1, 0) + t.value * t.value;
        return 2.0 * lambda_ * t.value * sec2;
      }
      case MapFamily::Zexp: return std::exp(z) * (Complex(2, 0) + z);
    }
    return {};
  }

  // log f*(z) with f*(z) = (1+|z|^2)|f'(z)| / (1+|f(z)|^2). Each family is
  // reduced algebraically so the value stays finite at poles of Tan and for
  // arbitrarily large |Re z| / |Im z|; this realizes the continuous extension
  // through the poles that the reciprocal map 1/f provides.
  double log_spherical_derivative(Complex z) const {
    const double lz2 = std::log1p(abs2(z));
    const double la = std::log(std::abs(lambda_));
    switch (family_) {
      case MapFamily::Exp: {
        const double e = la + z.real();  // log|f| = log|f'|
        return lz2 + e - log1p_exp(2.0 * e);
      }
      case MapFamily::Sin: {
        const double lcos2 = detail::log_abs2_cos(z);
        const double lsin2 = detail::log_abs2_sin(z);
        // log(1+|f|^2) = log1p(e^{2 la + lsin2})
        return lz2 + la + 0.5 * lcos2 - log1p_exp(2.0 * la + lsin2);
      }
      case MapFamily::Tan: {
        // f* = (1+|z|^2)|lambda| / (|cos z|^2 + |lambda|^2 |sin z|^2)
        const double lcos2 = detail::log_abs2_cos(z);
        const double lsin2 = detail::log_abs2_sin(z);
        double denom;
        if (lcos2 == kNegInf)
          denom = 2.0 * la + lsin2;
        else
          denom = lcos2 + log1p_exp(2.0 * la + lsin2 - lcos2);
        return lz2 + la - denom;
      }
      case MapFamily::Zexp: {
        const double l1pz = std::log(std::abs(Complex(1, 0) + z));
        const double x = z.real();
        const double lf2 = (z == Complex(0, 0)) ? kNegInf : std::log(abs2(z)) + 2.0 * x;
        return lz2 + l1pz + x - log1p_exp(lf2);
      }
    }
    return kNegInf;
  }

  double spherical_derivative(Complex z) const {
    double l = log_spherical_derivative(z);
    return l == kNegInf ? 0.0 : std::exp(l);
  }

  // Tan poles sit at pi/2 + k*pi on the real axis.
  bool near_pole(Complex z, double tol = 1e-9) const {
    if (family_ != MapFamily::Tan) return false;
    double k = std::round((z.real() - kPi / 2.0) / kPi);
    Complex pole(kPi / 2.0 + k * kPi, 0.0);
    return std::abs(z - pole) < tol;
  }

  // Single inverse branch on sheet k. Returns nullopt (with an issue record
  // when a pointer is given) when the sheet carries no preimage or the Zexp
  // Newton solve fails. Throws OmittedValueError for globally omitted values.
  std::optional<Complex> inverse_branch(Complex w, long k, BranchIssue* issue = nullptr) const {
    switch (family_) {
      case MapFamily::Exp: {
        if (w == Complex(0, 0)) throw OmittedValueError("exp family omits 0");
        return std::log(w / lambda_) + Complex(0.0, kTwoPi * static_cast<double>(k));
      }
      case MapFamily::Sin: {
        const Complex a = std::asin(w / lambda_);
        const long m = detail::floor_div(k, 2);
        const long parity = k - 2 * m;
        Complex base = (parity == 0) ? a : (Complex(kPi, 0) - a);
        return base + Complex(kTwoPi * static_cast<double>(m), 0.0);
      }
      case MapFamily::Tan: {
        const Complex c = w / lambda_;
        if (c == Complex(0, 1) || c == Complex(0, -1))
          throw OmittedValueError("tan family omits +-i*lambda");
        return std::atan(c) + Complex(kPi * static_cast<double>(k), 0.0);
      }
      case MapFamily::Zexp:
        return zexp_branch(w, k, issue);
    }
    return std::nullopt;
  }

  // All preimages with |k| <= K, exhaustive in the limit K -> infinity.
  BranchSet inverse_branches(Complex w, int K) const {
    BranchSet out;
    if (family_ == MapFamily::Zexp && w == Complex(0, 0)) {
      out.branches.push_back({0, Complex(0, 0)});  // exceptional value: f^{-1}(0) = {0}
      return out;
    }
    for (long k = -K; k <= K; ++k) {
      BranchIssue issue;
      auto z = inverse_branch(w, k, &issue);
      if (!z) {
        out.issues.push_back(issue);
        continue;
      }
      bool dup = false;
      for (const auto& b : out.branches)
        if (std::abs(b.z - *z) <= 1e-12 * (1.0 + std::abs(*z))) dup = true;  // critical-value collision
      if (!dup) out.branches.push_back({k, *z});
    }
    return out;
  }

  // Preimages of w that can meet the Euclidean disc D(center, radius);
  // sheets step by 2*pi in Im (Exp/Zexp) or in Re (Sin, step pi for Tan).
  std::vector<Complex> preimages_in_disc(Complex w, Complex center, double radius) const {
    std::vector<Complex> hits;
    auto consider = [&](std::optional<Complex> z) {
      if (z && std::abs(*z - center) < radius) {
        for (const auto& h : hits)
          if (std::abs(h - *z) <= 1e-12 * (1.0 + std::abs(*z))) return;
        hits.push_back(*z);
      }
    };
    switch (family_) {
      case MapFamily::Exp: {
        if (w == Complex(0, 0)) return hits;
        const double im0 = std::log(w / lambda_).imag();
        long lo = static_cast<long>(std::floor((center.imag() - radius - im0) / kTwoPi)) - 1;
        long hi = static_cast<long>(std::ceil((center.imag() + radius - im0) / kTwoPi)) + 1;
        for (long k = lo; k <= hi; ++k) consider(inverse_branch(w, k));
        break;
      }
      case MapFamily::Zexp: {
        if (w == Complex(0, 0)) {
          consider(Complex(0, 0));
          break;
        }
        const double im0 = std::arg(w);
        long lo = static_cast<long>(std::floor((center.imag() - radius - im0) / kTwoPi)) - 2;
        long hi = static_cast<long>(std::ceil((center.imag() + radius - im0) / kTwoPi)) + 2;
        for (long k = lo; k <= hi; ++k) consider(inverse_branch(w, k));
        break;
      }
      case MapFamily::Sin: {
        const Complex a = std::asin(w / lambda_);
        for (int parity = 0; parity <= 1; ++parity) {
          double base = (parity == 0) ? a.real() : kPi - a.real();
          long lo = static_cast<long>(std::floor((center.real() - radius - base) / kTwoPi)) - 1;
          long hi = static_cast<long>(std::ceil((center.real() + radius - base) / kTwoPi)) + 1;
          for (long m = lo; m <= hi; ++m) consider(inverse_branch(w, 2 * m + parity));
        }
        break;
      }
      case MapFamily::Tan: {
        const Complex a = std::atan(w / lambda_);
        long lo = static_cast<long>(std::floor((center.real() - radius - a.real()) / kPi)) - 1;
        long hi = static_cast<long>(std::ceil((center.real() + radius - a.real()) / kPi)) + 1;
        for (long k = lo; k <= hi; ++k) consider(inverse_branch(w, k));
        break;
      }
    }
    return hits;
  }

 private:
  std::optional<Complex> zexp_branch(Complex w, long k, BranchIssue* issue) const {
    if (w == Complex(0, 0)) {
      if (k == 0) return Complex(0, 0);
      if (issue) *issue = {k, w, "no preimage of 0 on sheet"};
      return std::nullopt;
    }
    const Complex L = std::log(w) + Complex(0.0, kTwoPi * static_cast<double>(k));
    Complex z;
    if (std::abs(L) > 1.8)
      z = L - std::log(L);
    else if (k == 0 && std::abs(w) < 0.7)
      z = w * (Complex(1, 0) - w);
    else
      z = L;
    const double tol = 1e-12 * (1.0 + std::abs(w));
    double best = kPosInf;
    for (int it = 0; it < 80; ++it) {
      Complex ez = std::exp(z);
      Complex r = z * ez - w;
      double err = std::abs(r);
      if (err <= tol) {
        // loose sheet check: catches gross branch collisions from bad seeds
        double target = std::arg(w) + kTwoPi * static_cast<double>(k);
        if (std::abs(z.imag() - target) > kPi + 1.0 && std::abs(L) > 3.0) {
          if (issue) *issue = {k, w, "sheet mismatch after Newton"};
          return std::nullopt;
        }
        return z;
      }
      Complex d = ez * (Complex(1, 0) + z);
      if (d == Complex(0, 0)) break;
      Complex step = r / d;
      // damp when the step would overshoot badly
      if (err > best * 4.0 && best < kPosInf) step *= 0.5;
      best = std::min(best, err);
      z -= step;
      if (!std::isfinite(z.real()) || !std::isfinite(z.imag())) break;
    }
    if (issue) *issue = {k, w, "Newton did not converge"};
    return std::nullopt;
  }

  MapFamily family_;
  Complex lambda_;
};

// ---------------------------------------------------------------------------
// Orbit classification and singular-orbit diagnostics
// ---------------------------------------------------------------------------

enum class OrbitClass { Escaping, BoundedReturns, HitPole, Undecided };

inline const char* orbit_class_name(OrbitClass c) {
  switch (c) {
    case OrbitClass::Escaping: return "ESCAPING";
    case OrbitClass::BoundedReturns: return "BOUNDED_RETURNS";
    case OrbitClass::HitPole: return "HIT_POLE";
    case OrbitClass::Undecided: return "UNDECIDED";
  }
  return "?";
}

struct OrbitClassifyOptions {
  int max_iter = 256;
  double escape_radius = 1e6;
  double bound_radius = 1e3;
  double pole_tol = 1e-9;
};

inline OrbitClass classify_orbit(const TranscendentalMap& map, Complex z,
                                 const OrbitClassifyOptions& opt = {}) {
  if (opt.max_iter < 1 || opt.escape_radius <= opt.bound_radius || opt.bound_radius <= 0)
    throw std::invalid_argument("classify_orbit: need max_iter >= 1, R_esc > R_bnd > 0");
  std::vector<double> mods;
  mods.reserve(static_cast<std::size_t>(opt.max_iter));
  Complex cur = z;
  for (int i = 0; i < opt.max_iter; ++i) {
    if (map.near_pole(cur, opt.pole_tol)) return OrbitClass::HitPole;
    SphericalPoint p = map.evaluate(cur);
    if (p.at_infinity)
      return map.is_entire() ? OrbitClass::Escaping : OrbitClass::HitPole;
    cur = p.value;
    mods.push_back(std::abs(cur));
  }
  const std::size_t n = mods.size();
  // escaping: beyond R_esc and non-decreasing over the last quarter
  std::size_t q = n - n / 4;
  bool esc = true;
  for (std::size_t i = q; i < n; ++i) {
    if (mods[i] <= opt.escape_radius || (i > q && mods[i] < mods[i - 1])) {
      esc = false;
      break;
    }
  }
  if (esc && n >= 4) return OrbitClass::Escaping;
  // bounded returns: dips below R_bnd keep happening in the last half
  std::size_t returns = 0;
  for (std::size_t i = n / 2; i < n; ++i)
    if (mods[i] < opt.bound_radius) ++returns;
  if (returns >= 2) return OrbitClass::BoundedReturns;
  return OrbitClass::Undecided;
}

struct SingularOrbitEntry {
  Complex start{};
  bool escaped = false;
  bool hit_pole = false;
  int cycle_period = 0;  // 0: no cycle detected
  double multiplier_abs = kPosInf;
  std::vector<Complex> cycle;
  double orbit_bound = 0.0;
  bool attracting = false;
  bool parabolic = false;
};

struct HyperbolicityReport {
  std::vector<SingularOrbitEntry> orbits;
  bool hyperbolic_evidence = false;
  double post_singular_bound = 0.0;
  double dist_to_julia_samples = kPosInf;
  std::vector<Complex> julia_samples;
};

// Repelling fixed point on sheet k: inverse-branch iteration (which contracts
// towards repelling fixed points) followed by a Newton polish on f(z) - z.
inline std::optional<Complex> find_repelling_fixed_point(const TranscendentalMap& map, long k,
                                                         Complex seed = Complex(2.0, 0.5)) {
  Complex z = seed;
  try {
    for (int i = 0; i < 400; ++i) {
      auto nz = map.inverse_branch(z, k);
      if (!nz || !std::isfinite(nz->real()) || !std::isfinite(nz->imag())) return std::nullopt;
      if (std::abs(*nz - z) < 1e-13 * (1.0 + std::abs(*nz))) {
        z = *nz;
        break;
      }
      z = *nz;
    }
  } catch (const OmittedValueError&) {
    return std::nullopt;
  }
  for (int i = 0; i < 30; ++i) {
    SphericalPoint fz = map.evaluate(z);
    if (fz.at_infinity) return std::nullopt;
    Complex g = fz.value - z;
    Complex dg = map.derivative(z) - Complex(1, 0);
    if (dg == Complex(0, 0)) break;
    Complex step = g / dg;
    z -= step;
    if (std::abs(step) < 1e-14 * (1.0 + std::abs(z))) break;
  }
  SphericalPoint fz = map.evaluate(z);
  if (fz.at_infinity || std::abs(fz.value - z) > 1e-9 * (1.0 + std::abs(z))) return std::nullopt;
  if (std::abs(map.derivative(z)) <= 1.0 + 1e-9) return std::nullopt;
  return z;
}

// Julia-set samples used by diagnostics: repelling fixed points across sheets.
inline std::vector<Complex> julia_point_samples(const TranscendentalMap& map, int count = 4) {
  std::vector<Complex> out;
  for (long k = 0; k <= count + 2 && static_cast<int>(out.size()) < count; ++k) {
    for (long sgn : {1L, -1L}) {
      long kk = sgn * k;
      if (k == 0 && sgn < 0) continue;
      auto p = find_repelling_fixed_point(map, kk);
      if (p) {
        bool dup = false;
        for (const auto& q : out)
          if (std::abs(q - *p) < 1e-8) dup = true;
        if (!dup) out.push_back(*p);
      }
      if (static_cast<int>(out.size()) >= count) break;
    }
  }
  return out;
}

// Iterates every finite singular value and reports attracting-cycle evidence.
// Divergence shows up as escaped = true (not an exception).
inline HyperbolicityReport singular_orbit_report(const TranscendentalMap& map, int max_iter = 2000) {
  if (max_iter < 1) throw std::invalid_argument("singular_orbit_report: max_iter >= 1");
  HyperbolicityReport rep;
  rep.julia_samples = julia_point_samples(map);
  bool all_attracting = true;
  for (Complex s : map.singular_values()) {
    SingularOrbitEntry e;
    e.start = s;
    std::vector<Complex> orbit{s};
    Complex cur = s;
    for (int i = 0; i < max_iter; ++i) {
      if (map.near_pole(cur)) {
        e.hit_pole = true;
        break;
      }
      SphericalPoint p = map.evaluate(cur);
      if (p.at_infinity) {
        e.escaped = map.is_entire();
        e.hit_pole = !map.is_entire();
        break;
      }
      cur = p.value;
      orbit.push_back(cur);
      if (std::abs(cur) > 1e8) {
        e.escaped = true;
        break;
      }
    }
    for (const auto& p : orbit) e.orbit_bound = std::max(e.orbit_bound, std::abs(p));
    if (!e.escaped && !e.hit_pole && orbit.size() > 100) {
      const std::size_t m = orbit.size() - 1;
      for (int p = 1; p <= 24 && e.cycle_period == 0; ++p) {
        bool cyc = true;
        for (int j = 0; j < 3 * p; ++j) {
          std::size_t a = m - static_cast<std::size_t>(j);
          std::size_t b = a - static_cast<std::size_t>(p);
          if (std::abs(orbit[a] - orbit[b]) > 1e-8 * (1.0 + std::abs(orbit[a]))) {
            cyc = false;
            break;
          }
        }
        if (cyc) {
          e.cycle_period = p;
          Complex mult(1, 0);
          for (int j = 0; j < p; ++j) {
            Complex pt = orbit[m - static_cast<std::size_t>(j)];
            e.cycle.push_back(pt);
            mult *= map.derivative(pt);
          }
          e.multiplier_abs = std::abs(mult);
          e.attracting = e.multiplier_abs < 1.0 - 1e-3;
          e.parabolic = std::abs(e.multiplier_abs - 1.0) <= 1e-3;
        }
      }
    }
    if (!e.attracting) all_attracting = false;
    rep.post_singular_bound = std::max(rep.post_singular_bound, e.orbit_bound);
    if (!rep.julia_samples.empty()) {
      for (const auto& p : orbit)
        for (const auto& j : rep.julia_samples)
          rep.dist_to_julia_samples = std::min(rep.dist_to_julia_samples, std::abs(p - j));
    }
    rep.orbits.push_back(std::move(e));
  }
  rep.hyperbolic_evidence = all_attracting && !rep.orbits.empty() &&
                            rep.dist_to_julia_samples > 0.05 &&
                            rep.post_singular_bound < kPosInf;
  return rep;
}

}  // namespace plab
