#pragma once

// Shared numeric helpers: stable log-space accumulation, chordal metric,
// compensated sums, small linear-regression and hashing utilities.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace plab {

using Complex = std::complex<double>;

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kTwoPi = 6.28318530717958647692;
inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();
inline constexpr double kPosInf = std::numeric_limits<double>::infinity();

inline double sq(double x) { return x * x; }
inline double abs2(Complex z) { return z.real() * z.real() + z.imag() * z.imag(); }

// Chordal distance on the Riemann sphere, diam = 2.
inline double chordal_distance(Complex a, Complex b) {
  return 2.0 * std::abs(a - b) / std::sqrt((1.0 + abs2(a)) * (1.0 + abs2(b)));
}

inline double chordal_distance_to_infinity(Complex a) {
  return 2.0 / std::sqrt(1.0 + abs2(a));
}

// log(1 + e^x) without overflow.
inline double log1p_exp(double x) {
  if (x > 36.0) return x;
  if (x < -36.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

// Kahan-compensated running sum; deterministic for a fixed input order.
class CompensatedSum {
 public:
  void add(double x) {
    double y = x - comp_;
    double t = sum_ + y;
    comp_ = (t - sum_) - y;
    sum_ = t;
  }
  void scale(double f) {
    sum_ *= f;
    comp_ *= f;
  }
  double value() const { return sum_; }
  void reset() { sum_ = 0.0; comp_ = 0.0; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

// Streaming log-sum-exp with a running maximum. All terms are entered as
// logarithms; the linear-domain partial sum is rescaled whenever a new
// maximum arrives, so the accumulator is usable across hundreds of orders
// of magnitude. Deterministic for a fixed insertion order.
class LogSumExp {
 public:
  void add_log(double log_term) {
    if (log_term == kNegInf) return;
    if (log_term > max_log_) {
      if (count_ > 0) sum_.scale(std::exp(max_log_ - log_term));
      max_log_ = log_term;
    }
    sum_.add(std::exp(log_term - max_log_));
    ++count_;
  }

  // Adds a mass given in the linear domain of `ref_log` units:
  // mass_lin * e^{ref_log}.
  void add_scaled(double mass_lin, double ref_log) {
    if (mass_lin <= 0.0) return;
    add_log(std::log(mass_lin) + ref_log);
  }

  double log_sum() const {
    if (count_ == 0 || sum_.value() <= 0.0) return kNegInf;
    return max_log_ + std::log(sum_.value());
  }
  std::size_t count() const { return count_; }
  double max_log() const { return max_log_; }

 private:
  CompensatedSum sum_;
  double max_log_ = kNegInf;
  std::size_t count_ = 0;
};

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_stderr = 0.0;
};

// Ordinary least squares y = a + b x; slope_stderr is the usual regression
// standard error (0 when fewer than 3 points or degenerate x).
inline LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2)
    throw std::invalid_argument("fit_line: need >= 2 points");
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
  }
  const double mx = sx / n, my = sy / n;
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (sxx == 0.0) throw std::invalid_argument("fit_line: degenerate abscissa");
  LineFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  if (x.size() > 2) {
    double ss_res = 0;
    for (std::size_t i = 0; i < x.size(); ++i)
      ss_res += sq(y[i] - (f.intercept + f.slope * x[i]));
    f.slope_stderr = std::sqrt(ss_res / ((n - 2.0) * sxx));
  }
  return f;
}

// FNV-1a 64-bit, used for config hashes and output checksums.
inline std::uint64_t fnv1a64(const void* data, std::size_t len, std::uint64_t seed = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf);
}

// Full-precision decimal rendering (17 significant digits, C locale).
inline std::string format_full(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return std::string(buf);
}

// Seeded generator for sampling; a stream id keeps parallel blocks
// reproducible independently of scheduling.
inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

inline Complex sample_disc(std::mt19937_64& rng, Complex center, double radius) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (;;) {
    double x = u(rng), y = u(rng);
    if (x * x + y * y <= 1.0) return center + Complex(radius * x, radius * y);
  }
}

}  // namespace plab
