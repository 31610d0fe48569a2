#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>
#include <set>

#include "pressure_lab/maps.hpp"

using namespace plab;
using Catch::Approx;

namespace {

// Independent oracle: bisection root of g on [a, b] (g(a), g(b) oppose).
double bisect(double a, double b, const std::function<double(double)>& g) {
  double fa = g(a);
  for (int i = 0; i < 200; ++i) {
    double m = 0.5 * (a + b), fm = g(m);
    if ((fa < 0) == (fm < 0)) {
      a = m;
      fa = fm;
    } else {
      b = m;
    }
  }
  return 0.5 * (a + b);
}

}  // namespace

TEST_CASE("evaluate on the defining examples") {
  TranscendentalMap ex(MapFamily::Exp, 1.0);
  auto p = ex.evaluate(0.0);
  REQUIRE_FALSE(p.at_infinity);
  REQUIRE(p.value.real() == Approx(1.0));
  REQUIRE(p.value.imag() == Approx(0.0).margin(1e-15));

  TranscendentalMap tn(MapFamily::Tan, 1.0);
  REQUIRE(tn.evaluate(Complex(kPi / 2.0, 0.0)).at_infinity);

  TranscendentalMap ze(MapFamily::Zexp);
  auto q = ze.evaluate(Complex(0, 0));
  REQUIRE_FALSE(q.at_infinity);
  REQUIRE(std::abs(q.value) == 0.0);

  // overflow of |e^z| maps to infinity
  REQUIRE(ex.evaluate(Complex(800.0, 0.0)).at_infinity);
  TranscendentalMap sn(MapFamily::Sin, 1.0);
  REQUIRE(sn.evaluate(Complex(0.0, 800.0)).at_infinity);
}

TEST_CASE("spherical derivative values") {
  TranscendentalMap ex(MapFamily::Exp, 1.0);
  // (1+0)*1/(1+1) by direct substitution
  REQUIRE(ex.spherical_derivative(0.0) == Approx(0.5).epsilon(1e-14));

  TranscendentalMap ze(MapFamily::Zexp);
  REQUIRE(ze.spherical_derivative(0.0) == Approx(1.0).epsilon(1e-14));
  // exact critical point z = -1: f' = 0 exactly
  REQUIRE(ze.spherical_derivative(Complex(-1.0, 0.0)) == 0.0);

  TranscendentalMap sn(MapFamily::Sin, 1.0);
  REQUIRE(sn.spherical_derivative(Complex(kPi / 2.0, 0.0)) < 1e-15);
}

TEST_CASE("spherical derivative matches the raw formula at moderate points") {
  auto raw = [](const TranscendentalMap& m, Complex z, Complex fz, Complex dfz) {
    (void)m;
    return (1.0 + abs2(z)) * std::abs(dfz) / (1.0 + abs2(fz));
  };
  std::mt19937_64 rng = make_rng(7);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (auto fam : {MapFamily::Exp, MapFamily::Sin, MapFamily::Tan, MapFamily::Zexp}) {
    TranscendentalMap m(fam, Complex(0.7, 0.25));
    for (int i = 0; i < 200; ++i) {
      Complex z(u(rng), u(rng));
      if (fam == MapFamily::Tan && m.near_pole(z, 1e-3)) continue;
      auto fz = m.evaluate(z);
      if (fz.at_infinity) continue;
      double want = raw(m, z, fz.value, m.derivative(z));
      double got = m.spherical_derivative(z);
      if (want > 1e-12) REQUIRE(got == Approx(want).epsilon(1e-9));
    }
  }
}

TEST_CASE("tan spherical derivative is finite and positive at poles") {
  TranscendentalMap tn(MapFamily::Tan, Complex(1.3, -0.4));
  Complex pole(kPi / 2.0, 0.0);
  double v = tn.spherical_derivative(pole);
  REQUIRE(std::isfinite(v));
  REQUIRE(v > 0.0);
  // continuous extension: nearby values converge to the pole value
  double v1 = tn.spherical_derivative(pole + Complex(1e-6, 0));
  REQUIRE(v1 == Approx(v).epsilon(1e-4));
}

TEST_CASE("exp inverse branches of w = e") {
  TranscendentalMap ex(MapFamily::Exp, 1.0);
  auto bs = ex.inverse_branches(std::exp(1.0), 1);
  REQUIRE(bs.branches.size() == 3);
  REQUIRE(bs.issues.empty());
  for (const auto& b : bs.branches) {
    Complex want(1.0, kTwoPi * static_cast<double>(b.k));
    REQUIRE(std::abs(b.z - want) < 1e-12);
  }
}

TEST_CASE("omitted values throw") {
  TranscendentalMap ex(MapFamily::Exp, 1.0);
  REQUIRE_THROWS_AS(ex.inverse_branches(Complex(0, 0), 2), OmittedValueError);
  TranscendentalMap tn(MapFamily::Tan, Complex(2.0, 0.0));
  REQUIRE_THROWS_AS(tn.inverse_branch(Complex(0, 2.0), 0), OmittedValueError);
}

TEST_CASE("sin preimages of 0 contain 0 and +-pi") {
  TranscendentalMap sn(MapFamily::Sin, 1.0);
  auto bs = sn.inverse_branches(Complex(0, 0), 1);
  std::vector<double> want{0.0, kPi, -kPi};
  for (double t : want) {
    bool found = false;
    for (const auto& b : bs.branches)
      if (std::abs(b.z - Complex(t, 0)) < 1e-12) found = true;
    REQUIRE(found);
  }
  for (const auto& b : bs.branches) {
    auto fz = sn.evaluate(b.z);
    REQUIRE(std::abs(fz.value) < 1e-12);
  }
}

TEST_CASE("zexp exceptional value 0 has the single preimage 0") {
  TranscendentalMap ze(MapFamily::Zexp);
  auto bs = ze.inverse_branches(Complex(0, 0), 5);
  REQUIRE(bs.branches.size() == 1);
  REQUIRE(std::abs(bs.branches[0].z) == 0.0);
}

TEST_CASE("round trip property: f(inverse_branch(w)) = w") {
  std::mt19937_64 rng = make_rng(11);
  std::uniform_real_distribution<double> u(-4.0, 4.0);
  for (auto fam : {MapFamily::Exp, MapFamily::Sin, MapFamily::Tan, MapFamily::Zexp}) {
    TranscendentalMap m(fam, Complex(0.5, 0.2));
    int checked = 0;
    for (int i = 0; i < 120 && checked < 80; ++i) {
      Complex w(u(rng), u(rng));
      if (std::abs(w) < 1e-3) continue;
      BranchSet bs;
      try {
        bs = m.inverse_branches(w, 4);
      } catch (const OmittedValueError&) {
        continue;
      }
      REQUIRE(bs.issues.empty());
      const double tol = 1e-12 * (1.0 + std::abs(w));
      for (const auto& b : bs.branches) {
        auto fz = m.evaluate(b.z);
        REQUIRE_FALSE(fz.at_infinity);
        REQUIRE(std::abs(fz.value - w) <= 100 * tol);
        ++checked;
      }
    }
    REQUIRE(checked >= 80);
  }
}

TEST_CASE("branch completeness for exp: 2K+1 branches, |preimage| grows") {
  TranscendentalMap ex(MapFamily::Exp, Complex(0.3, 0.0));
  for (int K : {1, 5, 20}) {
    auto bs = ex.inverse_branches(Complex(2.0, 1.0), K);
    REQUIRE(static_cast<int>(bs.branches.size()) == 2 * K + 1);
  }
  auto bs = ex.inverse_branches(Complex(2.0, 1.0), 50);
  double m10 = 0, m50 = 0;
  for (const auto& b : bs.branches) {
    if (std::abs(b.k) == 10) m10 = std::max(m10, std::abs(b.z));
    if (std::abs(b.k) == 50) m50 = std::max(m50, std::abs(b.z));
  }
  REQUIRE(m50 > 4.0 * m10);
}

TEST_CASE("distinct branch indices give distinct preimages") {
  std::mt19937_64 rng = make_rng(23);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (auto fam : {MapFamily::Exp, MapFamily::Sin, MapFamily::Tan, MapFamily::Zexp}) {
    TranscendentalMap m(fam, Complex(1.1, 0.3));
    for (int rep = 0; rep < 20; ++rep) {
      Complex w(u(rng), u(rng));
      if (std::abs(w) < 0.05) continue;
      BranchSet bs;
      try {
        bs = m.inverse_branches(w, 4);
      } catch (const OmittedValueError&) {
        continue;
      }
      for (std::size_t i = 0; i < bs.branches.size(); ++i)
        for (std::size_t j = i + 1; j < bs.branches.size(); ++j)
          REQUIRE(std::abs(bs.branches[i].z - bs.branches[j].z) > 1e-9);
    }
  }
}

TEST_CASE("preimages_in_disc finds the sheet covering a disc") {
  std::mt19937_64 rng = make_rng(37);
  std::uniform_real_distribution<double> u(-2.5, 2.5);
  for (auto fam : {MapFamily::Exp, MapFamily::Sin, MapFamily::Tan, MapFamily::Zexp}) {
    TranscendentalMap m(fam, Complex(0.8, 0.1));
    for (int rep = 0; rep < 25; ++rep) {
      Complex w(u(rng), u(rng));
      if (std::abs(w) < 0.05) continue;
      std::optional<Complex> z;
      try {
        z = m.inverse_branch(w, 3);
      } catch (const OmittedValueError&) {
        continue;
      }
      if (!z) continue;
      auto hits = m.preimages_in_disc(w, *z + Complex(0.05, -0.02), 0.4);
      bool found = false;
      for (const auto& h : hits)
        if (std::abs(h - *z) < 1e-9) found = true;
      REQUIRE(found);
    }
  }
}

TEST_CASE("orbit classification on the exponential family") {
  TranscendentalMap ex(MapFamily::Exp, Complex(0.3, 0.0));
  OrbitClassifyOptions opt;
  REQUIRE(classify_orbit(ex, Complex(0.5, 0.0), opt) == OrbitClass::BoundedReturns);
  REQUIRE(classify_orbit(ex, Complex(10.0, 0.0), opt) == OrbitClass::Escaping);
  TranscendentalMap tn(MapFamily::Tan, 1.0);
  REQUIRE(classify_orbit(tn, Complex(kPi / 2.0, 0.0), opt) == OrbitClass::HitPole);
}

TEST_CASE("repelling fixed point of 0.3 e^z matches a bisection oracle") {
  TranscendentalMap ex(MapFamily::Exp, Complex(0.3, 0.0));
  // real fixed points of 0.3 e^x: attracting near 0.49, repelling in (1, 3)
  double x_rep = bisect(1.0, 3.0, [](double x) { return 0.3 * std::exp(x) - x; });
  auto z = find_repelling_fixed_point(ex, 0);
  REQUIRE(z.has_value());
  REQUIRE(z->imag() == Approx(0.0).margin(1e-10));
  REQUIRE(z->real() == Approx(x_rep).epsilon(1e-9));
  REQUIRE(std::abs(ex.derivative(*z)) > 1.0);
}

TEST_CASE("singular orbit report: hyperbolic evidence for lambda = 0.3") {
  TranscendentalMap ex(MapFamily::Exp, Complex(0.3, 0.0));
  auto rep = singular_orbit_report(ex);
  REQUIRE(rep.orbits.size() == 1);
  REQUIRE(rep.orbits[0].cycle_period == 1);
  REQUIRE(rep.orbits[0].attracting);
  double x_att = bisect(0.0, 1.0, [](double x) { return 0.3 * std::exp(x) - x; });
  REQUIRE(std::abs(rep.orbits[0].cycle[0] - Complex(x_att, 0)) < 1e-6);
  REQUIRE(rep.orbits[0].multiplier_abs == Approx(x_att).epsilon(1e-6));
  REQUIRE(rep.hyperbolic_evidence);
  REQUIRE(rep.dist_to_julia_samples > 0.5);
}

TEST_CASE("singular orbit report: lambda = e escapes, no attracting cycle") {
  TranscendentalMap ex(MapFamily::Exp, Complex(std::exp(1.0), 0.0));
  auto rep = singular_orbit_report(ex, 300);
  REQUIRE(rep.orbits.size() == 1);
  REQUIRE(rep.orbits[0].escaped);
  REQUIRE_FALSE(rep.hyperbolic_evidence);
}

TEST_CASE("singular orbit report: zexp has the parabolic fixed value 0") {
  TranscendentalMap ze(MapFamily::Zexp);
  auto rep = singular_orbit_report(ze, 500);
  REQUIRE(rep.orbits.size() == 2);
  const auto& zero_orbit = rep.orbits[0];
  REQUIRE(zero_orbit.cycle_period == 1);
  REQUIRE(zero_orbit.multiplier_abs == Approx(1.0).epsilon(1e-9));
  REQUIRE(zero_orbit.parabolic);
  REQUIRE_FALSE(rep.hyperbolic_evidence);
}

TEST_CASE("zexp repelling fixed points are 2 pi i k") {
  TranscendentalMap ze(MapFamily::Zexp);
  auto z = find_repelling_fixed_point(ze, 1, Complex(0.1, 6.0));
  REQUIRE(z.has_value());
  REQUIRE(std::abs(*z - Complex(0.0, kTwoPi)) < 1e-9);
}
