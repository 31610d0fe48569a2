#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "pressure_lab/tree.hpp"

using namespace plab;
using Catch::Approx;

namespace {

// Brute-force one-step oracle for the exp family: preimages are
// Log(w/lambda) + 2 pi i k, where f* = (1+|z_k|^2)|w| / (1+|w|^2).
double brute_exp_S1(double t, Complex w, Complex lambda, long kmax) {
  Complex z0 = std::log(w / lambda);
  std::vector<double> terms;
  for (long k = -kmax; k <= kmax; ++k) {
    Complex z = z0 + Complex(0.0, kTwoPi * static_cast<double>(k));
    double fs = (1.0 + abs2(z)) * std::abs(w) / (1.0 + abs2(w));
    terms.push_back(std::pow(fs, -t));
  }
  std::sort(terms.begin(), terms.end());
  double s = 0;
  for (double v : terms) s += v;
  return s;
}

}  // namespace

TEST_CASE("S0 convention: empty composition has log_sum 0") {
  TranscendentalMap ex(MapFamily::Exp, Complex(0.3, 0.0));
  auto rec = partial_sum(ex, 1.5, Complex(2, 0), 0, Cutoff::adaptive(1e-6));
  REQUIRE(rec.log_sum == 0.0);
  REQUIRE(rec.term_count == 1);
}

TEST_CASE("one-step sum matches the closed-form exp oracle (frozen value)") {
  TranscendentalMap ex(MapFamily::Exp, 1.0);
  const Complex w = std::exp(1.0);
  // frozen from the |k| <= 1e5 brute-force sum; tail beyond is ~4e-18
  const double frozen = 2.3931548314810964;
  REQUIRE(brute_exp_S1(2.0, w, 1.0, 10000) == Approx(frozen).epsilon(1e-10));

  auto rec = partial_sum(ex, 2.0, w, 1, Cutoff::adaptive(1e-9));
  REQUIRE(std::exp(rec.log_sum) == Approx(frozen).epsilon(1e-7));

  auto os = one_step_sum(ex, 2.0, w, Cutoff::adaptive(1e-9));
  REQUIRE(std::exp(os.log_sum) == Approx(frozen).epsilon(1e-7));

  // fixed cutoff reproduces the truncated oracle exactly
  auto fixed = one_step_sum(ex, 2.0, w, Cutoff::fixed(25));
  REQUIRE(std::exp(fixed.log_sum) == Approx(brute_exp_S1(2.0, w, 1.0, 25)).epsilon(1e-12));
}

TEST_CASE("chain rule: accumulated log derivative matches a forward pass") {
  TranscendentalMap ex(MapFamily::Exp, Complex(0.3, 0.0));
  auto orbits = enumerate_branch_orbits(ex, Complex(2.0, 1.0), 3, 2);
  REQUIRE(orbits.size() == 125);
  for (const auto& o : orbits) {
    double acc = 0.0;
    Complex z = o.endpoint;
    for (int j = 0; j < o.depth; ++j) {
      acc += ex.log_spherical_derivative(z);
      auto p = ex.evaluate(z);
      REQUIRE_FALSE(p.at_infinity);
      z = p.value;
    }
    REQUIRE(std::abs(z - Complex(2.0, 1.0)) < 1e-8);
    REQUIRE(acc == Approx(o.log_deriv).epsilon(1e-9));
  }
}

TEST_CASE("distinct addresses give distinct endpoints") {
  TranscendentalMap sn(MapFamily::Sin, Complex(0.9, 0.2));
  auto orbits = enumerate_branch_orbits(sn, Complex(1.3, 0.4), 2, 2);
  for (std::size_t i = 0; i < orbits.size(); ++i)
    for (std::size_t j = i + 1; j < orbits.size(); ++j)
      REQUIRE(std::abs(orbits[i].endpoint - orbits[j].endpoint) > 1e-10);
}

TEST_CASE("log_sum is non-decreasing in the fixed cutoff K") {
  TranscendentalMap ex(MapFamily::Exp, Complex(0.3, 0.0));
  const Complex z0(1.8, 0.0);
  double prev = kNegInf;
  for (int K : {1, 2, 4, 8, 16}) {
    auto rec = partial_sum(ex, 1.5, z0, 3, Cutoff::fixed(K));
    REQUIRE(rec.log_sum >= prev - 1e-13);
    prev = rec.log_sum;
  }
}

TEST_CASE("restriction monotonicity and annulus decomposition") {
  TranscendentalMap ex(MapFamily::Exp, Complex(0.3, 0.0));
  const Complex z0(1.8, 0.0);
  const double r = 6.0;
  ExpansionOptions opt;
  opt.max_depth = 4;
  opt.cutoff = Cutoff::fixed(8);
  opt.prune_weight_rel = 0.0;
  opt.restrictions = {Restriction::disc(r), Restriction::disc(2 * r),
                      Restriction::annulus(r, 2 * r)};
  auto res = expand_preimage_tree(ex, 1.5, z0, opt);
  for (int n = 1; n <= 4; ++n) {
    double full = res.record(n, 0).log_sum;
    double d1 = res.record(n, 1).log_sum;
    double d2 = res.record(n, 2).log_sum;
    double ann = res.record(n, 3).log_sum;
    REQUIRE(d1 <= d2 + 1e-13);
    REQUIRE(d2 <= full + 1e-13);
    // S^{D(2r)} = S^{D(r)} + S^{D(2r) \ D(r)} exactly on the computed tree
    double lhs = std::exp(d2);
    double rhs = std::exp(d1) + std::exp(ann);
    REQUIRE(lhs == Approx(rhs).epsilon(1e-12));
  }
}

TEST_CASE("one-step recursion on a truncated tree with matching K") {
  TranscendentalMap ex(MapFamily::Exp, Complex(0.3, 0.0));
  const Complex z0(1.8, 0.0);
  const int K = 6, n = 3;
  const double t = 1.4;
  ExpansionOptions opt;
  opt.max_depth = n + 1;
  opt.cutoff = Cutoff::fixed(K);
  opt.prune_weight_rel = 0.0;
  opt.keep_levels = true;
  auto res = expand_preimage_tree(ex, t, z0, opt);
  // S_{n+1} = sum over depth-n nodes z of S_1(t, z) / |(f^n)*(z)|^t
  LogSumExp acc;
  for (const auto& node : res.levels[n - 1]) {
    auto s1 = one_step_sum(ex, t, node.value, Cutoff::fixed(K));
    acc.add_log(s1.log_sum - t * node.log_deriv);
  }
  REQUIRE(acc.log_sum() == Approx(res.record(n + 1).log_sum).epsilon(1e-10));
}

TEST_CASE("adaptive expansion agrees with a generous fixed cutoff") {
  TranscendentalMap ex(MapFamily::Exp, Complex(0.3, 0.0));
  const Complex z0(1.8, 0.0);
  const double t = 1.5;
  ExpansionOptions fixed_opt;
  fixed_opt.max_depth = 2;  // 441^2 nodes at K=220 stays within budget
  fixed_opt.cutoff = Cutoff::fixed(220);
  fixed_opt.prune_weight_rel = 0.0;
  auto fixed_res = expand_preimage_tree(ex, t, z0, fixed_opt);
  REQUIRE_FALSE(fixed_res.budget_clamped);

  ExpansionOptions ad_opt;
  ad_opt.max_depth = 2;
  ad_opt.cutoff = Cutoff::adaptive(1e-6);
  auto ad_res = expand_preimage_tree(ex, t, z0, ad_opt);

  for (int n = 1; n <= 2; ++n) {
    REQUIRE(ad_res.record(n).log_sum ==
            Approx(fixed_res.record(n).log_sum).margin(5e-4));
    REQUIRE(ad_res.record(n).tail_bound < 1e-4);
  }
}

TEST_CASE("adaptive tail bound honours eps_trunc at comfortable t") {
  TranscendentalMap ex(MapFamily::Exp, Complex(0.3, 0.0));
  ExpansionOptions opt;
  opt.max_depth = 4;
  opt.cutoff = Cutoff::adaptive(1e-4);
  auto res = expand_preimage_tree(ex, 1.8, Complex(1.8, 0.0), opt);
  for (int n = 1; n <= 4; ++n) {
    REQUIRE(res.record(n).tail_bound < 5e-4);  // cumulative over levels
    REQUIRE_FALSE(res.record(n).budget_clamped);
  }
}

TEST_CASE("strict budget policy throws, clamp records the shortfall") {
  TranscendentalMap ex(MapFamily::Exp, Complex(0.3, 0.0));
  ExpansionOptions opt;
  opt.max_depth = 3;
  opt.cutoff = Cutoff::adaptive(1e-6);
  opt.node_budget = 50;
  opt.budget_policy = BudgetPolicy::Strict;
  REQUIRE_THROWS_AS(expand_preimage_tree(ex, 1.2, Complex(1.8, 0.0), opt),
                    TreeBudgetExceededError);
  opt.budget_policy = BudgetPolicy::Clamp;
  auto res = expand_preimage_tree(ex, 1.2, Complex(1.8, 0.0), opt);
  REQUIRE(res.budget_clamped);
  REQUIRE(res.record(3).budget_clamped);
  REQUIRE(res.record(3).term_count <= 50);
}

TEST_CASE("omitted root value is rejected") {
  TranscendentalMap ex(MapFamily::Exp, 1.0);
  ExpansionOptions opt;
  opt.max_depth = 2;
  REQUIRE_THROWS_AS(expand_preimage_tree(ex, 1.5, Complex(0, 0), opt), OmittedValueError);
}

TEST_CASE("divergent one-step regime is flagged at t <= 1/2") {
  TranscendentalMap ex(MapFamily::Exp, Complex(0.3, 0.0));
  ExpansionOptions opt;
  opt.max_depth = 2;
  opt.cutoff = Cutoff::adaptive(1e-4);
  opt.node_budget = 20000;
  auto res = expand_preimage_tree(ex, 0.4, Complex(1.8, 0.0), opt);
  REQUIRE(res.record(1).divergent_tail);
  REQUIRE(res.record(1).tail_bound == kPosInf);
}

TEST_CASE("restricted one-step sum counts only endpoints inside") {
  TranscendentalMap ex(MapFamily::Exp, 1.0);
  const Complex w = std::exp(1.0);
  // preimages are 1 + 2 pi i k; disc of radius 8 keeps k in {-1, 0, 1}
  auto os = one_step_sum(ex, 2.0, w, Cutoff::fixed(50), Restriction::disc(8.0));
  REQUIRE(os.term_count == 3);
  REQUIRE(std::exp(os.log_sum) == Approx(brute_exp_S1(2.0, w, 1.0, 1)).epsilon(1e-12));
}

TEST_CASE("deterministic: two identical adaptive runs produce identical sums") {
  TranscendentalMap ex(MapFamily::Exp, Complex(0.3, 0.0));
  ExpansionOptions opt;
  opt.max_depth = 4;
  opt.cutoff = Cutoff::adaptive(1e-5);
  auto a = expand_preimage_tree(ex, 1.3, Complex(1.8, 0.0), opt);
  auto b = expand_preimage_tree(ex, 1.3, Complex(1.8, 0.0), opt);
  for (int n = 1; n <= 4; ++n) {
    REQUIRE(a.record(n).log_sum == b.record(n).log_sum);
    REQUIRE(a.record(n).term_count == b.record(n).term_count);
  }
}
