// Regime analysis: the tradeoff constant, the growth and Lipschitz bounds,
// the Riccati-comparison functions, and the admissible-window planner.
//
// Oracles: the comparison bounds solve dm/dtau = g m^2 + 2 gamma m + M_eff
// from the terminal constant, so a fine fixed-step RK4 integration of that
// ODE is an independent route to the same numbers; the admissible window
// length is re-derived by bisecting on the ODE-based contraction factor.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <stdexcept>

#include "hctrl/problem.hpp"
#include "hctrl/regime.hpp"
#include "support.hpp"

using namespace hctrl;

namespace {

// Fixed-step RK4 for dm/dtau = g m^2 + 2 gamma m + M, m(0) = tc. Returns
// +infinity once the solution exceeds the blow-up cap.
double ode_bound(double g, double gamma, double M, double tc, double tau, int steps = 40000) {
  double m = tc;
  const double h = tau / steps;
  auto f = [&](double v) { return g * v * v + 2.0 * gamma * v + M; };
  for (int i = 0; i < steps; ++i) {
    double k1 = f(m);
    double k2 = f(m + 0.5 * h * k1);
    double k3 = f(m + 0.5 * h * k2);
    double k4 = f(m + h * k3);
    m += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!std::isfinite(m) || std::abs(m) > 1e9) return std::numeric_limits<double>::infinity();
  }
  return m;
}

// A ProblemSpec carrying only the structural constants; the regime analysis
// never evaluates the drift or cost callables.
ProblemSpec constants_only(double gamma, double b, double nu, double M, double nu_T,
                           double M_T, double T) {
  ProblemSpec s;
  s.dim = 1;
  s.ctrl_dim = 1;
  s.gamma = gamma;
  s.b_const = b;
  s.nu = nu;
  s.M = M;
  s.nu_T = nu_T;
  s.M_T = M_T;
  s.terminal_zero = (M_T == 0.0);
  s.horizon_T = T;
  s.B = Mat::Identity(1, 1);
  s.N = Mat::Identity(1, 1);
  return s;
}

GramOperator gram_range(double m, double g) {
  GramOperator go;
  go.G = Mat::Identity(1, 1);
  go.m_coer = m;
  go.g_norm = g;
  go.coercive = m > 0.0;
  return go;
}

}  // namespace

TEST_CASE("tradeoff constant: zero-modulus rule and boundary root") {
  // b = 0: k is 0.99 of the smaller of the coercivity and curvature floors.
  ProblemSpec lq = build_problem(testsup::scalar_lq());
  RegimeConstants rc = select_k(lq, gram(lq));
  CHECK(rc.has_k);
  CHECK(rc.first_estimate_ok);
  CHECK(rc.k == doctest::Approx(0.99).epsilon(1e-14));
  CHECK(rc.alpha0 == doctest::Approx(0.5 + 1.0 / 0.99).epsilon(1e-12));
  CHECK(rc.second_estimate_ok);
  CHECK(rc.fixed_point_ok);

  // b > 0: the feasible set is (0, k*) with k* the smaller root of
  // (m - k)(nu - k) = b^2/16; the growth bound decreases in k, so the
  // search must land at that root. For m = nu = 1, k* = 1 - b/4.
  ProblemSpec sat = build_problem(testsup::saturating_1d(0.1));
  RegimeConstants rs = select_k(sat, gram(sat));
  CHECK(rs.has_k);
  CHECK(rs.k == doctest::Approx(1.0 - 0.2 / 4.0).epsilon(1e-8));
  // Grid-search confirmation: no feasible k above the returned one.
  const double m = 1.0, nu = 1.0, b = sat.b_const;
  double best = 0.0;
  for (int i = 1; i < 200000; ++i) {
    double k = i * (std::min(m, nu) / 200000.0);
    if (b * b / 16.0 < (m - k) * (nu - k)) best = k;
  }
  CHECK(rs.k == doctest::Approx(best).epsilon(1e-4));

  // alpha0 from its printed formula.
  double want_alpha0 = sat.terminal_ratio() + (sat.gamma * sat.gamma + sat.M * sat.M) / rs.k;
  CHECK(rs.alpha0 == doctest::Approx(want_alpha0).epsilon(1e-12));
}

TEST_CASE("tradeoff constant: infeasible modulus is reported, not thrown") {
  // b = 6 forces b^2/16 = 2.25 > m * nu = 1: no feasible k exists.
  ProblemSpec spec = constants_only(3.0, 6.0, 1.0, 1.0, 0.5, 0.5, 1.0);
  RegimeConstants rc = select_k(spec, gram_range(1.0, 1.0));
  CHECK_FALSE(rc.has_k);
  CHECK_FALSE(rc.first_estimate_ok);
  CHECK_FALSE(rc.fixed_point_ok);  // gamma^2 = 9 >= M g = 1

  Regime regime(spec, gram_range(1.0, 1.0));
  CHECK_THROWS_AS(regime.alpha(0.0), std::domain_error);
  CHECK_THROWS_AS(regime.beta(0.0), std::domain_error);

  // Nonpositive floors are a usage error.
  ProblemSpec bad = constants_only(0.0, 0.0, 0.0, 1.0, 0.5, 0.5, 1.0);
  CHECK_THROWS_AS(select_k(bad, gram_range(1.0, 1.0)), std::invalid_argument);
}

TEST_CASE("growth bound alpha: affine in the remaining time, monotone") {
  ProblemSpec spec = build_problem(testsup::saturating_1d(0.1));
  GramOperator g = gram(spec);
  Regime regime(spec, g);
  const RegimeConstants& rc = regime.constants();

  CHECK(regime.alpha(1.0) == doctest::Approx(spec.terminal_ratio()).epsilon(1e-12));
  CHECK(regime.alpha(0.0) == doctest::Approx(rc.alpha0).epsilon(1e-12));
  double prev = regime.alpha(0.0);
  for (double t : {0.2, 0.4, 0.6, 0.8, 1.0}) {
    double a = regime.alpha(t);
    double want = spec.terminal_ratio() +
                  (spec.gamma * spec.gamma + spec.M * spec.M) * (1.0 - t) / rc.k;
    CHECK(a == doctest::Approx(want).epsilon(1e-12));
    CHECK(a <= prev + 1e-15);
    prev = a;
  }
  CHECK_THROWS_AS(regime.alpha(-0.5), std::domain_error);
  CHECK_THROWS_AS(regime.alpha(1.5), std::domain_error);
}

TEST_CASE("Lipschitz bound beta: quadrature against a dense trapezoid sum") {
  ProblemSpec spec = build_problem(testsup::saturating_1d(0.1));
  GramOperator g = gram(spec);
  Regime regime(spec, g);
  const RegimeConstants& rc = regime.constants();

  // With no modulus the integral collapses: beta_t = R_T + (g^2/m + M^2/nu)(T-t).
  ProblemSpec lq = build_problem(testsup::scalar_lq());
  Regime rlq(lq, gram(lq));
  CHECK(rlq.beta(0.0) == doctest::Approx(1.5).epsilon(1e-10));
  CHECK(rlq.constants().beta0 == doctest::Approx(1.5).epsilon(1e-10));
  CHECK(rlq.beta(1.0) == doctest::Approx(0.5).epsilon(1e-10));

  // b > 0: independent dense trapezoid of (M + b alpha)^2 / (nu - b alpha).
  for (double t : {0.0, 0.35, 0.8}) {
    const int n = 200000;
    double acc = 0.0;
    for (int i = 0; i <= n; ++i) {
      double s = t + (1.0 - t) * i / n;
      double as = spec.terminal_ratio() +
                  (spec.gamma * spec.gamma + spec.M * spec.M) * (1.0 - s) / rc.k;
      double val = (spec.M + spec.b_const * as) * (spec.M + spec.b_const * as) /
                   (spec.nu - spec.b_const * as);
      acc += (i == 0 || i == n) ? 0.5 * val : val;
    }
    acc *= (1.0 - t) / n;
    double want = spec.terminal_ratio() + spec.gamma * spec.gamma * (1.0 - t) / g.m_coer + acc;
    CHECK(regime.beta(t) == doctest::Approx(want).epsilon(1e-8));
  }

  // Large modulus exhausts the curvature floor near t = 0 but not near T.
  ProblemSpec hot = build_problem(testsup::saturating_1d(0.45));
  Regime rh(hot, gram(hot));
  CHECK_FALSE(rh.constants().second_estimate_ok);
  CHECK_THROWS_AS(rh.beta(0.0), std::domain_error);
}

TEST_CASE("comparison bounds mu/rho agree with direct ODE integration") {
  ProblemSpec spec = constants_only(0.15, 0.3, 1.0, 1.2, 0.5, 0.6, 1.0);
  GramOperator g = gram_range(0.8, 1.3);
  Regime regime(spec, g);

  // mu solves dm/dtau = g m^2 + 2 gamma m + M from the terminal constant.
  // Distances are taken as fractions of each terminal constant's blow-up
  // distance so every pair stays inside the domain of the bound.
  const double s_mu = std::sqrt(1.2 * 1.3 - 0.15 * 0.15);
  for (double tc : {0.0, 0.6, 2.0}) {
    const double tau_max = (std::asin(1.0) - std::atan((tc * 1.3 + 0.15) / s_mu)) / s_mu;
    for (double frac : {0.1, 0.45, 0.8}) {
      double tau = frac * tau_max;
      double want = ode_bound(1.3, 0.15, 1.2, tc, tau);
      CHECK(regime.mu_tau(tau, tc) == doctest::Approx(want).epsilon(1e-9));
    }
  }
  // rho solves the same ODE with the modulus-augmented curvature M + b theta.
  for (double theta : {0.0, 0.8, 2.5}) {
    double want = ode_bound(1.3, 0.15, 1.2 + 0.3 * theta, 0.6, 0.3);
    CHECK(regime.rho_tau(0.3, theta, 0.6) == doctest::Approx(want).epsilon(1e-9));
  }

  // Global-time wrappers evaluate at distance T - t with the terminal weight.
  CHECK(regime.mu(0.7) == doctest::Approx(regime.mu_tau(0.3, 0.6)).epsilon(1e-14));
  CHECK(regime.rho(0.7, 0.5) == doctest::Approx(regime.rho_tau(0.3, 0.5, 0.6)).epsilon(1e-14));

  // Frozen reference point for the drift-free unit-curvature case:
  // mu_tau(0.3, 0.5) = tan(atan(1/2) + 0.3).
  ProblemSpec lq = build_problem(testsup::scalar_lq());
  Regime rlq(lq, gram(lq));
  CHECK(rlq.mu_tau(0.3, 0.5) == doctest::Approx(std::tan(std::atan(0.5) + 0.3)).epsilon(1e-14));
  CHECK(rlq.mu_tau(0.3, 0.5) == doctest::Approx(0.9574183505416097).epsilon(1e-12));

  // Past the blow-up angle the bound is undefined.
  CHECK_THROWS_AS(rlq.mu_tau(2.0, 0.5), std::domain_error);
  // Degenerate fixed-point condition: gamma^2 >= M g.
  ProblemSpec hotspec = constants_only(2.0, 0.0, 1.0, 1.0, 0.5, 0.5, 1.0);
  Regime rhot(hotspec, gram_range(1.0, 1.0));
  CHECK_THROWS_AS(rhot.mu_tau(0.1, 0.5), std::domain_error);
}

TEST_CASE("contraction factor matches its printed formula") {
  ProblemSpec spec = build_problem(testsup::saturating_1d(0.1));
  GramOperator g = gram(spec);
  Regime regime(spec, g);
  for (double h : {0.1, 0.25, 0.4}) {
    double th = regime.theta(h, 0.5);
    double sh = regime.sigma(h, 0.5);
    double want = h * (sh * g.g_norm + spec.gamma * std::exp(h * (spec.gamma + g.g_norm * th)));
    CHECK(regime.contraction_factor(h, 0.5) == doctest::Approx(want).epsilon(1e-13));
    CHECK(sh >= th);  // the augmented curvature can only grow the bound
  }

  // Drift-free case: the factor is h * mu_tau(h, tc); frozen value at h = 0.3.
  ProblemSpec lq = build_problem(testsup::scalar_lq());
  Regime rlq(lq, gram(lq));
  CHECK(rlq.contraction_factor(0.3, 0.5) ==
        doctest::Approx(0.3 * std::tan(std::atan(0.5) + 0.3)).epsilon(1e-13));
  CHECK(rlq.contraction_factor(0.3, 0.5) == doctest::Approx(0.2872255051624829).epsilon(1e-12));
}

TEST_CASE("admissible window length: frozen values and ODE-based re-derivation") {
  // All four reference terminal constants share gamma = 0, M = g = 1, where
  // the factor is h * tan(atan(tc) + h); bisect that directly.
  ProblemSpec lq = build_problem(testsup::scalar_lq());
  Regime regime(lq, gram(lq));

  auto independent_hmax = [](double tc) {
    double lo = 0.0, hi = 1.5;
    auto admissible = [&](double h) {
      double angle = std::atan(tc) + h;
      if (angle >= std::asin(1.0) - 1e-9) return false;  // pi/2 guard
      return h * std::tan(angle) < 1.0;
    };
    for (int i = 0; i < 100; ++i) {
      double mid = 0.5 * (lo + hi);
      if (admissible(mid)) lo = mid;
      else hi = mid;
    }
    return lo;
  };

  struct Case {
    double tc, frozen;
  };
  for (Case c : {Case{0.5, 0.5808952716201311}, Case{1.5, 0.29819895859450024},
                 Case{0.0, 0.8603335890193541}, Case{4.0, 0.12279516696311382}}) {
    HorizonPlan plan = regime.admissible_h(c.tc);
    CHECK(plan.h_max == doctest::Approx(independent_hmax(c.tc)).epsilon(1e-7));
    CHECK(plan.h_max == doctest::Approx(c.frozen).epsilon(1e-7));
    CHECK(plan.h_layer == doctest::Approx(0.9 * plan.h_max).epsilon(1e-14));
    CHECK(plan.contraction < 1.0);
    CHECK(plan.contraction ==
          doctest::Approx(regime.contraction_factor(plan.h_layer, c.tc)).epsilon(1e-12));
    CHECK(plan.certified);
  }

  // A modulus-bearing problem: re-derive h_max through the ODE bounds.
  ProblemSpec sat = build_problem(testsup::saturating_1d(0.1));
  GramOperator gs = gram(sat);
  Regime rsat(sat, gs);
  auto ode_admissible = [&](double h, double tc) {
    double th = ode_bound(gs.g_norm, sat.gamma, sat.M, tc, h);
    if (!std::isfinite(th)) return false;
    double sh = ode_bound(gs.g_norm, sat.gamma, sat.M + sat.b_const * th, tc, h);
    if (!std::isfinite(sh)) return false;
    double factor = h * (sh * gs.g_norm + sat.gamma * std::exp(h * (sat.gamma + gs.g_norm * th)));
    return factor < 1.0;
  };
  double lo = 0.0, hi = 1.5;
  for (int i = 0; i < 60; ++i) {
    double mid = 0.5 * (lo + hi);
    if (ode_admissible(mid, sat.M_T)) lo = mid;
    else hi = mid;
  }
  HorizonPlan psat = rsat.admissible_h(sat.M_T);
  CHECK(psat.h_max == doctest::Approx(lo).epsilon(1e-6));

  // No window exists when the fixed-point condition fails.
  ProblemSpec hot = constants_only(2.0, 0.0, 1.0, 1.0, 0.5, 0.5, 1.0);
  Regime rhot(hot, gram_range(1.0, 1.0));
  CHECK_THROWS_AS(rhot.admissible_h(0.5), std::domain_error);
}

TEST_CASE("layer plan tiles the horizon with certified windows") {
  ProblemSpec lq = build_problem(testsup::scalar_lq());
  Regime regime(lq, gram(lq));
  HorizonPlan plan = regime.layer_plan();

  REQUIRE(plan.breakpoints.size() >= 2);
  CHECK(plan.breakpoints.front() == doctest::Approx(1.0));
  CHECK(plan.breakpoints.back() == 0.0);
  CHECK(plan.terminal_constants.size() == plan.breakpoints.size() - 1);
  CHECK(plan.certified);

  // Descending, and no window longer than its own admissible length.
  double h0 = regime.admissible_h(lq.M_T).h_layer;
  double hl = regime.admissible_h(regime.constants().beta0).h_layer;
  for (std::size_t j = 0; j + 1 < plan.breakpoints.size(); ++j) {
    CHECK(plan.breakpoints[j] > plan.breakpoints[j + 1]);
    double width = plan.breakpoints[j] - plan.breakpoints[j + 1];
    CHECK(width <= (j == 0 ? h0 : hl) + 1e-12);
  }
  CHECK(plan.terminal_constants.front() == doctest::Approx(lq.M_T));
  for (std::size_t j = 1; j < plan.terminal_constants.size(); ++j) {
    CHECK(plan.terminal_constants[j] == doctest::Approx(regime.constants().beta0));
  }

  // Frozen layout for the drift-free benchmark: three windows.
  REQUIRE(plan.breakpoints.size() == 4);
  CHECK(plan.breakpoints[1] == doctest::Approx(1.0 - 0.9 * 0.5808952716201311).epsilon(1e-6));
  CHECK(plan.breakpoints[2] ==
        doctest::Approx(1.0 - 0.9 * (0.5808952716201311 + 0.29819895859450024)).epsilon(1e-6));

  // A horizon shorter than one window needs a single layer.
  ProblemConfig shortc = testsup::scalar_lq();
  shortc.horizon_T = 0.4;
  ProblemSpec shorts = build_problem(shortc);
  Regime rshort(shorts, gram(shorts));
  HorizonPlan ps = rshort.layer_plan();
  CHECK(ps.breakpoints.size() == 2);
  CHECK(ps.terminal_constants.size() == 1);
  CHECK(ps.breakpoints.front() == doctest::Approx(0.4));

  // Multi-layer tiling requires the Lipschitz constant; without it, planning
  // a long horizon must fail loudly.
  ProblemSpec hot = build_problem(testsup::saturating_1d(0.45));
  Regime rhot(hot, gram(hot));
  CHECK_FALSE(rhot.constants().second_estimate_ok);
  CHECK_THROWS_AS(rhot.layer_plan(), std::domain_error);
}
