// Two-point boundary solver: the local contraction iteration, the layered
// composite field (both strategies), trajectory stitching, sensitivities,
// value evaluation, and the dynamic-programming residual.
//
// Ground truth throughout is the quadratic case, where the feedback gain has
// a shifted-tanh closed form; one hand-computed update-map case and
// finite differences cover the nonlinear paths.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <thread>
#include <vector>

#include "hctrl/fbode.hpp"
#include "hctrl/problem.hpp"
#include "hctrl/riccati.hpp"
#include "support.hpp"

using namespace hctrl;

namespace {

struct LqSetup {
  ProblemSpec spec;
  GramOperator g;
  RiccatiSolution ric;
};

LqSetup scalar_setup() {
  LqSetup s;
  s.spec = build_problem(testsup::scalar_lq());
  s.g = gram(s.spec);
  s.ric = riccati_solve(s.spec.drift_matrix, s.spec.Q_run, s.spec.Q_term, s.g.G, 0.0, 1.0);
  return s;
}

double gain_closed_form(double tau) { return std::tanh(tau + std::atanh(0.5)); }

Vec v1(double x) {
  Vec v(1);
  v << x;
  return v;
}

class ZeroField : public DecouplingField {
 public:
  Vec eval(const Vec& x, double) const override { return Vec::Zero(x.size()); }
};

}  // namespace

TEST_CASE("forward integration under a null feedback is the plain drift flow") {
  ProblemConfig c = testsup::scalar_lq();
  c.drift.matrix << 0.3;
  ProblemSpec spec = build_problem(c);
  GramOperator g = gram(spec);
  ZeroField zero;
  TrajectoryPair traj = forward_integrate(spec, g, zero, v1(1.0), 0.2, 1.0);
  CHECK(traj.grid.front() == doctest::Approx(0.2));
  CHECK(traj.grid.back() == doctest::Approx(1.0));
  CHECK(traj.y.back()(0) == doctest::Approx(std::exp(0.3 * 0.8)).epsilon(1e-10));
  for (const Vec& z : traj.z) CHECK(z.norm() == 0.0);
  for (const Vec& u : traj.u) CHECK(u.norm() == 0.0);

  CHECK_THROWS_AS(forward_integrate(spec, g, zero, v1(1.0), 0.5, 0.2), std::invalid_argument);
}

TEST_CASE("update map: drift-free case is exact trapezoid arithmetic") {
  // With no drift and a null candidate feedback the state stays at x, the
  // adjoint integrand is the constant DF(x) = x, and the backward integral is
  // exact: z(t) = x/2 + (T - t) x. Any grid reproduces it to roundoff.
  LqSetup s = scalar_setup();
  ZeroField zero;
  LambdaResult res = lambda_map(s.spec, s.g, zero, v1(0.7), 0.0, 1.0,
                                s.spec.cost_terminal_grad);
  CHECK(res.value(0) == doctest::Approx(0.7 * 1.5).epsilon(1e-14));
  for (std::size_t j = 0; j < res.grid.size(); ++j) {
    CHECK(res.y[j](0) == doctest::Approx(0.7).epsilon(1e-14));
    double want = 0.5 * 0.7 + (1.0 - res.grid[j]) * 0.7;
    CHECK(res.z[j](0) == doctest::Approx(want).epsilon(1e-13));
  }

  // Degenerate window: the value is the terminal gradient itself.
  LambdaResult point = lambda_map(s.spec, s.g, zero, v1(0.7), 1.0, 1.0,
                                  s.spec.cost_terminal_grad);
  CHECK(point.value(0) == doctest::Approx(0.35).epsilon(1e-15));
}

TEST_CASE("local contraction solves one window to the closed-form gain") {
  LqSetup s = scalar_setup();
  Regime regime(s.spec, s.g);

  const double h = 0.5;  // inside the admissible window for tc = 1/2
  WindowCertificate cert = certify_window(regime, h, s.spec.M_T);
  CHECK(cert.certified);
  CHECK(cert.factor < 1.0);

  PicardResult pr = picard_local(s.spec, s.g, v1(1.0), 1.0 - h, 1.0,
                                 s.spec.cost_terminal_grad, SolverOptions{}, cert);
  CHECK(pr.report.converged);
  CHECK(pr.report.regime_certified);
  CHECK(pr.report.iterations > 1);
  CHECK(pr.traj.z.front()(0) == doctest::Approx(gain_closed_form(h)).epsilon(1e-7));
  CHECK(pr.traj.z.front()(0) == doctest::Approx(0.7815364548539281).epsilon(1e-6));

  // Every observed ratio honors the certificate with a 10% allowance.
  for (double r : pr.report.ratios) CHECK(r <= 1.1 * cert.factor);

  // The terminal node carries the exact terminal gradient of its own state.
  CHECK(pr.traj.z.back()(0) ==
        doctest::Approx(0.5 * pr.traj.y.back()(0)).epsilon(1e-13));

  // Certification is denied, not faked, for an over-long window.
  WindowCertificate big = certify_window(regime, 1.4, s.spec.M_T);
  CHECK_FALSE(big.certified);
}

TEST_CASE("trajectory interpolation clamps and matches nodes") {
  TrajectoryPair traj;
  traj.grid = {0.0, 0.5, 1.0};
  traj.y = {v1(0.0), v1(1.0), v1(4.0)};
  traj.z = {v1(2.0), v1(1.0), v1(0.0)};
  CHECK(traj.state_at(0.5)(0) == doctest::Approx(1.0));
  CHECK(traj.state_at(0.25)(0) == doctest::Approx(0.5));
  CHECK(traj.state_at(0.75)(0) == doctest::Approx(2.5));
  CHECK(traj.state_at(-1.0)(0) == doctest::Approx(0.0));  // clamped
  CHECK(traj.state_at(9.0)(0) == doctest::Approx(4.0));
  CHECK(traj.adjoint_at(0.75)(0) == doctest::Approx(0.5));
}

TEST_CASE("cached and interpolant fields evaluate as declared") {
  TrajectoryCacheField cache({0.0, 1.0}, {v1(3.0), v1(5.0)});
  CHECK(cache.eval(v1(99.0), 0.5)(0) == doctest::Approx(4.0));  // time-only lookup

  // A lattice sample of an affine map is reproduced exactly off-lattice.
  auto affine = [](const Vec& x) -> Vec { return 2.0 * x + Vec::Constant(x.size(), 1.0); };
  Vec lo = Vec::Constant(2, -1.0), hi = Vec::Constant(2, 1.0);
  auto slice = GridInterpolantField::build_slice(0.5, lo, hi, {5, 5}, affine);
  GridInterpolantField field({slice});
  Vec q(2);
  q << 0.37, -0.61;
  CHECK((field.eval(q, 0.5) - affine(q)).norm() < 1e-13);
  CHECK((field.eval(q, 2.0) - affine(q)).norm() < 1e-13);  // clamped in time
  Vec out(2);
  out << 1.5, 0.0;
  CHECK_THROWS_AS(field.eval(out, 0.5), std::domain_error);

  // Two slices interpolate linearly in time.
  auto zero = [](const Vec& x) -> Vec { return Vec::Zero(x.size()); };
  auto s0 = GridInterpolantField::build_slice(0.0, lo, hi, {3, 3}, zero);
  auto s1 = GridInterpolantField::build_slice(1.0, lo, hi, {3, 3}, affine);
  GridInterpolantField pair({s0, s1});
  CHECK((pair.eval(q, 0.5) - 0.5 * affine(q)).norm() < 1e-13);
}

TEST_CASE("composite field matches the quadratic gain across layers") {
  LqSetup s = scalar_setup();
  LayeredCompositeField field(s.spec, s.g, Strategy::recursive, SolverOptions{});
  CHECK(field.certified());
  REQUIRE(field.breakpoints().size() == 4);

  for (double t : {0.0, 0.1, 0.3, 0.55, 0.92}) {
    for (double x : {-1.5, -0.4, 0.8, 1.0}) {
      double want = gain_closed_form(1.0 - t) * x;
      CHECK(field.eval(v1(x), t)(0) == doctest::Approx(want).epsilon(2e-5));
    }
  }
  // At the horizon the field is the terminal gradient itself.
  CHECK(field.eval(v1(2.0), 1.0)(0) == doctest::Approx(1.0).epsilon(1e-14));

  // Repeated evaluation reuses the memo: identical bits, no growth.
  Vec probe = v1(0.8);
  Vec first = field.eval(probe, 0.05);
  std::size_t memo_after = field.memo_size();
  Vec second = field.eval(probe, 0.05);
  CHECK(field.memo_size() == memo_after);
  CHECK(first(0) == second(0));
}

TEST_CASE("composite field: concurrent evaluation is consistent") {
  LqSetup s = scalar_setup();
  LayeredCompositeField field(s.spec, s.g, Strategy::recursive, SolverOptions{});
  std::vector<std::pair<double, double>> probes = {
      {0.9, 0.05}, {-0.7, 0.15}, {0.4, 0.33}, {1.2, 0.6}, {-1.1, 0.8}, {0.25, 0.02}};

  std::vector<Vec> serial;
  LayeredCompositeField fresh(s.spec, s.g, Strategy::recursive, SolverOptions{});
  for (auto [x, t] : probes) serial.push_back(fresh.eval(v1(x), t));

  std::vector<Vec> parallel(probes.size());
  std::vector<std::thread> workers;
  for (int w = 0; w < 3; ++w) {
    workers.emplace_back([&, w] {
      for (std::size_t i = w; i < probes.size(); i += 3) {
        parallel[i] = field.eval(v1(probes[i].first), probes[i].second);
      }
    });
  }
  for (auto& th : workers) th.join();
  for (std::size_t i = 0; i < probes.size(); ++i) {
    CHECK((parallel[i] - serial[i]).norm() < 1e-7);
  }
}

TEST_CASE("global solve: stitched trajectory tracks the closed form end to end") {
  LqSetup s = scalar_setup();
  GlobalResult res = global_solve(s.spec, s.g, v1(1.0), Strategy::recursive, SolverOptions{});
  CHECK(res.report.converged);
  CHECK(res.report.regime_certified);
  CHECK_FALSE(res.report.ratios.empty());
  CHECK(res.report.theoretical_factor > 0.0);
  CHECK(res.report.theoretical_factor < 1.0);

  REQUIRE(!res.traj.grid.empty());
  CHECK(res.traj.grid.front() == doctest::Approx(0.0));
  CHECK(res.traj.grid.back() == doctest::Approx(1.0));
  for (std::size_t j = 1; j < res.traj.grid.size(); ++j) {
    CHECK(res.traj.grid[j] > res.traj.grid[j - 1]);  // strictly increasing across seams
  }
  // z_j = P(t_j) y_j along the entire stitched path, seams included.
  for (std::size_t j = 0; j < res.traj.grid.size(); ++j) {
    double want = gain_closed_form(1.0 - res.traj.grid[j]) * res.traj.y[j](0);
    CHECK(res.traj.z[j](0) == doctest::Approx(want).epsilon(2e-6));
  }
  // u = -z for identity actuation and weight.
  for (std::size_t j = 0; j < res.traj.grid.size(); ++j) {
    CHECK(res.traj.u[j](0) == doctest::Approx(-res.traj.z[j](0)).epsilon(1e-13));
  }

  // Late start: the grid begins at the requested time.
  GlobalResult late = global_solve(s.spec, s.g, v1(1.0), Strategy::recursive, SolverOptions{},
                                   0.62);
  CHECK(late.traj.grid.front() == doctest::Approx(0.62));
  CHECK(late.traj.z.front()(0) ==
        doctest::Approx(gain_closed_form(0.38) * 1.0).epsilon(1e-6));

  // Value of the solved trajectory equals the quadratic closed form.
  double value = value_eval(s.spec, s.g, res.traj);
  CHECK(value == doctest::Approx(0.5 * gain_closed_form(1.0)).epsilon(1e-6));
  CHECK(value == doctest::Approx(0.4568354670200037).epsilon(1e-6));
}

TEST_CASE("interpolated strategy agrees with the recursive one") {
  LqSetup s = scalar_setup();
  SolverOptions opts;
  opts.tol = 1e-9;
  GlobalResult rec = global_solve(s.spec, s.g, v1(1.0), Strategy::recursive, opts);
  GlobalResult itp = global_solve(s.spec, s.g, v1(1.0), Strategy::interpolated, opts);
  REQUIRE(rec.traj.grid.size() == itp.traj.grid.size());
  double worst = 0.0;
  for (std::size_t j = 0; j < rec.traj.grid.size(); ++j) {
    worst = std::max(worst, (rec.traj.y[j] - itp.traj.y[j]).norm());
    worst = std::max(worst, (rec.traj.z[j] - itp.traj.z[j]).norm());
  }
  CHECK(worst < 1e-5);

  // The interpolated field refuses high dimensions at slice construction.
  ProblemConfig c4 = testsup::matrix_lq();
  c4.dim = 4;
  c4.ctrl_dim = 4;
  c4.drift.matrix = Mat::Zero(4, 4);
  c4.cost_running.Q = Mat::Identity(4, 4);
  c4.cost_terminal.Q = 0.5 * Mat::Identity(4, 4);
  c4.B = Mat::Identity(4, 4);
  c4.N = Mat::Identity(4, 4);
  ProblemSpec s4 = build_problem(c4);
  GramOperator g4 = gram(s4);
  CHECK_THROWS_AS(global_solve(s4, g4, Vec::Ones(4), Strategy::interpolated, opts),
                  std::invalid_argument);
}

TEST_CASE("restarting from an interior state reproduces the original path") {
  LqSetup s = scalar_setup();
  SolverOptions opts;
  GlobalResult res = global_solve(s.spec, s.g, v1(1.0), Strategy::recursive, opts);
  std::size_t mid = res.traj.grid.size() / 3;
  double tm = res.traj.grid[mid];
  TrajectoryPair restart = res.field->solve_from(s.spec, s.g, res.traj.y[mid], tm, opts);
  CHECK(restart.grid.front() == doctest::Approx(tm));
  double worst = 0.0;
  for (std::size_t j = 0; j < restart.grid.size(); ++j) {
    worst = std::max(worst, (restart.y[j] - res.traj.state_at(restart.grid[j])).norm());
    worst = std::max(worst, (restart.z[j] - res.traj.adjoint_at(restart.grid[j])).norm());
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("window step pinning fixes the first grid spacing") {
  LqSetup s = scalar_setup();
  LayeredCompositeField field(s.spec, s.g, Strategy::recursive, SolverOptions{});
  const double t = 0.1;
  double bp = 0.0;
  for (std::size_t j = 0; j + 1 < field.breakpoints().size(); ++j) {
    if (t >= field.breakpoints()[j + 1] && t < field.breakpoints()[j]) bp = field.breakpoints()[j];
  }
  SolverOptions opts;
  int natural = field.first_window_steps(s.spec, t, opts);
  CHECK(natural == static_cast<int>(std::ceil((bp - t) * opts.steps_per_unit - 1e-12)));

  opts.pinned_first_steps = 50;
  TrajectoryPair traj = field.solve_from(s.spec, s.g, v1(1.0), t, opts);
  CHECK(traj.grid[1] - traj.grid[0] == doctest::Approx((bp - t) / 50.0).epsilon(1e-10));
}

TEST_CASE("recursion budget exhaustion fails loudly") {
  LqSetup s = scalar_setup();
  SolverOptions opts;
  opts.memo_budget = 1;
  LayeredCompositeField field(s.spec, s.g, Strategy::recursive, opts);
  CHECK_THROWS_WITH_AS(field.eval(v1(1.0), 0.05), "recursion budget exceeded",
                       std::runtime_error);
}

TEST_CASE("state/adjoint sensitivities: gain, flow, and difference quotients") {
  LqSetup s = scalar_setup();
  GlobalResult res = global_solve(s.spec, s.g, v1(1.0), Strategy::recursive, SolverOptions{});
  SensitivityPath path = sensitivity_solve(s.spec, s.g, res.traj);
  REQUIRE(path.grid.size() == res.traj.grid.size());
  CHECK((path.Y.front() - Mat::Identity(1, 1)).norm() == 0.0);

  // For the quadratic problem the field gradient is the gain itself.
  CHECK(path.Z.front()(0, 0) == doctest::Approx(gain_closed_form(1.0)).epsilon(1e-6));

  // The state sensitivity matches a difference quotient of the solved flow.
  // The step stays well above the memo-lattice noise floor of the solver.
  const double eps = 1e-3;
  GlobalResult up = global_solve(s.spec, s.g, v1(1.0 + eps), Strategy::recursive,
                                 SolverOptions{});
  GlobalResult dn = global_solve(s.spec, s.g, v1(1.0 - eps), Strategy::recursive,
                                 SolverOptions{});
  double fd_y = (up.traj.y.back()(0) - dn.traj.y.back()(0)) / (2.0 * eps);
  CHECK(path.Y.back()(0, 0) == doctest::Approx(fd_y).epsilon(1e-4));

  // Nonlinear drift: field gradient against a difference quotient of the field.
  ProblemSpec sat = build_problem(testsup::saturating_1d());
  GramOperator gs = gram(sat);
  LayeredCompositeField fs(sat, gs, Strategy::recursive, SolverOptions{});
  TrajectoryPair traj = fs.solve_from(sat, gs, v1(0.9), 0.2, SolverOptions{});
  SensitivityPath sp = sensitivity_solve(sat, gs, traj);
  double fd = (fs.eval(v1(0.9 + eps), 0.2)(0) - fs.eval(v1(0.9 - eps), 0.2)(0)) / (2.0 * eps);
  CHECK(sp.Z.front()(0, 0) == doctest::Approx(fd).epsilon(1e-3));

  TrajectoryPair empty;
  CHECK_THROWS_AS(sensitivity_solve(s.spec, s.g, empty), std::invalid_argument);
}

TEST_CASE("dynamic-programming residual: small on solutions, large on impostors") {
  LqSetup s = scalar_setup();
  LayeredCompositeField field(s.spec, s.g, Strategy::recursive, SolverOptions{});
  CHECK(bellman_residual(s.spec, s.g, field, v1(0.8), 0.5) < 1e-4);

  // The same identity holds for the closed-form gain field.
  LQField lq(s.ric);
  CHECK(bellman_residual(s.spec, s.g, lq, v1(0.8), 0.5) < 1e-4);

  // A gain solved for twice the running cost violates the identity visibly.
  RiccatiSolution wrong =
      riccati_solve(s.spec.drift_matrix, 2.0 * s.spec.Q_run, s.spec.Q_term, s.g.G, 0.0, 1.0);
  LQField imposter(wrong);
  CHECK(bellman_residual(s.spec, s.g, imposter, v1(0.8), 0.5) > 0.01);

  // The stencil must stay inside the open horizon.
  CHECK_THROWS_AS(bellman_residual(s.spec, s.g, field, v1(0.8), 0.0), std::invalid_argument);
  CHECK_THROWS_AS(bellman_residual(s.spec, s.g, field, v1(0.8), 1.0), std::invalid_argument);
}

TEST_CASE("degenerate horizon and argument guards") {
  LqSetup s = scalar_setup();
  CHECK_THROWS_AS(picard_local(s.spec, s.g, v1(1.0), 0.8, 0.2, s.spec.cost_terminal_grad),
                  std::invalid_argument);

  // Zero-length window: the terminal data is returned as-is.
  PicardResult point = picard_local(s.spec, s.g, v1(1.0), 1.0, 1.0, s.spec.cost_terminal_grad);
  CHECK(point.report.converged);
  CHECK(point.traj.grid.size() == 1);
  CHECK(point.traj.z.front()(0) == doctest::Approx(0.5));

  SolverOptions bad;
  bad.memo_quantum = 0.0;
  CHECK_THROWS_AS(LayeredCompositeField(s.spec, s.g, Strategy::recursive, bad),
                  std::invalid_argument);
}
