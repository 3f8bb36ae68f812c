#pragma once
// Independent verification against the solver: a brute-force trajectory
// optimizer over piecewise-constant controls (with the exact discrete adjoint
// of its own RK4 discretization), the quadratic optimality-gap inequality
// J(u+v) - J(u) >= 1/2 int (v, N v), the envelope identity D_x V = Gamma by
// finite differences of the value, and a monitor comparing observed
// contraction ratios against the certified factor.

#include "hctrl/fbode.hpp"
#include "hctrl/problem.hpp"

#include <vector>

namespace hctrl {

struct TranscriptionResult {
  std::vector<double> grid;   // node times, nodes+1 entries
  std::vector<Vec> controls;  // one constant control per interval
  std::vector<Vec> states;    // node states under the returned controls
  double cost = 0.0;
  double gradient_norm = 0.0;  // continuous L2 scaling of the discrete gradient
  int iterations = 0;
  bool converged = false;
};

// Minimizes the discretized payoff over piecewise-constant controls on
// [t, T] with `nodes` intervals (>= 16), by gradient descent with
// Barzilai-Borwein steps and Armijo backtracking from the zero control.
// The gradient is the exact reverse-mode derivative of the discrete cost.
// Stops when the scaled gradient norm reaches `tol` or when the cost stops
// decreasing at working precision for several consecutive accepted steps;
// the latter matters because the gradient norm has a roundoff floor that
// grows with the node count (a few 1e-8 at 256 intervals). `converged`
// therefore means "at the discrete optimum to working precision".
TranscriptionResult direct_transcribe(const ProblemSpec& spec, const Vec& x, double t,
                                      int nodes, double tol = 1e-8,
                                      int max_iterations = 5000);

// Discrete cost of a piecewise-constant control path (exposed for gradient
// validation): RK4 states, trapezoidal state cost, exact control cost.
double transcription_cost(const ProblemSpec& spec, const Vec& x,
                          const std::vector<double>& grid, const std::vector<Vec>& controls);

// Exact gradient of transcription_cost with respect to every control value.
std::vector<Vec> transcription_gradient(const ProblemSpec& spec, const Vec& x,
                                        const std::vector<double>& grid,
                                        const std::vector<Vec>& controls);

// Cost of a node-valued control path (linear between nodes) from x along
// grid; used to evaluate J(u+v) and J(u) through one code path so that
// discretization bias cancels in the difference.
double control_path_cost(const ProblemSpec& spec, const Vec& x,
                         const std::vector<double>& grid, const std::vector<Vec>& w);

struct GapEntry {
  double gap = 0.0;    // J(u+v) - J(u)
  double bound = 0.0;  // 1/2 int (v, N v)
  double slack = 0.0;  // gap - bound
};
struct GapReport {
  std::vector<GapEntry> entries;
  double worst_slack = 0.0;
  bool pass = false;  // every slack >= -1e-6
};

// Tests the sufficiency inequality along a solved trajectory for each
// perturbation path v (node values on traj.grid, control dimension).
GapReport optimality_gap_check(const ProblemSpec& spec, const TrajectoryPair& traj,
                               const std::vector<std::vector<Vec>>& perturbations);

struct GradEntry {
  Vec x;
  double t = 0.0;
  Vec fd_gradient;  // central difference of the value in x
  Vec gamma;        // field evaluation
  double abs_err = 0.0;
  double rel_err = 0.0;
  bool pass = false;
};
struct GradReport {
  std::vector<GradEntry> entries;
  bool pass = false;
};

// Envelope identity: central difference of value_eval over field.solve_from
// in each state coordinate (step 1e-4 (1+|x|)) against field.eval. An entry
// passes when the sup-norm error is within max(1e-3, 1e-3 |Gamma|).
GradReport gamma_gradient_check(const ProblemSpec& spec, const GramOperator& gram,
                                const DecouplingField& field,
                                const std::vector<std::pair<Vec, double>>& points,
                                const SolverOptions& opts = {});

enum class MonitorVerdict { pass, fail, not_applicable };

// Compares every observed contraction ratio with 1.1x the certified factor
// (report's own factor when present, else the plan's); uncertified reports
// are not applicable.
MonitorVerdict contraction_monitor(const SolveReport& report, const HorizonPlan& plan);

}  // namespace hctrl
