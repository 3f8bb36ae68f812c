#pragma once
// Two-point boundary-value solver for the optimality system of the control
// problem in problem.hpp:
//
//   dy/ds = A(y) - G z(s),          y(t) = x,
//  -dz/ds = DA(y)' z + DF(y),       z(T) = DF_T(y(T)),
//
// with G = B N^{-1} B' and optimal control u = -N^{-1} B' z. The adjoint value
// at the initial time defines the feedback (decoupling) field z(t) = Gamma(x,t).
//
// Locally in time the system is solved by a contraction iteration on the
// z-path (picard_local); globally by tiling [0,T] with windows short enough to
// contract (Regime::layer_plan) and composing the per-window maps, either
// recursively with memoization or through interpolated boundary slices.

#include "hctrl/problem.hpp"
#include "hctrl/regime.hpp"

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <unordered_map>
#include <vector>

namespace hctrl {

struct SolverOptions {
  double tol = 1e-9;              // contraction stop: sup-node diff <= tol*(1+|x|)
  double steps_per_unit = 400.0;  // RK4 nodes per unit time (>= 200 kept)
  int max_iterations = 200;
  // Plateau acceptance: a quantized terminal map can freeze the iteration just
  // above tol; accept a stalled residual below stall_accept*(1+|x|). 0 = off.
  double stall_accept = 0.0;

  // Composite-field controls.
  double memo_quantum = 1e-6;        // absolute lattice pitch for memo states
  std::size_t memo_budget = 1000000; // max memoized boundary evaluations
  int grid_points_per_dim = 0;       // interpolated strategy; 0 = {1025,65,17}
  double grid_half_width = 0.0;      // interpolation box; 0 = max(2|x|_inf, 2)

  // Force the step count of the first (lowest-time) window; 0 = derive from
  // steps_per_unit. Used by finite-difference stencils in t so the grid varies
  // smoothly with the start time.
  int pinned_first_steps = 0;
};

struct TrajectoryPair {
  std::vector<double> grid;  // strictly increasing times
  std::vector<Vec> y;        // states
  std::vector<Vec> z;        // adjoint states; z.back() = terminal map at y.back()
  std::vector<Vec> u;        // controls, u = -N^{-1} B' z

  // Linear interpolation between nodes; t clamped to the grid range.
  Vec state_at(double t) const;
  Vec adjoint_at(double t) const;
};

struct SolveReport {
  int iterations = 0;
  std::vector<double> ratios;   // successive sup-norm increment ratios
  double final_residual = 0.0;  // last sup-node increment
  bool converged = false;
  bool regime_certified = false;    // window lengths inside the certified plan
  double theoretical_factor = 0.0;  // contraction bound at the window length used
  double wall_time = 0.0;           // seconds
};

// Contraction certificate for one window of length h. certify_window never
// throws: infeasible constants yield {0, false}.
struct WindowCertificate {
  double factor = 0.0;
  bool certified = false;
};
WindowCertificate certify_window(const Regime& regime, double h, double terminal_constant);

struct DomainBox {
  Vec lo, hi;
  bool contains(const Vec& x) const;
};

// Feedback representation of the adjoint: z = eval(x, t). Concrete variants
// below; solve_from integrates the closed loop from (x,t) to the horizon.
class DecouplingField {
 public:
  virtual ~DecouplingField() = default;

  virtual Vec eval(const Vec& x, double t) const = 0;

  // Default: forward RK4 of dy/ds = A(y) - G eval(y,s) on [t, T] with the
  // adjoint read back from eval at the nodes. Overridden where a coupled
  // solve is available.
  virtual TrajectoryPair solve_from(const ProblemSpec& spec, const GramOperator& gram,
                                    const Vec& x, double t, const SolverOptions& opts,
                                    SolveReport* report = nullptr) const;

  // Step count the field would use for the first window of solve_from; lets
  // finite-difference stencils in t pin a common count via pinned_first_steps.
  virtual int first_window_steps(const ProblemSpec& spec, double t,
                                 const SolverOptions& opts) const;

  virtual std::optional<DomainBox> domain() const { return std::nullopt; }

  double lipschitz_bound = 0.0;  // certified bound on ||D_x eval||; 0 = unknown
};

// Time-constant field wrapping a gradient map (typically DF_T).
class TerminalGradientField : public DecouplingField {
 public:
  explicit TerminalGradientField(VecFn grad, double lipschitz = 0.0);
  Vec eval(const Vec& x, double t) const override;

 private:
  VecFn grad_;
};

// z-path along one trajectory, indexed by time only (linear interpolation,
// clamped at the ends). Valid near the trajectory it was recorded on.
class TrajectoryCacheField : public DecouplingField {
 public:
  TrajectoryCacheField(std::vector<double> grid, std::vector<Vec> z);
  Vec eval(const Vec& x, double t) const override;

 private:
  std::vector<double> grid_;
  std::vector<Vec> z_;
};

// Per-time-slice multilinear interpolant over a box lattice in R^d, d <= 3;
// linear in t between slices, clamped outside the slice time range. Throws
// std::domain_error("interpolation domain escape") for x outside the box.
class GridInterpolantField : public DecouplingField {
 public:
  struct Slice {
    double t = 0.0;
    Vec lo, hi;             // box corners, size d
    std::vector<int> pts;   // lattice points per dimension, each >= 2
    std::vector<Vec> values;  // row-major over the lattice, size prod(pts)
  };

  explicit GridInterpolantField(std::vector<Slice> slices);  // ascending t

  Vec eval(const Vec& x, double t) const override;
  std::optional<DomainBox> domain() const override;

  // Samples gamma on the lattice of the box [lo, hi].
  static Slice build_slice(double t, const Vec& lo, const Vec& hi, const std::vector<int>& pts,
                           const std::function<Vec(const Vec&)>& gamma);

  const std::vector<Slice>& slices() const { return slices_; }

 private:
  Vec eval_slice(const Slice& s, const Vec& x) const;
  std::vector<Slice> slices_;
};

enum class Strategy { recursive, interpolated };

struct PicardResult;

// Layered global field on [0, T]: windows [s_{j+1}, s_j] from the regime plan,
// each solved by the local contraction with terminal data at s_j taken from
// the layer above — recursively (memoized on a quantized (x,t) lattice) or
// from precomputed interpolant slices. Thread-safe: concurrent eval/solve_from
// share the memo under a reader-writer lock with first-wins insertion.
class LayeredCompositeField : public DecouplingField {
 public:
  LayeredCompositeField(ProblemSpec spec, GramOperator gram, Strategy strategy,
                        SolverOptions opts, double t_floor = 0.0);

  Vec eval(const Vec& x, double t) const override;
  TrajectoryPair solve_from(const ProblemSpec& spec, const GramOperator& gram, const Vec& x,
                            double t, const SolverOptions& opts,
                            SolveReport* report = nullptr) const override;
  int first_window_steps(const ProblemSpec& spec, double t,
                         const SolverOptions& opts) const override;

  const std::vector<double>& breakpoints() const { return breakpoints_; }
  const std::vector<double>& terminal_constants() const { return terminal_constants_; }
  bool certified() const { return certified_; }
  std::size_t memo_size() const;

  // Interpolated strategy: build boundary slices around the given box center
  // scale. Must be called once before eval/solve_from; recursive mode ignores it.
  void build_slices(const Vec& reference_state);

 private:
  struct KeyHash {
    std::size_t operator()(const std::vector<std::int64_t>& k) const;
  };

  std::size_t layer_of(double t) const;  // j with breakpoints_[j+1] <= t < breakpoints_[j]
  // Memoized Gamma(x, breakpoints_[layer]); the recursion of the global
  // construction, keyed by (layer, quantized x) with first-wins insertion.
  Vec boundary_eval(const Vec& x, std::size_t layer) const;
  PicardResult solve_window(const Vec& x, double t, std::size_t layer,
                            const SolverOptions& call_opts) const;
  VecFn terminal_map(std::size_t layer) const;
  WindowCertificate window_certificate(double h, std::size_t layer) const;

  ProblemSpec spec_;
  GramOperator gram_;
  Regime regime_;
  Strategy strategy_;
  SolverOptions opts_;
  std::vector<double> breakpoints_;         // descending, T ... t_floor
  std::vector<double> terminal_constants_;  // per layer
  bool certified_ = false;
  std::vector<std::shared_ptr<const GridInterpolantField>> boundary_slices_;

  mutable std::unordered_map<std::vector<std::int64_t>, Vec, KeyHash> memo_;
  mutable std::shared_mutex memo_mutex_;
  mutable std::atomic<std::size_t> memo_inserts_{0};
};

// Forward RK4 of the closed loop dy/ds = A(y) - G field(y,s) on [t0, t1];
// z and u are the field values at the nodes.
TrajectoryPair forward_integrate(const ProblemSpec& spec, const GramOperator& gram,
                                 const DecouplingField& field, const Vec& x, double t0,
                                 double t1, const SolverOptions& opts = {});

// One application of the adjoint update map: integrate the state forward under
// the candidate feedback, then the adjoint integral backward from
// terminal_grad(y(t1)). value is the updated adjoint at t0.
struct LambdaResult {
  std::vector<double> grid;
  std::vector<Vec> y;
  std::vector<Vec> z;
  Vec value;
};
LambdaResult lambda_map(const ProblemSpec& spec, const GramOperator& gram,
                        const DecouplingField& lambda, const Vec& x, double t0, double t1,
                        const VecFn& terminal_grad, const SolverOptions& opts = {});

// Fixed-point iteration of lambda_map on one window, started from the
// time-frozen terminal gradient. Converges when the sup-node increment falls
// below tol*(1+|x|); a stalled increment below stall_accept*(1+|x|) is also
// accepted (see SolverOptions). The certificate is recorded in the report.
struct PicardResult {
  TrajectoryPair traj;
  SolveReport report;
};
PicardResult picard_local(const ProblemSpec& spec, const GramOperator& gram, const Vec& x,
                          double t0, double t1, const VecFn& terminal_grad,
                          const SolverOptions& opts = {},
                          const WindowCertificate& cert = {});

// Global solve on [t_start, T]: plans layers from the regime constants, builds
// the composite field, and returns the stitched optimal trajectory from x.
// Throws std::domain_error when no contraction horizon exists and
// std::runtime_error on window non-convergence or budget exhaustion.
struct GlobalResult {
  TrajectoryPair traj;
  std::shared_ptr<DecouplingField> field;
  SolveReport report;
};
GlobalResult global_solve(const ProblemSpec& spec, const GramOperator& gram, const Vec& x,
                          Strategy strategy, const SolverOptions& opts = {},
                          double t_start = 0.0);

// Feedback evaluation Gamma(x,t).
Vec decoupling_eval(const DecouplingField& field, const Vec& x, double t);

// State/adjoint sensitivities along a converged trajectory: S(s) = D_x z(y(s))
// from a backward matrix Riccati sweep, Y(s) = D_x y(s) from the forward
// linearized flow, Z(s) = S(s) Y(s). Z.front() is D_x Gamma at the start node.
struct SensitivityPath {
  std::vector<double> grid;
  std::vector<Mat> Y;
  std::vector<Mat> Z;
};
SensitivityPath sensitivity_solve(const ProblemSpec& spec, const GramOperator& gram,
                                  const TrajectoryPair& traj);

// Cost of the trajectory: trapezoidal quadrature of F(y) + 1/2 (G z, z) plus
// the terminal cost. Equals the control cost of u along y.
double value_eval(const ProblemSpec& spec, const GramOperator& gram,
                  const TrajectoryPair& traj);

// Absolute residual of the dynamic-programming identity
//   -dV/dt - (Gamma, A(x)) + 1/2 (Gamma, G Gamma) - F(x) = 0
// with dV/dt by central difference (delta = 1e-4) of value_eval over
// field.solve_from, step counts pinned across the stencil.
double bellman_residual(const ProblemSpec& spec, const GramOperator& gram,
                        const DecouplingField& field, const Vec& x, double t,
                        const SolverOptions& opts = {});

}  // namespace hctrl
