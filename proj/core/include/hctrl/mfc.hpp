#pragma once

// Mean-field control on empirical measures. A problem over probability
// measures with quadratic mean-coupled costs is lifted to one stacked
// problem on R^{n*N} (one block per particle, 1/N-weighted inner product
// realized by scaling the lifted cost), solved with the decoupling-field
// machinery, and unpacked into per-particle state/adjoint trajectories.
// On top of the solve: the value function on measures, its flat derivative
// and gradient at each particle, the dynamic-programming residual in
// measure space, and an exact empirical 2-Wasserstein distance.

#include <memory>
#include <vector>

#include "hctrl/fbode.hpp"
#include "hctrl/problem.hpp"

namespace hctrl {

// Uniform-weight empirical measure: N points in R^n, each with mass 1/N.
struct ParticleMeasure {
  int n = 0;
  std::vector<Vec> points;

  int count() const { return static_cast<int>(points.size()); }
  // Average of the points, summed in a canonical (sorted) order so the
  // result is bit-identical under any relabeling of the particle list.
  Vec mean() const;
};

// An element of the lifted state space over a reference measure, realized
// as the stacked N*n vector of per-particle values.
struct LiftedState {
  Vec values;  // size N*n, particle i occupies segment [i*n, (i+1)*n)
  ParticleMeasure reference;

  Vec particle(int i) const;
};

// Empirical measure of the transported points. Index-preserving: point i of
// the result is the value of X on particle i. The identity map returns the
// reference measure unchanged.
ParticleMeasure pushforward(const LiftedState& X);

// The identity element: X(x_i) = x_i.
LiftedState identity_lift(const ParticleMeasure& m);

// Quadratic mean-coupled problem data on R^n:
//   running cost   f(x, m) = 1/2 (x - s*mean(m))' Q (x - s*mean(m))
//   terminal cost  h(x, m) = 1/2 (x - s_T*mean(m))' Q_T (x - s_T*mean(m))
//   dynamics       dx/dt = A x + B v, control cost 1/2 v' N_weight v.
// Q must be symmetric positive definite; Q_T symmetric positive definite or
// exactly zero (no terminal cost).
struct MFProblemSpec {
  int n = 0;
  Mat A;
  Mat B;
  Mat N_weight;
  Mat Q;
  double s = 0.0;
  Mat Q_T;
  double s_T = 0.0;
  double horizon_T = 0.0;
};

// Structural-assumption record. Recorded, not enforced: the solver proceeds
// regardless, and callers decide what conformity they require.
struct MFAssumptionFlags {
  bool control_coercive = false;     // min-eig(B N^{-1} B') > 0
  bool cross_running_zero = false;   // cross derivative vanishes exactly iff s == 0
  bool cross_terminal_zero = false;  // iff s_T == 0
  bool drift_dominated = false;      // |A|_2 < max-eig(Q) * |B N^{-1} B'|_2
};

MFAssumptionFlags mf_assumptions(const MFProblemSpec& mf);

// Lift to a stacked problem on R^{n*N}: block-diagonal drift/actuation and
// the scaled cost F_lift(X) = sum_i f(x_i, mean(X)), whose Euclidean
// gradient block i equals the per-particle measure-derivative gradient
//   Q (x_i - s*mean) - s(1-s) Q mean,
// so stacked adjoints need no rescaling. Curvature bounds account for the
// mean coupling: the lifted Hessian acts as Q on mean-zero directions and
// (1-s)^2 Q on the consensus direction. Throws std::invalid_argument on an
// empty measure, dimension mismatches, or indefinite weights.
ProblemSpec lift_problem(const MFProblemSpec& mf, const ParticleMeasure& m);

// Per-particle solution of the optimality system, plus everything needed to
// re-query the lifted field (Bellman stencils, derivative checks).
struct MFCSolution {
  std::vector<double> grid;                // shared time grid on [t, T]
  std::vector<std::vector<Vec>> Y;         // [particle][node] states, input order
  std::vector<std::vector<Vec>> Z;         // [particle][node] adjoints
  std::vector<std::vector<Vec>> controls;  // v_i = -N^{-1} B' Z_i
  TrajectoryPair lifted;                   // stacked trajectory, canonical order
  std::vector<int> canonical;              // canonical[k] = input index in slot k
  SolveReport report;
  double start_time = 0.0;

  MFProblemSpec mf;
  ParticleMeasure measure;  // input measure, input order
  ProblemSpec lifted_spec;  // lifting of the canonical ordering
  GramOperator lifted_gram;
  std::shared_ptr<DecouplingField> field;  // reusable lifted decoupling field

  // Mean of the particle states at node j (canonical-order average).
  Vec state_mean(int node) const;
};

// Sort particles canonically, solve the lifted system from the identity
// state at time t, and unpack per-particle trajectories in the caller's
// input order. Canonicalization makes every downstream reduction
// permutation-exact. Errors propagate from the lifted solver.
MFCSolution mfc_solve(const MFProblemSpec& mf, const ParticleMeasure& m, double t,
                      const SolverOptions& opts = {});

// Value of the measure-space control problem:
//   V(m,t) = int_t^T F(m_s) ds + F_T(m_T)
//          + 1/2 int_t^T (1/N) sum_i (N^{-1} B' Z_i, B' Z_i) ds,
// computed as the lifted trajectory cost divided by N.
double value_measure(const MFCSolution& sol);
double value_measure(const MFProblemSpec& mf, const ParticleMeasure& m, double t,
                     const SolverOptions& opts = {});

// Flat derivative of the value function at particle i: the scalar integral
//   dV/dm(m,t)(x_i) = int_t^T dF/dm(m_s)(Y_i(s)) ds + dF_T/dm(m_T)(Y_i(T))
//                   + 1/2 int_t^T (N^{-1} B' Z_i, B' Z_i) ds
// with dF/dm(m)(x) = f(x, mean) - s(1-s)(Q mean, x) evaluated along the
// particle flow (no re-centering; the additive normalization constant does
// not affect the gradient), and its spatial gradient, which equals Z_i(t).
struct DVdmResult {
  double value = 0.0;
  Vec gradient;
};
DVdmResult dvdm_eval(const MFCSolution& sol, int particle);
DVdmResult dvdm_eval(const MFProblemSpec& mf, const ParticleMeasure& m, double t,
                     int particle, const SolverOptions& opts = {});

// Independent check of the gradient identity: perturb particle i by eps in
// each coordinate, central-difference value_measure, and scale by N (the
// particle carries weight 1/N). Fresh solves per stencil point.
Vec dvdm_fd_gradient(const MFProblemSpec& mf, const ParticleMeasure& m, double t,
                     int particle, double eps = 1e-4, const SolverOptions& opts = {});

// Absolute residual of the dynamic-programming identity on measures,
//   -dV/dt - (1/N) sum_i (Z_i(t), A x_i) + 1/2 (1/N) sum_i (Z_i(t), G Z_i(t))
//     - F(m) = 0,
// with dV/dt by central difference of value_measure (delta = 1e-4, step
// counts pinned across the stencil). Requires the stencil inside (0, T).
double measure_bellman_residual(const MFProblemSpec& mf, const ParticleMeasure& m,
                                double t, const SolverOptions& opts = {});

// Exact 2-Wasserstein distance between equal-count uniform empirical
// measures: sorted pairing in one dimension; exact minimal assignment
// (shortest augmenting paths with potentials) for n >= 2, limited to
// N <= 64 particles. Throws std::invalid_argument on count/dimension
// mismatch or when the assignment limit is exceeded.
double w2_empirical(const ParticleMeasure& m1, const ParticleMeasure& m2);

}  // namespace hctrl
