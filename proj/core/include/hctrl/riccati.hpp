#pragma once
// Linear-quadratic ground truth: with linear drift A x and quadratic costs,
// the feedback field is Gamma(x, t) = P(t) x where P solves the matrix
// Riccati equation
//
//   -dP/ds = P A + A' P - P G P + M,    P(T) = M_T,
//
// integrated here by backward RK4 with per-step symmetrization. Scalar closed
// forms (tanh/coth branches) and the mean/deviation decomposition of the
// mean-field LQ cost provide independent cross-checks for the solver.

#include "hctrl/fbode.hpp"
#include "hctrl/problem.hpp"

#include <utility>
#include <vector>

namespace hctrl {

struct RiccatiSolution {
  std::vector<double> grid;  // ascending times t0 ... T
  std::vector<Mat> P;        // symmetric gain per node, P.back() = M_T
  Mat M_T;

  // Linear time interpolation; throws std::domain_error outside the grid range.
  Mat eval(double t) const;
};

// Backward RK4 of the Riccati equation on [t0, t1] with symmetrization after
// each step. Throws std::invalid_argument on non-symmetric inputs and
// std::runtime_error on finite-time blow-up (||P|| > 1e12).
RiccatiSolution riccati_solve(const Mat& A, const Mat& M, const Mat& M_T, const Mat& G,
                              double t0, double t1, double steps_per_unit = 2000.0);

// Gamma(x, t) = P(t) x.
Vec lq_field(const RiccatiSolution& sol, const Vec& x, double t);

// DecouplingField wrapper around a Riccati solution, usable wherever the
// solver's field is (closed-loop integration, value and residual checks).
class LQField : public DecouplingField {
 public:
  explicit LQField(RiccatiSolution sol);
  Vec eval(const Vec& x, double t) const override;
  const RiccatiSolution& solution() const { return sol_; }

 private:
  RiccatiSolution sol_;
};

// Scalar closed form for -dP/ds = 2 a P - g P^2 + M, P(T) = m_T, evaluated at
// elapsed time tau = T - s >= 0. Branches: tanh for |m_T g - a| < kappa,
// coth for > (throwing std::runtime_error at finite-time blow-up), constant
// at equality, and the rational a = M = 0 limit; kappa = sqrt(a^2 + M g).
double scalar_riccati_closed_form(double a, double M, double g, double m_T, double tau);

// Mean-field LQ decomposition for N exchangeable particles on R^n with per-
// particle drift A x + B v and stage cost 1/2 |x - s x_bar|_Q^2 (terminal
// weight M_T_term, same coupling): deviations x_i - x_bar follow the Riccati
// gain with weight Q, the mean follows the gain with weight (1-s)^2 Q, and
//   z_i = P_dev(t) (x_i - x_bar) + P_mean(t) x_bar.
struct MfLqSolution {
  RiccatiSolution dev;
  RiccatiSolution mean;
};
MfLqSolution mf_lq_solve(int n, const Mat& A, const Mat& B, const Mat& N, const Mat& Q,
                         double s_coupling, const Mat& M_T_term, double t0, double t1,
                         double steps_per_unit = 2000.0);

}  // namespace hctrl
