#pragma once
// Scalar a priori and contraction-horizon analysis. Every quantity here is an
// explicit function of the problem constants (gamma, b_const, nu, M, nu_T,
// M_T), the Gram eigenvalue range [m_coer, g_norm] and the horizon:
//   k        tradeoff constant, feasible iff b^2/16 < (m_coer - k)(nu - k);
//   alpha_t  adjoint growth bound |z(s)| <= alpha_s |y(s)|;
//   beta_t   field Lipschitz bound ||D_x Gamma|| <= beta_t;
//   mu, rho  Riccati-comparison bounds with arctan closed forms;
//   theta_h  mu at distance h from the terminal time, sigma_h likewise for rho;
//   h_max    largest interval length on which the fixed-point map contracts.

#include "hctrl/problem.hpp"

#include <vector>

namespace hctrl {

struct RegimeConstants {
  double k = 0.0;        // valid only when has_k
  double alpha0 = 0.0;   // growth bound at t = 0
  double beta0 = 0.0;    // Lipschitz bound at t = 0 (0 when not computable)
  bool has_k = false;
  bool first_estimate_ok = false;   // b^2/16 < (m_coer - k)(nu - k) feasible
  bool second_estimate_ok = false;  // nu - b alpha_0 > 0
  bool fixed_point_ok = false;      // gamma^2 < M g_norm
};

struct HorizonPlan {
  double h_max = 0.0;        // largest admissible interval length, pre-margin
  double h_layer = 0.0;      // 0.9 * h_max, the length actually used
  double theta_h = 0.0;      // growth constant at h_layer
  double sigma_h = 0.0;      // Lipschitz constant at h_layer
  double contraction = 0.0;  // fixed-point factor at h_layer, < 1
  // Layer breakpoints, descending: T = t_0 > t_1 > ... > t_L = 0. Layer j
  // covers [t_{j+1}, t_j]; empty for a zero-length horizon.
  std::vector<double> breakpoints;
  // Terminal constant per layer: M_T for layer 0, beta_0 for every later layer.
  std::vector<double> terminal_constants;
  bool certified = false;  // all regime flags hold
};

// Chooses k maximizing downstream slack: alpha_0 is decreasing in k, so the
// constrained minimizer sits at the feasibility boundary of the k-condition
// (golden-section search, tolerance 1e-10). b = 0 uses k = 0.99 min(m_coer, nu).
RegimeConstants select_k(const ProblemSpec& spec, const GramOperator& gram);

class Regime {
 public:
  Regime(const ProblemSpec& spec, const GramOperator& gram);

  const RegimeConstants& constants() const { return rc_; }
  double m_coer() const { return m_coer_; }
  double g_norm() const { return g_norm_; }
  double horizon() const { return T_; }
  double terminal_constant() const { return M_T_; }

  // Growth bound alpha_t, nonincreasing in t. Throws outside [0, T] or when
  // the k-condition failed.
  double alpha(double t) const;

  // Lipschitz bound beta_t by adaptive Simpson quadrature (abs tol 1e-10).
  // Throws when nu - b alpha_s <= 0 somewhere on [t, T].
  double beta(double t) const;

  // Riccati-comparison bounds as functions of global time t in [0, T],
  // terminal value M_T. Throws std::domain_error past the blow-up time.
  double mu(double t) const;
  double rho(double t, double theta_h) const;

  // The same bounds as functions of the distance tau = T' - t to an interval's
  // terminal time with an arbitrary terminal constant.
  double mu_tau(double tau, double terminal_constant) const;
  double rho_tau(double tau, double theta_h, double terminal_constant) const;

  double theta(double h, double terminal_constant) const;  // mu_tau(h, .)
  double sigma(double h, double terminal_constant) const;  // rho_tau(h, theta(h), .)

  // Fixed-point factor h (sigma_h g_norm + gamma exp(h (gamma + g_norm theta_h))).
  double contraction_factor(double h, double terminal_constant) const;

  // True iff both angle restrictions hold at h and the factor is < 1.
  bool admissible(double h, double terminal_constant) const;

  // Largest admissible h by bisection (tolerance 1e-8), with theta/sigma/factor
  // evaluated at h_layer = 0.9 h_max. Throws when gamma^2 >= M g_norm.
  HorizonPlan admissible_h(double terminal_constant) const;

  // Tiles [0, T]: layer 0 gets terminal constant M_T, all later layers beta_0.
  HorizonPlan layer_plan() const;

 private:
  double gamma_, b_, nu_, M_, M_T_, ratio_T_;  // ratio_T = M_T^2/nu_T (0 if zero F_T)
  double m_coer_, g_norm_, T_;
  RegimeConstants rc_;
};

}  // namespace hctrl
