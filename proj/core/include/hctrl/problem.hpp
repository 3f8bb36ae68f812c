#pragma once
// Finite-horizon optimal control problem on R^d with separable drift:
//   dy/ds = A(y) + B v,   J = int_t^T [F(y) + 1/2 (v, N v)] ds + F_T(y(T)).
// The drift is nonlinear in the state and linear in the control; costs are
// convex with two-sided Hessian bounds. The structural constants
// (gamma, b_const, nu, M, nu_T, M_T) are carried as explicit data because the
// admissible contraction horizon is a function of them alone; the
// check_assumptions auditor verifies them by sampling.

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace hctrl {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

using ScalarFn = std::function<double(const Vec&)>;
using VecFn = std::function<Vec(const Vec&)>;
using MatFn = std::function<Mat(const Vec&)>;

struct ProblemSpec {
  int dim = 0;       // state dimension d
  int ctrl_dim = 0;  // control dimension p

  VecFn drift;           // A(x), normalized so A(0) = 0
  MatFn drift_jacobian;  // DA(x), d x d
  double gamma = 0.0;    // sup_x ||DA(x)||_2
  double b_const = 0.0;  // weighted Lipschitz constant of DA:
                         // ||DA(x1)-DA(x2)|| <= b |x1-x2| / (1+max(|x1|,|x2|))

  ScalarFn cost_running;    // F, F(0) = 0
  VecFn cost_running_grad;  // DF, DF(0) = 0
  MatFn cost_running_hess;  // optional analytic Hessian; may be empty
  double nu = 0.0;          // nu I <= D^2 F
  double M = 0.0;           // D^2 F <= M I

  ScalarFn cost_terminal;
  VecFn cost_terminal_grad;
  MatFn cost_terminal_hess;  // optional
  double nu_T = 0.0;
  double M_T = 0.0;
  bool terminal_zero = false;  // F_T identically 0; M_T^2/nu_T treated as 0

  Mat B;  // d x p
  Mat N;  // p x p, symmetric positive definite
  double horizon_T = 0.0;

  bool drift_linear = false;  // A(x) = drift_matrix * x
  Mat drift_matrix;
  bool cost_quadratic = false;  // F = 1/2 x'Q_run x, F_T = 1/2 x'Q_term x
  Mat Q_run, Q_term;

  // Leading term of the growth/Lipschitz bounds; 0 for a vanishing terminal cost.
  double terminal_ratio() const { return terminal_zero ? 0.0 : M_T * M_T / nu_T; }
};

// G = B N^{-1} B', the control-weighted Gram operator of the dynamics.
struct GramOperator {
  Mat G;                 // symmetric positive semidefinite
  double m_coer = 0.0;   // smallest eigenvalue; > 0 required by the regime analysis
  double g_norm = 0.0;   // largest eigenvalue
  bool coercive = false; // m_coer > 0
};

struct AssumptionRecord {
  std::string id;
  int samples = 0;
  double worst_margin = 0.0;  // declared bound minus worst observed value
  bool pass = false;
};

struct AssumptionReport {
  std::vector<AssumptionRecord> records;
  bool pass = false;  // conjunction of the record flags
};

struct SamplePlan {
  int count = 64;        // points (and pairs) per assumption
  double radius = 2.0;   // samples drawn uniformly in [-radius, radius]^d
  std::uint64_t seed = 12345;
};

// Structured problem description; matrices row-major in config files.
struct DriftConfig {
  std::string family;  // "linear" | "saturating"
  Mat matrix;          // linear: d x d matrix
  double scale = 0.0;  // saturating: A(x) = scale * x / (1 + |x|)
};

struct CostConfig {
  std::string family = "quadratic";  // "quadratic" | "zero"
  Mat Q;                             // quadratic: F = 1/2 x'Qx, symmetric PSD
};

struct ProblemConfig {
  int dim = 0;
  int ctrl_dim = 0;
  double horizon_T = 0.0;
  DriftConfig drift;
  CostConfig cost_running;
  CostConfig cost_terminal;
  Mat B, N;
};

// Builds a ProblemSpec with analytically derived constants for the named
// families. Throws std::invalid_argument on unknown families, non-symmetric or
// singular N, or nonpositive cost curvature (zero terminal cost excepted).
ProblemSpec build_problem(const ProblemConfig& config);

// Gram operator with its exact symmetric eigenvalue range.
// Throws std::invalid_argument if N is singular or non-symmetric.
GramOperator gram(const ProblemSpec& spec);

// Samples the standing assumptions (origin normalization, Jacobian bound,
// weighted Jacobian Lipschitz bound, Taylor gap |A(x)-DA(x)x| <= (b/2)|x|,
// cost Hessian bounds, N validity). Failures are report entries, not errors.
AssumptionReport check_assumptions(const ProblemSpec& spec, const SamplePlan& samples);

// Dense-sample maximization of ||DA(x1)-DA(x2)||(1+max(|x1|,|x2|))/|x1-x2|.
// Independent audit of b_const used by tests and reports.
double jacobian_lipschitz_ratio(const ProblemSpec& spec, const SamplePlan& samples);

}  // namespace hctrl
