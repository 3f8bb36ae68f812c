#include "hctrl/riccati.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace hctrl {

namespace {

void require_symmetric(const Mat& X, const char* name) {
  if (X.rows() != X.cols() || (X - X.transpose()).cwiseAbs().maxCoeff() > 1e-10 * (1.0 + X.cwiseAbs().maxCoeff())) {
    throw std::invalid_argument(std::string(name) + " must be square symmetric");
  }
}

}  // namespace

Mat RiccatiSolution::eval(double t) const {
  if (grid.empty()) throw std::logic_error("empty gain path");
  double slack = 1e-9 * (1.0 + std::abs(grid.back()));
  if (t < grid.front() - slack || t > grid.back() + slack) {
    throw std::domain_error("gain requested outside the solved range");
  }
  if (t <= grid.front()) return P.front();
  if (t >= grid.back()) return P.back();
  auto it = std::upper_bound(grid.begin(), grid.end(), t);
  std::size_t k = static_cast<std::size_t>(it - grid.begin()) - 1;
  double w = (t - grid[k]) / (grid[k + 1] - grid[k]);
  return (1.0 - w) * P[k] + w * P[k + 1];
}

RiccatiSolution riccati_solve(const Mat& A, const Mat& M, const Mat& M_T, const Mat& G,
                              double t0, double t1, double steps_per_unit) {
  require_symmetric(M, "M");
  require_symmetric(M_T, "M_T");
  require_symmetric(G, "G");
  if (A.rows() != A.cols() || A.rows() != M.rows()) {
    throw std::invalid_argument("Riccati matrices must share one square dimension");
  }
  if (t1 < t0) throw std::invalid_argument("riccati_solve needs t1 >= t0");

  RiccatiSolution sol;
  sol.M_T = M_T;
  int K = std::max(4, static_cast<int>(std::ceil((t1 - t0) * steps_per_unit - 1e-12)));
  if (t1 - t0 <= 1e-12) K = 1;
  sol.grid.resize(K + 1);
  for (int j = 0; j <= K; ++j) sol.grid[j] = t0 + (t1 - t0) * j / K;
  sol.grid.back() = t1;
  sol.P.assign(K + 1, M_T);

  auto rhs = [&](const Mat& P) -> Mat {  // dP/ds, integrated backward
    return -(P * A + A.transpose() * P - P * G * P + M);
  };
  for (int j = K; j-- > 0;) {
    double dt = sol.grid[j] - sol.grid[j + 1];  // negative
    const Mat& P1 = sol.P[j + 1];
    Mat k1 = rhs(P1);
    Mat k2 = rhs(P1 + 0.5 * dt * k1);
    Mat k3 = rhs(P1 + 0.5 * dt * k2);
    Mat k4 = rhs(P1 + dt * k3);
    Mat P0 = P1 + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    P0 = 0.5 * (P0 + P0.transpose()).eval();
    if (!P0.allFinite() || P0.cwiseAbs().maxCoeff() > 1e12) {
      throw std::runtime_error("Riccati gain blow-up before the start of the interval");
    }
    sol.P[j] = std::move(P0);
  }
  return sol;
}

Vec lq_field(const RiccatiSolution& sol, const Vec& x, double t) { return sol.eval(t) * x; }

LQField::LQField(RiccatiSolution sol) : sol_(std::move(sol)) {
  double worst = 0.0;
  for (const auto& P : sol_.P) {
    worst = std::max(worst, P.selfadjointView<Eigen::Lower>().operatorNorm());
  }
  lipschitz_bound = worst;
}

Vec LQField::eval(const Vec& x, double t) const { return lq_field(sol_, x, t); }

double scalar_riccati_closed_form(double a, double M, double g, double m_T, double tau) {
  if (tau < 0.0) throw std::invalid_argument("elapsed time must be nonnegative");
  const double kappa2 = a * a + M * g;
  const double kappa = std::sqrt(std::max(kappa2, 0.0));
  if (kappa == 0.0) {
    // a = 0 and M g = 0: dP/dtau = -g P^2 (or P constant when g = 0 too).
    double denom = 1.0 + m_T * g * tau;
    if (denom <= 0.0) throw std::runtime_error("scalar gain blow-up");
    return m_T / denom;
  }
  if (g == 0.0) {
    // Linear equation: dP/dtau = 2 a P + M.
    if (a == 0.0) return m_T + M * tau;
    return (m_T + M / (2.0 * a)) * std::exp(2.0 * a * tau) - M / (2.0 * a);
  }
  const double w0 = (m_T * g - a) / kappa;  // normalized offset from the fixed point a/g
  if (std::abs(w0) < 1.0) {
    return a / g + (kappa / g) * std::tanh(kappa * tau + std::atanh(w0));
  }
  if (std::abs(w0) > 1.0) {
    double shift = std::atanh(1.0 / w0);  // acoth
    double arg = kappa * tau + shift;
    if (shift < 0.0 && arg >= 0.0) throw std::runtime_error("scalar gain blow-up");
    return a / g + (kappa / g) / std::tanh(arg);
  }
  return m_T;  // started on the constant branch
}

MfLqSolution mf_lq_solve(int n, const Mat& A, const Mat& B, const Mat& N, const Mat& Q,
                         double s_coupling, const Mat& M_T_term, double t0, double t1,
                         double steps_per_unit) {
  if (A.rows() != n || A.cols() != n || Q.rows() != n || M_T_term.rows() != n) {
    throw std::invalid_argument("per-particle matrices must be n x n");
  }
  Eigen::LDLT<Mat> ldlt(N);
  if (ldlt.info() != Eigen::Success) throw std::invalid_argument("N must be positive definite");
  Mat G = B * ldlt.solve(B.transpose());
  G = 0.5 * (G + G.transpose()).eval();

  const double mean_w = (1.0 - s_coupling) * (1.0 - s_coupling);
  MfLqSolution out;
  out.dev = riccati_solve(A, Q, M_T_term, G, t0, t1, steps_per_unit);
  out.mean = riccati_solve(A, mean_w * Q, mean_w * M_T_term, G, t0, t1, steps_per_unit);
  return out;
}

}  // namespace hctrl
