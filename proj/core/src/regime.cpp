#include "hctrl/regime.hpp"

#include <cmath>
#include <stdexcept>

namespace hctrl {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kAngleGuard = 1e-9;  // arctan inversions stop at pi/2 - guard

// Adaptive Simpson with absolute tolerance; integrand smooth on the admissible
// regime so straightforward recursion suffices.
double simpson(const std::function<double(double)>& f, double a, double b, double fa, double fm,
               double fb, double whole, double tol, int depth) {
  double m = 0.5 * (a + b);
  double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  double flm = f(lm), frm = f(rm);
  double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  if (depth <= 0 || std::abs(left + right - whole) <= 15.0 * tol) {
    return left + right + (left + right - whole) / 15.0;
  }
  return simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
         simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

double integrate(const std::function<double(double)>& f, double a, double b, double tol) {
  if (b <= a) return 0.0;
  double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
  double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return simpson(f, a, b, fa, fm, fb, whole, tol, 48);
}

}  // namespace

RegimeConstants select_k(const ProblemSpec& spec, const GramOperator& gram) {
  RegimeConstants rc;
  const double m = gram.m_coer, nu = spec.nu, b = spec.b_const;
  if (m <= 0.0 || nu <= 0.0) {
    throw std::invalid_argument("select_k requires m_coer > 0 and nu > 0");
  }
  rc.fixed_point_ok = spec.gamma * spec.gamma < spec.M * gram.g_norm;

  const double kmax = std::min(m, nu);
  auto feasible = [&](double k) {
    return k > 0.0 && k < kmax && b * b / 16.0 < (m - k) * (nu - k);
  };
  auto alpha0_of = [&](double k) {
    return spec.terminal_ratio() +
           (spec.gamma * spec.gamma + spec.M * spec.M) * spec.horizon_T / k;
  };

  if (b == 0.0) {
    rc.k = 0.99 * kmax;
    rc.has_k = true;
    rc.first_estimate_ok = true;
  } else if (m * nu > b * b / 16.0) {
    // Feasible set is (0, k*), k* the smaller root of (m-k)(nu-k) = b^2/16.
    // alpha_0 is decreasing in k, so golden-section over (0, k*) lands at k*.
    double disc = (m - nu) * (m - nu) + b * b / 4.0;
    double kstar = 0.5 * ((m + nu) - std::sqrt(disc));
    double lo = 1e-12, hi = kstar * (1.0 - 1e-12);
    const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
    double x1 = hi - gr * (hi - lo), x2 = lo + gr * (hi - lo);
    double f1 = alpha0_of(x1), f2 = alpha0_of(x2);
    while (hi - lo > 1e-10) {
      if (f1 > f2) {
        lo = x1; x1 = x2; f1 = f2;
        x2 = lo + gr * (hi - lo); f2 = alpha0_of(x2);
      } else {
        hi = x2; x2 = x1; f2 = f1;
        x1 = hi - gr * (hi - lo); f1 = alpha0_of(x1);
      }
    }
    rc.k = 0.5 * (lo + hi);
    if (!feasible(rc.k)) rc.k = std::nexttoward(rc.k, 0.0);  // keep strict
    rc.has_k = feasible(rc.k);
    rc.first_estimate_ok = rc.has_k;
  } else {
    rc.has_k = false;
    rc.first_estimate_ok = false;
  }

  if (rc.has_k) {
    rc.alpha0 = alpha0_of(rc.k);
    rc.second_estimate_ok = nu - b * rc.alpha0 > 0.0;
  }
  return rc;
}

Regime::Regime(const ProblemSpec& spec, const GramOperator& gram)
    : gamma_(spec.gamma),
      b_(spec.b_const),
      nu_(spec.nu),
      M_(spec.M),
      M_T_(spec.M_T),
      ratio_T_(spec.terminal_ratio()),
      m_coer_(gram.m_coer),
      g_norm_(gram.g_norm),
      T_(spec.horizon_T),
      rc_(select_k(spec, gram)) {
  if (rc_.second_estimate_ok) {
    rc_.beta0 = beta(0.0);
  }
}

double Regime::alpha(double t) const {
  if (t < -1e-12 || t > T_ + 1e-12) throw std::domain_error("alpha: t outside [0, T]");
  if (!rc_.first_estimate_ok) throw std::domain_error("alpha: k-condition infeasible");
  return ratio_T_ + (gamma_ * gamma_ + M_ * M_) * (T_ - t) / rc_.k;
}

double Regime::beta(double t) const {
  if (t < -1e-12 || t > T_ + 1e-12) throw std::domain_error("beta: t outside [0, T]");
  if (!rc_.first_estimate_ok) throw std::domain_error("beta: k-condition infeasible");
  if (b_ > 0.0 && nu_ - b_ * alpha(0.0) <= 0.0) {
    throw std::domain_error("beta: second estimate regime violated (nu - b alpha_0 <= 0)");
  }
  auto integrand = [&](double s) {
    double as = alpha(s);
    double denom = nu_ - b_ * as;
    if (denom <= 0.0) {
      throw std::domain_error("beta: second estimate regime violated inside the integral");
    }
    double num = M_ + b_ * as;
    return num * num / denom;
  };
  return ratio_T_ + gamma_ * gamma_ * (T_ - t) / m_coer_ + integrate(integrand, t, T_, 1e-10);
}

double Regime::mu_tau(double tau, double terminal_constant) const {
  if (!rc_.fixed_point_ok) throw std::domain_error("mu: gamma^2 >= M g_norm");
  const double s = std::sqrt(M_ * g_norm_ - gamma_ * gamma_);
  const double angle0 = std::atan((terminal_constant * g_norm_ + gamma_) / s);
  const double total = angle0 + s * tau;
  if (total >= kPi / 2.0 - kAngleGuard) {
    throw std::domain_error("horizon exceeds mu blow-up");
  }
  return (std::tan(total) * s - gamma_) / g_norm_;
}

double Regime::rho_tau(double tau, double theta_h, double terminal_constant) const {
  const double Mh = M_ + b_ * theta_h;
  if (gamma_ * gamma_ >= Mh * g_norm_) throw std::domain_error("rho: gamma^2 >= (M + b theta) g_norm");
  const double s = std::sqrt(Mh * g_norm_ - gamma_ * gamma_);
  const double angle0 = std::atan((terminal_constant * g_norm_ + gamma_) / s);
  const double total = angle0 + s * tau;
  if (total >= kPi / 2.0 - kAngleGuard) {
    throw std::domain_error("horizon exceeds rho blow-up");
  }
  return (std::tan(total) * s - gamma_) / g_norm_;
}

double Regime::mu(double t) const {
  if (t < -1e-12 || t > T_ + 1e-12) throw std::domain_error("mu: t outside [0, T]");
  return mu_tau(T_ - t, M_T_);
}

double Regime::rho(double t, double theta_h) const {
  if (t < -1e-12 || t > T_ + 1e-12) throw std::domain_error("rho: t outside [0, T]");
  return rho_tau(T_ - t, theta_h, M_T_);
}

double Regime::theta(double h, double terminal_constant) const {
  return mu_tau(h, terminal_constant);
}

double Regime::sigma(double h, double terminal_constant) const {
  return rho_tau(h, theta(h, terminal_constant), terminal_constant);
}

double Regime::contraction_factor(double h, double terminal_constant) const {
  double th = theta(h, terminal_constant);
  double sh = rho_tau(h, th, terminal_constant);
  return h * (sh * g_norm_ + gamma_ * std::exp(h * (gamma_ + g_norm_ * th)));
}

bool Regime::admissible(double h, double terminal_constant) const {
  if (h <= 0.0) return false;
  const double s = std::sqrt(M_ * g_norm_ - gamma_ * gamma_);
  const double angle0 = std::atan((terminal_constant * g_norm_ + gamma_) / s);
  // First restriction: the mu angle stays below pi/2 on the interval.
  if (angle0 + s * h >= kPi / 2.0 - kAngleGuard) return false;
  // Second restriction, as printed: same leading angle, h-term with the
  // b-augmented curvature M + b theta_h.
  double th;
  try {
    th = theta(h, terminal_constant);
  } catch (const std::domain_error&) {
    return false;
  }
  const double s2 = std::sqrt((M_ + b_ * th) * g_norm_ - gamma_ * gamma_);
  if (angle0 + s2 * h >= kPi / 2.0 - kAngleGuard) return false;
  try {
    return contraction_factor(h, terminal_constant) < 1.0;
  } catch (const std::domain_error&) {
    return false;
  }
}

HorizonPlan Regime::admissible_h(double terminal_constant) const {
  if (!rc_.fixed_point_ok) {
    throw std::domain_error("admissible_h: gamma^2 >= M g_norm");
  }
  HorizonPlan plan;
  // The factor tends to 0 as h -> 0 and the constraints are monotone in h, so
  // an admissible positive h always exists; bracket then bisect.
  double lo = 0.0, hi = 1e-3;
  if (!admissible(hi, terminal_constant)) {
    hi = 1e-6;
    while (hi > 1e-15 && !admissible(hi, terminal_constant)) hi *= 0.5;
    if (hi <= 1e-15) throw std::domain_error("admissible_h: no positive admissible h");
    lo = hi;
    hi *= 2.0;
  }
  while (admissible(hi, terminal_constant) && hi < 1e6) {
    lo = hi;
    hi *= 2.0;
  }
  while (hi - lo > 1e-8) {
    double mid = 0.5 * (lo + hi);
    if (admissible(mid, terminal_constant)) lo = mid; else hi = mid;
  }
  plan.h_max = lo;
  plan.h_layer = 0.9 * lo;
  plan.theta_h = theta(plan.h_layer, terminal_constant);
  plan.sigma_h = sigma(plan.h_layer, terminal_constant);
  plan.contraction = contraction_factor(plan.h_layer, terminal_constant);
  plan.certified = rc_.first_estimate_ok && rc_.second_estimate_ok && rc_.fixed_point_ok;
  return plan;
}

HorizonPlan Regime::layer_plan() const {
  HorizonPlan plan0 = admissible_h(M_T_);
  if (T_ <= 0.0) {
    plan0.breakpoints.clear();
    plan0.terminal_constants.clear();
    return plan0;
  }
  if (T_ <= plan0.h_layer + 1e-15) {
    plan0.breakpoints = {T_, 0.0};
    plan0.terminal_constants = {M_T_};
    return plan0;
  }
  if (!rc_.second_estimate_ok) {
    throw std::domain_error("layer_plan: second estimate regime fails, beta_0 unavailable");
  }
  HorizonPlan plan = admissible_h(rc_.beta0);
  plan.breakpoints = {T_, T_ - plan0.h_layer};
  plan.terminal_constants = {M_T_};
  while (plan.breakpoints.back() > 1e-12) {
    double next = plan.breakpoints.back() - plan.h_layer;
    if (next < 1e-12) next = 0.0;
    plan.breakpoints.push_back(next);
    plan.terminal_constants.push_back(rc_.beta0);
  }
  if (plan.breakpoints.back() != 0.0) plan.breakpoints.push_back(0.0);
  return plan;
}

}  // namespace hctrl
