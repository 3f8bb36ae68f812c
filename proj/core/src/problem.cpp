#include "hctrl/problem.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace hctrl {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

bool is_symmetric(const Mat& A, double tol) {
  return (A - A.transpose()).cwiseAbs().maxCoeff() <= tol * (1.0 + A.cwiseAbs().maxCoeff());
}

// Spectrum of a symmetric matrix as [min, max].
std::pair<double, double> sym_eig_range(const Mat& A) {
  Eigen::SelfAdjointEigenSolver<Mat> es(A);
  const auto& v = es.eigenvalues();
  return {v.minCoeff(), v.maxCoeff()};
}

ProblemSpec with_quadratic_costs(ProblemSpec spec, const Mat& Q_run, const Mat& Q_term) {
  spec.cost_quadratic = true;
  spec.Q_run = Q_run;
  spec.Q_term = Q_term;
  spec.cost_running = [Q_run](const Vec& x) { return 0.5 * x.dot(Q_run * x); };
  spec.cost_running_grad = [Q_run](const Vec& x) -> Vec { return Q_run * x; };
  spec.cost_running_hess = [Q_run](const Vec&) -> Mat { return Q_run; };
  auto [lo, hi] = sym_eig_range(Q_run);
  require(lo > 0.0, "nonpositive nu: running cost must have positive curvature");
  spec.nu = lo;
  spec.M = hi;

  spec.cost_terminal = [Q_term](const Vec& x) { return 0.5 * x.dot(Q_term * x); };
  spec.cost_terminal_grad = [Q_term](const Vec& x) -> Vec { return Q_term * x; };
  spec.cost_terminal_hess = [Q_term](const Vec&) -> Mat { return Q_term; };
  auto [lo_T, hi_T] = sym_eig_range(Q_term);
  if (Q_term.cwiseAbs().maxCoeff() == 0.0) {
    // Identically-zero terminal cost: allowed degenerate case, the leading
    // M_T^2/nu_T term of the growth bounds is taken to be 0.
    spec.terminal_zero = true;
    spec.nu_T = 0.0;
    spec.M_T = 0.0;
  } else {
    require(lo_T > 0.0, "nonpositive nu_T: terminal cost must have positive curvature or be zero");
    spec.nu_T = lo_T;
    spec.M_T = hi_T;
  }
  return spec;
}

}  // namespace

ProblemSpec build_problem(const ProblemConfig& config) {
  require(config.dim >= 1, "dim must be positive");
  require(config.ctrl_dim >= 1, "ctrl_dim must be positive");
  require(config.horizon_T >= 0.0, "horizon_T must be nonnegative");

  ProblemSpec spec;
  spec.dim = config.dim;
  spec.ctrl_dim = config.ctrl_dim;
  spec.horizon_T = config.horizon_T;

  const int d = config.dim;

  if (config.drift.family == "linear") {
    Mat A0 = config.drift.matrix;
    require(A0.rows() == d && A0.cols() == d, "linear drift matrix must be d x d");
    spec.drift_linear = true;
    spec.drift_matrix = A0;
    spec.drift = [A0](const Vec& x) -> Vec { return A0 * x; };
    spec.drift_jacobian = [A0](const Vec&) -> Mat { return A0; };
    spec.gamma = A0.rows() == 0 ? 0.0 : A0.jacobiSvd().singularValues()(0);
    spec.b_const = 0.0;
  } else if (config.drift.family == "saturating") {
    // Radial saturation A(x) = a x / (1 + |x|): gamma = |a| (the Jacobian norm
    // a/(1+r) peaks at the origin) and b = 2|a| (supremum of the weighted
    // difference quotient, attained as x -> 0).
    const double a = config.drift.scale;
    spec.drift = [a](const Vec& x) -> Vec { return a / (1.0 + x.norm()) * x; };
    spec.drift_jacobian = [a, d](const Vec& x) -> Mat {
      const double r = x.norm();
      Mat I = Mat::Identity(d, d);
      if (r < 1e-300) return a * I;
      Vec e = x / r;
      const double c1 = a / (1.0 + r);
      const double c2 = a / ((1.0 + r) * (1.0 + r));
      return c1 * (I - e * e.transpose()) + c2 * (e * e.transpose());
    };
    spec.gamma = std::abs(a);
    spec.b_const = 2.0 * std::abs(a);
  } else {
    throw std::invalid_argument("unknown drift family: " + config.drift.family);
  }

  auto quadratic_matrix = [d](const CostConfig& c, const char* which) -> Mat {
    if (c.family == "zero") return Mat::Zero(d, d);
    require(c.family == "quadratic", std::string("unknown cost family: ") + c.family);
    require(c.Q.rows() == d && c.Q.cols() == d, std::string(which) + " Q must be d x d");
    require(is_symmetric(c.Q, 1e-12), std::string(which) + " Q must be symmetric");
    return c.Q;
  };
  Mat Q_run = quadratic_matrix(config.cost_running, "running");
  require(Q_run.cwiseAbs().maxCoeff() > 0.0, "nonpositive nu: running cost must be nonzero");
  Mat Q_term = quadratic_matrix(config.cost_terminal, "terminal");
  spec = with_quadratic_costs(std::move(spec), Q_run, Q_term);

  require(config.B.rows() == d && config.B.cols() == config.ctrl_dim, "B must be d x p");
  require(config.N.rows() == config.ctrl_dim && config.N.cols() == config.ctrl_dim,
          "N must be p x p");
  require(is_symmetric(config.N, 1e-12), "non-symmetric N");
  auto [nlo, nhi] = sym_eig_range(config.N);
  require(std::min(std::abs(nlo), std::abs(nhi)) > 1e-12 * std::max(1.0, std::abs(nhi)),
          "singular N");
  require(nlo > 0.0, "N must be positive definite");
  spec.B = config.B;
  spec.N = config.N;

  return spec;
}

GramOperator gram(const ProblemSpec& spec) {
  require(spec.N.rows() == spec.ctrl_dim && spec.N.cols() == spec.ctrl_dim, "N must be p x p");
  require(is_symmetric(spec.N, 1e-12), "non-symmetric N");
  Eigen::SelfAdjointEigenSolver<Mat> es_n(spec.N);
  const auto& nev = es_n.eigenvalues();
  require(nev.cwiseAbs().minCoeff() > 1e-12 * std::max(1.0, nev.cwiseAbs().maxCoeff()),
          "singular N");

  GramOperator g;
  Mat Ninv_Bt = es_n.eigenvectors() *
                nev.cwiseInverse().asDiagonal() *
                es_n.eigenvectors().transpose() * spec.B.transpose();
  g.G = spec.B * Ninv_Bt;
  g.G = 0.5 * (g.G + g.G.transpose());
  auto [lo, hi] = sym_eig_range(g.G);
  g.m_coer = lo;
  g.g_norm = hi;
  g.coercive = lo > 0.0;
  return g;
}

double jacobian_lipschitz_ratio(const ProblemSpec& spec, const SamplePlan& samples) {
  std::mt19937_64 rng(samples.seed);
  std::uniform_real_distribution<double> unif(-samples.radius, samples.radius);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  double worst = 0.0;
  for (int i = 0; i < samples.count; ++i) {
    Vec x1(spec.dim), x2(spec.dim), w(spec.dim);
    for (int j = 0; j < spec.dim; ++j) x1(j) = unif(rng);
    for (int j = 0; j < spec.dim; ++j) x2(j) = unif(rng);
    for (int j = 0; j < spec.dim; ++j) w(j) = unit(rng);
    // Include near-coincident pairs and near-origin pairs: the supremum is
    // often attained in the x2 -> x1 or x -> 0 limits, which a pure product
    // sample would miss.
    if (i % 3 == 1) x2 = x1 + 1e-4 * w;
    if (i % 3 == 2) { x1 = 1e-3 * w; x2 = -x1; }
    double dist = (x1 - x2).norm();
    if (dist < 1e-9) continue;
    Mat D1 = spec.drift_jacobian(x1);
    Mat D2 = spec.drift_jacobian(x2);
    double num = (D1 - D2).jacobiSvd().singularValues()(0);
    double weight = 1.0 + std::max(x1.norm(), x2.norm());
    worst = std::max(worst, num * weight / dist);
  }
  return worst;
}

AssumptionReport check_assumptions(const ProblemSpec& spec, const SamplePlan& samples) {
  if (samples.count < 1) throw std::invalid_argument("sampling plan must be nonempty");
  AssumptionReport report;
  std::mt19937_64 rng(samples.seed);
  std::uniform_real_distribution<double> unif(-samples.radius, samples.radius);
  auto draw = [&]() {
    Vec x(spec.dim);
    for (int j = 0; j < spec.dim; ++j) x(j) = unif(rng);
    return x;
  };
  const Vec zero = Vec::Zero(spec.dim);

  {
    AssumptionRecord r;
    r.id = "origin_normalization";
    r.samples = 1;
    double worst = spec.drift(zero).norm();
    worst = std::max(worst, spec.cost_running_grad(zero).norm());
    worst = std::max(worst, spec.cost_terminal_grad(zero).norm());
    r.worst_margin = 1e-10 - worst;
    r.pass = r.worst_margin >= 0.0;
    report.records.push_back(r);
  }
  {
    AssumptionRecord r;
    r.id = "jacobian_bound";
    r.samples = samples.count;
    double worst = 0.0;
    for (int i = 0; i < samples.count; ++i) {
      Vec x = draw();
      worst = std::max(worst, spec.drift_jacobian(x).jacobiSvd().singularValues()(0));
    }
    r.worst_margin = spec.gamma - worst;
    r.pass = r.worst_margin >= -1e-9 * (1.0 + spec.gamma);
    report.records.push_back(r);
  }
  {
    AssumptionRecord r;
    r.id = "jacobian_lipschitz";
    r.samples = samples.count;
    double worst = jacobian_lipschitz_ratio(spec, samples);
    r.worst_margin = spec.b_const - worst;
    r.pass = r.worst_margin >= -1e-9 * (1.0 + spec.b_const);
    report.records.push_back(r);
  }
  {
    AssumptionRecord r;
    r.id = "taylor_gap";
    r.samples = samples.count;
    double worst = -1e300;  // largest violation of |A(x)-DA(x)x| <= (b/2)|x|
    double margin = 1e300;
    for (int i = 0; i < samples.count; ++i) {
      Vec x = draw();
      double lhs = (spec.drift(x) - spec.drift_jacobian(x) * x).norm();
      double bound = 0.5 * spec.b_const * x.norm();
      margin = std::min(margin, bound - lhs);
      worst = std::max(worst, lhs - bound);
    }
    r.worst_margin = margin;
    r.pass = worst <= 1e-12 * (1.0 + 0.5 * spec.b_const * samples.radius);
    report.records.push_back(r);
  }
  auto fd_hessian = [&](const VecFn& grad, const Vec& x) {
    const double step = 1e-5 * (1.0 + x.norm());
    Mat H(spec.dim, spec.dim);
    for (int j = 0; j < spec.dim; ++j) {
      Vec e = Vec::Zero(spec.dim);
      e(j) = step;
      H.col(j) = (grad(x + e) - grad(x - e)) / (2.0 * step);
    }
    return Mat(0.5 * (H + H.transpose()));
  };
  auto hessian_record = [&](const char* id, const VecFn& grad, double lo_bound, double hi_bound) {
    AssumptionRecord r;
    r.id = id;
    r.samples = samples.count;
    double margin = 1e300;
    for (int i = 0; i < samples.count; ++i) {
      Vec x = draw();
      auto [lo, hi] = sym_eig_range(fd_hessian(grad, x));
      margin = std::min(margin, std::min(lo - lo_bound, hi_bound - hi));
    }
    r.worst_margin = margin;
    r.pass = margin >= -1e-6;
    return r;
  };
  report.records.push_back(hessian_record("hessian_running", spec.cost_running_grad, spec.nu, spec.M));
  report.records.push_back(
      hessian_record("hessian_terminal", spec.cost_terminal_grad, spec.nu_T, spec.M_T));
  {
    AssumptionRecord r;
    r.id = "control_weight";
    r.samples = 1;
    bool sym = is_symmetric(spec.N, 1e-12);
    auto [lo, hi] = sym_eig_range(spec.N);
    r.worst_margin = lo - 1e-12 * std::max(1.0, hi);
    r.pass = sym && r.worst_margin > 0.0;
    report.records.push_back(r);
  }

  report.pass = true;
  for (const auto& r : report.records) report.pass = report.pass && r.pass;
  return report;
}

}  // namespace hctrl
