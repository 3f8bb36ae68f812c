#include "hctrl/mfc.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <utility>

namespace hctrl {

namespace {

// Lexicographic comparison of coordinate vectors; a strict weak ordering on
// finite points. Ties are bitwise-interchangeable for every use below.
bool lex_less(const Vec& a, const Vec& b) {
  for (int k = 0; k < a.size(); ++k) {
    if (a[k] < b[k]) return true;
    if (a[k] > b[k]) return false;
  }
  return false;
}

std::vector<int> canonical_order(const std::vector<Vec>& points) {
  std::vector<int> order(points.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int i, int j) { return lex_less(points[i], points[j]); });
  return order;
}

void validate_measure(const ParticleMeasure& m, int expected_dim) {
  if (m.count() < 1) throw std::invalid_argument("empty particle measure");
  const int n = expected_dim > 0 ? expected_dim : m.n;
  if (m.n != n) throw std::invalid_argument("particle measure dimension mismatch");
  for (const Vec& p : m.points) {
    if (p.size() != n) throw std::invalid_argument("particle with wrong dimension");
    if (!p.allFinite()) throw std::invalid_argument("particle with non-finite coordinates");
  }
}

void require_symmetric(const char* name, const Mat& M) {
  const double scale = 1.0 + M.cwiseAbs().maxCoeff();
  if ((M - M.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
    throw std::invalid_argument(std::string(name) + " must be symmetric");
  }
}

bool is_zero_matrix(const Mat& M) { return M.size() == 0 || M.isZero(0.0); }

void validate_mf(const MFProblemSpec& mf) {
  if (mf.n < 1) throw std::invalid_argument("state dimension must be positive");
  if (mf.A.rows() != mf.n || mf.A.cols() != mf.n) {
    throw std::invalid_argument("drift matrix must be n x n");
  }
  if (mf.B.rows() != mf.n || mf.B.cols() < 1) {
    throw std::invalid_argument("actuation matrix must be n x p with p >= 1");
  }
  const int p = static_cast<int>(mf.B.cols());
  if (mf.N_weight.rows() != p || mf.N_weight.cols() != p) {
    throw std::invalid_argument("control weight must be p x p");
  }
  require_symmetric("control weight", mf.N_weight);
  {
    Eigen::SelfAdjointEigenSolver<Mat> es(mf.N_weight);
    if (es.info() != Eigen::Success || es.eigenvalues().cwiseAbs().minCoeff() <= 0.0) {
      throw std::invalid_argument("control weight must be invertible");
    }
  }
  if (mf.Q.rows() != mf.n || mf.Q.cols() != mf.n) {
    throw std::invalid_argument("running weight must be n x n");
  }
  require_symmetric("running weight", mf.Q);
  {
    Eigen::SelfAdjointEigenSolver<Mat> es(mf.Q);
    if (es.info() != Eigen::Success || es.eigenvalues().minCoeff() <= 0.0) {
      throw std::invalid_argument("running weight must be positive definite");
    }
  }
  if (!is_zero_matrix(mf.Q_T)) {
    if (mf.Q_T.rows() != mf.n || mf.Q_T.cols() != mf.n) {
      throw std::invalid_argument("terminal weight must be n x n");
    }
    require_symmetric("terminal weight", mf.Q_T);
    Eigen::SelfAdjointEigenSolver<Mat> es(mf.Q_T);
    if (es.info() != Eigen::Success || es.eigenvalues().minCoeff() <= 0.0) {
      throw std::invalid_argument("terminal weight must be positive definite or zero");
    }
  }
  if (!(mf.horizon_T > 0.0)) throw std::invalid_argument("horizon must be positive");
}

double spectral_norm(const Mat& M) {
  if (M.size() == 0) return 0.0;
  Eigen::JacobiSVD<Mat> svd(M);
  return svd.singularValues().size() > 0 ? svd.singularValues()(0) : 0.0;
}

Mat block_diag(const Mat& M, int copies) {
  Mat out = Mat::Zero(M.rows() * copies, M.cols() * copies);
  for (int i = 0; i < copies; ++i) {
    out.block(i * M.rows(), i * M.cols(), M.rows(), M.cols()) = M;
  }
  return out;
}

Vec stack_points(const std::vector<Vec>& points) {
  const int n = static_cast<int>(points.front().size());
  Vec out(static_cast<int>(points.size()) * n);
  for (int i = 0; i < static_cast<int>(points.size()); ++i) {
    out.segment(i * n, n) = points[i];
  }
  return out;
}

Vec stacked_mean(const Vec& X, int n) {
  const int count = static_cast<int>(X.size()) / n;
  Vec mean = Vec::Zero(n);
  for (int i = 0; i < count; ++i) mean += X.segment(i * n, n);
  return mean / count;
}

// Gram operator at the single-particle level, G = B N^{-1} B'.
Mat particle_gram(const MFProblemSpec& mf) {
  Eigen::LDLT<Mat> ldlt(mf.N_weight);
  if (ldlt.info() != Eigen::Success) {
    throw std::invalid_argument("control weight factorization failed");
  }
  Mat G = mf.B * ldlt.solve(mf.B.transpose());
  return 0.5 * (G + G.transpose());
}

// Running integrand f(x, mean) of the quadratic mean-coupled family.
double coupled_cost(const Mat& Q, double s, const Vec& x, const Vec& mean) {
  Vec d = x - s * mean;
  return 0.5 * d.dot(Q * d);
}

// Exact minimal-cost assignment by shortest augmenting paths with dual
// potentials; O(N^3), rows assigned one at a time.
double min_assignment_cost(const std::vector<std::vector<double>>& cost) {
  const int n = static_cast<int>(cost.size());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> match(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    match[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = match[j0];
      int j1 = -1;
      double delta = inf;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const int j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  double total = 0.0;
  for (int j = 1; j <= n; ++j) total += cost[match[j] - 1][j - 1];
  return total;
}

}  // namespace

Vec ParticleMeasure::mean() const {
  validate_measure(*this, n);
  const std::vector<int> order = canonical_order(points);
  Vec sum = Vec::Zero(n);
  for (int idx : order) sum += points[idx];
  return sum / count();
}

Vec LiftedState::particle(int i) const {
  const int n = reference.n;
  if (i < 0 || (i + 1) * n > values.size()) {
    throw std::invalid_argument("particle index out of range");
  }
  return values.segment(i * n, n);
}

ParticleMeasure pushforward(const LiftedState& X) {
  validate_measure(X.reference, X.reference.n);
  const int n = X.reference.n;
  const int count = X.reference.count();
  if (X.values.size() != count * n) {
    throw std::invalid_argument("lifted state size does not match the reference measure");
  }
  ParticleMeasure out;
  out.n = n;
  out.points.reserve(count);
  for (int i = 0; i < count; ++i) out.points.push_back(X.values.segment(i * n, n));
  return out;
}

LiftedState identity_lift(const ParticleMeasure& m) {
  validate_measure(m, m.n);
  return LiftedState{stack_points(m.points), m};
}

MFAssumptionFlags mf_assumptions(const MFProblemSpec& mf) {
  validate_mf(mf);
  MFAssumptionFlags flags;
  const Mat G = particle_gram(mf);
  Eigen::SelfAdjointEigenSolver<Mat> ges(G);
  flags.control_coercive = ges.eigenvalues().minCoeff() > 0.0;
  flags.cross_running_zero = (mf.s == 0.0);
  flags.cross_terminal_zero = (mf.s_T == 0.0);
  Eigen::SelfAdjointEigenSolver<Mat> qes(mf.Q);
  const double g_norm = ges.eigenvalues().cwiseAbs().maxCoeff();
  flags.drift_dominated = spectral_norm(mf.A) < qes.eigenvalues().maxCoeff() * g_norm;
  return flags;
}

ProblemSpec lift_problem(const MFProblemSpec& mf, const ParticleMeasure& m) {
  validate_mf(mf);
  validate_measure(m, mf.n);
  const int n = mf.n;
  const int count = m.count();
  const int p = static_cast<int>(mf.B.cols());

  Eigen::SelfAdjointEigenSolver<Mat> qes(mf.Q);
  const double q_min = qes.eigenvalues().minCoeff();
  const double q_max = qes.eigenvalues().maxCoeff();
  const bool terminal_zero = is_zero_matrix(mf.Q_T);
  double t_min = 0.0, t_max = 0.0;
  if (!terminal_zero) {
    Eigen::SelfAdjointEigenSolver<Mat> tes(mf.Q_T);
    t_min = tes.eigenvalues().minCoeff();
    t_max = tes.eigenvalues().maxCoeff();
  }

  // The lifted cost sum_i f(x_i, mean) is the quadratic form of
  //   Q_lift = I (x) Q - [s(2-s)/count] (11') (x) Q,
  // which acts as Q on mean-zero directions and (1-s)^2 Q on the consensus
  // direction; curvature bounds follow from the eigenvalues of Q and s.
  auto coupling_bounds = [](double w_min, double w_max, double s) {
    const double c = (1.0 - s) * (1.0 - s);
    return std::pair<double, double>(w_min * std::min(1.0, c), w_max * std::max(1.0, c));
  };
  const auto [nu_run, m_run] = coupling_bounds(q_min, q_max, mf.s);
  const auto [nu_ter, m_ter] =
      terminal_zero ? std::pair<double, double>(0.0, 0.0) : coupling_bounds(t_min, t_max, mf.s_T);

  auto coupled_quadratic = [count, n](const Mat& Q, double s) {
    Mat lift = block_diag(Q, count);
    const double w = s * (2.0 - s) / count;
    if (w != 0.0) {
      for (int i = 0; i < count; ++i) {
        for (int j = 0; j < count; ++j) {
          lift.block(i * n, j * n, n, n) -= w * Q;
        }
      }
    }
    return lift;
  };

  auto family_cost = [n](const Mat& Q, double s) {
    return [Q, s, n](const Vec& X) {
      const Vec mean = stacked_mean(X, n);
      const int count = static_cast<int>(X.size()) / n;
      double total = 0.0;
      for (int i = 0; i < count; ++i) {
        total += coupled_cost(Q, s, X.segment(i * n, n), mean);
      }
      return total;
    };
  };
  // Gradient block i of the lifted cost: Q(x_i - s*mean) - s(1-s) Q mean,
  // which is exactly the per-particle measure-derivative gradient.
  auto family_grad = [n](const Mat& Q, double s) {
    return [Q, s, n](const Vec& X) {
      const Vec mean = stacked_mean(X, n);
      const Vec shift = s * (1.0 - s) * (Q * mean);
      const int count = static_cast<int>(X.size()) / n;
      Vec g(X.size());
      for (int i = 0; i < count; ++i) {
        g.segment(i * n, n) = Q * (X.segment(i * n, n) - s * mean) - shift;
      }
      return g;
    };
  };

  ProblemSpec out;
  out.dim = n * count;
  out.ctrl_dim = p * count;
  const Mat A_lift = block_diag(mf.A, count);
  out.drift_linear = true;
  out.drift_matrix = A_lift;
  out.drift = [A_lift](const Vec& X) { return Vec(A_lift * X); };
  out.drift_jacobian = [A_lift](const Vec&) { return A_lift; };
  out.gamma = spectral_norm(mf.A);
  out.b_const = 0.0;

  const Mat Q_lift = coupled_quadratic(mf.Q, mf.s);
  out.cost_running = family_cost(mf.Q, mf.s);
  out.cost_running_grad = family_grad(mf.Q, mf.s);
  out.cost_running_hess = [Q_lift](const Vec&) { return Q_lift; };
  out.nu = nu_run;
  out.M = m_run;

  out.terminal_zero = terminal_zero;
  out.nu_T = nu_ter;
  out.M_T = m_ter;
  if (terminal_zero) {
    out.cost_terminal = [](const Vec&) { return 0.0; };
    out.cost_terminal_grad = [](const Vec& X) { return Vec(Vec::Zero(X.size())); };
    out.cost_terminal_hess = [](const Vec& X) { return Mat(Mat::Zero(X.size(), X.size())); };
    out.Q_term = Mat::Zero(out.dim, out.dim);
  } else {
    const Mat QT_lift = coupled_quadratic(mf.Q_T, mf.s_T);
    out.cost_terminal = family_cost(mf.Q_T, mf.s_T);
    out.cost_terminal_grad = family_grad(mf.Q_T, mf.s_T);
    out.cost_terminal_hess = [QT_lift](const Vec&) { return QT_lift; };
    out.Q_term = QT_lift;
  }

  out.B = block_diag(mf.B, count);
  out.N = block_diag(mf.N_weight, count);
  out.horizon_T = mf.horizon_T;
  out.cost_quadratic = true;
  out.Q_run = Q_lift;
  return out;
}

Vec MFCSolution::state_mean(int node) const {
  if (node < 0 || node >= static_cast<int>(lifted.y.size())) {
    throw std::invalid_argument("node index out of range");
  }
  return stacked_mean(lifted.y[node], mf.n);
}

MFCSolution mfc_solve(const MFProblemSpec& mf, const ParticleMeasure& m, double t,
                      const SolverOptions& opts) {
  validate_mf(mf);
  validate_measure(m, mf.n);
  if (t < 0.0 || t > mf.horizon_T) {
    throw std::invalid_argument("start time outside [0, T]");
  }
  const int n = mf.n;
  const int count = m.count();
  const int p = static_cast<int>(mf.B.cols());

  MFCSolution sol;
  sol.mf = mf;
  sol.measure = m;
  sol.start_time = t;
  sol.canonical = canonical_order(m.points);

  ParticleMeasure sorted;
  sorted.n = n;
  sorted.points.reserve(count);
  for (int k : sol.canonical) sorted.points.push_back(m.points[k]);

  sol.lifted_spec = lift_problem(mf, sorted);
  sol.lifted_gram = gram(sol.lifted_spec);
  const Vec X0 = stack_points(sorted.points);

  GlobalResult g =
      global_solve(sol.lifted_spec, sol.lifted_gram, X0, Strategy::recursive, opts, t);
  sol.grid = g.traj.grid;
  sol.lifted = std::move(g.traj);
  sol.report = g.report;
  sol.field = g.field;

  std::vector<int> slot_of_input(count);
  for (int k = 0; k < count; ++k) slot_of_input[sol.canonical[k]] = k;

  const int nodes = static_cast<int>(sol.grid.size());
  sol.Y.assign(count, std::vector<Vec>(nodes));
  sol.Z.assign(count, std::vector<Vec>(nodes));
  sol.controls.assign(count, std::vector<Vec>(nodes));
  for (int i = 0; i < count; ++i) {
    const int slot = slot_of_input[i];
    for (int j = 0; j < nodes; ++j) {
      sol.Y[i][j] = sol.lifted.y[j].segment(slot * n, n);
      sol.Z[i][j] = sol.lifted.z[j].segment(slot * n, n);
      sol.controls[i][j] = sol.lifted.u[j].segment(slot * p, p);
    }
  }
  return sol;
}

double value_measure(const MFCSolution& sol) {
  return value_eval(sol.lifted_spec, sol.lifted_gram, sol.lifted) / sol.measure.count();
}

double value_measure(const MFProblemSpec& mf, const ParticleMeasure& m, double t,
                     const SolverOptions& opts) {
  return value_measure(mfc_solve(mf, m, t, opts));
}

DVdmResult dvdm_eval(const MFCSolution& sol, int particle) {
  const int count = sol.measure.count();
  if (particle < 0 || particle >= count) {
    throw std::invalid_argument("particle index out of range");
  }
  const MFProblemSpec& mf = sol.mf;
  const Mat G = particle_gram(mf);
  const bool terminal_zero = is_zero_matrix(mf.Q_T);

  // Flat-derivative integrand at x along the flow:
  //   f(x, mean) - s(1-s) (Q mean, x), as printed, without re-centering.
  auto flat = [](const Mat& Q, double s, const Vec& x, const Vec& mean) {
    return coupled_cost(Q, s, x, mean) - s * (1.0 - s) * (Q * mean).dot(x);
  };

  const std::vector<Vec>& Yi = sol.Y[particle];
  const std::vector<Vec>& Zi = sol.Z[particle];
  const int nodes = static_cast<int>(sol.grid.size());
  std::vector<double> integrand(nodes);
  for (int j = 0; j < nodes; ++j) {
    const Vec mean = sol.state_mean(j);
    integrand[j] = flat(mf.Q, mf.s, Yi[j], mean) + 0.5 * Zi[j].dot(G * Zi[j]);
  }
  double value = 0.0;
  for (int j = 1; j < nodes; ++j) {
    value += 0.5 * (sol.grid[j] - sol.grid[j - 1]) * (integrand[j - 1] + integrand[j]);
  }
  if (!terminal_zero) {
    value += flat(mf.Q_T, mf.s_T, Yi[nodes - 1], sol.state_mean(nodes - 1));
  }
  return DVdmResult{value, Zi.front()};
}

DVdmResult dvdm_eval(const MFProblemSpec& mf, const ParticleMeasure& m, double t,
                     int particle, const SolverOptions& opts) {
  return dvdm_eval(mfc_solve(mf, m, t, opts), particle);
}

Vec dvdm_fd_gradient(const MFProblemSpec& mf, const ParticleMeasure& m, double t,
                     int particle, double eps, const SolverOptions& opts) {
  validate_mf(mf);
  validate_measure(m, mf.n);
  if (particle < 0 || particle >= m.count()) {
    throw std::invalid_argument("particle index out of range");
  }
  if (!(eps > 0.0)) throw std::invalid_argument("perturbation size must be positive");
  Vec g(mf.n);
  for (int k = 0; k < mf.n; ++k) {
    ParticleMeasure plus = m;
    ParticleMeasure minus = m;
    plus.points[particle][k] += eps;
    minus.points[particle][k] -= eps;
    const double v_plus = value_measure(mf, plus, t, opts);
    const double v_minus = value_measure(mf, minus, t, opts);
    g[k] = m.count() * (v_plus - v_minus) / (2.0 * eps);
  }
  return g;
}

double measure_bellman_residual(const MFProblemSpec& mf, const ParticleMeasure& m,
                                double t, const SolverOptions& opts) {
  const double delta = 1e-4;
  if (t - delta < 0.0 || t + delta > mf.horizon_T) {
    throw std::invalid_argument("measure Bellman stencil leaves (0, T)");
  }
  MFCSolution sol = mfc_solve(mf, m, t, opts);
  const int count = m.count();
  const int n = mf.n;

  SolverOptions stencil = opts;
  stencil.pinned_first_steps = sol.field->first_window_steps(sol.lifted_spec, t, opts);
  const Vec X0 = sol.lifted.y.front();
  auto shifted_value = [&](double tau) {
    TrajectoryPair tr = sol.field->solve_from(sol.lifted_spec, sol.lifted_gram, X0, tau, stencil);
    return value_eval(sol.lifted_spec, sol.lifted_gram, tr) / count;
  };
  const double dvdt = (shifted_value(t + delta) - shifted_value(t - delta)) / (2.0 * delta);

  const Mat G = particle_gram(mf);
  const Vec mean0 = sol.state_mean(0);
  double transport = 0.0, quad = 0.0, running = 0.0;
  for (int k = 0; k < count; ++k) {
    const Vec yk = sol.lifted.y.front().segment(k * n, n);
    const Vec zk = sol.lifted.z.front().segment(k * n, n);
    transport += zk.dot(mf.A * yk);
    quad += zk.dot(G * zk);
    running += coupled_cost(mf.Q, mf.s, yk, mean0);
  }
  transport /= count;
  quad = 0.5 * quad / count;
  running /= count;
  return std::abs(-dvdt - transport + quad - running);
}

double w2_empirical(const ParticleMeasure& m1, const ParticleMeasure& m2) {
  validate_measure(m1, m1.n);
  validate_measure(m2, m2.n);
  if (m1.n != m2.n) throw std::invalid_argument("measures with different dimensions");
  const int count = m1.count();
  if (count != m2.count()) throw std::invalid_argument("measures with different particle counts");

  if (m1.n == 1) {
    std::vector<double> a(count), b(count);
    for (int i = 0; i < count; ++i) {
      a[i] = m1.points[i][0];
      b[i] = m2.points[i][0];
    }
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    double sum = 0.0;
    for (int i = 0; i < count; ++i) {
      const double d = a[i] - b[i];
      sum += d * d;
    }
    return std::sqrt(sum / count);
  }

  if (count > 64) {
    throw std::invalid_argument("exact assignment limited to 64 particles");
  }
  std::vector<std::vector<double>> cost(count, std::vector<double>(count));
  for (int i = 0; i < count; ++i) {
    for (int j = 0; j < count; ++j) {
      cost[i][j] = (m1.points[i] - m2.points[j]).squaredNorm();
    }
  }
  return std::sqrt(min_assignment_cost(cost) / count);
}

}  // namespace hctrl
