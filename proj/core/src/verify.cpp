#include "hctrl/verify.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace hctrl {

namespace {

// Forward RK4 with one constant control per interval; keeps the stage inputs
// so the backward pass can retrace the exact computation.
struct ForwardTape {
  std::vector<Vec> y;                   // node states
  std::vector<std::array<Vec, 4>> xs;   // stage input states per interval
  std::vector<std::array<Vec, 4>> ks;   // stage drift+control values per interval
};

ForwardTape roll_forward(const ProblemSpec& spec, const Vec& x,
                         const std::vector<double>& grid, const std::vector<Vec>& controls) {
  const std::size_t K = controls.size();
  ForwardTape tape;
  tape.y.resize(K + 1);
  tape.xs.resize(K);
  tape.ks.resize(K);
  tape.y[0] = x;
  for (std::size_t j = 0; j < K; ++j) {
    double dt = grid[j + 1] - grid[j];
    Vec bu = spec.B * controls[j];
    auto f = [&](const Vec& yy) -> Vec { return spec.drift(yy) + bu; };
    auto& xs = tape.xs[j];
    auto& ks = tape.ks[j];
    xs[0] = tape.y[j];
    ks[0] = f(xs[0]);
    xs[1] = tape.y[j] + 0.5 * dt * ks[0];
    ks[1] = f(xs[1]);
    xs[2] = tape.y[j] + 0.5 * dt * ks[1];
    ks[2] = f(xs[2]);
    xs[3] = tape.y[j] + dt * ks[2];
    ks[3] = f(xs[3]);
    tape.y[j + 1] = tape.y[j] + (dt / 6.0) * (ks[0] + 2.0 * ks[1] + 2.0 * ks[2] + ks[3]);
    if (!tape.y[j + 1].allFinite()) {
      throw std::runtime_error("nonfinite state in transcription rollout");
    }
  }
  return tape;
}

double tape_cost(const ProblemSpec& spec, const std::vector<double>& grid,
                 const std::vector<Vec>& controls, const ForwardTape& tape) {
  double acc = 0.0;
  for (std::size_t j = 0; j + 1 < grid.size(); ++j) {
    double dt = grid[j + 1] - grid[j];
    acc += 0.5 * dt * (spec.cost_running(tape.y[j]) + spec.cost_running(tape.y[j + 1]));
    acc += dt * 0.5 * controls[j].dot(spec.N * controls[j]);
  }
  return acc + spec.cost_terminal(tape.y.back());
}

void check_grid(const std::vector<double>& grid, std::size_t controls) {
  if (grid.size() != controls + 1 || controls == 0) {
    throw std::invalid_argument("control path needs grid nodes = controls + 1");
  }
}

}  // namespace

double transcription_cost(const ProblemSpec& spec, const Vec& x,
                          const std::vector<double>& grid, const std::vector<Vec>& controls) {
  check_grid(grid, controls.size());
  ForwardTape tape = roll_forward(spec, x, grid, controls);
  return tape_cost(spec, grid, controls, tape);
}

std::vector<Vec> transcription_gradient(const ProblemSpec& spec, const Vec& x,
                                        const std::vector<double>& grid,
                                        const std::vector<Vec>& controls) {
  check_grid(grid, controls.size());
  const std::size_t K = controls.size();
  ForwardTape tape = roll_forward(spec, x, grid, controls);

  std::vector<Vec> grad(K);
  // p_j = dJ/dy_j holding later controls fixed; terminal node carries both the
  // terminal cost and its trapezoid half-weight.
  double dtK = grid[K] - grid[K - 1];
  Vec p = spec.cost_terminal_grad(tape.y[K]) +
          0.5 * dtK * spec.cost_running_grad(tape.y[K]);
  for (std::size_t j = K; j-- > 0;) {
    double dt = grid[j + 1] - grid[j];
    const auto& xs = tape.xs[j];
    // Reverse pass through y_{j+1} = y_j + dt/6 (k1 + 2 k2 + 2 k3 + k4).
    Vec kbar4 = (dt / 6.0) * p;
    Vec kbar3 = (dt / 3.0) * p;
    Vec kbar2 = (dt / 3.0) * p;
    Vec kbar1 = (dt / 6.0) * p;
    Vec ybar = p;
    Vec ubar = Vec::Zero(spec.ctrl_dim);

    Vec abar = spec.drift_jacobian(xs[3]).transpose() * kbar4;
    ubar += spec.B.transpose() * kbar4;
    ybar += abar;
    kbar3 += dt * abar;

    abar = spec.drift_jacobian(xs[2]).transpose() * kbar3;
    ubar += spec.B.transpose() * kbar3;
    ybar += abar;
    kbar2 += 0.5 * dt * abar;

    abar = spec.drift_jacobian(xs[1]).transpose() * kbar2;
    ubar += spec.B.transpose() * kbar2;
    ybar += abar;
    kbar1 += 0.5 * dt * abar;

    abar = spec.drift_jacobian(xs[0]).transpose() * kbar1;
    ubar += spec.B.transpose() * kbar1;
    ybar += abar;

    grad[j] = ubar + dt * (spec.N * controls[j]);
    double node_w = j == 0 ? 0.5 * dt : 0.5 * (dt + (grid[j] - grid[j - 1]));
    p = ybar + node_w * spec.cost_running_grad(tape.y[j]);
  }
  return grad;
}

TranscriptionResult direct_transcribe(const ProblemSpec& spec, const Vec& x, double t,
                                      int nodes, double tol, int max_iterations) {
  if (nodes < 16) throw std::invalid_argument("direct_transcribe needs at least 16 intervals");
  if (t > spec.horizon_T - 1e-12) {
    throw std::invalid_argument("direct_transcribe needs a positive horizon");
  }
  TranscriptionResult res;
  res.grid.resize(nodes + 1);
  for (int j = 0; j <= nodes; ++j) {
    res.grid[j] = t + (spec.horizon_T - t) * j / nodes;
  }
  res.grid.back() = spec.horizon_T;
  const double dt = (spec.horizon_T - t) / nodes;
  res.controls.assign(nodes, Vec::Zero(spec.ctrl_dim));

  auto l2_norm = [&](const std::vector<Vec>& g) {
    double acc = 0.0;
    for (const auto& gj : g) acc += gj.squaredNorm() / dt;
    return std::sqrt(acc);
  };
  auto dot = [](const std::vector<Vec>& a, const std::vector<Vec>& b) {
    double acc = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) acc += a[j].dot(b[j]);
    return acc;
  };

  double cost = transcription_cost(spec, x, res.grid, res.controls);
  std::vector<Vec> grad = transcription_gradient(spec, x, res.grid, res.controls);
  std::vector<Vec> prev_u, prev_g;
  double step = 0.0;
  int iter = 0;
  // Secondary stop: the scaled gradient norm has a roundoff floor that grows
  // with the node count, so a cost that stops improving at working precision
  // for several consecutive accepted steps also counts as converged.
  const double flat_eps = 64.0 * std::numeric_limits<double>::epsilon();
  int flat_steps = 0;
  bool flat_converged = false;
  while (iter < max_iterations) {
    res.gradient_norm = l2_norm(grad);
    if (res.gradient_norm <= tol) {
      res.converged = true;
      break;
    }
    ++iter;
    if (prev_u.empty()) {
      step = 0.1 / (1.0 + l2_norm(grad));
    } else {
      // Barzilai-Borwein step from the last displacement pair.
      double sy = 0.0, yy = 0.0;
      for (std::size_t j = 0; j < grad.size(); ++j) {
        Vec s = res.controls[j] - prev_u[j];
        Vec yv = grad[j] - prev_g[j];
        sy += s.dot(yv);
        yy += yv.dot(yv);
      }
      step = (yy > 0.0 && sy > 0.0) ? sy / yy : step;
    }
    double gg = dot(grad, grad);
    prev_u = res.controls;
    prev_g = grad;
    // Armijo backtracking on the descent direction -grad.
    double trial_cost = cost;
    std::vector<Vec> trial(res.controls.size());
    bool accepted = false;
    for (int back = 0; back < 60; ++back) {
      for (std::size_t j = 0; j < trial.size(); ++j) trial[j] = prev_u[j] - step * prev_g[j];
      trial_cost = transcription_cost(spec, x, res.grid, trial);
      if (trial_cost <= cost - 1e-4 * step * gg) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;  // line search exhausted at roundoff scale
    const double decrease = cost - trial_cost;
    res.controls = std::move(trial);
    cost = trial_cost;
    grad = transcription_gradient(spec, x, res.grid, res.controls);
    if (decrease <= flat_eps * (1.0 + std::abs(cost))) {
      if (++flat_steps >= 3) {
        flat_converged = true;
        break;
      }
    } else {
      flat_steps = 0;
    }
  }
  res.iterations = iter;
  res.cost = cost;
  res.gradient_norm = l2_norm(grad);
  res.converged = res.gradient_norm <= tol || flat_converged;
  res.states = roll_forward(spec, x, res.grid, res.controls).y;
  return res;
}

double control_path_cost(const ProblemSpec& spec, const Vec& x,
                         const std::vector<double>& grid, const std::vector<Vec>& w) {
  if (grid.size() != w.size() || grid.size() < 2) {
    throw std::invalid_argument("node-valued control path needs one value per grid node");
  }
  std::vector<Vec> y(grid.size());
  y[0] = x;
  for (std::size_t j = 0; j + 1 < grid.size(); ++j) {
    double dt = grid[j + 1] - grid[j];
    Vec mid = 0.5 * (w[j] + w[j + 1]);
    auto f = [&](const Vec& yy, const Vec& ww) -> Vec { return spec.drift(yy) + spec.B * ww; };
    Vec k1 = f(y[j], w[j]);
    Vec k2 = f(y[j] + 0.5 * dt * k1, mid);
    Vec k3 = f(y[j] + 0.5 * dt * k2, mid);
    Vec k4 = f(y[j] + dt * k3, w[j + 1]);
    y[j + 1] = y[j] + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!y[j + 1].allFinite()) throw std::runtime_error("nonfinite state in control rollout");
  }
  double acc = 0.0;
  for (std::size_t j = 0; j + 1 < grid.size(); ++j) {
    double dt = grid[j + 1] - grid[j];
    double fa = spec.cost_running(y[j]) + 0.5 * w[j].dot(spec.N * w[j]);
    double fb = spec.cost_running(y[j + 1]) + 0.5 * w[j + 1].dot(spec.N * w[j + 1]);
    acc += 0.5 * dt * (fa + fb);
  }
  return acc + spec.cost_terminal(y.back());
}

GapReport optimality_gap_check(const ProblemSpec& spec, const TrajectoryPair& traj,
                               const std::vector<std::vector<Vec>>& perturbations) {
  GapReport report;
  if (traj.grid.size() < 2) throw std::invalid_argument("gap check needs a solved trajectory");
  const Vec& x = traj.y.front();
  const double base = control_path_cost(spec, x, traj.grid, traj.u);
  report.worst_slack = std::numeric_limits<double>::infinity();
  for (const auto& v : perturbations) {
    if (v.size() != traj.grid.size()) {
      throw std::invalid_argument("perturbation paths must live on the trajectory grid");
    }
    std::vector<Vec> w(v.size());
    double quad = 0.0;
    for (std::size_t j = 0; j < v.size(); ++j) w[j] = traj.u[j] + v[j];
    for (std::size_t j = 0; j + 1 < v.size(); ++j) {
      double dt = traj.grid[j + 1] - traj.grid[j];
      quad += 0.25 * dt * (v[j].dot(spec.N * v[j]) + v[j + 1].dot(spec.N * v[j + 1]));
    }
    GapEntry entry;
    entry.gap = control_path_cost(spec, x, traj.grid, w) - base;
    entry.bound = quad;
    entry.slack = entry.gap - entry.bound;
    report.worst_slack = std::min(report.worst_slack, entry.slack);
    report.entries.push_back(entry);
  }
  if (report.entries.empty()) report.worst_slack = 0.0;
  report.pass = report.worst_slack >= -1e-6;
  return report;
}

GradReport gamma_gradient_check(const ProblemSpec& spec, const GramOperator& gram,
                                const DecouplingField& field,
                                const std::vector<std::pair<Vec, double>>& points,
                                const SolverOptions& opts) {
  GradReport report;
  report.pass = true;
  for (const auto& [x, t] : points) {
    GradEntry entry;
    entry.x = x;
    entry.t = t;
    entry.gamma = field.eval(x, t);
    entry.fd_gradient = Vec::Zero(spec.dim);
    const double h = 1e-4 * (1.0 + x.norm());
    Vec e = Vec::Zero(spec.dim);
    for (int i = 0; i < spec.dim; ++i) {
      e[i] = h;
      double vp = value_eval(spec, gram, field.solve_from(spec, gram, x + e, t, opts));
      double vm = value_eval(spec, gram, field.solve_from(spec, gram, x - e, t, opts));
      entry.fd_gradient[i] = (vp - vm) / (2.0 * h);
      e[i] = 0.0;
    }
    Vec diff = entry.fd_gradient - entry.gamma;
    entry.abs_err = diff.lpNorm<Eigen::Infinity>();
    double gnorm = entry.gamma.lpNorm<Eigen::Infinity>();
    entry.rel_err = gnorm > 0.0 ? entry.abs_err / gnorm : entry.abs_err;
    entry.pass = entry.abs_err <= std::max(1e-3, 1e-3 * gnorm);
    report.pass = report.pass && entry.pass;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

MonitorVerdict contraction_monitor(const SolveReport& report, const HorizonPlan& plan) {
  if (!report.regime_certified) return MonitorVerdict::not_applicable;
  double factor = report.theoretical_factor > 0.0 ? report.theoretical_factor : plan.contraction;
  if (factor <= 0.0) return MonitorVerdict::not_applicable;
  for (double r : report.ratios) {
    if (r > 1.1 * factor) return MonitorVerdict::fail;
  }
  return MonitorVerdict::pass;
}

}  // namespace hctrl
