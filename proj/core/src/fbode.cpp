#include "hctrl/fbode.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <mutex>
#include <stdexcept>

namespace hctrl {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

int step_count(double t0, double t1, const SolverOptions& opts) {
  if (opts.pinned_first_steps > 0) return opts.pinned_first_steps;
  int k = static_cast<int>(std::ceil((t1 - t0) * opts.steps_per_unit - 1e-12));
  return std::max(4, k);
}

std::vector<double> uniform_grid(double t0, double t1, int steps) {
  std::vector<double> g(steps + 1);
  for (int j = 0; j <= steps; ++j) g[j] = t0 + (t1 - t0) * j / steps;
  g.back() = t1;
  return g;
}

// Controls from adjoint states, u = -N^{-1} B' z, with one factorization.
std::vector<Vec> controls_from(const ProblemSpec& spec, const std::vector<Vec>& z) {
  Eigen::LDLT<Mat> ldlt(spec.N);
  std::vector<Vec> u(z.size());
  for (std::size_t j = 0; j < z.size(); ++j) u[j] = -ldlt.solve(spec.B.transpose() * z[j]);
  return u;
}

void require_finite(const Vec& y, const char* where) {
  if (!y.allFinite()) throw std::runtime_error(std::string("nonfinite state in ") + where);
}

// Forward RK4 march of dy/ds = A(y) - G * field(y, s); returns the node states.
std::vector<Vec> march_states(const ProblemSpec& spec, const Mat& G,
                              const DecouplingField& field, const Vec& x,
                              const std::vector<double>& grid) {
  auto f = [&](const Vec& y, double s) -> Vec { return spec.drift(y) - G * field.eval(y, s); };
  std::vector<Vec> y(grid.size());
  y[0] = x;
  for (std::size_t j = 0; j + 1 < grid.size(); ++j) {
    double s = grid[j], dt = grid[j + 1] - grid[j];
    Vec k1 = f(y[j], s);
    Vec k2 = f(y[j] + 0.5 * dt * k1, s + 0.5 * dt);
    Vec k3 = f(y[j] + 0.5 * dt * k2, s + 0.5 * dt);
    Vec k4 = f(y[j] + dt * k3, s + dt);
    y[j + 1] = y[j] + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    require_finite(y[j + 1], "forward integration");
  }
  return y;
}

// Central-difference Hessian of a gradient map; used when no callback is set.
Mat fd_hessian(const VecFn& grad, const Vec& y) {
  const int d = static_cast<int>(y.size());
  const double delta = 1e-5 * (1.0 + y.norm());
  Mat H(d, d);
  Vec e = Vec::Zero(d);
  for (int i = 0; i < d; ++i) {
    e[i] = delta;
    H.col(i) = (grad(y + e) - grad(y - e)) / (2.0 * delta);
    e[i] = 0.0;
  }
  return 0.5 * (H + H.transpose());
}

Mat running_hessian(const ProblemSpec& spec, const Vec& y) {
  if (spec.cost_running_hess) return spec.cost_running_hess(y);
  return fd_hessian(spec.cost_running_grad, y);
}

Mat terminal_hessian(const ProblemSpec& spec, const Vec& y) {
  if (spec.cost_terminal_hess) return spec.cost_terminal_hess(y);
  if (spec.terminal_zero) return Mat::Zero(y.size(), y.size());
  return fd_hessian(spec.cost_terminal_grad, y);
}

// W(y, z) with W_ij = sum_k z_k d^2 A_k / dx_i dx_j, by central differences of
// the Jacobian-transpose action; zero for linear drift.
Mat drift_curvature(const ProblemSpec& spec, const Vec& y, const Vec& z) {
  const int d = static_cast<int>(y.size());
  if (spec.drift_linear) return Mat::Zero(d, d);
  const double delta = 1e-5 * (1.0 + y.norm());
  Mat W(d, d);
  Vec e = Vec::Zero(d);
  for (int i = 0; i < d; ++i) {
    e[i] = delta;
    W.col(i) = (spec.drift_jacobian(y + e).transpose() * z -
                spec.drift_jacobian(y - e).transpose() * z) /
               (2.0 * delta);
    e[i] = 0.0;
  }
  return 0.5 * (W + W.transpose());
}

Vec lerp(const std::vector<double>& grid, const std::vector<Vec>& v, double t) {
  if (v.empty()) throw std::logic_error("interpolation over an empty path");
  if (t <= grid.front()) return v.front();
  if (t >= grid.back()) return v.back();
  auto it = std::upper_bound(grid.begin(), grid.end(), t);
  std::size_t k = static_cast<std::size_t>(it - grid.begin()) - 1;
  double w = (t - grid[k]) / (grid[k + 1] - grid[k]);
  return (1.0 - w) * v[k] + w * v[k + 1];
}

}  // namespace

Vec TrajectoryPair::state_at(double t) const { return lerp(grid, y, t); }
Vec TrajectoryPair::adjoint_at(double t) const { return lerp(grid, z, t); }

WindowCertificate certify_window(const Regime& regime, double h, double terminal_constant) {
  WindowCertificate cert;
  try {
    if (h <= 0.0 || !regime.admissible(h, terminal_constant)) return cert;
    cert.factor = regime.contraction_factor(h, terminal_constant);
    cert.certified = true;
  } catch (const std::domain_error&) {
    cert = WindowCertificate{};
  }
  return cert;
}

bool DomainBox::contains(const Vec& x) const {
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (x[i] < lo[i] || x[i] > hi[i]) return false;
  }
  return true;
}

TrajectoryPair DecouplingField::solve_from(const ProblemSpec& spec, const GramOperator& gram,
                                           const Vec& x, double t, const SolverOptions& opts,
                                           SolveReport* report) const {
  auto start = Clock::now();
  TrajectoryPair traj = forward_integrate(spec, gram, *this, x, t, spec.horizon_T, opts);
  if (report) {
    *report = SolveReport{};
    report->converged = true;
    report->wall_time = seconds_since(start);
  }
  return traj;
}

int DecouplingField::first_window_steps(const ProblemSpec& spec, double t,
                                        const SolverOptions& opts) const {
  SolverOptions unpinned = opts;
  unpinned.pinned_first_steps = 0;
  return step_count(t, spec.horizon_T, unpinned);
}

TerminalGradientField::TerminalGradientField(VecFn grad, double lipschitz)
    : grad_(std::move(grad)) {
  lipschitz_bound = lipschitz;
}

Vec TerminalGradientField::eval(const Vec& x, double) const { return grad_(x); }

TrajectoryCacheField::TrajectoryCacheField(std::vector<double> grid, std::vector<Vec> z)
    : grid_(std::move(grid)), z_(std::move(z)) {
  if (grid_.size() != z_.size() || grid_.empty()) {
    throw std::invalid_argument("trajectory cache needs matching nonempty grid and values");
  }
}

Vec TrajectoryCacheField::eval(const Vec&, double t) const { return lerp(grid_, z_, t); }

GridInterpolantField::GridInterpolantField(std::vector<Slice> slices)
    : slices_(std::move(slices)) {
  if (slices_.empty()) throw std::invalid_argument("interpolant needs at least one slice");
  for (const auto& s : slices_) {
    const auto d = static_cast<std::size_t>(s.lo.size());
    if (s.pts.size() != d || static_cast<std::size_t>(s.hi.size()) != d) {
      throw std::invalid_argument("interpolant slice with inconsistent dimensions");
    }
    std::size_t n = 1;
    for (int p : s.pts) {
      if (p < 2) throw std::invalid_argument("interpolant needs >= 2 points per dimension");
      n *= static_cast<std::size_t>(p);
    }
    if (s.values.size() != n) throw std::invalid_argument("interpolant slice value count mismatch");
  }
  for (std::size_t k = 0; k + 1 < slices_.size(); ++k) {
    if (!(slices_[k].t < slices_[k + 1].t)) {
      throw std::invalid_argument("interpolant slices must have ascending times");
    }
  }
}

Vec GridInterpolantField::eval_slice(const Slice& s, const Vec& x) const {
  const int d = static_cast<int>(s.lo.size());
  std::vector<int> cell(d);
  std::vector<double> frac(d);
  for (int i = 0; i < d; ++i) {
    double span = s.hi[i] - s.lo[i];
    double margin = 1e-12 * (1.0 + std::abs(s.lo[i]) + std::abs(s.hi[i]));
    if (x[i] < s.lo[i] - margin || x[i] > s.hi[i] + margin) {
      throw std::domain_error("interpolation domain escape");
    }
    double u = (x[i] - s.lo[i]) / span * (s.pts[i] - 1);
    int c = std::clamp(static_cast<int>(std::floor(u)), 0, s.pts[i] - 2);
    cell[i] = c;
    frac[i] = std::clamp(u - c, 0.0, 1.0);
  }
  std::vector<std::size_t> stride(d, 1);
  for (int i = d - 2; i >= 0; --i) stride[i] = stride[i + 1] * s.pts[i + 1];
  Vec out = Vec::Zero(s.values.front().size());
  for (int corner = 0; corner < (1 << d); ++corner) {
    double w = 1.0;
    std::size_t idx = 0;
    for (int i = 0; i < d; ++i) {
      bool hi = corner & (1 << i);
      w *= hi ? frac[i] : 1.0 - frac[i];
      idx += stride[i] * static_cast<std::size_t>(cell[i] + (hi ? 1 : 0));
    }
    if (w != 0.0) out += w * s.values[idx];
  }
  return out;
}

Vec GridInterpolantField::eval(const Vec& x, double t) const {
  if (slices_.size() == 1 || t <= slices_.front().t) return eval_slice(slices_.front(), x);
  if (t >= slices_.back().t) return eval_slice(slices_.back(), x);
  std::size_t k = 0;
  while (k + 2 < slices_.size() && t > slices_[k + 1].t) ++k;
  double w = (t - slices_[k].t) / (slices_[k + 1].t - slices_[k].t);
  return (1.0 - w) * eval_slice(slices_[k], x) + w * eval_slice(slices_[k + 1], x);
}

std::optional<DomainBox> GridInterpolantField::domain() const {
  return DomainBox{slices_.front().lo, slices_.front().hi};
}

GridInterpolantField::Slice GridInterpolantField::build_slice(
    double t, const Vec& lo, const Vec& hi, const std::vector<int>& pts,
    const std::function<Vec(const Vec&)>& gamma) {
  Slice s;
  s.t = t;
  s.lo = lo;
  s.hi = hi;
  s.pts = pts;
  const int d = static_cast<int>(lo.size());
  std::size_t total = 1;
  for (int p : pts) total *= static_cast<std::size_t>(p);
  s.values.reserve(total);
  std::vector<int> idx(d, 0);
  Vec x(d);
  for (std::size_t flat = 0; flat < total; ++flat) {
    for (int i = 0; i < d; ++i) x[i] = lo[i] + (hi[i] - lo[i]) * idx[i] / (pts[i] - 1);
    s.values.push_back(gamma(x));
    for (int i = d - 1; i >= 0; --i) {
      if (++idx[i] < pts[i]) break;
      idx[i] = 0;
    }
  }
  return s;
}

TrajectoryPair forward_integrate(const ProblemSpec& spec, const GramOperator& gram,
                                 const DecouplingField& field, const Vec& x, double t0,
                                 double t1, const SolverOptions& opts) {
  if (t1 < t0 - 1e-12) throw std::invalid_argument("forward_integrate needs t1 >= t0");
  TrajectoryPair traj;
  if (t1 - t0 <= 1e-12) {
    traj.grid = {t0};
    traj.y = {x};
    traj.z = {field.eval(x, t0)};
    traj.u = controls_from(spec, traj.z);
    return traj;
  }
  traj.grid = uniform_grid(t0, t1, step_count(t0, t1, opts));
  traj.y = march_states(spec, gram.G, field, x, traj.grid);
  traj.z.resize(traj.grid.size());
  for (std::size_t j = 0; j < traj.grid.size(); ++j) traj.z[j] = field.eval(traj.y[j], traj.grid[j]);
  traj.u = controls_from(spec, traj.z);
  return traj;
}

LambdaResult lambda_map(const ProblemSpec& spec, const GramOperator& gram,
                        const DecouplingField& lambda, const Vec& x, double t0, double t1,
                        const VecFn& terminal_grad, const SolverOptions& opts) {
  if (t1 < t0 - 1e-12) throw std::invalid_argument("lambda_map needs t1 >= t0");
  LambdaResult res;
  if (t1 - t0 <= 1e-12) {
    res.grid = {t0};
    res.y = {x};
    res.z = {terminal_grad(x)};
    res.value = res.z.front();
    return res;
  }
  res.grid = uniform_grid(t0, t1, step_count(t0, t1, opts));
  res.y = march_states(spec, gram.G, lambda, x, res.grid);
  const std::size_t K = res.grid.size() - 1;

  // Integrand of the backward adjoint integral along the realized path.
  std::vector<Vec> w(K + 1);
  for (std::size_t j = 0; j <= K; ++j) {
    Vec lam = lambda.eval(res.y[j], res.grid[j]);
    w[j] = spec.drift_jacobian(res.y[j]).transpose() * lam + spec.cost_running_grad(res.y[j]);
  }
  res.z.resize(K + 1);
  res.z[K] = terminal_grad(res.y[K]);
  for (std::size_t j = K; j-- > 0;) {
    double dt = res.grid[j + 1] - res.grid[j];
    res.z[j] = res.z[j + 1] + 0.5 * dt * (w[j] + w[j + 1]);
  }
  res.value = res.z.front();
  return res;
}

PicardResult picard_local(const ProblemSpec& spec, const GramOperator& gram, const Vec& x,
                          double t0, double t1, const VecFn& terminal_grad,
                          const SolverOptions& opts, const WindowCertificate& cert) {
  auto start = Clock::now();
  PicardResult out;
  out.report.regime_certified = cert.certified;
  out.report.theoretical_factor = cert.factor;
  if (t1 < t0 - 1e-12) throw std::invalid_argument("picard_local needs t1 >= t0");
  if (t1 - t0 <= 1e-12) {
    out.traj.grid = {t0};
    out.traj.y = {x};
    out.traj.z = {terminal_grad(x)};
    out.traj.u = controls_from(spec, out.traj.z);
    out.report.converged = true;
    out.report.wall_time = seconds_since(start);
    return out;
  }

  const int K = step_count(t0, t1, opts);
  SolverOptions wopts = opts;
  wopts.pinned_first_steps = K;  // lambda_map must reuse the same grid
  std::vector<double> grid = uniform_grid(t0, t1, K);
  std::vector<Vec> z_path(grid.size(), terminal_grad(x));

  const double scale = 1.0 + x.norm();
  double diff = std::numeric_limits<double>::infinity();
  double prev = std::numeric_limits<double>::infinity();
  double prev2 = std::numeric_limits<double>::infinity();
  LambdaResult res;
  int iter = 0;
  bool converged = false;
  while (iter < opts.max_iterations) {
    ++iter;
    TrajectoryCacheField cache(grid, z_path);
    res = lambda_map(spec, gram, cache, x, t0, t1, terminal_grad, wopts);
    diff = 0.0;
    for (std::size_t j = 0; j < grid.size(); ++j) {
      diff = std::max(diff, (res.z[j] - z_path[j]).norm());
    }
    if (iter > 1 && prev > 0.0 && std::isfinite(prev)) out.report.ratios.push_back(diff / prev);
    z_path = res.z;
    if (diff <= opts.tol * scale) {
      converged = true;
      break;
    }
    // A quantized terminal map can pin the iteration just above tol; accept a
    // genuine plateau below the configured floor, keeping the residual honest.
    if (opts.stall_accept > 0.0 && iter >= 3 && diff > 0.95 * prev && prev > 0.95 * prev2 &&
        diff <= opts.stall_accept * scale) {
      converged = true;
      break;
    }
    prev2 = prev;
    prev = diff;
  }

  out.traj.grid = std::move(res.grid);
  out.traj.y = std::move(res.y);
  out.traj.z = std::move(res.z);
  out.traj.u = controls_from(spec, out.traj.z);
  out.report.iterations = iter;
  out.report.final_residual = diff;
  out.report.converged = converged;
  out.report.wall_time = seconds_since(start);
  return out;
}

std::size_t LayeredCompositeField::KeyHash::operator()(
    const std::vector<std::int64_t>& k) const {
  std::size_t h = 1469598103934665603ull;  // FNV-1a over the key words
  for (std::int64_t v : k) {
    auto u = static_cast<std::uint64_t>(v);
    for (int b = 0; b < 8; ++b) {
      h ^= (u >> (8 * b)) & 0xffu;
      h *= 1099511628211ull;
    }
  }
  return h;
}

LayeredCompositeField::LayeredCompositeField(ProblemSpec spec, GramOperator gram,
                                             Strategy strategy, SolverOptions opts,
                                             double t_floor)
    : spec_(std::move(spec)),
      gram_(std::move(gram)),
      regime_(spec_, gram_),
      strategy_(strategy),
      opts_(opts) {
  if (opts_.memo_quantum <= 0.0) throw std::invalid_argument("memo_quantum must be positive");
  HorizonPlan plan = regime_.layer_plan();
  breakpoints_ = plan.breakpoints;
  terminal_constants_ = plan.terminal_constants;
  certified_ = plan.certified;
  if (breakpoints_.size() < 2) {  // zero horizon: a single degenerate layer
    breakpoints_ = {spec_.horizon_T, spec_.horizon_T};
    terminal_constants_ = {spec_.M_T};
  }
  if (t_floor > breakpoints_.back() + 1e-12) {
    while (breakpoints_.size() > 2 && breakpoints_[breakpoints_.size() - 2] > t_floor + 1e-12) {
      breakpoints_.pop_back();
      terminal_constants_.pop_back();
    }
    breakpoints_.back() = t_floor;
  }
  boundary_slices_.resize(breakpoints_.size());
}

std::size_t LayeredCompositeField::layer_of(double t) const {
  const std::size_t layers = breakpoints_.size() - 1;
  for (std::size_t j = 0; j + 1 < breakpoints_.size(); ++j) {
    if (t >= breakpoints_[j + 1] - 1e-12 && t < breakpoints_[j] - 1e-12) return j;
  }
  if (t >= breakpoints_.front() - 1e-12) return 0;
  return layers - 1;  // below the plan floor: treated as the lowest layer
}

WindowCertificate LayeredCompositeField::window_certificate(double h, std::size_t layer) const {
  WindowCertificate cert = certify_window(regime_, h, terminal_constants_[layer]);
  cert.certified = cert.certified && certified_;
  return cert;
}

VecFn LayeredCompositeField::terminal_map(std::size_t layer) const {
  if (layer == 0) return spec_.cost_terminal_grad;
  if (strategy_ == Strategy::interpolated) {
    auto slice = boundary_slices_[layer];
    if (!slice) throw std::logic_error("boundary slices not built; call build_slices first");
    double tb = breakpoints_[layer];
    return [slice, tb](const Vec& y) { return slice->eval(y, tb); };
  }
  return [this, layer](const Vec& y) { return boundary_eval(y, layer); };
}

Vec LayeredCompositeField::boundary_eval(const Vec& x, std::size_t layer) const {
  const double q = opts_.memo_quantum;
  std::vector<std::int64_t> key(static_cast<std::size_t>(spec_.dim) + 1);
  key[0] = static_cast<std::int64_t>(layer);
  Vec xs(spec_.dim);
  for (int i = 0; i < spec_.dim; ++i) {
    key[static_cast<std::size_t>(i) + 1] = std::llround(x[i] / q);
    xs[i] = static_cast<double>(key[static_cast<std::size_t>(i) + 1]) * q;
  }
  {
    std::shared_lock lock(memo_mutex_);
    auto it = memo_.find(key);
    if (it != memo_.end()) return it->second;
  }
  if (memo_inserts_.fetch_add(1) + 1 > opts_.memo_budget) {
    throw std::runtime_error("recursion budget exceeded");
  }
  Vec value = solve_window(xs, breakpoints_[layer], layer - 1, opts_).traj.z.front();
  std::unique_lock lock(memo_mutex_);
  auto [it, inserted] = memo_.try_emplace(std::move(key), std::move(value));
  return it->second;
}

PicardResult LayeredCompositeField::solve_window(const Vec& x, double t, std::size_t layer,
                                                 const SolverOptions& call_opts) const {
  const double t1 = breakpoints_[layer];
  SolverOptions wopts = call_opts;
  wopts.memo_quantum = opts_.memo_quantum;
  wopts.memo_budget = opts_.memo_budget;
  if (strategy_ == Strategy::recursive && layer > 0) {
    wopts.stall_accept = std::max(wopts.stall_accept, 100.0 * opts_.memo_quantum);
  }
  PicardResult pr = picard_local(spec_, gram_, x, t, t1, terminal_map(layer), wopts,
                                 window_certificate(t1 - t, layer));
  if (!pr.report.converged) throw std::runtime_error("window iteration failed to converge");
  return pr;
}

Vec LayeredCompositeField::eval(const Vec& x, double t) const {
  if (t >= breakpoints_.front() - 1e-12) return spec_.cost_terminal_grad(x);
  std::size_t j = layer_of(t);
  if (breakpoints_[j] - t <= 1e-12) return terminal_map(j)(x);
  SolverOptions eopts = opts_;
  eopts.pinned_first_steps = 0;
  return solve_window(x, t, j, eopts).traj.z.front();
}

TrajectoryPair LayeredCompositeField::solve_from(const ProblemSpec&, const GramOperator&,
                                                 const Vec& x, double t,
                                                 const SolverOptions& opts,
                                                 SolveReport* report) const {
  auto start = Clock::now();
  SolveReport agg;
  agg.converged = true;
  agg.regime_certified = true;
  TrajectoryPair out;
  if (t >= breakpoints_.front() - 1e-12) {
    out.grid = {t};
    out.y = {x};
    out.z = {spec_.cost_terminal_grad(x)};
    out.u = controls_from(spec_, out.z);
    agg.regime_certified = certified_;
    if (report) {
      agg.wall_time = seconds_since(start);
      *report = agg;
    }
    return out;
  }

  Vec cur = x;
  double t_lo = t;
  bool first = true;
  for (std::size_t layer = layer_of(t) + 1; layer-- > 0;) {
    SolverOptions wopts = opts;
    if (!first) wopts.pinned_first_steps = 0;
    if (breakpoints_[layer] - t_lo <= 1e-12) continue;  // started exactly at a boundary
    PicardResult pr = solve_window(cur, t_lo, layer, wopts);
    agg.iterations += pr.report.iterations;
    agg.ratios.insert(agg.ratios.end(), pr.report.ratios.begin(), pr.report.ratios.end());
    agg.final_residual = std::max(agg.final_residual, pr.report.final_residual);
    agg.regime_certified = agg.regime_certified && pr.report.regime_certified;
    agg.theoretical_factor = std::max(agg.theoretical_factor, pr.report.theoretical_factor);
    if (first) {
      out.grid = pr.traj.grid;
      out.y = pr.traj.y;
      out.z = pr.traj.z;
      first = false;
    } else {
      // Seam node: keep the upper window's adjoint, solved at the exact state.
      out.z.back() = pr.traj.z.front();
      out.grid.insert(out.grid.end(), pr.traj.grid.begin() + 1, pr.traj.grid.end());
      out.y.insert(out.y.end(), pr.traj.y.begin() + 1, pr.traj.y.end());
      out.z.insert(out.z.end(), pr.traj.z.begin() + 1, pr.traj.z.end());
    }
    cur = out.y.back();
    t_lo = breakpoints_[layer];
  }
  out.u = controls_from(spec_, out.z);
  if (report) {
    agg.wall_time = seconds_since(start);
    *report = agg;
  }
  return out;
}

int LayeredCompositeField::first_window_steps(const ProblemSpec&, double t,
                                              const SolverOptions& opts) const {
  if (t >= breakpoints_.front() - 1e-12) return 0;
  SolverOptions unpinned = opts;
  unpinned.pinned_first_steps = 0;
  return step_count(t, breakpoints_[layer_of(t)], unpinned);
}

std::size_t LayeredCompositeField::memo_size() const {
  std::shared_lock lock(memo_mutex_);
  return memo_.size();
}

void LayeredCompositeField::build_slices(const Vec& reference_state) {
  if (strategy_ != Strategy::interpolated) return;
  const int d = spec_.dim;
  if (d > 3) throw std::invalid_argument("interpolated strategy requires dim <= 3");
  double half = opts_.grid_half_width;
  if (half <= 0.0) half = std::max(2.0 * reference_state.lpNorm<Eigen::Infinity>(), 2.0);
  int per_dim = opts_.grid_points_per_dim;
  if (per_dim <= 0) per_dim = d == 1 ? 1025 : d == 2 ? 65 : 17;
  if (per_dim < 2) throw std::invalid_argument("interpolation grid needs >= 2 points per dim");
  Vec lo = Vec::Constant(d, -half), hi = Vec::Constant(d, half);
  std::vector<int> pts(static_cast<std::size_t>(d), per_dim);

  // Interior boundaries are filled top-down: the slice at breakpoints_[j] is
  // sampled by solving layer j-1, whose terminal data is the previous slice.
  for (std::size_t j = 1; j + 1 < breakpoints_.size(); ++j) {
    auto gamma = [&](const Vec& xg) {
      return solve_window(xg, breakpoints_[j], j - 1, opts_).traj.z.front();
    };
    auto slice = GridInterpolantField::build_slice(breakpoints_[j], lo, hi, pts, gamma);
    boundary_slices_[j] =
        std::make_shared<GridInterpolantField>(std::vector<GridInterpolantField::Slice>{slice});
  }
}

GlobalResult global_solve(const ProblemSpec& spec, const GramOperator& gram, const Vec& x,
                          Strategy strategy, const SolverOptions& opts, double t_start) {
  auto field = std::make_shared<LayeredCompositeField>(spec, gram, strategy, opts, 0.0);
  if (strategy == Strategy::interpolated) field->build_slices(x);
  GlobalResult result;
  result.traj = field->solve_from(spec, gram, x, t_start, opts, &result.report);
  result.field = std::move(field);
  return result;
}

Vec decoupling_eval(const DecouplingField& field, const Vec& x, double t) {
  return field.eval(x, t);
}

SensitivityPath sensitivity_solve(const ProblemSpec& spec, const GramOperator& gram,
                                  const TrajectoryPair& traj) {
  const std::size_t K = traj.grid.empty() ? 0 : traj.grid.size() - 1;
  const int d = spec.dim;
  if (traj.grid.empty()) throw std::invalid_argument("sensitivity_solve needs a trajectory");
  SensitivityPath path;
  path.grid = traj.grid;
  path.Y.resize(K + 1);
  path.Z.resize(K + 1);

  // Node data of the first-order system and its time derivatives, used for
  // fourth-order midpoint reconstruction on each interval.
  std::vector<Vec> yd(K + 1), zd(K + 1);
  for (std::size_t j = 0; j <= K; ++j) {
    yd[j] = spec.drift(traj.y[j]) - gram.G * traj.z[j];
    zd[j] = -(spec.drift_jacobian(traj.y[j]).transpose() * traj.z[j] +
              spec.cost_running_grad(traj.y[j]));
  }
  auto hermite_mid = [](const Vec& a, const Vec& b, const Vec& da, const Vec& db, double dt) {
    return (0.5 * (a + b) + (dt / 8.0) * (da - db)).eval();
  };

  // Backward sweep of the feedback-gain matrix S(s) = D_x z along the path:
  //   -dS/ds = S DA + DA' S - S G S + W + D2F,   S(T) = D2F_T(y(T)).
  auto srhs = [&](const Mat& S, const Mat& DA, const Mat& H, const Mat& W) -> Mat {
    return -(S * DA + DA.transpose() * S - S * gram.G * S + W + H);
  };
  std::vector<Mat> S(K + 1);
  S[K] = terminal_hessian(spec, traj.y[K]);
  for (std::size_t j = K; j-- > 0;) {
    double dt = traj.grid[j] - traj.grid[j + 1];  // negative step
    double ddt = -dt;
    Vec ym = hermite_mid(traj.y[j], traj.y[j + 1], yd[j], yd[j + 1], ddt);
    Vec zm = hermite_mid(traj.z[j], traj.z[j + 1], zd[j], zd[j + 1], ddt);
    Mat DAa = spec.drift_jacobian(traj.y[j + 1]);
    Mat DAm = spec.drift_jacobian(ym);
    Mat DAb = spec.drift_jacobian(traj.y[j]);
    Mat Ha = running_hessian(spec, traj.y[j + 1]);
    Mat Hm = running_hessian(spec, ym);
    Mat Hb = running_hessian(spec, traj.y[j]);
    Mat Wa = drift_curvature(spec, traj.y[j + 1], traj.z[j + 1]);
    Mat Wm = drift_curvature(spec, ym, zm);
    Mat Wb = drift_curvature(spec, traj.y[j], traj.z[j]);
    Mat k1 = srhs(S[j + 1], DAa, Ha, Wa);
    Mat k2 = srhs(S[j + 1] + 0.5 * dt * k1, DAm, Hm, Wm);
    Mat k3 = srhs(S[j + 1] + 0.5 * dt * k2, DAm, Hm, Wm);
    Mat k4 = srhs(S[j + 1] + dt * k3, DAb, Hb, Wb);
    S[j] = S[j + 1] + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    S[j] = 0.5 * (S[j] + S[j].transpose()).eval();
    if (!S[j].allFinite()) throw std::runtime_error("nonfinite state in sensitivity sweep");
  }

  // Forward state-transition sweep: Y' = (DA - G S) Y, Y(start) = I; S at
  // interval midpoints from the same Hermite reconstruction.
  std::vector<Mat> Sd(K + 1);
  for (std::size_t j = 0; j <= K; ++j) {
    Sd[j] = srhs(S[j], spec.drift_jacobian(traj.y[j]), running_hessian(spec, traj.y[j]),
                 drift_curvature(spec, traj.y[j], traj.z[j]));
  }
  path.Y[0] = Mat::Identity(d, d);
  for (std::size_t j = 0; j < K; ++j) {
    double dt = traj.grid[j + 1] - traj.grid[j];
    Vec ym = hermite_mid(traj.y[j], traj.y[j + 1], yd[j], yd[j + 1], dt);
    Mat Sm = (0.5 * (S[j] + S[j + 1]) + (dt / 8.0) * (Sd[j] - Sd[j + 1])).eval();
    Mat Ca = spec.drift_jacobian(traj.y[j]) - gram.G * S[j];
    Mat Cm = spec.drift_jacobian(ym) - gram.G * Sm;
    Mat Cb = spec.drift_jacobian(traj.y[j + 1]) - gram.G * S[j + 1];
    Mat k1 = Ca * path.Y[j];
    Mat k2 = Cm * (path.Y[j] + 0.5 * dt * k1);
    Mat k3 = Cm * (path.Y[j] + 0.5 * dt * k2);
    Mat k4 = Cb * (path.Y[j] + dt * k3);
    path.Y[j + 1] = path.Y[j] + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!path.Y[j + 1].allFinite()) throw std::runtime_error("nonfinite state in sensitivity sweep");
  }
  for (std::size_t j = 0; j <= K; ++j) path.Z[j] = S[j] * path.Y[j];
  return path;
}

double value_eval(const ProblemSpec& spec, const GramOperator& gram,
                  const TrajectoryPair& traj) {
  if (traj.grid.empty()) throw std::invalid_argument("value_eval needs a trajectory");
  double acc = 0.0;
  auto density = [&](std::size_t j) {
    return spec.cost_running(traj.y[j]) + 0.5 * traj.z[j].dot(gram.G * traj.z[j]);
  };
  for (std::size_t j = 0; j + 1 < traj.grid.size(); ++j) {
    double dt = traj.grid[j + 1] - traj.grid[j];
    acc += 0.5 * dt * (density(j) + density(j + 1));
  }
  return acc + spec.cost_terminal(traj.y.back());
}

double bellman_residual(const ProblemSpec& spec, const GramOperator& gram,
                        const DecouplingField& field, const Vec& x, double t,
                        const SolverOptions& opts) {
  const double delta = 1e-4;
  if (t - delta < 0.0 || t + delta > spec.horizon_T) {
    throw std::invalid_argument("bellman_residual stencil leaves (0, T)");
  }
  SolverOptions stencil = opts;
  stencil.pinned_first_steps = field.first_window_steps(spec, t, opts);
  double v_plus = value_eval(spec, gram, field.solve_from(spec, gram, x, t + delta, stencil));
  double v_minus = value_eval(spec, gram, field.solve_from(spec, gram, x, t - delta, stencil));
  double dvdt = (v_plus - v_minus) / (2.0 * delta);
  Vec g = field.eval(x, t);
  double residual = -dvdt - g.dot(spec.drift(x)) + 0.5 * g.dot(gram.G * g) - spec.cost_running(x);
  return std::abs(residual);
}

}  // namespace hctrl
