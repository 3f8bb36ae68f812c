// Command-line driver: configuration-driven runs of the solver toolkit with
// machine-readable artifacts. Subcommands:
//   regime  - contraction-horizon analysis and layer plan for a problem
//   solve   - decoupling-field solve from a state, trajectory CSV + report
//   verify  - verification battery (assumptions, optimality gap, gradient
//             envelope, Bellman residual, contraction monitor, transcription)
//   mfc     - mean-field particle solve, per-particle CSV + report
//   bench   - built-in benchmark table: solver vs oracle vs transcription
// Exit codes: 0 ok, 1 config error, 2 solver non-convergence, 3 regime
// infeasible. All randomness flows from --seed; reruns with identical inputs
// produce byte-identical artifacts (no timestamps or wall times are written).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "hctrl/config_io.hpp"
#include "hctrl/fbode.hpp"
#include "hctrl/mfc.hpp"
#include "hctrl/problem.hpp"
#include "hctrl/regime.hpp"
#include "hctrl/riccati.hpp"
#include "hctrl/verify.hpp"

namespace {

using ojson = nlohmann::ordered_json;

std::string fmt(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::invalid_argument("cannot open output file: " + path);
  out << content;
  if (!out) throw std::invalid_argument("failed writing output file: " + path);
}

void write_json(const std::string& path, const ojson& j) {
  write_file(path, j.dump(2) + "\n");
}

ojson vec_json(const hctrl::Vec& v) {
  ojson arr = ojson::array();
  for (int i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

ojson report_json(const hctrl::SolveReport& r) {
  ojson j;
  j["converged"] = r.converged;
  j["iterations"] = r.iterations;
  j["final_residual"] = r.final_residual;
  j["regime_certified"] = r.regime_certified;
  j["theoretical_factor"] = r.theoretical_factor;
  ojson ratios = ojson::array();
  for (double x : r.ratios) ratios.push_back(x);
  j["ratios"] = ratios;
  return j;
}

std::string trajectory_csv(const hctrl::TrajectoryPair& traj, int dim, int ctrl_dim) {
  std::string out = "s";
  for (int i = 1; i <= dim; ++i) out += ",y_" + std::to_string(i);
  for (int i = 1; i <= dim; ++i) out += ",z_" + std::to_string(i);
  for (int i = 1; i <= ctrl_dim; ++i) out += ",u_" + std::to_string(i);
  out += "\n";
  for (std::size_t j = 0; j < traj.grid.size(); ++j) {
    out += fmt(traj.grid[j]);
    for (int i = 0; i < dim; ++i) out += "," + fmt(traj.y[j][i]);
    for (int i = 0; i < dim; ++i) out += "," + fmt(traj.z[j][i]);
    for (int i = 0; i < ctrl_dim; ++i) out += "," + fmt(traj.u[j][i]);
    out += "\n";
  }
  return out;
}

std::string particles_csv(const hctrl::MFCSolution& sol) {
  const int n = sol.mf.n;
  const int p = static_cast<int>(sol.mf.B.cols());
  std::string out = "s,particle";
  for (int i = 1; i <= n; ++i) out += ",y_" + std::to_string(i);
  for (int i = 1; i <= n; ++i) out += ",z_" + std::to_string(i);
  for (int i = 1; i <= p; ++i) out += ",v_" + std::to_string(i);
  out += "\n";
  for (std::size_t j = 0; j < sol.grid.size(); ++j) {
    for (int i = 0; i < sol.measure.count(); ++i) {
      out += fmt(sol.grid[j]) + "," + std::to_string(i);
      for (int c = 0; c < n; ++c) out += "," + fmt(sol.Y[i][j][c]);
      for (int c = 0; c < n; ++c) out += "," + fmt(sol.Z[i][j][c]);
      for (int c = 0; c < p; ++c) out += "," + fmt(sol.controls[i][j][c]);
      out += "\n";
    }
  }
  return out;
}

hctrl::Vec parse_state(const std::vector<double>& xs, int dim) {
  if (static_cast<int>(xs.size()) != dim) {
    throw std::invalid_argument("--x needs exactly " + std::to_string(dim) +
                                " comma-separated entries for this problem");
  }
  hctrl::Vec x(dim);
  for (int i = 0; i < dim; ++i) x[i] = xs[i];
  return x;
}

struct CommonOpts {
  double tol = 1e-9;
  double steps = 400.0;
  hctrl::SolverOptions solver() const {
    hctrl::SolverOptions opts;
    opts.tol = tol;
    opts.steps_per_unit = steps;
    return opts;
  }
};

ojson plan_json(const hctrl::HorizonPlan& plan) {
  ojson j;
  j["h_max"] = plan.h_max;
  j["h_layer"] = plan.h_layer;
  j["theta_h"] = plan.theta_h;
  j["sigma_h"] = plan.sigma_h;
  j["contraction"] = plan.contraction;
  j["certified"] = plan.certified;
  return j;
}

int cmd_regime(const std::string& config_path, const std::string& report_path) {
  const hctrl::ProblemSpec spec = hctrl::build_problem(hctrl::load_problem_config(config_path));
  const hctrl::GramOperator g = hctrl::gram(spec);
  const hctrl::Regime regime(spec, g);
  const hctrl::RegimeConstants rc = regime.constants();
  const hctrl::HorizonPlan first = regime.admissible_h(spec.M_T);
  const hctrl::HorizonPlan plan = regime.layer_plan();

  ojson j;
  j["schema"] = 1;
  j["problem"] = {{"dim", spec.dim}, {"ctrl_dim", spec.ctrl_dim}, {"horizon_T", spec.horizon_T}};
  j["constants"] = {{"gamma", spec.gamma}, {"b", spec.b_const},   {"nu", spec.nu},
                    {"M", spec.M},         {"nu_T", spec.nu_T},   {"M_T", spec.M_T},
                    {"m_coer", g.m_coer},  {"g_norm", g.g_norm}};
  j["selection"] = {{"k", rc.k},
                    {"alpha0", rc.alpha0},
                    {"beta0", rc.second_estimate_ok ? ojson(rc.beta0) : ojson(nullptr)},
                    {"first_estimate_ok", rc.first_estimate_ok},
                    {"second_estimate_ok", rc.second_estimate_ok},
                    {"fixed_point_ok", rc.fixed_point_ok}};
  j["h_max"] = first.h_max;
  j["first_window"] = plan_json(first);
  if (plan.breakpoints.size() > 2) {
    j["later_windows"] = plan_json(regime.admissible_h(rc.beta0));
  } else {
    j["later_windows"] = nullptr;
  }
  ojson bps = ojson::array();
  for (double b : plan.breakpoints) bps.push_back(b);
  ojson tcs = ojson::array();
  for (double c : plan.terminal_constants) tcs.push_back(c);
  j["breakpoints"] = bps;
  j["terminal_constants"] = tcs;
  j["certified"] = plan.certified;

  if (!report_path.empty()) write_json(report_path, j);
  std::cout << "regime: h_max=" << fmt(first.h_max) << " layers="
            << (plan.breakpoints.empty() ? 0 : plan.breakpoints.size() - 1)
            << " certified=" << (plan.certified ? "yes" : "no") << "\n";
  return 0;
}

int cmd_solve(const std::string& config_path, const std::vector<double>& xs, double t,
              const std::string& strategy_name, const CommonOpts& common,
              const std::string& traj_path, const std::string& report_path) {
  const hctrl::ProblemSpec spec = hctrl::build_problem(hctrl::load_problem_config(config_path));
  const hctrl::GramOperator g = hctrl::gram(spec);
  const hctrl::Vec x = parse_state(xs, spec.dim);
  const hctrl::Strategy strategy = strategy_name == "interpolated"
                                       ? hctrl::Strategy::interpolated
                                       : hctrl::Strategy::recursive;
  const hctrl::SolverOptions opts = common.solver();
  hctrl::GlobalResult res = hctrl::global_solve(spec, g, x, strategy, opts, t);
  const double value = hctrl::value_eval(spec, g, res.traj);

  if (!traj_path.empty()) {
    write_file(traj_path, trajectory_csv(res.traj, spec.dim, spec.ctrl_dim));
  }
  if (!report_path.empty()) {
    ojson j;
    j["schema"] = 1;
    j["problem"] = {{"dim", spec.dim}, {"ctrl_dim", spec.ctrl_dim}, {"horizon_T", spec.horizon_T}};
    j["strategy"] = strategy_name;
    j["tol"] = common.tol;
    j["steps_per_unit"] = common.steps;
    j["x"] = vec_json(x);
    j["t"] = t;
    j["report"] = report_json(res.report);
    j["gamma"] = vec_json(res.traj.z.front());
    j["value"] = value;
    write_json(report_path, j);
  }
  std::cout << "solve: converged=" << (res.report.converged ? "yes" : "no")
            << " value=" << fmt(value) << " nodes=" << res.traj.grid.size() << "\n";
  return res.report.converged ? 0 : 2;
}

int cmd_verify(const std::string& config_path, const std::vector<double>& xs, double t,
               const CommonOpts& common, std::uint64_t seed, int gap_count, int grad_probes,
               const std::string& report_path) {
  const hctrl::ProblemSpec spec = hctrl::build_problem(hctrl::load_problem_config(config_path));
  const hctrl::GramOperator g = hctrl::gram(spec);
  hctrl::Vec x;
  if (xs.empty()) {
    x = hctrl::Vec::Constant(spec.dim, 0.5);
  } else {
    x = parse_state(xs, spec.dim);
  }
  const hctrl::SolverOptions opts = common.solver();

  ojson j;
  j["schema"] = 1;
  j["seed"] = seed;
  j["x"] = vec_json(x);
  j["t"] = t;

  // Standing structural assumptions at sampled states.
  hctrl::SamplePlan plan;
  plan.seed = seed;
  const hctrl::AssumptionReport assumptions = hctrl::check_assumptions(spec, plan);
  {
    ojson arr = ojson::array();
    for (const auto& rec : assumptions.records) {
      arr.push_back({{"id", rec.id},
                     {"samples", rec.samples},
                     {"worst_margin", rec.worst_margin},
                     {"pass", rec.pass}});
    }
    j["assumptions"] = {{"records", arr}, {"pass", assumptions.pass}};
  }

  hctrl::GlobalResult res =
      hctrl::global_solve(spec, g, x, hctrl::Strategy::recursive, opts, t);
  const double value = hctrl::value_eval(spec, g, res.traj);
  j["solve"] = report_json(res.report);
  j["value"] = value;

  std::mt19937_64 rng(seed);

  // Cost-gap inequality under seeded control perturbations.
  {
    std::uniform_real_distribution<double> amp(-0.1, 0.1);
    std::vector<std::vector<hctrl::Vec>> perturbations;
    for (int k = 0; k < gap_count; ++k) {
      std::vector<hctrl::Vec> v(res.traj.grid.size());
      for (auto& node : v) {
        node = hctrl::Vec(spec.ctrl_dim);
        for (int c = 0; c < spec.ctrl_dim; ++c) node[c] = amp(rng);
      }
      perturbations.push_back(std::move(v));
    }
    const hctrl::GapReport gap = hctrl::optimality_gap_check(spec, res.traj, perturbations);
    j["gap"] = {{"count", gap_count}, {"worst_slack", gap.worst_slack}, {"pass", gap.pass}};
  }

  // Gradient envelope: finite differences of the value against the field.
  {
    std::uniform_real_distribution<double> coord(-1.0, 1.0);
    std::uniform_real_distribution<double> time(0.0, 0.9 * spec.horizon_T);
    std::vector<std::pair<hctrl::Vec, double>> points;
    for (int k = 0; k < grad_probes; ++k) {
      hctrl::Vec p(spec.dim);
      for (int c = 0; c < spec.dim; ++c) p[c] = coord(rng);
      points.emplace_back(p, time(rng));
    }
    const hctrl::GradReport grad = hctrl::gamma_gradient_check(spec, g, *res.field, points, opts);
    double worst_rel = 0.0;
    for (const auto& e : grad.entries) worst_rel = std::max(worst_rel, e.rel_err);
    j["gradient"] = {{"probes", grad_probes}, {"worst_rel_err", worst_rel}, {"pass", grad.pass}};
  }

  // Dynamic-programming residual at the midpoint of the remaining horizon.
  {
    const double t_mid = 0.5 * (t + spec.horizon_T);
    const double residual = hctrl::bellman_residual(spec, g, *res.field, x, t_mid, opts);
    j["bellman"] = {{"t", t_mid}, {"residual", residual}};
  }

  // Observed Picard ratios against the certified window factor. Measured on
  // the terminal window, where the iteration uses the exact terminal
  // gradient: deeper windows iterate against memoized boundary maps whose
  // lattice rounding floors the late-iteration differences, so their
  // stall-accepted tail ratios say nothing about contraction.
  std::string monitor_text;
  {
    const hctrl::Regime regime(spec, g);
    const hctrl::HorizonPlan plan = regime.layer_plan();
    const double h0 = plan.breakpoints.size() >= 2
                          ? plan.breakpoints[0] - plan.breakpoints[1]
                          : spec.horizon_T;
    const hctrl::WindowCertificate cert = hctrl::certify_window(regime, h0, spec.M_T);
    const hctrl::PicardResult window = hctrl::picard_local(
        spec, g, x, spec.horizon_T - h0, spec.horizon_T, spec.cost_terminal_grad, opts, cert);
    const hctrl::MonitorVerdict verdict = hctrl::contraction_monitor(window.report, plan);
    monitor_text = verdict == hctrl::MonitorVerdict::pass ? "pass"
                   : verdict == hctrl::MonitorVerdict::fail ? "fail"
                                                            : "not_applicable";
    double max_ratio = 0.0;
    for (double r : window.report.ratios) max_ratio = std::max(max_ratio, r);
    j["contraction_monitor"] = {{"verdict", monitor_text},
                                {"window_factor", window.report.theoretical_factor},
                                {"max_ratio", max_ratio}};
  }

  // Direct transcription closing on the field value as nodes double.
  {
    ojson rows = ojson::array();
    double prev = 0.0;
    bool monotone = true;
    double final_cost = 0.0;
    for (int nodes : {64, 128, 256}) {
      const hctrl::TranscriptionResult tr = hctrl::direct_transcribe(spec, x, t, nodes);
      rows.push_back({{"nodes", nodes}, {"cost", tr.cost}, {"converged", tr.converged}});
      if (!rows.empty() && rows.size() > 1 && tr.cost > prev + 1e-12) monotone = false;
      prev = tr.cost;
      final_cost = tr.cost;
    }
    j["transcription"] = {{"rows", rows},
                          {"value", value},
                          {"monotone", monotone},
                          {"final_gap", std::abs(final_cost - value)}};
  }

  if (!report_path.empty()) write_json(report_path, j);
  const bool pass = assumptions.pass && j["gap"]["pass"].get<bool>() &&
                    j["gradient"]["pass"].get<bool>() && monitor_text != "fail";
  std::cout << "verify: assumptions=" << (assumptions.pass ? "pass" : "fail")
            << " gap=" << (j["gap"]["pass"].get<bool>() ? "pass" : "fail")
            << " gradient=" << (j["gradient"]["pass"].get<bool>() ? "pass" : "fail")
            << " monitor=" << monitor_text << " overall=" << (pass ? "pass" : "fail") << "\n";
  return 0;
}

int cmd_mfc(const std::string& config_path, double t, const CommonOpts& common,
            std::uint64_t seed, int grad_checks, const std::string& traj_path,
            const std::string& report_path) {
  const hctrl::MFConfig config = hctrl::load_mf_config(config_path);
  const hctrl::MFAssumptionFlags flags = hctrl::mf_assumptions(config.problem);
  const hctrl::SolverOptions opts = common.solver();
  const hctrl::MFCSolution sol = hctrl::mfc_solve(config.problem, config.measure, t, opts);
  const double value = hctrl::value_measure(sol);

  ojson j;
  j["schema"] = 1;
  j["particles"] = config.measure.count();
  j["n"] = config.problem.n;
  j["t"] = t;
  j["flags"] = {{"control_coercive", flags.control_coercive},
                {"cross_running_zero", flags.cross_running_zero},
                {"cross_terminal_zero", flags.cross_terminal_zero},
                {"drift_dominated", flags.drift_dominated}};
  j["report"] = report_json(sol.report);
  j["V"] = value;

  const double delta = 1e-4;
  if (t - delta >= 0.0 && t + delta <= config.problem.horizon_T) {
    j["bellman_residual"] =
        hctrl::measure_bellman_residual(config.problem, config.measure, t, opts);
  } else {
    j["bellman_residual"] = nullptr;
  }

  // Gradient identity checks at seeded particles: flat-derivative gradient
  // (= Z_i(t)) against the scaled finite difference of the measure value.
  {
    std::vector<int> indices(config.measure.count());
    for (int i = 0; i < config.measure.count(); ++i) indices[i] = i;
    std::mt19937_64 rng(seed);
    std::shuffle(indices.begin(), indices.end(), rng);
    const int checks = std::min<int>(grad_checks, config.measure.count());
    ojson arr = ojson::array();
    bool all_pass = true;
    for (int k = 0; k < checks; ++k) {
      const int i = indices[k];
      const hctrl::DVdmResult d = hctrl::dvdm_eval(sol, i);
      const hctrl::Vec fd =
          hctrl::dvdm_fd_gradient(config.problem, config.measure, t, i, 1e-4, opts);
      const double abs_err = (fd - d.gradient).cwiseAbs().maxCoeff();
      const double scale = std::max(1.0, d.gradient.cwiseAbs().maxCoeff());
      const bool pass = abs_err <= 1e-3 * scale;
      all_pass = all_pass && pass;
      arr.push_back({{"particle", i},
                     {"value", d.value},
                     {"gradient", vec_json(d.gradient)},
                     {"fd_gradient", vec_json(fd)},
                     {"abs_err", abs_err},
                     {"pass", pass}});
    }
    j["gradient_checks"] = arr;
    j["gradient_pass"] = all_pass;
  }

  if (!traj_path.empty()) write_file(traj_path, particles_csv(sol));
  if (!report_path.empty()) write_json(report_path, j);
  std::cout << "mfc: converged=" << (sol.report.converged ? "yes" : "no")
            << " V=" << fmt(value)
            << " gradient=" << (j["gradient_pass"].get<bool>() ? "pass" : "fail") << "\n";
  return sol.report.converged ? 0 : 2;
}

struct BenchRow {
  std::string name;
  double solver_value = 0.0;
  bool has_oracle = false;
  double oracle_value = 0.0;
  double transcribe_cost = 0.0;
};

hctrl::ProblemConfig scalar_lq_config() {
  hctrl::ProblemConfig c;
  c.dim = 1;
  c.ctrl_dim = 1;
  c.horizon_T = 1.0;
  c.drift.family = "linear";
  c.drift.matrix = hctrl::Mat::Zero(1, 1);
  c.cost_running.family = "quadratic";
  c.cost_running.Q = hctrl::Mat::Identity(1, 1);
  c.cost_terminal.family = "quadratic";
  c.cost_terminal.Q = 0.5 * hctrl::Mat::Identity(1, 1);
  c.B = hctrl::Mat::Identity(1, 1);
  c.N = hctrl::Mat::Identity(1, 1);
  return c;
}

hctrl::ProblemConfig matrix_lq_config() {
  hctrl::ProblemConfig c;
  c.dim = 2;
  c.ctrl_dim = 2;
  c.horizon_T = 1.0;
  c.drift.family = "linear";
  c.drift.matrix = hctrl::Mat::Zero(2, 2);
  c.drift.matrix(0, 0) = 0.1;
  c.drift.matrix(1, 1) = -0.2;
  c.cost_running.family = "quadratic";
  c.cost_running.Q = hctrl::Mat::Identity(2, 2);
  c.cost_terminal.family = "quadratic";
  c.cost_terminal.Q = 0.5 * hctrl::Mat::Identity(2, 2);
  c.B = hctrl::Mat::Identity(2, 2);
  c.N = hctrl::Mat::Identity(2, 2);
  return c;
}

hctrl::ProblemConfig saturating_config() {
  hctrl::ProblemConfig c;
  c.dim = 1;
  c.ctrl_dim = 1;
  c.horizon_T = 1.0;
  c.drift.family = "saturating";
  c.drift.scale = 0.1;
  c.cost_running.family = "quadratic";
  c.cost_running.Q = hctrl::Mat::Identity(1, 1);
  c.cost_terminal.family = "quadratic";
  c.cost_terminal.Q = 0.5 * hctrl::Mat::Identity(1, 1);
  c.B = hctrl::Mat::Identity(1, 1);
  c.N = hctrl::Mat::Identity(1, 1);
  return c;
}

hctrl::MFProblemSpec mf_benchmark_spec() {
  hctrl::MFProblemSpec mf;
  mf.n = 1;
  mf.A = hctrl::Mat::Zero(1, 1);
  mf.B = hctrl::Mat::Identity(1, 1);
  mf.N_weight = hctrl::Mat::Identity(1, 1);
  mf.Q = hctrl::Mat::Identity(1, 1);
  mf.s = 0.5;
  mf.Q_T = hctrl::Mat();
  mf.s_T = 0.0;
  mf.horizon_T = 1.0;
  return mf;
}

hctrl::ParticleMeasure mf_benchmark_measure() {
  hctrl::ParticleMeasure m;
  m.n = 1;
  for (double v : {0.25, -0.25, 0.5, -0.5, 0.75, -0.75, 1.0, -1.0}) {
    hctrl::Vec p(1);
    p[0] = v;
    m.points.push_back(p);
  }
  return m;
}

BenchRow bench_single(const std::string& name, const hctrl::ProblemConfig& config,
                      const hctrl::Vec& x, bool lq_oracle, const CommonOpts& common) {
  const hctrl::ProblemSpec spec = hctrl::build_problem(config);
  const hctrl::GramOperator g = hctrl::gram(spec);
  BenchRow row;
  row.name = name;
  hctrl::GlobalResult res =
      hctrl::global_solve(spec, g, x, hctrl::Strategy::recursive, common.solver());
  row.solver_value = hctrl::value_eval(spec, g, res.traj);
  if (lq_oracle) {
    const hctrl::RiccatiSolution sol = hctrl::riccati_solve(
        spec.drift_matrix, spec.Q_run, spec.Q_term, g.G, 0.0, spec.horizon_T);
    row.has_oracle = true;
    row.oracle_value = 0.5 * x.dot(sol.eval(0.0) * x);
  }
  row.transcribe_cost = hctrl::direct_transcribe(spec, x, 0.0, 256).cost;
  return row;
}

BenchRow bench_mean_field(const CommonOpts& common) {
  const hctrl::MFProblemSpec mf = mf_benchmark_spec();
  const hctrl::ParticleMeasure m = mf_benchmark_measure();
  BenchRow row;
  row.name = "mf_scalar";
  const hctrl::MFCSolution sol = hctrl::mfc_solve(mf, m, 0.0, common.solver());
  row.solver_value = hctrl::value_measure(sol);

  // Two-mode quadratic decomposition: deviation and mean gains.
  const hctrl::MfLqSolution lq = hctrl::mf_lq_solve(
      1, mf.A, mf.B, mf.N_weight, mf.Q, mf.s, hctrl::Mat::Zero(1, 1), 0.0, mf.horizon_T);
  const hctrl::Vec mean = m.mean();
  double dev = 0.0;
  for (const auto& p : m.points) {
    const hctrl::Vec d = p - mean;
    dev += 0.5 * d.dot(lq.dev.eval(0.0) * d);
  }
  row.has_oracle = true;
  row.oracle_value = dev / m.count() + 0.5 * mean.dot(lq.mean.eval(0.0) * mean);

  const hctrl::ProblemSpec lifted = hctrl::lift_problem(mf, m);
  const hctrl::Vec X0 = hctrl::identity_lift(m).values;
  row.transcribe_cost = hctrl::direct_transcribe(lifted, X0, 0.0, 256).cost / m.count();
  return row;
}

int cmd_bench(const CommonOpts& common, const std::string& report_path) {
  std::vector<BenchRow> rows;
  {
    hctrl::Vec x1(1);
    x1[0] = 1.0;
    rows.push_back(bench_single("lq_scalar", scalar_lq_config(), x1, true, common));
    hctrl::Vec x2(2);
    x2[0] = 1.0;
    x2[1] = 0.5;
    rows.push_back(bench_single("lq_matrix", matrix_lq_config(), x2, true, common));
    rows.push_back(bench_single("saturating_1d", saturating_config(), x1, false, common));
    rows.push_back(bench_mean_field(common));
  }

  std::printf("%-14s %16s %16s %16s %12s\n", "benchmark", "solver", "oracle", "transcribe",
              "max_rel_diff");
  ojson arr = ojson::array();
  for (const BenchRow& row : rows) {
    double worst = 0.0;
    const double scale = std::max(1.0, std::abs(row.solver_value));
    worst = std::max(worst, std::abs(row.transcribe_cost - row.solver_value) / scale);
    if (row.has_oracle) {
      worst = std::max(worst, std::abs(row.oracle_value - row.solver_value) / scale);
    }
    std::printf("%-14s %16.9g %16s %16.9g %12.3g\n", row.name.c_str(), row.solver_value,
                row.has_oracle ? fmt(row.oracle_value).c_str() : "n/a", row.transcribe_cost,
                worst);
    arr.push_back({{"name", row.name},
                   {"solver_value", row.solver_value},
                   {"oracle_value", row.has_oracle ? ojson(row.oracle_value) : ojson(nullptr)},
                   {"transcribe_cost", row.transcribe_cost},
                   {"max_rel_diff", worst}});
  }
  if (!report_path.empty()) {
    ojson j;
    j["schema"] = 1;
    j["rows"] = arr;
    write_json(report_path, j);
  }
  std::cout << "bench: " << rows.size() << " benchmarks\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Finite-horizon optimal control: decoupling-field solver toolkit"};
  app.require_subcommand(1);

  std::string config_path, traj_path, report_path, strategy = "recursive";
  std::vector<double> xs;
  double t = 0.0;
  CommonOpts common;
  std::uint64_t seed = 12345;
  int gap_count = 20, grad_probes = 10, grad_checks = 5;

  auto add_common = [&](CLI::App* sub, bool with_config = true) {
    if (with_config) {
      sub->add_option("--config", config_path, "Path to the problem config file (JSON)")
          ->required();
    }
    sub->add_option("--tol", common.tol, "Solver fixed-point tolerance (> 0)")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    sub->add_option("--steps", common.steps, "Integration steps per unit time (>= 16)")
        ->check(CLI::Range(16.0, 1e9))
        ->capture_default_str();
  };

  CLI::App* regime = app.add_subcommand("regime", "Contraction-horizon analysis and layer plan");
  regime->add_option("--config", config_path, "Path to the problem config file (JSON)")
      ->required();
  regime->add_option("--report", report_path, "Write the analysis as a JSON artifact here");

  CLI::App* solve = app.add_subcommand("solve", "Solve the optimality system from a state");
  add_common(solve);
  solve->add_option("--x", xs, "Initial state, comma separated (dim entries)")
      ->required()
      ->delimiter(',');
  solve->add_option("--t", t, "Start time in [0, T]")->capture_default_str();
  solve->add_option("--strategy", strategy, "Evaluation strategy below the first window")
      ->check(CLI::IsMember({"recursive", "interpolated"}))
      ->capture_default_str();
  solve->add_option("--traj", traj_path, "Write the trajectory CSV here");
  solve->add_option("--report", report_path, "Write the solve report JSON here");

  CLI::App* verify = app.add_subcommand("verify", "Verification battery on a problem config");
  add_common(verify);
  verify->add_option("--x", xs, "Probe state, comma separated (default: 0.5 per coordinate)")
      ->delimiter(',');
  verify->add_option("--t", t, "Start time in [0, T]")->capture_default_str();
  verify->add_option("--seed", seed, "Seed for perturbation and probe draws")
      ->capture_default_str();
  verify->add_option("--gap-perturbations", gap_count, "Control perturbations for the gap check")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  verify->add_option("--grad-probes", grad_probes, "Probe points for the gradient envelope check")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  verify->add_option("--report", report_path, "Write the verification report JSON here");

  CLI::App* mfc = app.add_subcommand("mfc", "Mean-field particle solve");
  add_common(mfc);
  mfc->add_option("--t", t, "Start time in [0, T]")->capture_default_str();
  mfc->add_option("--seed", seed, "Seed for gradient-check particle selection")
      ->capture_default_str();
  mfc->add_option("--grad-checks", grad_checks, "Particles to check the gradient identity at")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  mfc->add_option("--traj", traj_path, "Write the per-particle trajectory CSV here");
  mfc->add_option("--report", report_path, "Write the report JSON here");

  CLI::App* bench = app.add_subcommand("bench", "Benchmark table: solver vs oracle vs transcription");
  add_common(bench, /*with_config=*/false);
  bench->add_option("--report", report_path, "Write the benchmark table JSON here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (regime->parsed()) return cmd_regime(config_path, report_path);
    if (solve->parsed()) {
      return cmd_solve(config_path, xs, t, strategy, common, traj_path, report_path);
    }
    if (verify->parsed()) {
      return cmd_verify(config_path, xs, t, common, seed, gap_count, grad_probes, report_path);
    }
    if (mfc->parsed()) {
      return cmd_mfc(config_path, t, common, seed, grad_checks, traj_path, report_path);
    }
    if (bench->parsed()) return cmd_bench(common, report_path);
  } catch (const std::domain_error& e) {
    std::cerr << "regime infeasible: " << e.what() << "\n";
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::runtime_error& e) {
    std::cerr << "solver failure: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
