// Microbenchmarks for the solver pipeline: the local contraction iteration,
// full global solves under both strategies, memoized field queries, the
// matrix Riccati sweep, direct transcription, the particle-system solve, and
// the exact assignment distance.

#include <benchmark/benchmark.h>

#include <random>

#include "hctrl/fbode.hpp"
#include "hctrl/mfc.hpp"
#include "hctrl/problem.hpp"
#include "hctrl/regime.hpp"
#include "hctrl/riccati.hpp"
#include "hctrl/verify.hpp"

namespace {

using namespace hctrl;

Vec v1(double x) {
  Vec v(1);
  v << x;
  return v;
}

ProblemConfig scalar_lq_config() {
  ProblemConfig c;
  c.dim = 1;
  c.ctrl_dim = 1;
  c.horizon_T = 1.0;
  c.drift.family = "linear";
  c.drift.matrix = Mat::Zero(1, 1);
  c.cost_running.family = "quadratic";
  c.cost_running.Q = Mat::Identity(1, 1);
  c.cost_terminal.family = "quadratic";
  c.cost_terminal.Q = 0.5 * Mat::Identity(1, 1);
  c.B = Mat::Identity(1, 1);
  c.N = Mat::Identity(1, 1);
  return c;
}

ProblemConfig saturating_config() {
  ProblemConfig c = scalar_lq_config();
  c.drift.family = "saturating";
  c.drift.matrix = Mat();
  c.drift.scale = 0.1;
  return c;
}

MFProblemSpec mf_spec() {
  MFProblemSpec mf;
  mf.n = 1;
  mf.A = Mat::Zero(1, 1);
  mf.B = Mat::Identity(1, 1);
  mf.N_weight = Mat::Identity(1, 1);
  mf.Q = Mat::Identity(1, 1);
  mf.s = 0.5;
  mf.Q_T = Mat();
  mf.s_T = 0.0;
  mf.horizon_T = 1.0;
  return mf;
}

ParticleMeasure cloud(int count, int n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  ParticleMeasure m;
  m.n = n;
  for (int i = 0; i < count; ++i) {
    Vec p(n);
    for (int k = 0; k < n; ++k) p[k] = unif(rng);
    m.points.push_back(p);
  }
  return m;
}

void BM_TerminalWindowIteration(benchmark::State& state) {
  const ProblemSpec spec = build_problem(scalar_lq_config());
  const GramOperator g = gram(spec);
  const Regime regime(spec, g);
  const WindowCertificate cert = certify_window(regime, 0.3, spec.M_T);
  for (auto _ : state) {
    PicardResult r =
        picard_local(spec, g, v1(1.0), 0.7, 1.0, spec.cost_terminal_grad, SolverOptions{}, cert);
    benchmark::DoNotOptimize(r.traj.z.front());
  }
}
BENCHMARK(BM_TerminalWindowIteration)->Unit(benchmark::kMillisecond);

void BM_GlobalSolveRecursive(benchmark::State& state) {
  const ProblemSpec spec = build_problem(scalar_lq_config());
  const GramOperator g = gram(spec);
  for (auto _ : state) {
    GlobalResult r = global_solve(spec, g, v1(1.0), Strategy::recursive, SolverOptions{});
    benchmark::DoNotOptimize(r.traj.z.front());
  }
}
BENCHMARK(BM_GlobalSolveRecursive)->Unit(benchmark::kMillisecond);

void BM_GlobalSolveInterpolated(benchmark::State& state) {
  const ProblemSpec spec = build_problem(scalar_lq_config());
  const GramOperator g = gram(spec);
  for (auto _ : state) {
    GlobalResult r = global_solve(spec, g, v1(1.0), Strategy::interpolated, SolverOptions{});
    benchmark::DoNotOptimize(r.traj.z.front());
  }
}
BENCHMARK(BM_GlobalSolveInterpolated)->Unit(benchmark::kMillisecond);

void BM_MemoizedFieldQuery(benchmark::State& state) {
  const ProblemSpec spec = build_problem(saturating_config());
  const GramOperator g = gram(spec);
  const GlobalResult warm = global_solve(spec, g, v1(1.0), Strategy::recursive, SolverOptions{});
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  for (auto _ : state) {
    benchmark::DoNotOptimize(warm.field->eval(v1(unif(rng)), 0.35));
  }
}
BENCHMARK(BM_MemoizedFieldQuery)->Unit(benchmark::kMillisecond);

void BM_RiccatiSweep(benchmark::State& state) {
  Mat A(2, 2);
  A << 0.1, 0.0, 0.0, -0.2;
  const Mat M = Mat::Identity(2, 2);
  const Mat MT = 0.5 * Mat::Identity(2, 2);
  const Mat G = Mat::Identity(2, 2);
  for (auto _ : state) {
    RiccatiSolution sol = riccati_solve(A, M, MT, G, 0.0, 1.0);
    benchmark::DoNotOptimize(sol.eval(0.0));
  }
}
BENCHMARK(BM_RiccatiSweep)->Unit(benchmark::kMillisecond);

void BM_Transcription128(benchmark::State& state) {
  const ProblemSpec spec = build_problem(scalar_lq_config());
  for (auto _ : state) {
    TranscriptionResult r = direct_transcribe(spec, v1(1.0), 0.0, 128);
    benchmark::DoNotOptimize(r.cost);
  }
}
BENCHMARK(BM_Transcription128)->Unit(benchmark::kMillisecond);

void BM_ParticleSolve8(benchmark::State& state) {
  const MFProblemSpec mf = mf_spec();
  const ParticleMeasure m = cloud(8, 1, 21);
  for (auto _ : state) {
    MFCSolution sol = mfc_solve(mf, m, 0.0);
    benchmark::DoNotOptimize(value_measure(sol));
  }
}
BENCHMARK(BM_ParticleSolve8)->Unit(benchmark::kMillisecond);

void BM_AssignmentDistance32(benchmark::State& state) {
  const ParticleMeasure a = cloud(32, 2, 5);
  const ParticleMeasure b = cloud(32, 2, 6);
  for (auto _ : state) {
    benchmark::DoNotOptimize(w2_empirical(a, b));
  }
}
BENCHMARK(BM_AssignmentDistance32)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
