#pragma once
// Shared fixtures for the test binaries: the four reference problems used
// throughout the suite and a few small numeric helpers.

#include <cmath>
#include <cstdlib>

#include "hctrl/mfc.hpp"
#include "hctrl/problem.hpp"

namespace testsup {

using hctrl::Mat;
using hctrl::Vec;

// 1-d problem with no drift, running cost x^2/2, terminal cost x^2/4.
// The feedback gain has the closed form P(t) = tanh((T - t) + atanh(1/2)).
inline hctrl::ProblemConfig scalar_lq() {
  hctrl::ProblemConfig c;
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

// 2-d problem with diagonal drift diag(0.1, -0.2); decouples into two scalar
// gains, each with a shifted-tanh closed form.
inline hctrl::ProblemConfig matrix_lq() {
  hctrl::ProblemConfig c;
  c.dim = 2;
  c.ctrl_dim = 2;
  c.horizon_T = 1.0;
  c.drift.family = "linear";
  c.drift.matrix = Mat::Zero(2, 2);
  c.drift.matrix(0, 0) = 0.1;
  c.drift.matrix(1, 1) = -0.2;
  c.cost_running.family = "quadratic";
  c.cost_running.Q = Mat::Identity(2, 2);
  c.cost_terminal.family = "quadratic";
  c.cost_terminal.Q = 0.5 * Mat::Identity(2, 2);
  c.B = Mat::Identity(2, 2);
  c.N = Mat::Identity(2, 2);
  return c;
}

// 1-d nonlinear benchmark: radially saturating drift 0.1 x / (1 + |x|) with
// the quadratic costs of scalar_lq. Certified for the full unit horizon.
inline hctrl::ProblemConfig saturating_1d(double scale = 0.1) {
  hctrl::ProblemConfig c = scalar_lq();
  c.drift.family = "saturating";
  c.drift.matrix = Mat();
  c.drift.scale = scale;
  return c;
}

// Mean-field benchmark: 8 particles on the line, no drift, running cost
// coupling the state to half its population mean, no terminal cost. The mean
// starts (and stays) at zero, so every adjoint is tanh(T - t) x_i.
inline hctrl::MFProblemSpec mf_bench(double s = 0.5) {
  hctrl::MFProblemSpec mf;
  mf.n = 1;
  mf.A = Mat::Zero(1, 1);
  mf.B = Mat::Identity(1, 1);
  mf.N_weight = Mat::Identity(1, 1);
  mf.Q = Mat::Identity(1, 1);
  mf.s = s;
  mf.Q_T = Mat();  // identically-zero terminal cost
  mf.s_T = 0.0;
  mf.horizon_T = 1.0;
  return mf;
}

inline hctrl::ParticleMeasure mf_bench_measure() {
  hctrl::ParticleMeasure m;
  m.n = 1;
  for (double v : {0.25, -0.25, 0.5, -0.5, 0.75, -0.75, 1.0, -1.0}) {
    Vec p(1);
    p << v;
    m.points.push_back(p);
  }
  return m;
}

inline double rel_err(double got, double want) {
  return std::abs(got - want) / std::max(1.0, std::abs(want));
}

}  // namespace testsup
