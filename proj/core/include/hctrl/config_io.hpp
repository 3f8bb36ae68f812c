#pragma once

// Config-file loading: structured text (JSON: nested key/value objects with
// numeric arrays for matrices, row-major) describing either a single-agent
// problem or a mean-field problem with its particle cloud. All parse and
// validation failures throw std::invalid_argument with a readable message.

#include <string>

#include "hctrl/mfc.hpp"
#include "hctrl/problem.hpp"

namespace hctrl {

// Single-agent problem description.
ProblemConfig parse_problem_config(const std::string& text);
ProblemConfig load_problem_config(const std::string& path);

// Mean-field problem plus its empirical measure. Points may be listed
// explicitly ("points": [[...], ...]) or drawn from a seeded uniform cloud
// ("sampling": {"count", "radius", "seed"}); exactly one must be present.
struct MFConfig {
  MFProblemSpec problem;
  ParticleMeasure measure;
};

MFConfig parse_mf_config(const std::string& text);
MFConfig load_mf_config(const std::string& path);

}  // namespace hctrl
