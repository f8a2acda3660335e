#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace msth {

struct GradCheckOptions {
  std::uint64_t seed = 7;
  int per_group = 24;  // coordinates probed per parameter group
  double step = 1e-6;
};

struct GradCheckResult {
  std::string suite;
  std::string group;
  int checked = 0;
  double max_rel_error = 0;
  double max_abs_grad = 0;  // largest probed analytic gradient
};

/// |a - n| / max(|a|, |n|, 1e-6)
double relative_error(double analytic, double numeric);

/// Whole pipeline in double precision: 2 rays x 4 samples, every field group
/// plus the MINE critic.
std::vector<GradCheckResult> grad_check_pipeline(const GradCheckOptions& opt = {});

/// Stand-alone suites: compositing, distortion, uncertainty loss, MINE.
std::vector<GradCheckResult> grad_check_components(const GradCheckOptions& opt = {});

}  // namespace msth
