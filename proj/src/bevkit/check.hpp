#pragma once

#include <functional>
#include <string>
#include <vector>

namespace bevkit {

// One property suite: a family of cases compared against an independent
// oracle or an invariant.
struct SuiteResult {
  std::string name;
  std::string invariant;
  int criterion = 0;  // acceptance criterion number, 0 when none
  std::size_t cases = 0;
  std::size_t failures = 0;
  double seconds = 0.0;
  double time_limit = 0.0;  // seconds, 0 when unbounded
  std::string detail;       // measured values, first failure

  bool within_time() const { return time_limit <= 0.0 || seconds < time_limit; }
  bool passed() const { return failures == 0 && within_time(); }
};

struct CheckOptions {
  // Routes odd depth bins to the wrong cell inside the ray scatter.
  bool sabotage_ray_scatter = false;
  // Runs only suites whose name starts with one of these prefixes.
  std::vector<std::string> only;
};

std::vector<std::string> check_suite_names();

// Runs the suites in a fixed order; `on_result` sees each result as soon as
// it is available.
std::vector<SuiteResult> run_checks(const CheckOptions& opt,
                                    const std::function<void(const SuiteResult&)>& on_result = {});

}  // namespace bevkit
