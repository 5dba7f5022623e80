#pragma once

#include <string>
#include <vector>

namespace mvct {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

// Fast structural self-checks (a few seconds): analytic-vs-numeric gradients
// on a toy model, attention-map invariants, loss locality, and bitwise
// determinism of a short training run.
std::vector<CheckResult> run_self_checks();

}  // namespace mvct
