// Finite-difference checks of every analytic gradient in the library.
#pragma once

#include "dips/policy/topk.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace dips::diag {

struct GradcheckOptions {
  std::uint64_t seed = 0;
  int trials = 5;
  // Replaces the top-k backward rule in the checks that use it.
  policy::TopKVjp topk_vjp;
};

struct GradCheck {
  std::string name;
  double tolerance = 1e-4;
  // Largest relative error observed.
  std::function<double(const GradcheckOptions&)> run;
};

struct CheckResult {
  std::string name;
  double error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
  std::string message;  // exception text when the check itself failed
};

const std::vector<GradCheck>& gradcheck_registry();

std::vector<CheckResult> run_gradchecks(const GradcheckOptions& options = {});

}  // namespace dips::diag
