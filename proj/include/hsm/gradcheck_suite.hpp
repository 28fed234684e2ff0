#pragma once

#include <string>
#include <vector>

namespace hsm {

struct GradCheckEntry {
  std::string name;       // e.g. "op/layer_norm", "mixer/fusion", "model/scalar_ab"
  double max_rel_error = 0.0;
  std::string worst_parameter;
  long long worst_index = -1;
  long long checked = 0;
  bool pass = false;
};

struct GradCheckSuiteOptions {
  double tolerance = 1e-4;
  // Routes every checked function through an op whose backward is off by 1%.
  bool inject_fault = false;
};

// Target names accepted by run_gradcheck: "all", "ops", "mixers", "models",
// a mixer kind (checks the mixer and the micro-model built from it) or a
// full entry name.
std::vector<std::string> gradcheck_entry_names();

// Central differences at 64-bit against the tape gradients. Every input and
// parameter element is perturbed; parameters are re-drawn at unit-ish scale
// first so nonlinearities are exercised away from their linear regime.
std::vector<GradCheckEntry> run_gradcheck(const std::string& target, const GradCheckSuiteOptions& opt = {});

}  // namespace hsm
