#pragma once

#include <string>
#include <vector>

#include "drst/tensor.hpp"

namespace drst {

struct GradCase {
  std::string name;
  double max_rel_err = 0.0;
};

// Central finite-difference checks of the analytic backward pass. Inputs are
// drawn from the seed; inputs that would sit on a pooling or top-k selection
// boundary are constructed with safe margins instead of rejected.
std::vector<GradCase> gradcheck_primitives(unsigned long long seed);

// module: one of dsn, rcm, dtn, capf. Differentiates through the whole module
// with respect to its input features.
std::vector<GradCase> gradcheck_module(const std::string& module, unsigned long long seed);

// Primitives plus all four composite modules.
std::vector<GradCase> gradcheck_all(unsigned long long seed);

}  // namespace drst
