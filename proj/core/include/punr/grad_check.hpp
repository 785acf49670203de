#pragma once

#include <functional>
#include <string>
#include <vector>

#include "punr/tensor.hpp"

namespace punr {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_tensor;
  std::size_t worst_index = 0;
  std::size_t elements_checked = 0;
  bool passed = true;
};

// Compares backward() against central differences (f(x+h) - f(x-h)) / 2h on
// every element of `inputs`. Relative error per element is
// |a - n| / max(|a|, |n|, 1e-8). `fn` must rebuild the graph on every call.
GradCheckResult grad_check(const std::function<Tensor()>& fn, std::vector<Tensor> inputs,
                           double h, double tol);

}  // namespace punr
