#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "ltgan/tensor.hpp"

namespace ltgan {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  bool passed = false;
  bool finite = true;
  std::string failure;  // set when a non-finite value was hit
  std::vector<double> analytic;
  std::vector<double> numeric;
};

struct GradCheckOptions {
  double step = 1e-6;
  double tolerance = 1e-4;
  // Denominator floor of the relative error, so coordinates whose true
  // gradient is zero are compared absolutely at this scale.
  double floor = 1e-6;
};

/// Compares the tape gradient of scalar `f` at `point` against central
/// finite differences, coordinate by coordinate.
GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& point,
                           const GradCheckOptions& options = {});

/// Same comparison over an arbitrary set of leaves (e.g. network parameters).
/// `f` is re-evaluated after each perturbation of a leaf's data in place.
GradCheckReport grad_check_leaves(const std::function<Tensor()>& f, std::vector<Tensor> leaves,
                                  const GradCheckOptions& options = {});

}  // namespace ltgan
