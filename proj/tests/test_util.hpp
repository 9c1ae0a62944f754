#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "ltgan/rng.hpp"
#include "ltgan/tensor.hpp"

namespace ltgan::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = lo + (hi - lo) * rng.uniform();
  return Tensor(std::move(shape), std::move(v));
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline bool max_abs_diff_is_zero(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && max_abs_diff(a.data(), b.data()) == 0.0;
}

}  // namespace ltgan::testing

using ltgan::testing::max_abs_diff_is_zero;
