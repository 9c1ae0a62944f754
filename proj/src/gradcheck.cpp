#include "ltgan/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace ltgan {

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& point,
                           const GradCheckOptions& options) {
  Tensor x = point.clone();
  x.set_requires_grad(true);
  return grad_check_leaves([&] { return f(x); }, {x}, options);
}

GradCheckReport grad_check_leaves(const std::function<Tensor()>& f, std::vector<Tensor> leaves,
                                  const GradCheckOptions& options) {
  if (!(options.step > 0.0)) throw std::invalid_argument("grad_check: step must be positive");
  GradCheckReport report;

  std::vector<bool> saved_flags;
  for (auto& leaf : leaves) {
    saved_flags.push_back(leaf.requires_grad());
    leaf.set_requires_grad(true);
    leaf.zero_grad();
  }
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = f();
    tape.backward(loss);
  }
  for (const auto& leaf : leaves) {
    const auto g = leaf.grad();
    report.analytic.insert(report.analytic.end(), g.begin(), g.end());
  }

  auto eval = [&]() { return f().item(); };
  std::size_t flat = 0;
  for (auto& leaf : leaves) {
    auto values = leaf.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i, ++flat) {
      const double original = values[i];
      values[i] = original + options.step;
      const double up = eval();
      values[i] = original - options.step;
      const double down = eval();
      values[i] = original;
      const double numeric = (up - down) / (2.0 * options.step);
      report.numeric.push_back(numeric);
      const double analytic = report.analytic[flat];
      if (!std::isfinite(numeric) || !std::isfinite(analytic)) {
        report.finite = false;
        report.worst_index = flat;
        report.failure = "non-finite gradient at coordinate " + std::to_string(flat);
        report.max_rel_error = INFINITY;
        continue;
      }
      const double denom = std::max({std::abs(analytic), std::abs(numeric), options.floor});
      const double rel = std::abs(analytic - numeric) / denom;
      if (report.finite && rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_index = flat;
      }
    }
  }
  for (std::size_t k = 0; k < leaves.size(); ++k) {
    leaves[k].zero_grad();
    leaves[k].set_requires_grad(saved_flags[k]);
  }
  report.passed = report.finite && report.max_rel_error < options.tolerance;
  return report;
}

}  // namespace ltgan
