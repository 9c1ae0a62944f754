#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ltgan/tensor.hpp"

namespace ltgan {

struct AdamHyper {
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamHyper hyper;
  std::uint64_t t = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  // Round parameters and moments to binary32 after every update, so the
  // persisted 32-bit checkpoint captures the optimizer exactly.
  bool fp32_storage = false;
};

/// One bias-corrected Adam step over `params` using `grads` (one gradient per
/// parameter, same length). Moments are allocated lazily on the first call.
void adam_update(std::span<Tensor> params, std::span<const std::vector<double>> grads, AdamState& state);

class Adam {
 public:
  Adam() = default;
  Adam(std::vector<Tensor> params, AdamHyper hyper, bool fp32_storage = false);

  // Applies one update using each parameter's accumulated gradient.
  void step();
  void zero_grad();

  AdamState& state() { return state_; }
  const AdamState& state() const { return state_; }
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  AdamState state_;
};

double round_fp32(double x);
void round_fp32(std::span<double> values);

}  // namespace ltgan
