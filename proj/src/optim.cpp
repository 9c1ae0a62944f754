#include "ltgan/optim.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace ltgan {

double round_fp32(double x) { return static_cast<double>(static_cast<float>(x)); }

void round_fp32(std::span<double> values) {
  for (double& v : values) v = round_fp32(v);
}

void adam_update(std::span<Tensor> params, std::span<const std::vector<double>> grads, AdamState& state) {
  if (params.size() != grads.size()) throw std::invalid_argument("adam_update: params/grads count mismatch");
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.numel(), 0.0);
      state.v.emplace_back(p.numel(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw std::invalid_argument("adam_update: state/params count mismatch");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (grads[k].size() != params[k].numel() || state.m[k].size() != params[k].numel()) {
      throw ShapeError("adam_update: parameter " + std::to_string(k) + " has " +
                       std::to_string(params[k].numel()) + " values but gradient has " +
                       std::to_string(grads[k].size()));
    }
  }
  const AdamHyper& h = state.hyper;
  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double c1 = 1.0 - std::pow(h.beta1, t);
  const double c2 = 1.0 - std::pow(h.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto p = params[k].mutable_data();
    auto& m = state.m[k];
    auto& v = state.v[k];
    const auto& g = grads[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g[i];
      v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g[i] * g[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      p[i] -= h.lr * mhat / (std::sqrt(vhat) + h.eps);
    }
    if (state.fp32_storage) {
      round_fp32(p);
      round_fp32(m);
      round_fp32(v);
    }
  }
}

Adam::Adam(std::vector<Tensor> params, AdamHyper hyper, bool fp32_storage) : params_(std::move(params)) {
  state_.hyper = hyper;
  state_.fp32_storage = fp32_storage;
}

void Adam::step() {
  std::vector<std::vector<double>> grads;
  grads.reserve(params_.size());
  for (const auto& p : params_) grads.push_back(p.grad());
  adam_update(params_, grads, state_);
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

}  // namespace ltgan
