#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ltgan/rng.hpp"
#include "ltgan/tensor.hpp"

namespace ltgan::nn {

class SpecError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ImageShape {
  std::size_t channels = 1;
  std::size_t height = 16;
  std::size_t width = 16;

  std::size_t numel() const { return channels * height * width; }
  Shape batched(std::size_t batch) const { return {batch, channels, height, width}; }
  bool operator==(const ImageShape&) const = default;
};

std::string to_string(const ImageShape& s);
ImageShape parse_image_shape(const std::string& text);  // "CxHxW"

/// Dense-layer architecture for G, D (with feature tap E) and the auxiliary net.
struct NetworkSpec {
  std::size_t latent_dim = 64;
  ImageShape image{1, 16, 16};
  std::vector<std::size_t> g_hidden{256};
  std::vector<std::size_t> d_hidden{256, 64};
  // Which hidden layer of D yields E's features; never the logit.
  std::size_t tap_index = 1;
  // The tap activations are viewed as this C x H x W block before pooling.
  ImageShape tap_shape{4, 4, 4};
  std::size_t pool = 2;
  std::size_t n_classes = 0;  // 0 = unconditional
  std::size_t embed_dim = 8;
  double leaky_slope = 0.2;
  bool rotation_head = false;

  void validate() const;
  bool conditional() const { return n_classes > 0; }
  ImageShape pooled_tap() const;
  std::size_t feature_width() const { return pooled_tap().numel(); }
  std::size_t aux_hidden() const { return tap_shape.channels; }

  static NetworkSpec shapes_default();
  static NetworkSpec ring_default();
};

/// y = x W + b with W stored as (in, out).
struct DenseLayer {
  std::string name;
  Tensor weight;
  Tensor bias;
};

DenseLayer make_dense(std::string name, std::size_t in, std::size_t out, Rng& rng, double gain = 2.0);
Tensor dense(const Tensor& x, const Tensor& weight, const Tensor& bias);

struct SpectralNormState {
  Tensor u;  // left singular estimate, (in,)
  Tensor v;  // right singular estimate, (out,)
  double sigma = 1.0;
};

SpectralNormState make_spectral_state(const Tensor& weight, Rng& rng);
/// One power-iteration step; returns the updated estimate sigma = u^T W v.
double power_iteration(const Tensor& weight, SpectralNormState& state);
/// W / sigma using the current u, v (no iteration). Differentiable in W.
Tensor apply_spectral_norm(const Tensor& weight, const SpectralNormState& state);
/// One power-iteration step followed by W / sigma.
Tensor spectral_normalize(const Tensor& weight, SpectralNormState& state);

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

/// Concatenates the learned class embedding rows to `x`. Identity when the
/// table is undefined (unconditional).
Tensor conditional_embed(const Tensor& x, std::span<const std::size_t> classes, const Tensor& table);

class Generator {
 public:
  Generator(const NetworkSpec& spec, Rng& init);
  Generator(Generator&&) = default;
  Generator& operator=(Generator&&) = default;
  Generator(const Generator&) = delete;
  Generator& operator=(const Generator&) = delete;

  // (b, d) codes -> (b, C, H, W) images in [-1, 1].
  Tensor forward(const Tensor& z, std::span<const std::size_t> classes = {}) const;
  Generator clone() const;

  const NetworkSpec& spec() const { return spec_; }
  std::vector<Tensor> parameters() const;
  NamedTensors named_tensors() const;
  void set_trainable(bool trainable);

 private:
  Generator() = default;
  NetworkSpec spec_;
  std::vector<DenseLayer> layers_;
  Tensor embedding_;
};

struct DiscriminatorOutput {
  Tensor logits;           // (b, 1)
  Tensor tap;              // raw activations at the tap layer
  Tensor features;         // pooled + flattened tap, (b, F)
  Tensor rotation_logits;  // (b, 4) when requested
};

class Discriminator {
 public:
  Discriminator(const NetworkSpec& spec, Rng& init, std::size_t initial_power_iterations = 100);
  Discriminator(Discriminator&&) = default;
  Discriminator& operator=(Discriminator&&) = default;
  Discriminator(const Discriminator&) = delete;
  Discriminator& operator=(const Discriminator&) = delete;

  DiscriminatorOutput forward(const Tensor& images, std::span<const std::size_t> classes = {},
                              bool with_rotation = false) const;
  // The encoder E: the prefix of D up to the tap, pooled and flattened.
  Tensor features(const Tensor& images) const;
  // Advances every layer's spectral-norm estimate by one power iteration.
  void power_iterate();
  Discriminator clone() const;

  const NetworkSpec& spec() const { return spec_; }
  std::vector<Tensor> parameters() const;
  // Parameters plus spectral-norm vectors (as persisted in checkpoints).
  NamedTensors named_tensors() const;
  const std::vector<SpectralNormState>& spectral_states() const { return sn_; }
  // Normalized weight matrices as currently used in the forward pass.
  std::vector<Tensor> normalized_weights() const;
  void set_trainable(bool trainable);

 private:
  Discriminator() = default;
  Tensor layer(std::size_t i, const Tensor& x) const;
  Tensor pool_tap(const Tensor& tap) const;

  NetworkSpec spec_;
  std::vector<DenseLayer> layers_;  // hidden layers, then the logit layer
  std::vector<SpectralNormState> sn_;
  DenseLayer rotation_;
  SpectralNormState rotation_sn_;
  Tensor embedding_;
};

/// Two-layer classifier over concatenated feature deltas: 2F -> C (ReLU) -> 1 (sigmoid).
class AuxNet {
 public:
  AuxNet(std::size_t feature_width, std::size_t hidden, Rng& init);
  AuxNet(AuxNet&&) = default;
  AuxNet& operator=(AuxNet&&) = default;
  AuxNet(const AuxNet&) = delete;
  AuxNet& operator=(const AuxNet&) = delete;

  // Probability (n, 1) that f1 and f2 came from the same perturbation.
  Tensor forward(const Tensor& f1, const Tensor& f2) const;
  AuxNet clone() const;

  std::size_t feature_width() const { return feature_width_; }
  std::size_t hidden() const { return hidden_; }
  std::size_t parameter_count() const;
  std::vector<Tensor> parameters() const;
  NamedTensors named_tensors() const;
  void set_trainable(bool trainable);
  DenseLayer& output_layer() { return out_; }

 private:
  AuxNet() = default;
  std::size_t feature_width_ = 0;
  std::size_t hidden_ = 0;
  DenseLayer in_;
  DenseLayer out_;
};

// Copies values of `src` into same-named tensors of `dst`; throws on any mismatch.
void assign_tensors(const NamedTensors& dst, const NamedTensors& src);

}  // namespace ltgan::nn
