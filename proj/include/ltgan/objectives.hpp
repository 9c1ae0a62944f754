#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "ltgan/nn.hpp"
#include "ltgan/rng.hpp"
#include "ltgan/tensor.hpp"

namespace ltgan::obj {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class LossFamily { kHinge, kNonSaturating };

constexpr double kProbFloor = 1e-12;

// ---- adversarial losses over raw logits ----
Tensor hinge_d_loss(const Tensor& d_real, const Tensor& d_fake);
Tensor hinge_g_loss(const Tensor& d_fake);

struct NonSatLosses {
  Tensor d_loss;
  Tensor g_loss;
  std::size_t clamped = 0;  // probabilities that hit the log floor
};
NonSatLosses nonsat_losses(const Tensor& d_real, const Tensor& d_fake);

Tensor d_loss(LossFamily family, const Tensor& d_real, const Tensor& d_fake);
Tensor g_loss(LossFamily family, const Tensor& d_fake);

// ---- LT pairing ----
/// 2b codes, the two perturbations repeated as [e1, e2, e1, e2, ...], a
/// shuffle of the 2b rows and the resulting same-perturbation labels.
struct LatentBatch {
  std::size_t b = 0;
  Tensor z;                         // (2b, d)
  Tensor eps;                       // (2, d): the two distinct perturbations
  Tensor eps_pattern;               // (2b, d)
  std::vector<std::size_t> shuffle;  // bijection on [0, 2b)
  std::vector<double> y_ss;          // (2b,)

  static std::size_t eps_id(std::size_t row) { return row % 2; }
  Tensor z_plus_eps() const { return add(z, eps_pattern); }
};

/// y[i] = 1 iff rows i and shuffle[i] carry the same perturbation index.
std::vector<double> pair_labels(std::span<const std::size_t> shuffle);
bool is_permutation(std::span<const std::size_t> p);

/// Separate generators for codes, perturbations and the shuffle, so each role
/// can come from its own stream.
LatentBatch make_latent_batch(std::size_t b, std::size_t d, double sigma_z, double sigma_eps, Rng& z_rng,
                              Rng& eps_rng, Rng& shuffle_rng);
LatentBatch make_latent_batch(std::size_t b, std::size_t d, double sigma_z, double sigma_eps, Rng& rng);

/// f[i] = E(G(z_i)) - E(G(z_i + eps_i)). D/E parameters should be frozen by
/// the caller; gradients still reach G through the images.
Tensor lt_feature_delta(const nn::Discriminator& d, const nn::Generator& g, const LatentBatch& batch,
                        std::span<const std::size_t> classes = {});

/// Mean binary cross-entropy with probabilities clamped to [floor, 1 - floor].
Tensor bce(const Tensor& prob, std::span<const double> labels);
Tensor lt_loss(const nn::AuxNet& a, const Tensor& f, std::span<const std::size_t> shuffle,
               std::span<const double> y_ss);

struct LossReport {
  std::optional<double> l_d;
  std::optional<double> l_g_adv;
  std::optional<double> l_a;
  std::optional<double> total_g;
  std::optional<double> l_rot;
  std::optional<double> aux_accuracy;
};

struct ObjectiveTerms {
  Tensor l_g_adv;
  Tensor l_a;
  // Loss to backpropagate for the simultaneous G/A update: G receives
  // dL_G_adv + lambda dL_A, A receives dL_A alone.
  Tensor update_loss;
  // The literal L_G_adv + lambda L_A. Equal in value to the reported total.
  Tensor total_g;
  Tensor aux_prob;  // (2b, 1)
  double aux_accuracy = 0.0;
  LossReport report;
};

struct ObjectiveOptions {
  double lambda = 1.0;
  LossFamily family = LossFamily::kHinge;
  // Backpropagate the literal total (A then receives lambda dL_A).
  bool literal_total = false;
};

/// The G/A objective: one forward of G over [z; z + eps] and of D over both
/// image sets. D must be frozen by the caller.
ObjectiveTerms ltgan_objective(const nn::Generator& g, const nn::Discriminator& d, const nn::AuxNet& a,
                               const LatentBatch& batch, const ObjectiveOptions& options,
                               std::span<const std::size_t> classes = {});

// ---- rotation self-supervision baseline ----
/// Rotates each square image counter-clockwise by ks[i] * 90 degrees.
Tensor rotate_images(const Tensor& images, std::span<const std::size_t> ks);
std::vector<std::size_t> sample_rotations(std::size_t n, Rng& rng);
/// 4-way cross-entropy of D's rotation head on rotated images.
Tensor rotation_ss_loss(const nn::Discriminator& d, const Tensor& images, std::span<const std::size_t> ks,
                        std::span<const std::size_t> classes = {});
Tensor rotation_ss_loss(const nn::Discriminator& d, const Tensor& images, Rng& rng,
                        std::span<const std::size_t> classes = {});

}  // namespace ltgan::obj
