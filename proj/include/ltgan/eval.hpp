#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "ltgan/datasets.hpp"
#include "ltgan/nn.hpp"
#include "ltgan/rng.hpp"
#include "ltgan/tensor.hpp"

namespace ltgan::eval {

class EvalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Frozen random dense network image -> 32 features. Never trained; only
/// comparisons under one extractor seed are meaningful.
class ProxyExtractor {
 public:
  static constexpr std::size_t kFeatures = 32;
  static constexpr std::size_t kHidden = 128;

  ProxyExtractor(std::uint64_t seed, nn::ImageShape image);
  // (n, C, H, W) or (n, C*H*W) images -> (n, 32) features.
  Eigen::MatrixXd features(const Tensor& images) const;
  // Differentiable variant for path-length style measurements.
  Tensor features_tensor(const Tensor& images) const;
  const nn::ImageShape& image() const { return image_; }

 private:
  nn::ImageShape image_;
  nn::DenseLayer l1_, l2_;
};

struct GaussianMoments {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  bool ridge_applied = false;
};

/// Sample mean and (n-1)-normalized covariance of the rows; adds a 1e-6 ridge
/// (and flags it) when the covariance is numerically singular.
GaussianMoments fit_moments(const Eigen::MatrixXd& rows);

/// ||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^(1/2)).
double frechet_distance(const GaussianMoments& a, const GaussianMoments& b);

/// Draws n images from G with codes ~ N(0, sigma_z^2 I) (uniform classes when
/// conditional), in batches, without recording a tape.
Tensor generate(const nn::Generator& g, std::size_t n, double sigma_z, Rng& rng, std::vector<std::size_t>* classes = nullptr);

struct FidResult {
  double value = 0.0;
  bool ridge_applied = false;
};

FidResult proxy_fid(const Tensor& real, const Tensor& fake, const ProxyExtractor& extractor);
/// Real set = the first n samples of the dataset (storage order); fakes from
/// a seeded stream, so the number is a pure function of (G, data, seeds).
FidResult proxy_fid(const data::Dataset& real, const nn::Generator& g, std::size_t n, const ProxyExtractor& extractor,
                    double sigma_z, std::uint64_t seed);

struct ModeCoverage {
  std::size_t covered = 0;
  double kl_to_uniform = 0.0;
  std::vector<std::size_t> histogram;
  std::size_t unassigned = 0;  // farther than 3 std from every mode
};

ModeCoverage mode_coverage(const Tensor& points, const data::RingSpec& ring, double share = 0.2);
ModeCoverage mode_coverage(const nn::Generator& g, const data::RingSpec& ring, std::size_t n, double sigma_z,
                           std::uint64_t seed, double share = 0.2);

/// Accuracy at threshold 0.5 of A on fresh LT pairs at each perturbation
/// scale (any positive scale; the pairing is the training construction).
std::vector<double> aux_accuracy_sweep(const nn::Generator& g, const nn::Discriminator& d, const nn::AuxNet& a,
                                       std::span<const double> sigmas, std::size_t n_pairs, double sigma_z,
                                       std::uint64_t seed);

/// Small dense classifier used by the CAS metric. Inputs are standardized
/// with statistics from the first fit.
class Classifier {
 public:
  Classifier(std::size_t in, std::size_t hidden, std::size_t classes, Rng& init);
  void fit(const Tensor& x, std::span<const std::size_t> labels, std::size_t epochs, std::size_t batch, Rng& rng);
  double accuracy(const Tensor& x, std::span<const std::size_t> labels) const;
  std::vector<std::size_t> predict(const Tensor& x) const;

 private:
  Tensor logits(const Tensor& x) const;
  Tensor standardize(const Tensor& x) const;
  std::size_t in_;
  std::vector<double> shift_, scale_;
  nn::DenseLayer l1_, l2_;
};

struct CasOptions {
  std::size_t n_train = 4000;
  std::size_t epochs = 10;
  std::size_t batch = 64;
  double sigma_z = 1.0;
  std::uint64_t seed = 0;
};

/// Trains on generated (image, class) pairs and reports accuracy on the held
/// out real set. Rejects unconditional generators.
double cas_toy(const nn::Generator& g, const data::Dataset& test, const CasOptions& options);
/// Upper reference: the same classifier trained on real data.
double cas_real_reference(const data::Dataset& train, const data::Dataset& test, const CasOptions& options);

}  // namespace ltgan::eval
