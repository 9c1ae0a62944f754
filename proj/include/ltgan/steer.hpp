#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ltgan/datasets.hpp"
#include "ltgan/eval.hpp"
#include "ltgan/nn.hpp"
#include "ltgan/rng.hpp"
#include "ltgan/tensor.hpp"

namespace ltgan::steer {

class SteerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Unit vector in latent space plus how it was obtained.
struct Direction {
  std::string id;
  std::string name;
  std::string source;  // "svm" | "transform-fit"
  std::vector<double> vector;
  std::map<std::string, double> metadata;
};

/// Latent codes labeled by an attribute's extremes. Labels are +1 (top) / -1 (bottom).
struct BoundaryDataset {
  std::size_t dim = 0;
  std::vector<double> train_codes;
  std::vector<int> train_labels;
  std::vector<double> eval_codes;
  std::vector<int> eval_labels;
  std::size_t top_k = 0;
  std::size_t bottom_k = 0;
  double min_top_score = 0.0;
  double max_bottom_score = 0.0;
  double null_fraction = 0.0;
  bool null_warning = false;

  std::size_t train_size() const { return train_labels.size(); }
  std::size_t eval_size() const { return eval_labels.size(); }
};

constexpr double kTrainShare = 0.7;

/// Generates n_total samples, scores them with the attribute oracle and keeps
/// the k highest and k lowest (null generations excluded). 70% of each side
/// goes to the training split.
BoundaryDataset collect_attribute_dataset(const nn::Generator& g, data::Attribute attribute, std::size_t n_total,
                                          std::size_t k, Rng& rng, const data::ShapesSpec& spec,
                                          double sigma_z = 1.0);
/// Same split logic over caller-supplied codes and scores.
BoundaryDataset split_extremes(std::span<const double> codes, std::size_t dim, std::span<const double> scores,
                               std::size_t k, Rng& rng);

struct SvmOptions {
  double reg = 1e-3;
  std::size_t epochs = 20;
  std::uint64_t seed = 0;
  // Train accuracy below 0.5 + margin flags non-convergence.
  double margin = 0.05;
};

struct BoundaryFit {
  Direction direction;
  double bias = 0.0;
  double train_accuracy = 0.0;
  double eval_accuracy = 0.0;
  bool converged = true;
};

/// Linear max-margin classifier (hinge + L2, Pegasos subgradient steps with
/// rate 1 / (reg t), suffix-averaged iterate). Returns the unit normal.
BoundaryFit fit_linear_boundary(const BoundaryDataset& data, const SvmOptions& options = {},
                                const std::string& name = "boundary");

/// G(z + alpha v) for each alpha, as (n_alpha, C, H, W).
Tensor latent_traverse(const nn::Generator& g, std::span<const double> z, std::span<const double> direction,
                       std::span<const double> alphas, std::span<const std::size_t> classes = {});

struct CorrelationMatrix {
  std::vector<std::string> names;
  std::vector<double> values;  // k x k, row-major; NaN where undefined
  std::vector<bool> undefined;  // per column: zero variance
  std::size_t samples = 0;
  double at(std::size_t i, std::size_t j) const { return values[i * names.size() + j]; }
};

/// Pearson correlation between columns of an (n, k) row-major table.
CorrelationMatrix pearson_matrix(std::span<const double> table, std::size_t n, std::vector<std::string> names);
/// Correlations among all oracle attributes of n generated samples (n >= 5000).
CorrelationMatrix attribute_correlation(const nn::Generator& g, std::size_t n, const data::ShapesSpec& spec,
                                        double sigma_z, std::uint64_t seed);

using FeatureFn = std::function<Tensor(const Tensor& images)>;
using GeneratorFn = std::function<Tensor(const Tensor& codes)>;

/// Mean over random pairs and t ~ U[0, 1] of |phi(G(lerp(t))) - phi(G(lerp(t + eps)))|^2 / eps^2.
double perceptual_path_length(const GeneratorFn& g, std::size_t latent_dim, const FeatureFn& features,
                              std::size_t n_paths, double eps, double sigma_z, std::uint64_t seed);
double perceptual_path_length(const nn::Generator& g, const eval::ProxyExtractor& extractor, std::size_t n_paths,
                              double eps = 1e-4, double sigma_z = 1.0, std::uint64_t seed = 0);
/// Per-path values at caller-chosen t (used to inspect the t dependence).
std::vector<double> path_length_at(const GeneratorFn& g, const FeatureFn& features, std::span<const double> z1,
                                   std::span<const double> z2, std::span<const double> ts, double eps);

enum class Transform { kIdentity, kBrightness, kHorizontalShift, kVerticalShift, kZoom };
std::string transform_name(Transform t);
Transform parse_transform(const std::string& name);

/// Deterministic image-space edit of model-range images (n, 1, H, W).
/// brightness: intensity * (1 + alpha); shifts: round(alpha) pixels with zero
/// fill; zoom: centre crop-and-resize by 1 + alpha with bilinear sampling.
Tensor apply_transform(const Tensor& images, Transform t, double alpha);

struct TransformOptions {
  std::size_t steps = 200;
  std::size_t batch = 16;
  double lr = 0.05;
  double sigma_z = 1.0;
  std::uint64_t seed = 0;
  std::size_t eval_codes = 64;
};

struct TransformFit {
  Direction direction;
  std::vector<double> raw;  // the optimized w before normalization
  double loss = 0.0;         // at the returned w on the fixed evaluation codes
  double loss_at_zero = 0.0;
  bool degenerate = false;   // |w| ~ 0: no latent direction reproduces the edit
  bool diverged = false;     // a non-finite step occurred; best iterate returned
};

/// Optimizes w to minimize mean over z, alpha of |G(z + alpha w) - edit(G(z), alpha)|^2.
TransformFit learn_transform_direction(const nn::Generator& g, Transform transform, std::span<const double> alphas,
                                       const TransformOptions& options = {});
/// Mean reconstruction loss of w on the evaluation codes of `options`.
double transform_loss(const nn::Generator& g, Transform transform, std::span<const double> alphas,
                      std::span<const double> w, const TransformOptions& options);

// ---- directions file: one JSON object per line ----
std::string encode_direction(const Direction& d);
Direction decode_direction(const std::string& line);
std::vector<Direction> read_directions(const std::string& path);
/// Appends (rewriting atomically); assigns a unique id when `d.id` is empty or taken.
Direction append_direction(const std::string& path, Direction d);

}  // namespace ltgan::steer
