#include "ltgan/eval.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "ltgan/objectives.hpp"
#include "ltgan/optim.hpp"

namespace ltgan::eval {

namespace {

constexpr std::size_t kGenBatch = 256;

Eigen::MatrixXd to_matrix(const Tensor& t, std::size_t cols) {
  const std::size_t rows = t.numel() / cols;
  Eigen::MatrixXd m(rows, cols);
  const auto d = t.data();
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) m(i, j) = d[i * cols + j];
  return m;
}

void check_finite(const Eigen::MatrixXd& m, const char* what) {
  if (!m.allFinite()) throw EvalError(std::string("frechet_distance: non-finite values in ") + what);
}

void check_symmetric(const Eigen::MatrixXd& m, const char* what) {
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-9 * scale) {
    throw EvalError(std::string("frechet_distance: covariance ") + what + " is not symmetric");
  }
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  Eigen::VectorXd ev = es.eigenvalues();
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev(i) < -1e-6) throw EvalError("frechet_distance: covariance has eigenvalue " + std::to_string(ev(i)));
    ev(i) = std::sqrt(std::max(ev(i), 0.0));
  }
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

// Translation-invariant view of a batch: normalized autocorrelation of the
// [0, 1] intensities over lags in [-r, r]^2 (zero padded).
Tensor autocorrelation_features(const Tensor& images, const nn::ImageShape& shape) {
  const std::size_t H = shape.height, W = shape.width, n = images.numel() / shape.numel();
  const std::ptrdiff_t rh = static_cast<std::ptrdiff_t>(H / 2) - 1, rw = static_cast<std::ptrdiff_t>(W / 2) - 1;
  const std::size_t lags = static_cast<std::size_t>((2 * rh + 1) * (2 * rw + 1));
  std::vector<double> out(n * lags * shape.channels);
  std::vector<double> img(H * W);
  const auto src = images.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < shape.channels; ++ch) {
      const std::size_t base = (i * shape.channels + ch) * H * W;
      double energy = 0.0;
      for (std::size_t k = 0; k < H * W; ++k) {
        img[k] = std::clamp(0.5 * (src[base + k] + 1.0), 0.0, 1.0);
        energy += img[k] * img[k];
      }
      double* row = &out[(i * shape.channels + ch) * lags];
      std::size_t l = 0;
      for (std::ptrdiff_t dy = -rh; dy <= rh; ++dy) {
        for (std::ptrdiff_t dx = -rw; dx <= rw; ++dx, ++l) {
          double acc = 0.0;
          for (std::ptrdiff_t y = std::max<std::ptrdiff_t>(0, -dy); y < static_cast<std::ptrdiff_t>(H) - std::max<std::ptrdiff_t>(0, dy); ++y)
            for (std::ptrdiff_t x = std::max<std::ptrdiff_t>(0, -dx); x < static_cast<std::ptrdiff_t>(W) - std::max<std::ptrdiff_t>(0, dx); ++x)
              acc += img[static_cast<std::size_t>(y) * W + static_cast<std::size_t>(x)] *
                     img[static_cast<std::size_t>(y + dy) * W + static_cast<std::size_t>(x + dx)];
          row[l] = energy > 0.0 ? acc / energy : 0.0;
        }
      }
    }
  }
  return Tensor({n, lags * shape.channels}, std::move(out));
}

Tensor codes(std::size_t n, std::size_t d, double sigma, Rng& rng) { return Tensor({n, d}, rng.normal_vector(n * d, sigma)); }

}  // namespace

// ---------------------------------------------------------------------------

ProxyExtractor::ProxyExtractor(std::uint64_t seed, nn::ImageShape image) : image_(image) {
  Rng rng(derive_seed(seed, "proxy-extractor"));
  l1_ = nn::make_dense("fc0", image.numel(), kHidden, rng, 1.0);
  l2_ = nn::make_dense("fc1", kHidden, kFeatures, rng, 1.0);
  // A frozen random bias keeps features from being odd functions of the input.
  for (auto& b : l1_.bias.mutable_data()) b = 0.5 * rng.normal();
}

Tensor ProxyExtractor::features_tensor(const Tensor& images) const {
  const std::size_t n = images.numel() / image_.numel();
  if (n * image_.numel() != images.numel() || images.dim(0) != n) {
    throw ShapeError("proxy extractor: images " + ltgan::to_string(images.shape()) + " do not match " +
                     nn::to_string(image_));
  }
  Tensor x = reshape(images, {n, image_.numel()});
  return nn::dense(tanh(nn::dense(x, l1_.weight, l1_.bias)), l2_.weight, l2_.bias);
}

Eigen::MatrixXd ProxyExtractor::features(const Tensor& images) const {
  return to_matrix(features_tensor(images.detach()), kFeatures);
}

GaussianMoments fit_moments(const Eigen::MatrixXd& rows) {
  if (rows.rows() < 2) throw EvalError("fit_moments: need at least two samples");
  GaussianMoments m;
  m.mean = rows.colwise().mean().transpose();
  const Eigen::MatrixXd centered = rows.rowwise() - m.mean.transpose();
  m.cov = (centered.transpose() * centered) / static_cast<double>(rows.rows() - 1);
  m.cov = 0.5 * (m.cov + m.cov.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m.cov, Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() < 1e-10) {
    m.cov += 1e-6 * Eigen::MatrixXd::Identity(m.cov.rows(), m.cov.cols());
    m.ridge_applied = true;
  }
  return m;
}

double frechet_distance(const GaussianMoments& a, const GaussianMoments& b) {
  if (a.mean.size() != b.mean.size() || a.cov.rows() != b.cov.rows() || a.cov.rows() != a.mean.size() ||
      a.cov.cols() != a.cov.rows() || b.cov.cols() != b.cov.rows()) {
    throw EvalError("frechet_distance: dimension mismatch");
  }
  check_finite(a.mean, "mean 1");
  check_finite(b.mean, "mean 2");
  check_finite(a.cov, "covariance 1");
  check_finite(b.cov, "covariance 2");
  check_symmetric(a.cov, "1");
  check_symmetric(b.cov, "2");
  // (S1 S2)^(1/2) has the same trace as (S1^(1/2) S2 S1^(1/2))^(1/2), which is symmetric.
  const Eigen::MatrixXd r = psd_sqrt(a.cov);
  Eigen::MatrixXd m = r * b.cov * r;
  m = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
  double tr_sqrt = 0.0;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
    const double ev = es.eigenvalues()(i);
    if (ev < -1e-6) throw EvalError("frechet_distance: product has eigenvalue " + std::to_string(ev));
    tr_sqrt += std::sqrt(std::max(ev, 0.0));
  }
  return (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() - 2.0 * tr_sqrt;
}

Tensor generate(const nn::Generator& g, std::size_t n, double sigma_z, Rng& rng, std::vector<std::size_t>* classes) {
  const auto& spec = g.spec();
  std::vector<double> out;
  out.reserve(n * spec.image.numel());
  if (classes) classes->clear();
  for (std::size_t start = 0; start < n; start += kGenBatch) {
    const std::size_t b = std::min(kGenBatch, n - start);
    Tensor z = codes(b, spec.latent_dim, sigma_z, rng);
    std::vector<std::size_t> cls;
    if (spec.conditional()) {
      for (std::size_t i = 0; i < b; ++i) cls.push_back(rng.index(spec.n_classes));
      if (classes) classes->insert(classes->end(), cls.begin(), cls.end());
    }
    Tensor x = g.forward(z, cls);
    out.insert(out.end(), x.data().begin(), x.data().end());
  }
  return Tensor(spec.image.batched(n), std::move(out));
}

FidResult proxy_fid(const Tensor& real, const Tensor& fake, const ProxyExtractor& extractor) {
  const GaussianMoments a = fit_moments(extractor.features(real));
  const GaussianMoments b = fit_moments(extractor.features(fake));
  return {frechet_distance(a, b), a.ridge_applied || b.ridge_applied};
}

FidResult proxy_fid(const data::Dataset& real, const nn::Generator& g, std::size_t n, const ProxyExtractor& extractor,
                    double sigma_z, std::uint64_t seed) {
  if (n < 500) throw EvalError("proxy_fid: need at least 500 samples, got " + std::to_string(n));
  if (n > real.size()) throw EvalError("proxy_fid: dataset has only " + std::to_string(real.size()) + " samples");
  Rng rng(derive_seed(seed, "proxy-fid"));
  return proxy_fid(real.slice(0, n).images, generate(g, n, sigma_z, rng), extractor);
}

ModeCoverage mode_coverage(const Tensor& points, const data::RingSpec& ring, double share) {
  const std::size_t n = points.numel() / 2;
  if (n == 0 || points.numel() != 2 * n) throw ShapeError("mode_coverage: expected 2D points");
  ModeCoverage out;
  out.histogram.assign(ring.n_modes, 0);
  const auto p = points.data();
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < ring.n_modes; ++k) {
      const auto c = ring.mode_center(k);
      const double d = std::hypot(p[2 * i] - c[0], p[2 * i + 1] - c[1]);
      if (d < bd) bd = d, best = k;
    }
    if (bd <= 3.0 * ring.std) ++out.histogram[best];
    else ++out.unassigned;
  }
  const double need = share / static_cast<double>(ring.n_modes) * static_cast<double>(n);
  const std::size_t assigned = n - out.unassigned;
  for (std::size_t h : out.histogram) out.covered += static_cast<double>(h) >= need && h > 0;
  if (assigned == 0) {
    out.kl_to_uniform = std::numeric_limits<double>::infinity();
  } else {
    for (std::size_t h : out.histogram) {
      if (h == 0) continue;
      const double q = static_cast<double>(h) / static_cast<double>(assigned);
      out.kl_to_uniform += q * std::log(q * static_cast<double>(ring.n_modes));
    }
  }
  return out;
}

ModeCoverage mode_coverage(const nn::Generator& g, const data::RingSpec& ring, std::size_t n, double sigma_z,
                           std::uint64_t seed, double share) {
  if (g.spec().image.numel() != 2) throw EvalError("mode_coverage: generator must produce 2D points");
  Rng rng(derive_seed(seed, "mode-coverage"));
  return mode_coverage(generate(g, n, sigma_z, rng), ring, share);
}

std::vector<double> aux_accuracy_sweep(const nn::Generator& g, const nn::Discriminator& d, const nn::AuxNet& a,
                                       std::span<const double> sigmas, std::size_t n_pairs, double sigma_z,
                                       std::uint64_t seed) {
  const auto& spec = g.spec();
  const std::size_t rows = 64, dim = spec.latent_dim;
  std::vector<double> acc;
  for (double sigma : sigmas) {
    if (!(sigma > 0.0)) throw EvalError("aux_accuracy_sweep: perturbation scale must be positive");
    // Same codes and shuffles for every scale; only the perturbations differ.
    Rng z_rng(derive_seed(seed, "sweep-z")), e_rng(derive_seed(seed, "sweep-eps")),
        s_rng(derive_seed(seed, "sweep-shuffle")), c_rng(derive_seed(seed, "sweep-class"));
    std::size_t correct = 0, seen = 0;
    while (seen < n_pairs) {
      const std::size_t n = std::min(rows, 2 * ((n_pairs - seen + 1) / 2));
      obj::LatentBatch batch;
      batch.b = n / 2;
      batch.z = codes(n, dim, sigma_z, z_rng);
      std::vector<double> e = e_rng.normal_vector(2 * dim, 1.0);
      std::vector<double> pattern(n * dim);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < dim; ++j) pattern[i * dim + j] = sigma * e[(i % 2) * dim + j];
      batch.eps_pattern = Tensor({n, dim}, std::move(pattern));
      batch.shuffle = s_rng.permutation(n);
      batch.y_ss = obj::pair_labels(batch.shuffle);
      std::vector<std::size_t> cls;
      if (spec.conditional())
        for (std::size_t i = 0; i < n; ++i) cls.push_back(c_rng.index(spec.n_classes));
      Tensor f = obj::lt_feature_delta(d, g, batch, cls);
      Tensor p = a.forward(f, take_rows(f, batch.shuffle));
      const std::size_t take = std::min(n, n_pairs - seen);
      for (std::size_t i = 0; i < take; ++i) correct += (p.data()[i] >= 0.5) == (batch.y_ss[i] == 1.0);
      seen += take;
    }
    acc.push_back(static_cast<double>(correct) / static_cast<double>(n_pairs));
  }
  return acc;
}

// ---------------------------------------------------------------------------

Classifier::Classifier(std::size_t in, std::size_t hidden, std::size_t classes, Rng& init) : in_(in) {
  l1_ = nn::make_dense("fc0", in, hidden, init);
  l2_ = nn::make_dense("fc1", hidden, classes, init, 1.0);
}

Tensor Classifier::standardize(const Tensor& x) const {
  const std::size_t n = x.numel() / in_;
  std::vector<double> v(x.data().begin(), x.data().end());
  if (!shift_.empty())
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < in_; ++j) v[i * in_ + j] = (v[i * in_ + j] - shift_[j]) * scale_[j];
  return Tensor({n, in_}, std::move(v));
}

Tensor Classifier::logits(const Tensor& x) const {
  return nn::dense(relu(nn::dense(x, l1_.weight, l1_.bias)), l2_.weight, l2_.bias);
}

void Classifier::fit(const Tensor& x, std::span<const std::size_t> labels, std::size_t epochs, std::size_t batch,
                     Rng& rng) {
  const std::size_t n = labels.size();
  if (x.numel() != n * in_) throw ShapeError("classifier: inputs do not match labels");
  if (shift_.empty()) {
    shift_.assign(in_, 0.0);
    scale_.assign(in_, 0.0);
    const auto d = x.data();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < in_; ++j) shift_[j] += d[i * in_ + j] / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < in_; ++j) scale_[j] += std::pow(d[i * in_ + j] - shift_[j], 2) / static_cast<double>(n);
    for (double& s : scale_) s = 1.0 / std::sqrt(s + 1e-8);
  }
  std::vector<Tensor> params = {l1_.weight, l1_.bias, l2_.weight, l2_.bias};
  for (Tensor p : params) p.set_requires_grad(true);
  Adam opt(params, AdamHyper{.lr = 1e-3, .beta1 = 0.9, .beta2 = 0.999});
  Tensor flat = standardize(x.detach());
  const std::size_t classes = l2_.weight.dim(1);
  for (std::size_t e = 0; e < epochs; ++e) {
    const auto order = rng.permutation(n);
    for (std::size_t s = 0; s < n; s += batch) {
      const std::size_t m = std::min(batch, n - s);
      std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(s),
                                    order.begin() + static_cast<std::ptrdiff_t>(s + m));
      std::vector<std::size_t> pick(m);
      for (std::size_t i = 0; i < m; ++i) pick[i] = i * classes + labels[rows[i]];
      Tape tape;
      TapeScope scope(tape);
      Tensor lp = log_softmax(logits(take_rows(flat, rows)));
      Tensor loss = neg(mean(gather(lp, pick, {m})));
      opt.zero_grad();
      tape.backward(loss);
      opt.step();
    }
  }
  for (Tensor p : params) p.set_requires_grad(false);
}

std::vector<std::size_t> Classifier::predict(const Tensor& x) const {
  Tensor l = logits(standardize(x.detach()));
  const std::size_t n = l.dim(0), k = l.dim(1);
  std::vector<std::size_t> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j)
      if (l.data()[i * k + j] > l.data()[i * k + best]) best = j;
    out[i] = best;
  }
  return out;
}

double Classifier::accuracy(const Tensor& x, std::span<const std::size_t> labels) const {
  const auto pred = predict(x);
  if (pred.size() != labels.size()) throw ShapeError("classifier: inputs do not match labels");
  std::size_t ok = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) ok += pred[i] == labels[i];
  return static_cast<double>(ok) / static_cast<double>(pred.size());
}

double cas_toy(const nn::Generator& g, const data::Dataset& test, const CasOptions& options) {
  if (!g.spec().conditional()) throw EvalError("cas_toy: needs a class-conditional generator");
  Rng rng(derive_seed(options.seed, "cas"));
  std::vector<std::size_t> labels;
  Tensor x = generate(g, options.n_train, options.sigma_z, rng, &labels);
  Rng init(derive_seed(options.seed, "cas-init"));
  Tensor feats = autocorrelation_features(x, g.spec().image);
  Classifier clf(feats.dim(1), 64, g.spec().n_classes, init);
  clf.fit(feats, labels, options.epochs, options.batch, rng);
  data::Batch all = test.slice(0, test.size());
  return clf.accuracy(autocorrelation_features(all.images, test.shape()), all.labels);
}

double cas_real_reference(const data::Dataset& train, const data::Dataset& test, const CasOptions& options) {
  Rng rng(derive_seed(options.seed, "cas"));
  data::Batch tr = train.slice(0, std::min(options.n_train, train.size()));
  Rng init(derive_seed(options.seed, "cas-init"));
  Tensor feats = autocorrelation_features(tr.images, train.shape());
  Classifier clf(feats.dim(1), 64, train.n_classes(), init);
  clf.fit(feats, tr.labels, options.epochs, options.batch, rng);
  data::Batch all = test.slice(0, test.size());
  return clf.accuracy(autocorrelation_features(all.images, test.shape()), all.labels);
}

}  // namespace ltgan::eval
