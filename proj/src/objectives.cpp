#include "ltgan/objectives.hpp"

#include <cmath>
#include <string>

namespace ltgan::obj {

namespace {

void require_nonempty(const Tensor& t, const char* what) {
  if (!t.defined() || t.numel() == 0) throw std::invalid_argument(std::string(what) + ": empty batch");
}

Tensor log_prob(const Tensor& p) { return log(clamp(p, kProbFloor, 1.0)); }

std::size_t count_below(const Tensor& p) {
  std::size_t n = 0;
  for (double v : p.data()) n += v < kProbFloor;
  return n;
}

std::vector<std::size_t> doubled(std::span<const std::size_t> classes) {
  std::vector<std::size_t> out(classes.begin(), classes.end());
  out.insert(out.end(), classes.begin(), classes.end());
  return out;
}

}  // namespace

Tensor hinge_d_loss(const Tensor& d_real, const Tensor& d_fake) {
  require_nonempty(d_real, "hinge_d_loss");
  require_nonempty(d_fake, "hinge_d_loss");
  return add(mean(relu(add_scalar(neg(d_real), 1.0))), mean(relu(add_scalar(d_fake, 1.0))));
}

Tensor hinge_g_loss(const Tensor& d_fake) {
  require_nonempty(d_fake, "hinge_g_loss");
  return neg(mean(d_fake));
}

NonSatLosses nonsat_losses(const Tensor& d_real, const Tensor& d_fake) {
  require_nonempty(d_real, "nonsat_losses");
  require_nonempty(d_fake, "nonsat_losses");
  Tensor p_real = sigmoid(d_real);
  Tensor q_fake = sigmoid(neg(d_fake));  // 1 - sigmoid(d_fake)
  Tensor p_fake = sigmoid(d_fake);
  NonSatLosses out;
  out.d_loss = neg(add(mean(log_prob(p_real)), mean(log_prob(q_fake))));
  out.g_loss = neg(mean(log_prob(p_fake)));
  out.clamped = count_below(p_real) + count_below(q_fake) + count_below(p_fake);
  return out;
}

Tensor d_loss(LossFamily family, const Tensor& d_real, const Tensor& d_fake) {
  if (family == LossFamily::kHinge) return hinge_d_loss(d_real, d_fake);
  require_nonempty(d_real, "nonsat_d_loss");
  require_nonempty(d_fake, "nonsat_d_loss");
  return neg(add(mean(log_prob(sigmoid(d_real))), mean(log_prob(sigmoid(neg(d_fake))))));
}

Tensor g_loss(LossFamily family, const Tensor& d_fake) {
  if (family == LossFamily::kHinge) return hinge_g_loss(d_fake);
  require_nonempty(d_fake, "nonsat_g_loss");
  return neg(mean(log_prob(sigmoid(d_fake))));
}

std::vector<double> pair_labels(std::span<const std::size_t> shuffle) {
  std::vector<double> y(shuffle.size());
  for (std::size_t i = 0; i < shuffle.size(); ++i) {
    y[i] = LatentBatch::eps_id(i) == LatentBatch::eps_id(shuffle[i]) ? 1.0 : 0.0;
  }
  return y;
}

bool is_permutation(std::span<const std::size_t> p) {
  std::vector<bool> seen(p.size(), false);
  for (std::size_t v : p) {
    if (v >= p.size() || seen[v]) return false;
    seen[v] = true;
  }
  return true;
}

LatentBatch make_latent_batch(std::size_t b, std::size_t d, double sigma_z, double sigma_eps, Rng& z_rng,
                              Rng& eps_rng, Rng& shuffle_rng) {
  if (b == 0 || d == 0) throw ConfigError("make_latent_batch: b and d must be positive");
  if (!(sigma_eps < sigma_z)) {
    throw ConfigError("sigma_eps (" + std::to_string(sigma_eps) + ") must be below sigma_z (" +
                      std::to_string(sigma_z) + ")");
  }
  if (!(sigma_eps > 0.0)) throw ConfigError("sigma_eps must be positive");
  LatentBatch batch;
  batch.b = b;
  const std::size_t n = 2 * b;
  batch.z = Tensor({n, d}, z_rng.normal_vector(n * d, sigma_z));
  std::vector<double> e = eps_rng.normal_vector(2 * d, sigma_eps);
  while (std::equal(e.begin(), e.begin() + d, e.begin() + d)) e = eps_rng.normal_vector(2 * d, sigma_eps);
  std::vector<double> pattern(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(e.begin() + LatentBatch::eps_id(i) * d, d, pattern.begin() + i * d);
  }
  batch.eps = Tensor({2, d}, std::move(e));
  batch.eps_pattern = Tensor({n, d}, std::move(pattern));
  batch.shuffle = shuffle_rng.permutation(n);
  batch.y_ss = pair_labels(batch.shuffle);
  return batch;
}

LatentBatch make_latent_batch(std::size_t b, std::size_t d, double sigma_z, double sigma_eps, Rng& rng) {
  return make_latent_batch(b, d, sigma_z, sigma_eps, rng, rng, rng);
}

Tensor lt_feature_delta(const nn::Discriminator& d, const nn::Generator& g, const LatentBatch& batch,
                        std::span<const std::size_t> classes) {
  if (batch.z.dim(1) != g.spec().latent_dim || g.spec().image != d.spec().image) {
    throw ShapeError("lt_feature_delta: latent batch " + ltgan::to_string(batch.z.shape()) +
                     " does not match the networks");
  }
  return sub(d.features(g.forward(batch.z, classes)), d.features(g.forward(batch.z_plus_eps(), classes)));
}

Tensor bce(const Tensor& prob, std::span<const double> labels) {
  if (prob.numel() != labels.size() || labels.empty()) {
    throw ShapeError("bce: " + std::to_string(labels.size()) + " labels for probabilities " +
                     ltgan::to_string(prob.shape()));
  }
  const Shape shape = prob.shape();
  Tensor y(shape, std::vector<double>(labels.begin(), labels.end()));
  Tensor not_y = add_scalar(neg(y), 1.0);
  Tensor p = clamp(prob, kProbFloor, 1.0 - kProbFloor);
  Tensor ll = add(mul(y, log(p)), mul(not_y, log(add_scalar(neg(p), 1.0))));
  return neg(mean(ll));
}

Tensor lt_loss(const nn::AuxNet& a, const Tensor& f, std::span<const std::size_t> shuffle,
               std::span<const double> y_ss) {
  if (f.rank() != 2 || f.dim(0) != shuffle.size() || shuffle.size() != y_ss.size()) {
    throw ShapeError("lt_loss: features " + ltgan::to_string(f.shape()) + " with " + std::to_string(shuffle.size()) +
                     " shuffle entries and " + std::to_string(y_ss.size()) + " labels");
  }
  return bce(a.forward(f, take_rows(f, shuffle)), y_ss);
}

ObjectiveTerms ltgan_objective(const nn::Generator& g, const nn::Discriminator& d, const nn::AuxNet& a,
                               const LatentBatch& batch, const ObjectiveOptions& options,
                               std::span<const std::size_t> classes) {
  if (options.lambda < 0.0) throw ConfigError("lambda must be non-negative");
  const std::size_t n = 2 * batch.b;
  std::vector<std::size_t> cls4;
  if (!classes.empty()) {
    if (classes.size() != n) throw ShapeError("ltgan_objective: need one class per code");
    cls4 = doubled(classes);
  }
  Tensor codes = concat({batch.z, batch.z_plus_eps()}, 0);
  nn::DiscriminatorOutput out = d.forward(g.forward(codes, cls4), cls4);

  ObjectiveTerms t;
  t.l_g_adv = add(g_loss(options.family, slice(out.logits, 0, 0, n)),
                  g_loss(options.family, slice(out.logits, 0, n, 2 * n)));
  Tensor f = sub(slice(out.features, 0, 0, n), slice(out.features, 0, n, 2 * n));
  Tensor f_aux = options.literal_total ? f : grad_scale(f, options.lambda);
  t.aux_prob = a.forward(f_aux, take_rows(f_aux, batch.shuffle));
  t.l_a = bce(t.aux_prob, batch.y_ss);
  t.total_g = add(t.l_g_adv, scale(t.l_a, options.lambda));
  t.update_loss = options.literal_total ? t.total_g : add(t.l_g_adv, t.l_a);

  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) correct += (t.aux_prob.data()[i] >= 0.5) == (batch.y_ss[i] == 1.0);
  t.aux_accuracy = static_cast<double>(correct) / static_cast<double>(n);
  t.report.l_g_adv = t.l_g_adv.item();
  t.report.l_a = t.l_a.item();
  t.report.total_g = t.report.l_g_adv.value() + options.lambda * t.report.l_a.value();
  t.report.aux_accuracy = t.aux_accuracy;
  return t;
}

Tensor rotate_images(const Tensor& images, std::span<const std::size_t> ks) {
  if (images.rank() != 4 || images.dim(2) != images.dim(3)) {
    throw ShapeError("rotate_images: need square (b, C, H, W) images, got " + ltgan::to_string(images.shape()));
  }
  const std::size_t b = images.dim(0), c = images.dim(1), s = images.dim(2);
  if (ks.size() != b) throw ShapeError("rotate_images: one rotation per image required");
  std::vector<std::size_t> idx(images.numel());
  for (std::size_t n = 0; n < b; ++n) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t base = (n * c + ch) * s * s;
      for (std::size_t i = 0; i < s; ++i) {
        for (std::size_t j = 0; j < s; ++j) {
          // Source pixel of out(i, j) under k counter-clockwise quarter turns.
          std::size_t si = i, sj = j;
          for (std::size_t k = 0; k < ks[n] % 4; ++k) {
            const std::size_t ni = sj, nj = s - 1 - si;
            si = ni;
            sj = nj;
          }
          idx[base + i * s + j] = base + si * s + sj;
        }
      }
    }
  }
  return gather(images, idx, images.shape());
}

std::vector<std::size_t> sample_rotations(std::size_t n, Rng& rng) {
  std::vector<std::size_t> ks(n);
  for (auto& k : ks) k = rng.index(4);
  return ks;
}

Tensor rotation_ss_loss(const nn::Discriminator& d, const Tensor& images, std::span<const std::size_t> ks,
                        std::span<const std::size_t> classes) {
  Tensor rotated = rotate_images(images, ks);
  Tensor logp = log_softmax(d.forward(rotated, classes, true).rotation_logits);
  std::vector<std::size_t> pick(ks.size());
  for (std::size_t i = 0; i < ks.size(); ++i) pick[i] = i * 4 + ks[i] % 4;
  return neg(mean(gather(logp, pick, {ks.size()})));
}

Tensor rotation_ss_loss(const nn::Discriminator& d, const Tensor& images, Rng& rng,
                        std::span<const std::size_t> classes) {
  if (images.rank() != 4 || images.dim(2) != images.dim(3)) {
    throw ShapeError("rotation_ss_loss: need square images, got " + ltgan::to_string(images.shape()));
  }
  return rotation_ss_loss(d, images, sample_rotations(images.dim(0), rng), classes);
}

}  // namespace ltgan::obj
