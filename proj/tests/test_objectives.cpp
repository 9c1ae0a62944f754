#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "ltgan/gradcheck.hpp"
#include "ltgan/objectives.hpp"
#include "test_util.hpp"

using namespace ltgan;
using namespace ltgan::obj;
using ltgan::testing::random_tensor;

namespace {

nn::NetworkSpec toy_spec() {
  nn::NetworkSpec s;
  s.latent_dim = 4;
  s.image = {1, 4, 4};
  s.g_hidden = {8};
  s.d_hidden = {10, 16};
  s.tap_index = 1;
  s.tap_shape = {4, 2, 2};
  s.pool = 2;
  return s;
}

Tensor col(std::initializer_list<double> v) { return Tensor({v.size(), 1}, std::vector<double>(v)); }

}  // namespace

TEST_CASE("hinge losses") {
  CHECK(hinge_d_loss(col({1.0}), col({-1.0})).item() == 0.0);
  CHECK(hinge_d_loss(col({0.0}), col({0.0})).item() == 2.0);
  CHECK(hinge_g_loss(col({2.0, -2.0})).item() == 0.0);
  CHECK_THROWS_AS(hinge_d_loss(Tensor::zeros({0, 1}), col({0.0})), std::invalid_argument);

  // Zero exactly when every real logit >= 1 and every fake logit <= -1.
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    Tensor r = random_tensor({4, 1}, rng, -0.5, 3.0);
    Tensor f = random_tensor({4, 1}, rng, -3.0, 0.5);
    bool met = true;
    for (double v : r.data()) met = met && v >= 1.0;
    for (double v : f.data()) met = met && v <= -1.0;
    CHECK((hinge_d_loss(r, f).item() == 0.0) == met);
  }
}

TEST_CASE("non-saturating losses") {
  auto a = nonsat_losses(col({0.0}), col({0.0}));
  CHECK(a.d_loss.item() == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-14));
  CHECK(a.g_loss.item() == doctest::Approx(std::log(2.0)).epsilon(1e-14));
  CHECK(a.clamped == 0);
  auto lim = nonsat_losses(col({60.0}), col({-60.0}));
  CHECK(lim.d_loss.item() < 1e-20);
  auto far = nonsat_losses(col({-80.0}), col({80.0}));
  CHECK(far.clamped == 2);
  CHECK(std::isfinite(far.d_loss.item()));
  CHECK(d_loss(LossFamily::kNonSaturating, col({0.3}), col({-0.2})).item() ==
        nonsat_losses(col({0.3}), col({-0.2})).d_loss.item());
}

TEST_CASE("latent batch: small-batch labels and config contract") {
  const std::size_t id[] = {0, 1}, swap[] = {1, 0};
  CHECK(pair_labels(id) == std::vector<double>{1.0, 1.0});
  CHECK(pair_labels(swap) == std::vector<double>{0.0, 0.0});
  Rng rng(1);
  CHECK_THROWS_AS(make_latent_batch(2, 4, 1.0, 1.0, rng), ConfigError);
  CHECK_THROWS_AS(make_latent_batch(2, 4, 1.0, 1.5, rng), ConfigError);
  CHECK_THROWS_AS(make_latent_batch(0, 4, 1.0, 0.5, rng), ConfigError);
}

TEST_CASE("latent batch: exhaustive permutation enumeration") {
  for (std::size_t b : {1u, 2u, 3u}) {
    const std::size_t n = 2 * b;
    // Independent oracle: materialize the perturbation pattern as ids 1/2.
    std::vector<int> pattern(n);
    for (std::size_t i = 0; i < n; ++i) pattern[i] = (i % 2 == 0) ? 1 : 2;
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), 0);
    std::size_t perms = 0, positives = 0;
    do {
      auto y = pair_labels(p);
      for (std::size_t i = 0; i < n; ++i) {
        CHECK(y[i] == (pattern[i] == pattern[p[i]] ? 1.0 : 0.0));
        positives += y[i] == 1.0;
      }
      ++perms;
    } while (std::next_permutation(p.begin(), p.end()));
    std::size_t fact = 1;
    for (std::size_t k = 2; k <= n; ++k) fact *= k;
    CHECK(perms == fact);
    // Each row lands on one of b same-pattern rows out of 2b: fraction b / 2b.
    CHECK(positives * 2 * b == perms * n * b);
  }
}

TEST_CASE("latent batch: label soundness and structure (property)") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    const std::size_t b = 1 + seed % 6, d = 3;
    LatentBatch batch = make_latent_batch(b, d, 1.0, 0.5, rng);
    CHECK(batch.z.shape() == Shape{2 * b, d});
    CHECK(is_permutation(batch.shuffle));
    CHECK(pair_labels(batch.shuffle) == batch.y_ss);
    const auto e = batch.eps.data();
    CHECK(!std::equal(e.begin(), e.begin() + d, e.begin() + d));
    for (std::size_t i = 0; i < 2 * b; ++i)
      for (std::size_t j = 0; j < d; ++j) CHECK(batch.eps_pattern.data()[i * d + j] == e[(i % 2) * d + j]);
  }
}

TEST_CASE("latent batch: separate streams isolate codes from perturbations") {
  Rng z1(1), e1(2), s1(3), z2(1), e2(99), s2(3);
  auto a = make_latent_batch(4, 5, 1.0, 0.5, z1, e1, s1);
  auto b = make_latent_batch(4, 5, 1.0, 0.1, z2, e2, s2);
  CHECK(max_abs_diff_is_zero(a.z, b.z));
  CHECK(a.shuffle == b.shuffle);
}

TEST_CASE("feature delta") {
  const auto spec = toy_spec();
  Rng init(5), rng(6);
  nn::Generator g(spec, init);
  nn::Discriminator d(spec, init);
  d.set_trainable(false);
  LatentBatch batch = make_latent_batch(2, spec.latent_dim, 1.0, 0.5, rng);

  LatentBatch zero = batch;
  zero.eps_pattern = Tensor::zeros(batch.z.shape());
  Tensor f0 = lt_feature_delta(d, g, zero);
  for (double v : f0.data()) CHECK(v == 0.0);

  Tensor f = lt_feature_delta(d, g, batch);
  CHECK(f.shape() == Shape{4, spec.feature_width()});
  Tensor swapped = sub(d.features(g.forward(batch.z_plus_eps())), d.features(g.forward(batch.z)));
  for (std::size_t i = 0; i < f.numel(); ++i) CHECK(f.data()[i] == -swapped.data()[i]);

  // d||f||^2 / d(theta_G): nonzero for a generic net, zero when G is frozen.
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = sum(mul(lt_feature_delta(d, g, batch), lt_feature_delta(d, g, batch)));
    tape.backward(loss);
    double norm = 0.0;
    for (const Tensor& p : g.parameters())
      for (double v : p.grad()) norm += v * v;
    CHECK(norm > 0.0);
    for (const Tensor& p : d.parameters()) CHECK(!p.has_grad());
  }
  g.set_trainable(false);
  for (Tensor p : g.parameters()) p.zero_grad();
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = sum(lt_feature_delta(d, g, batch));
    CHECK(tape.size() == 0);
    for (const Tensor& p : g.parameters()) CHECK(!p.has_grad());
    (void)loss;
  }
  auto report = grad_check_leaves(
      [&] {
        Tensor f2 = lt_feature_delta(d, g, batch);
        return sum(mul(f2, f2));
      },
      g.parameters());
  CHECK(report.max_rel_error < 1e-4);
}

TEST_CASE("LT loss anchors") {
  Rng init(3), rng(4);
  nn::AuxNet a(4, 2, init);
  for (auto& w : a.output_layer().weight.mutable_data()) w = 0.0;
  for (auto& w : a.output_layer().bias.mutable_data()) w = 0.0;
  Tensor f = random_tensor({6, 4}, rng);
  LatentBatch batch = make_latent_batch(3, 2, 1.0, 0.5, rng);
  CHECK(std::abs(lt_loss(a, f, batch.shuffle, batch.y_ss).item() - std::log(2.0)) <= 1e-9);

  const double y[] = {1.0, 0.0};
  CHECK(bce(col({0.9, 0.2}), y).item() == doctest::Approx(-(std::log(0.9) + std::log(0.8)) / 2).epsilon(1e-14));
  CHECK(bce(col({1.0, 0.0}), y).item() <= -std::log(1.0 - kProbFloor) + 1e-15);
  CHECK(std::isfinite(bce(col({0.0, 1.0}), y).item()));
  CHECK_THROWS_AS(bce(col({0.5}), y), ShapeError);
}

TEST_CASE("LT loss is permutation-consistent (property)") {
  Rng init(8);
  nn::AuxNet a(4, 3, init);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const std::size_t n = 2 * (1 + seed % 4);
    Tensor f = random_tensor({n, 4}, rng);
    LatentBatch batch = make_latent_batch(n / 2, 2, 1.0, 0.5, rng);
    const double base = lt_loss(a, f, batch.shuffle, batch.y_ss).item();
    // Relabel rows by pi: row k of the new set is old row pi[k].
    auto pi = rng.permutation(n);
    std::vector<std::size_t> inv(n);
    for (std::size_t k = 0; k < n; ++k) inv[pi[k]] = k;
    std::vector<std::size_t> shuffle(n);
    std::vector<double> y(n);
    for (std::size_t k = 0; k < n; ++k) {
      shuffle[k] = inv[batch.shuffle[pi[k]]];
      y[k] = batch.y_ss[pi[k]];
    }
    CHECK(lt_loss(a, take_rows(f, pi), shuffle, y).item() == doctest::Approx(base).epsilon(1e-12));
  }
}

TEST_CASE("combined objective: report identity and gradient routing") {
  const auto spec = toy_spec();
  Rng init(11), rng(12);
  nn::Generator g(spec, init);
  nn::Discriminator d(spec, init);
  nn::AuxNet a(spec.feature_width(), spec.aux_hidden(), init);
  d.set_trainable(false);
  LatentBatch batch = make_latent_batch(3, spec.latent_dim, 1.0, 0.5, rng);

  CHECK_THROWS_AS(ltgan_objective(g, d, a, batch, {.lambda = -0.1}), ConfigError);

  {
    Tape tape;
    TapeScope scope(tape);
    auto zero = ltgan_objective(g, d, a, batch, {.lambda = 0.0});
    CHECK(zero.total_g.item() == zero.l_g_adv.item());
  }

  for (double lambda : {0.5, 1.0}) {
    std::vector<Tensor> ap = a.parameters(), gp = g.parameters();
    std::vector<std::vector<double>> a_total, a_la, g_total, a_update, g_update;
    {
      Tape tape;
      TapeScope scope(tape);
      auto t = ltgan_objective(g, d, a, batch, {.lambda = lambda, .literal_total = true});
      CHECK(std::abs(t.total_g.item() - t.l_g_adv.item() - lambda * t.l_a.item()) <= 1e-9);
      CHECK(std::abs(*t.report.total_g - *t.report.l_g_adv - lambda * *t.report.l_a) <= 1e-9);
      for (Tensor p : ap) p.zero_grad();
      for (Tensor p : gp) p.zero_grad();
      tape.backward(t.total_g);
      for (auto& p : ap) a_total.push_back(p.grad());
      for (auto& p : gp) g_total.push_back(p.grad());
    }
    {
      Tape tape;
      TapeScope scope(tape);
      auto t = ltgan_objective(g, d, a, batch, {.lambda = lambda, .literal_total = true});
      for (Tensor p : ap) p.zero_grad();
      tape.backward(t.l_a);
      for (auto& p : ap) a_la.push_back(p.grad());
    }
    {
      Tape tape;
      TapeScope scope(tape);
      auto t = ltgan_objective(g, d, a, batch, {.lambda = lambda});
      for (Tensor p : ap) p.zero_grad();
      for (Tensor p : gp) p.zero_grad();
      tape.backward(t.update_loss);
      for (auto& p : ap) a_update.push_back(p.grad());
      for (auto& p : gp) g_update.push_back(p.grad());
    }
    for (std::size_t k = 0; k < ap.size(); ++k) {
      for (std::size_t i = 0; i < a_la[k].size(); ++i) {
        CHECK(a_total[k][i] == doctest::Approx(lambda * a_la[k][i]).epsilon(1e-12));
        CHECK(a_update[k][i] == doctest::Approx(a_la[k][i]).epsilon(1e-12));
      }
    }
    for (std::size_t k = 0; k < gp.size(); ++k)
      for (std::size_t i = 0; i < g_total[k].size(); ++i)
        CHECK(g_update[k][i] == doctest::Approx(g_total[k][i]).epsilon(1e-10).scale(1e-12));
    for (const Tensor& p : d.parameters()) CHECK(!p.has_grad());
  }
}

TEST_CASE("full LT generator loss passes a finite-difference check on a toy net") {
  const auto spec = toy_spec();
  Rng init(31), rng(32);
  nn::Generator g(spec, init);
  nn::Discriminator d(spec, init);
  nn::AuxNet a(spec.feature_width(), spec.aux_hidden(), init);
  d.set_trainable(false);
  LatentBatch batch = make_latent_batch(1, spec.latent_dim, 1.0, 0.5, rng);
  std::vector<Tensor> leaves = g.parameters();
  for (const Tensor& p : a.parameters()) leaves.push_back(p);
  for (auto family : {LossFamily::kHinge, LossFamily::kNonSaturating}) {
    auto report = grad_check_leaves(
        [&] { return ltgan_objective(g, d, a, batch, {.lambda = 0.7, .family = family, .literal_total = true}).total_g; },
        leaves);
    CHECK(report.finite);
    CHECK(report.max_rel_error < 1e-4);
  }
}

TEST_CASE("rotation baseline") {
  Rng rng(2);
  Tensor img = random_tensor({3, 2, 4, 4}, rng);
  const std::size_t k0[] = {0, 0, 0};
  CHECK(max_abs_diff_is_zero(rotate_images(img, k0), img));
  const std::size_t k1[] = {1, 1, 1};
  Tensor r = img;
  for (int i = 0; i < 4; ++i) r = rotate_images(r, k1);
  CHECK(max_abs_diff_is_zero(r, img));
  // One counter-clockwise quarter turn moves the top-right pixel to top-left.
  Tensor once = rotate_images(img, k1);
  CHECK(once.data()[0] == img.data()[3]);
  const std::size_t k2[] = {2, 2, 2};
  Tensor twice = rotate_images(img, k2);
  CHECK(twice.data()[0] == img.data()[15]);

  auto spec = toy_spec();
  spec.rotation_head = true;
  Rng init(3);
  nn::Discriminator d(spec, init);
  for (auto& [name, t] : d.named_tensors()) {
    if (name == "D.rot.weight" || name == "D.rot.bias") {
      Tensor h = t;
      for (auto& v : h.mutable_data()) v = 0.0;
    }
  }
  Tensor x = random_tensor({5, 1, 4, 4}, rng);
  CHECK(rotation_ss_loss(d, x, rng).item() == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  CHECK_THROWS_AS(rotation_ss_loss(d, Tensor::zeros({2, 1, 4, 3}), rng), ShapeError);

  Rng init2(4);
  nn::Discriminator d2(spec, init2);
  const std::size_t ks[] = {0, 1, 2, 3, 1};
  auto report = grad_check_leaves([&] { return rotation_ss_loss(d2, x, ks); }, d2.parameters());
  CHECK(report.max_rel_error < 1e-4);
}
