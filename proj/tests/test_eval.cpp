#include <cmath>

#include "doctest.h"
#include "ltgan/eval.hpp"
#include "test_util.hpp"

using namespace ltgan;
using namespace ltgan::eval;

namespace {

GaussianMoments moments(Eigen::VectorXd mu, Eigen::MatrixXd cov) {
  GaussianMoments m;
  m.mean = std::move(mu);
  m.cov = std::move(cov);
  return m;
}

Eigen::MatrixXd random_spd(std::size_t k, Rng& rng) {
  Eigen::MatrixXd a(k, k);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) a(i, j) = rng.normal();
  return a * a.transpose() + 0.1 * Eigen::MatrixXd::Identity(k, k);
}

}  // namespace

TEST_CASE("frechet distance: closed-form oracles") {
  const std::size_t k = 5;
  Eigen::MatrixXd I = Eigen::MatrixXd::Identity(k, k);
  Rng rng(1);
  Eigen::MatrixXd s = random_spd(k, rng);
  Eigen::VectorXd mu = Eigen::VectorXd::Random(k);
  CHECK(std::abs(frechet_distance(moments(mu, s), moments(mu, s))) < 1e-8);

  Eigen::VectorXd e1 = Eigen::VectorXd::Zero(k);
  e1(0) = 1.0;
  CHECK(frechet_distance(moments(Eigen::VectorXd::Zero(k), I), moments(e1, I)) == doctest::Approx(1.0).epsilon(1e-12));

  for (std::size_t dim : {1u, 3u, 32u}) {
    Eigen::MatrixXd Id = Eigen::MatrixXd::Identity(dim, dim);
    const double d = frechet_distance(moments(Eigen::VectorXd::Zero(dim), 4.0 * Id), moments(Eigen::VectorXd::Zero(dim), Id));
    CHECK(std::abs(d - static_cast<double>(dim)) < 1e-6);
  }

  // Commuting covariances: diagonal matrices, trace term is sum (sqrt(a) - sqrt(b))^2.
  Eigen::VectorXd da(k), db(k);
  da << 1, 2, 3, 4, 5;
  db << 0.5, 4, 1, 9, 0.1;
  double oracle = 0.0;
  for (std::size_t i = 0; i < k; ++i) oracle += std::pow(std::sqrt(da(i)) - std::sqrt(db(i)), 2);
  CHECK(std::abs(frechet_distance(moments(Eigen::VectorXd::Zero(k), da.asDiagonal()),
                                  moments(Eigen::VectorXd::Zero(k), db.asDiagonal())) - oracle) < 1e-6);
}

TEST_CASE("frechet distance: symmetry and zero iff equal (property)") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const std::size_t k = 2 + seed % 6;
    auto a = moments(Eigen::VectorXd::Random(k), random_spd(k, rng));
    auto b = moments(Eigen::VectorXd::Random(k), random_spd(k, rng));
    const double ab = frechet_distance(a, b), ba = frechet_distance(b, a);
    CHECK(ab == doctest::Approx(ba).epsilon(1e-8));
    CHECK(ab > 1e-6);
    CHECK(std::abs(frechet_distance(a, a)) < 1e-8);
  }
}

TEST_CASE("frechet distance: input validation") {
  Eigen::MatrixXd ns(2, 2);
  ns << 1, 0.5, 0, 1;
  auto ok = moments(Eigen::VectorXd::Zero(2), Eigen::MatrixXd::Identity(2, 2));
  CHECK_THROWS_AS(frechet_distance(moments(Eigen::VectorXd::Zero(2), ns), ok), EvalError);
  Eigen::MatrixXd nanm = Eigen::MatrixXd::Identity(2, 2);
  nanm(0, 0) = std::nan("");
  CHECK_THROWS_AS(frechet_distance(moments(Eigen::VectorXd::Zero(2), nanm), ok), EvalError);
  Eigen::MatrixXd neg = Eigen::MatrixXd::Identity(2, 2);
  neg(1, 1) = -0.5;
  CHECK_THROWS_AS(frechet_distance(moments(Eigen::VectorXd::Zero(2), neg), ok), EvalError);
  CHECK_THROWS_AS(frechet_distance(ok, moments(Eigen::VectorXd::Zero(3), Eigen::MatrixXd::Identity(3, 3))), EvalError);
}

TEST_CASE("proxy FID on real data") {
  data::ShapesSpec spec;
  auto corpus = data::make_shapes_corpus(spec, 2000, 7);
  auto ds = data::make_shapes_dataset(corpus, 7);
  ProxyExtractor ex(1234, spec.image());
  ProxyExtractor ex2(1234, spec.image());
  Tensor a = ds.slice(0, 1000).images, b = ds.slice(1000, 2000).images;
  CHECK(std::abs(proxy_fid(a, a, ex).value) < 1e-6);
  CHECK((ex.features(a) - ex2.features(a)).cwiseAbs().maxCoeff() == 0.0);

  // Order invariance: reversing the rows of one set leaves the value unchanged.
  std::vector<std::size_t> rev(1000);
  for (std::size_t i = 0; i < 1000; ++i) rev[i] = 999 - i;
  Tensor b_rev = reshape(take_rows(reshape(b, {1000, 256}), rev), {1000, 1, 16, 16});
  const double floor = proxy_fid(a, b, ex).value;
  CHECK(proxy_fid(a, b_rev, ex).value == doctest::Approx(floor).epsilon(1e-9));
  MESSAGE("proxy-FID noise floor between disjoint real halves: ", floor);
  CHECK(floor > 0.0);

  // Pure noise images are far from the real distribution.
  Rng rng(3);
  Tensor noise = testing::random_tensor({1000, 1, 16, 16}, rng);
  CHECK(proxy_fid(a, noise, ex).value > 10.0 * floor);

  nn::NetworkSpec ns = nn::NetworkSpec::shapes_default();
  Rng init(1);
  nn::Generator g(ns, init);
  CHECK_THROWS_AS(proxy_fid(ds, g, 100, ex, 1.0, 0), EvalError);
  const double untrained = proxy_fid(ds, g, 500, ex, 1.0, 0).value;
  CHECK(untrained == proxy_fid(ds, g, 500, ex, 1.0, 0).value);
  CHECK(untrained > floor);
}

TEST_CASE("mode coverage") {
  data::RingSpec ring;
  Rng rng(5);
  auto truth = mode_coverage(data::sample_ring(ring, rng, 8000), ring);
  CHECK(truth.covered == 8);
  CHECK(truth.kl_to_uniform < 0.01);

  const auto c = ring.mode_center(3);
  std::vector<double> pts;
  for (int i = 0; i < 500; ++i) pts.insert(pts.end(), {c[0], c[1]});
  auto constant = mode_coverage(Tensor({500, 2}, pts), ring);
  CHECK(constant.covered == 1);
  CHECK(constant.kl_to_uniform == doctest::Approx(std::log(8.0)));

  // Lowering the share threshold never reduces coverage.
  Tensor skew = data::sample_ring(ring, rng, 400);
  std::vector<double> sk(skew.data().begin(), skew.data().end());
  for (int i = 0; i < 2000; ++i) sk.insert(sk.end(), {c[0], c[1]});
  Tensor skewed({sk.size() / 2, 2}, sk);
  std::size_t prev = 0;
  for (double share : {2.0, 1.0, 0.5, 0.2, 0.1, 0.0}) {
    const auto m = mode_coverage(skewed, ring, share);
    CHECK(m.covered >= prev);
    prev = m.covered;
  }
}

TEST_CASE("aux accuracy sweep: chance level, range and determinism") {
  nn::NetworkSpec ns = nn::NetworkSpec::shapes_default();
  Rng init(2);
  nn::Generator g(ns, init);
  nn::Discriminator d(ns, init);
  nn::AuxNet a(ns.feature_width(), ns.aux_hidden(), init);
  const double sig[] = {0.05, 0.5, 0.9, 5.0};
  const std::size_t n = 2000;
  auto acc = aux_accuracy_sweep(g, d, a, sig, n, 1.0, 3);
  auto again = aux_accuracy_sweep(g, d, a, sig, n, 1.0, 3);
  CHECK(acc == again);
  for (double v : acc) {
    CHECK((v >= 0.0 && v <= 1.0));
    // Half the pairs are positives; an untrained A sits near chance.
    CHECK(std::abs(v - 0.5) < 0.15);
  }
}

TEST_CASE("CAS: real-data upper reference and untrained generator") {
  data::ShapesSpec spec;
  auto train = data::make_shapes_dataset(data::make_shapes_corpus(spec, 4000, 11), 11);
  auto test = data::make_shapes_dataset(data::make_shapes_corpus(spec, 1000, 12), 12);
  CasOptions opt;
  opt.n_train = 4000;
  opt.epochs = 15;
  const double ref = cas_real_reference(train, test, opt);
  MESSAGE("real-data classifier accuracy ", ref);
  CHECK(ref >= 0.99);

  nn::NetworkSpec ns = nn::NetworkSpec::shapes_default();
  ns.n_classes = 2;
  Rng init(3);
  nn::Generator g(ns, init);
  opt.n_train = 1000;
  opt.epochs = 3;
  const double untrained = cas_toy(g, test, opt);
  MESSAGE("untrained generator CAS ", untrained);
  CHECK(std::abs(untrained - 0.5) < 0.15);

  nn::Generator unc(nn::NetworkSpec::shapes_default(), init);
  CHECK_THROWS_AS(cas_toy(unc, test, opt), EvalError);
}
