#include <cmath>

#include "doctest.h"
#include "ltgan/gradcheck.hpp"
#include "ltgan/optim.hpp"
#include "ltgan/tensor.hpp"
#include "test_util.hpp"

using namespace ltgan;
using ltgan::testing::random_tensor;

TEST_CASE("forward ops: definitional values") {
  Tensor r = relu(Tensor::vector({-1.0, 0.0, 2.0}));
  CHECK(r.data()[0] == 0.0);
  CHECK(r.data()[1] == 0.0);
  CHECK(r.data()[2] == 2.0);

  Rng rng(3);
  Tensor m = random_tensor({3, 3}, rng);
  Tensor im = matmul(Tensor::eye(3), m);
  for (std::size_t i = 0; i < 9; ++i) CHECK(im.data()[i] == m.data()[i]);

  CHECK(sigmoid(Tensor::scalar(0.0)).item() == 0.5);
  CHECK(leaky_relu(Tensor::vector({-2.0}), 0.2).item() == doctest::Approx(-0.4));
}

TEST_CASE("forward ops: shape errors name op and shapes") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({2, 3});
  try {
    matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("(2, 3)") != std::string::npos);
  }
  CHECK_THROWS_AS(add(Tensor::zeros({2, 3}), Tensor::zeros({3, 2})), ShapeError);
  CHECK_THROWS_AS(avg_pool2d(Tensor::zeros({1, 1, 4, 4}), 0, 2), std::invalid_argument);
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0}), ShapeError);
}

TEST_CASE("forward ops: log/exp domain violations are flagged") {
  CHECK_THROWS_AS(log(Tensor::vector({1.0, 0.0})), DomainError);
  CHECK_THROWS_AS(log(Tensor::vector({-1.0})), DomainError);
  CHECK_THROWS_AS(exp(Tensor::vector({1000.0})), DomainError);
  try {
    log(Tensor::vector({1.0, 2.0, -3.0}));
  } catch (const DomainError& e) {
    CHECK(e.index() == 2);
  }
}

TEST_CASE("broadcasting follows numpy rules") {
  Tensor x = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  Tensor row = Tensor::vector({10, 20, 30});
  Tensor col = Tensor::matrix(2, 1, {100, 200});
  Tensor s = add(x, row);
  CHECK(s.data()[4] == 25.0);
  Tensor c = add(x, col);
  CHECK(c.data()[2] == 103.0);
  CHECK(c.data()[3] == 204.0);
  Tensor sc = mul(x, Tensor::scalar(2.0));
  CHECK(sc.data()[5] == 12.0);
}

TEST_CASE("backward: hand-derived gradients") {
  SUBCASE("sum") {
    Tensor x = Tensor::vector({0.3, -1.0, 2.0}, true);
    Tape tape;
    TapeScope scope(tape);
    tape.backward(sum(x));
    for (double g : x.grad()) CHECK(g == 1.0);
  }
  SUBCASE("sum of squares") {
    Tensor x = Tensor::vector({1.0, 2.0}, true);
    Tape tape;
    TapeScope scope(tape);
    tape.backward(sum(mul(x, x)));
    CHECK(x.grad()[0] == 2.0);
    CHECK(x.grad()[1] == 4.0);
  }
  SUBCASE("sigmoid at zero") {
    Tensor w = Tensor::scalar(0.0, true);
    Tape tape;
    TapeScope scope(tape);
    tape.backward(sigmoid(mul(w, Tensor::scalar(1.0))));
    CHECK(w.grad()[0] == 0.25);
  }
}

TEST_CASE("backward: contract") {
  Tensor x = Tensor::vector({1.0, 2.0}, true);
  Tensor unused = Tensor::vector({5.0, 6.0, 7.0}, true);
  Tape tape;
  TapeScope scope(tape);
  Tensor y = mul(x, x);
  CHECK_THROWS_AS(tape.backward(y), ShapeError);
  Tape tape2;
  TapeScope scope2(tape2);
  tape2.backward(sum(mul(x, x)));
  CHECK(unused.grad() == std::vector<double>{0.0, 0.0, 0.0});
  CHECK_FALSE(unused.has_grad());
}

TEST_CASE("no tape active: ops are gradient-free") {
  Tensor x = Tensor::vector({1.0, 2.0}, true);
  Tensor y = sum(mul(x, x));
  CHECK_FALSE(y.requires_grad());
  CHECK(y.item() == 5.0);
}

TEST_CASE("grad_check: quadratic and constant") {
  Rng rng(11);
  Tensor point = random_tensor({7}, rng);
  GradCheckOptions opt;
  opt.step = 1e-6;
  opt.tolerance = 1e-7;
  auto quad = grad_check([](const Tensor& x) { return sum(mul(x, x)); }, point, opt);
  CHECK(quad.passed);
  CHECK(quad.max_rel_error < 1e-7);

  auto constant = grad_check([](const Tensor&) { return Tensor::scalar(3.0); }, point, opt);
  CHECK(constant.passed);
  for (double g : constant.analytic) CHECK(g == 0.0);
  for (double g : constant.numeric) CHECK(g == 0.0);
}

TEST_CASE("grad_check: non-finite values report the coordinate") {
  Tensor point = Tensor::vector({1.0, 2.0});
  auto bad = grad_check(
      [](const Tensor& x) {
        Tensor blown = mul(x, Tensor::vector({1.0, INFINITY}));
        return sum(blown);
      },
      point);
  CHECK_FALSE(bad.passed);
  CHECK_FALSE(bad.finite);
  CHECK(bad.failure.find("coordinate") != std::string::npos);
}

namespace {

// Random inputs that keep each op away from kinks and domain edges.
std::vector<Tensor> inputs_for(const std::string& op, Rng& rng) {
  if (op == "matmul") return {random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)};
  if (op == "div") return {random_tensor({2, 3}, rng), random_tensor({2, 3}, rng, 0.5, 2.0)};
  if (op == "add" || op == "sub" || op == "mul") return {random_tensor({2, 3}, rng), random_tensor({3}, rng)};
  if (op == "log") return {random_tensor({2, 3}, rng, 0.2, 3.0)};
  if (op == "avg_pool2d") return {random_tensor({2, 2, 4, 4}, rng)};
  if (op == "concat") return {random_tensor({2, 3}, rng), random_tensor({1, 3}, rng)};
  if (op == "clamp01") return {random_tensor({2, 5}, rng, -0.5, 1.5)};
  return {random_tensor({3, 4}, rng)};
}

}  // namespace

TEST_CASE("property: every differentiable op matches central differences") {
  for (const auto& op : differentiable_ops()) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      Rng rng(1000 + seed);
      auto inputs = inputs_for(op, rng);
      // Weighted sum so every output coordinate contributes differently.
      std::vector<Tensor> leaves;
      for (auto& t : inputs) {
        t.set_requires_grad(true);
        leaves.push_back(t);
      }
      Rng wrng(seed);
      Tensor probe = apply_op(op, inputs);
      Tensor weights = random_tensor(probe.shape(), wrng);
      auto report = grad_check_leaves(
          [&] { return sum(mul(apply_op(op, inputs), weights)); }, leaves);
      INFO("op=" << op << " seed=" << seed << " err=" << report.max_rel_error);
      CHECK(report.passed);
    }
  }
}

TEST_CASE("property: backward is linear") {
  Rng rng(5);
  Tensor x = random_tensor({4}, rng);
  x.set_requires_grad(true);
  auto grad_of = [&](auto fn) {
    x.zero_grad();
    Tape tape;
    TapeScope scope(tape);
    tape.backward(fn());
    return x.grad();
  };
  auto f = [&] { return sum(tanh(x)); };
  auto g = [&] { return sum(mul(sigmoid(x), x)); };
  const double a = 0.7, b = -1.3;
  auto gf = grad_of(f);
  auto gg = grad_of(g);
  auto combo = grad_of([&] { return add(scale(f(), a), scale(g(), b)); });
  for (std::size_t i = 0; i < 4; ++i) CHECK(combo[i] == doctest::Approx(a * gf[i] + b * gg[i]).epsilon(1e-12));
}

TEST_CASE("property: identical inputs give bit-identical values and gradients") {
  auto run = [] {
    Rng rng(42);
    Tensor w = random_tensor({5, 3}, rng);
    Tensor x = random_tensor({4, 5}, rng);
    w.set_requires_grad(true);
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = mean(tanh(matmul(x, w)));
    tape.backward(loss);
    auto g = w.grad();
    g.push_back(loss.item());
    return g;
  };
  CHECK(run() == run());
}

TEST_CASE("grad_scale and stop_gradient") {
  Tensor x = Tensor::vector({1.0, 2.0}, true);
  Tape tape;
  TapeScope scope(tape);
  Tensor y = add(sum(grad_scale(x, 0.5)), sum(mul(stop_gradient(x), x)));
  CHECK(y.item() == doctest::Approx(8.0));
  tape.backward(y);
  CHECK(x.grad()[0] == doctest::Approx(1.5));
  CHECK(x.grad()[1] == doctest::Approx(2.5));
}

TEST_CASE("finite check barrier") {
  Tensor bad = Tensor::vector({1.0, NAN});
  CHECK_THROWS_AS(check_finite(bad, "loss"), NonFiniteError);
  set_finite_checks(true);
  CHECK_THROWS_AS(add(bad, bad), NonFiniteError);
  set_finite_checks(false);
  CHECK_NOTHROW(add(bad, bad));
}

TEST_CASE("adam: closed-form steps") {
  SUBCASE("first step moves by -lr * sign(g)") {
    Tensor p = Tensor::vector({1.0, -2.0, 0.5});
    AdamState st;
    st.hyper = {0.01, 0.9, 0.999, 1e-8};
    std::vector<Tensor> ps{p};
    std::vector<std::vector<double>> g{{3.0, -0.2, 1e-3}};
    adam_update(ps, g, st);
    CHECK(p.data()[0] == doctest::Approx(1.0 - 0.01).epsilon(1e-8));
    CHECK(p.data()[1] == doctest::Approx(-2.0 + 0.01).epsilon(1e-8));
    CHECK(p.data()[2] == doctest::Approx(0.5 - 0.01 * 1e-3 / (1e-3 + 1e-8)).epsilon(1e-12));
    CHECK(st.t == 1);
  }
  SUBCASE("zero gradient on fresh state leaves params unchanged") {
    Tensor p = Tensor::vector({1.0, -2.0});
    AdamState st;
    std::vector<Tensor> ps{p};
    std::vector<std::vector<double>> g{{0.0, 0.0}};
    adam_update(ps, g, st);
    CHECK(p.data()[0] == 1.0);
    CHECK(p.data()[1] == -2.0);
  }
  SUBCASE("beta1 = beta2 = 0: every step is -lr * sign(g)") {
    Tensor p = Tensor::vector({0.0});
    AdamState st;
    st.hyper = {0.1, 0.0, 0.0, 1e-12};
    std::vector<Tensor> ps{p};
    std::vector<std::vector<double>> g{{-4.0}};
    adam_update(ps, g, st);
    CHECK(p.data()[0] == doctest::Approx(0.1).epsilon(1e-10));
    adam_update(ps, g, st);
    CHECK(p.data()[0] == doctest::Approx(0.2).epsilon(1e-10));
    CHECK(st.t == 2);
  }
  SUBCASE("mismatched shapes are rejected") {
    Tensor p = Tensor::vector({0.0, 1.0});
    AdamState st;
    std::vector<Tensor> ps{p};
    std::vector<std::vector<double>> g{{1.0}};
    CHECK_THROWS_AS(adam_update(ps, g, st), ShapeError);
  }
  SUBCASE("fp32 storage keeps params representable in binary32") {
    Tensor p = Tensor::vector({0.1});
    Adam opt({p}, {1e-3, 0.5, 0.999, 1e-8}, true);
    {
      Tape tape;
      TapeScope scope(tape);
      tape.backward(sum(mul(p, p)));
    }
    opt.step();
    CHECK(p.data()[0] == round_fp32(p.data()[0]));
  }
}
