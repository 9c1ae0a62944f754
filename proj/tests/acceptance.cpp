// End-to-end acceptance suite: one PASS/FAIL line per criterion A1..A11.
// Usage: acceptance [--only A1,A6] [--report path]
#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "ltgan/ablation.hpp"
#include "ltgan/eval.hpp"
#include "ltgan/gradcheck.hpp"
#include "ltgan/objectives.hpp"
#include "ltgan/serve.hpp"
#include "ltgan/steer.hpp"
#include "ltgan/trainer.hpp"

using namespace ltgan;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s << std::setprecision(digits) << v;
  return s.str();
}

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = lo + (hi - lo) * rng.uniform();
  return Tensor(std::move(shape), std::move(v));
}

struct Outcome {
  bool pass = false;
  std::string detail;
  bool soft = false;  // reported, never fails the suite
};

// ---- A1 ------------------------------------------------------------------

std::vector<Tensor> op_inputs(const std::string& op, Rng& rng) {
  if (op == "matmul") return {random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)};
  if (op == "div") return {random_tensor({2, 3}, rng), random_tensor({2, 3}, rng, 0.5, 2.0)};
  if (op == "add" || op == "sub" || op == "mul") return {random_tensor({2, 3}, rng), random_tensor({3}, rng)};
  if (op == "log") return {random_tensor({2, 3}, rng, 0.2, 3.0)};
  if (op == "avg_pool2d") return {random_tensor({2, 2, 4, 4}, rng)};
  if (op == "concat") return {random_tensor({2, 3}, rng), random_tensor({1, 3}, rng)};
  if (op == "clamp01") return {random_tensor({2, 5}, rng, -0.5, 1.5)};
  return {random_tensor({3, 4}, rng)};
}

Outcome gradient_correctness() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::string worst_name;
  bool all_finite = true;
  std::size_t checks = 0;
  auto note = [&](const GradCheckReport& r, const std::string& name) {
    all_finite = all_finite && r.finite;
    if (r.max_rel_error >= worst) worst = r.max_rel_error, worst_name = name;
    ++checks;
  };
  for (const auto& op : differentiable_ops()) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      Rng rng(1000 + seed), wrng(seed);
      auto inputs = op_inputs(op, rng);
      std::vector<Tensor> leaves;
      for (auto& t : inputs) {
        t.set_requires_grad(true);
        leaves.push_back(t);
      }
      const Tensor weights = random_tensor(apply_op(op, inputs).shape(), wrng);
      note(grad_check_leaves([&] { return sum(mul(apply_op(op, inputs), weights)); }, leaves), op);
    }
  }
  nn::NetworkSpec spec;
  spec.latent_dim = 4;
  spec.image = {1, 4, 4};
  spec.g_hidden = {8};
  spec.d_hidden = {10, 16};
  spec.tap_shape = {4, 2, 2};
  Rng init(31), rng(32);
  nn::Generator g(spec, init);
  nn::Discriminator d(spec, init);
  nn::AuxNet a(spec.feature_width(), spec.aux_hidden(), init);
  d.set_trainable(false);
  const auto batch = obj::make_latent_batch(1, spec.latent_dim, 1.0, 0.5, rng);
  std::vector<Tensor> leaves = g.parameters();
  for (const Tensor& p : a.parameters()) leaves.push_back(p);
  for (auto family : {obj::LossFamily::kHinge, obj::LossFamily::kNonSaturating}) {
    note(grad_check_leaves(
             [&] {
               return obj::ltgan_objective(g, d, a, batch, {.lambda = 0.7, .family = family, .literal_total = true})
                   .total_g;
             },
             leaves),
         family == obj::LossFamily::kHinge ? "LT objective (hinge)" : "LT objective (non-saturating)");
  }
  const double elapsed = seconds_since(t0);
  return {all_finite && worst < 1e-4 && elapsed < 60.0,
          std::to_string(checks) + " checks, max rel error " + fmt(worst, 3) + " (" + worst_name + "), " +
              fmt(elapsed, 3) + " s"};
}

// ---- A2 ------------------------------------------------------------------

Outcome frechet_oracle() {
  auto moments = [](Eigen::VectorXd mu, Eigen::MatrixXd cov) {
    eval::GaussianMoments m;
    m.mean = std::move(mu);
    m.cov = std::move(cov);
    return m;
  };
  double worst = 0.0;
  Rng rng(7);
  for (std::size_t k : {1u, 4u, 16u, 64u}) {
    Eigen::VectorXd da(k), db(k), ma(k), mb(k);
    for (std::size_t i = 0; i < k; ++i) {
      da(i) = 0.1 + 3.0 * rng.uniform();
      db(i) = 0.1 + 3.0 * rng.uniform();
      ma(i) = rng.normal();
      mb(i) = rng.normal();
    }
    // Commuting (diagonal) covariances: sum (sqrt a - sqrt b)^2 + |ma - mb|^2.
    double oracle = (ma - mb).squaredNorm();
    for (std::size_t i = 0; i < k; ++i) oracle += std::pow(std::sqrt(da(i)) - std::sqrt(db(i)), 2);
    worst = std::max(worst, std::abs(eval::frechet_distance(moments(ma, da.asDiagonal()), moments(mb, db.asDiagonal())) -
                                     oracle));
    // Shared eigenbasis, non-diagonal: rotate both by the same orthogonal Q.
    Eigen::MatrixXd r(k, k);
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j) r(i, j) = rng.normal();
    const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(r).householderQ();
    const Eigen::MatrixXd sa = q * da.asDiagonal() * q.transpose(), sb = q * db.asDiagonal() * q.transpose();
    worst = std::max(worst, std::abs(eval::frechet_distance(moments(ma, sa), moments(mb, sb)) - oracle));
  }
  Eigen::MatrixXd a(8, 8);
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) a(i, j) = rng.normal();
  const Eigen::MatrixXd s = a * a.transpose() + 0.1 * Eigen::MatrixXd::Identity(8, 8);
  const Eigen::VectorXd mu = Eigen::VectorXd::Random(8);
  const double same = std::abs(eval::frechet_distance(moments(mu, s), moments(mu, s)));
  return {worst < 1e-6 && same < 1e-8, "max |error| vs closed form " + fmt(worst, 3) + ", identical moments " + fmt(same, 3)};
}

// ---- A3 ------------------------------------------------------------------

Outcome pairing_soundness() {
  std::string detail;
  bool ok = true;
  for (std::size_t b : {1u, 2u, 3u}) {
    const std::size_t n = 2 * b;
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), 0);
    std::size_t perms = 0, positives = 0, mismatches = 0;
    do {
      const auto y = obj::pair_labels(p);
      for (std::size_t i = 0; i < n; ++i) {
        // Row i carries perturbation i mod 2; its partner is row p[i].
        const double expect = (i % 2) == (p[i] % 2) ? 1.0 : 0.0;
        mismatches += y[i] != expect;
        positives += y[i] == 1.0;
      }
      ++perms;
    } while (std::next_permutation(p.begin(), p.end()));
    std::size_t fact = 1;
    for (std::size_t k = 2; k <= n; ++k) fact *= k;
    // Each row's partner is uniform over 2b rows, b of which share its perturbation.
    const double fraction = static_cast<double>(positives) / static_cast<double>(perms * n);
    ok = ok && mismatches == 0 && perms == fact && positives * 2 == perms * n;
    detail += (detail.empty() ? "" : "; ") + std::string("b=") + std::to_string(b) + ": " + std::to_string(perms) +
              " perms, positive fraction " + fmt(fraction);
  }
  return {ok, detail};
}

// ---- A4 ------------------------------------------------------------------

RunConfig small_ring(std::uint64_t seed) {
  RunConfig c = RunConfig::preset("ring");
  c.set("train.seed", std::to_string(seed));
  c.set("train.batch", "8");
  c.set("train.warmup", "5");
  c.set("train.steps", "40");
  c.set("train.log_every", "1");
  c.set("data.samples", "2000");
  c.set("eval.mode_samples", "500");
  c.validate();
  return c;
}

Outcome loss_anchors() {
  Rng init(3), rng(4);
  nn::AuxNet a(16, 4, init);
  for (auto& w : a.output_layer().weight.mutable_data()) w = 0.0;
  for (auto& w : a.output_layer().bias.mutable_data()) w = 0.0;
  double worst_la = 0.0;
  for (std::size_t b : {1u, 3u, 16u}) {
    const Tensor f = random_tensor({2 * b, 16}, rng);
    const auto batch = obj::make_latent_batch(b, 2, 1.0, 0.5, rng);
    worst_la = std::max(worst_la, std::abs(obj::lt_loss(a, f, batch.shuffle, batch.y_ss).item() - std::log(2.0)));
  }
  const Tensor real({4, 1}, std::vector<double>{1.0, 1.0, 2.5, 1.0});
  const Tensor fake({4, 1}, std::vector<double>{-1.0, -3.0, -1.0, -1.0});
  const double hinge = obj::hinge_d_loss(real, fake).item();

  RunConfig c = small_ring(5);
  c.train.lambda = 0.7;
  Trainer t(c);
  double worst_total = 0.0;
  for (std::size_t i = 0; i < c.train.steps; ++i) {
    const auto r = t.step();
    const double lam = r.l_a ? c.train.lambda : 0.0;
    worst_total = std::max(worst_total, std::abs(*r.total_g - (*r.l_g_adv + lam * r.l_a.value_or(0.0))));
  }
  return {worst_la <= 1e-9 && hinge == 0.0 && worst_total <= 1e-12,
          "|L_A - ln 2| " + fmt(worst_la, 3) + ", hinge at margins " + fmt(hinge) + ", total_G identity error " +
              fmt(worst_total, 3) + " over " + std::to_string(c.train.steps) + " steps"};
}

// ---- A5 ------------------------------------------------------------------

Outcome isolation_and_determinism() {
  RunConfig c = small_ring(3);
  c.train.check_isolation = true;
  Trainer t(c);
  std::size_t violations = 0;
  for (std::size_t i = 0; i < 20; ++i) {
    const auto hg = hash_tensors(t.generator().named_tensors()), ha = hash_tensors(t.aux().named_tensors());
    t.step_d();
    violations += hash_tensors(t.generator().named_tensors()) != hg;
    violations += hash_tensors(t.aux().named_tensors()) != ha;
    const auto hd = hash_tensors(t.discriminator().named_tensors());
    t.step_g();
    violations += hash_tensors(t.discriminator().named_tensors()) != hd;
    t.step();
  }
  Trainer x(small_ring(11)), y(small_ring(11));
  x.train();
  y.train();
  const bool same_logs = x.log().text() == y.log().text();

  Trainer full(small_ring(12));
  for (int i = 0; i < 17; ++i) full.step();
  Trainer resumed = Trainer::decode_checkpoint(full.encode_checkpoint());
  full.train();
  resumed.train();
  const bool resume_exact = full.encode_checkpoint() == resumed.encode_checkpoint();
  return {violations == 0 && same_logs && resume_exact,
          std::to_string(violations) + " isolation violations in 20 steps, equal-seed logs " +
              (same_logs ? "identical" : "DIFFER") + ", resume " + (resume_exact ? "bit-exact" : "DIFFERS")};
}

// ---- A6 ------------------------------------------------------------------

Outcome ring_experiment(nlohmann::json& report) {
  std::size_t lt_ok = 0;
  double slowest = 0.0;
  std::string lt_counts, base_counts;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    for (bool lt : {true, false}) {
      RunConfig c = RunConfig::preset("ring");
      c.train.seed = seed;
      if (!lt) c.train.objective = Objective::kBaseline;
      c.validate();
      const auto t0 = Clock::now();
      Trainer t(c);
      t.train();
      const double secs = seconds_since(t0);
      slowest = std::max(slowest, secs);
      const auto covered = static_cast<std::size_t>(t.log().last("modes_covered"));
      const double kl = t.log().last("mode_kl");
      report["A6"][lt ? "lt" : "baseline"].push_back({{"seed", seed}, {"modes_covered", covered}, {"mode_kl", kl}, {"seconds", secs}});
      (lt ? lt_counts : base_counts) += (seed ? "," : "") + std::to_string(covered);
      if (lt && covered >= 7) ++lt_ok;
    }
  }
  return {lt_ok >= 2 && slowest <= 600.0, "LT modes covered per seed [" + lt_counts + "] of 8, baseline [" + base_counts +
                                              "], slowest run " + fmt(slowest, 3) + " s"};
}

// ---- A7 (+ models for A8, A9, A11) ---------------------------------------

struct ShapesRuns {
  std::vector<unsigned char> checkpoint;  // sigma_eps = 0.5, first seed
  double seconds = 0.0;
  AblationTable table;
};

ShapesRuns shapes_sweep() {
  ShapesRuns out;
  RunConfig base = RunConfig::preset("shapes");
  AblationOptions opt;
  opt.seeds = 3;
  opt.progress = [](const std::string& line) { std::cerr << "  " << line << std::endl; };
  opt.on_trained = [&](const std::string& value, const AblationRun& run, const Trainer& t) {
    if (value == "0.5" && run.seed == base.train.seed) out.checkpoint = t.encode_checkpoint();
  };
  const auto t0 = Clock::now();
  out.table = run_ablation(base, "train.sigma_eps", {"0.05", "0.5", "0.9"}, opt);
  out.seconds = seconds_since(t0);
  return out;
}

Outcome sigma_u_shape(const ShapesRuns& runs, nlohmann::json& report) {
  const auto& cells = runs.table.cells;
  report["A7"]["csv"] = runs.table.csv();
  report["A7"]["seconds"] = runs.seconds;
  const double lo = cells[0].median, mid = cells[1].median, hi = cells[2].median;
  const bool ok = std::isfinite(mid) && mid <= lo && mid <= hi && runs.seconds <= 7200.0;
  return {ok, "median proxy-FID at sigma_eps 0.05 / 0.5 / 0.9: " + fmt(lo) + " / " + fmt(mid) + " / " + fmt(hi) + ", " +
                  fmt(runs.seconds / 60.0, 3) + " min"};
}

// ---- A8 ------------------------------------------------------------------

Outcome aux_peak(const ModelSnapshot& m, nlohmann::json& report) {
  const std::vector<double> sigmas{0.05, 0.5, 0.9};
  const auto acc = eval::aux_accuracy_sweep(m.generator, m.discriminator, m.aux, sigmas, 25000, m.config.train.sigma_z, 77);
  report["A8"] = {{"sigma_eps", sigmas}, {"accuracy", acc}};
  const bool ok = acc[1] >= 0.70 && acc[1] - acc[0] >= 0.05 && acc[1] - acc[2] >= 0.05;
  return {ok, "accuracy at sigma_eps 0.05 / 0.5 / 0.9: " + fmt(acc[0]) + " / " + fmt(acc[1]) + " / " + fmt(acc[2]) +
                  " (margins " + fmt(100 * (acc[1] - acc[0]), 3) + " pp, " + fmt(100 * (acc[1] - acc[2]), 3) + " pp)"};
}

// ---- A9 ------------------------------------------------------------------

double angle_deg(std::span<const double> a, std::span<const double> b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) ab += a[i] * b[i], aa += a[i] * a[i], bb += b[i] * b[i];
  return std::acos(std::clamp(ab / std::sqrt(aa * bb), -1.0, 1.0)) * 180.0 / M_PI;
}

Outcome steerability(const ModelSnapshot& m, nlohmann::json& report) {
  // Planted boundary: labels sign(w . z) on Gaussian codes, 70 / 30 split.
  const std::size_t d = 64, n = 20000, n_train = n * 7 / 10;
  double planted_acc = 1.0, planted_angle = 0.0;
  for (std::uint64_t seed : {1, 2, 3}) {
    Rng rng(seed);
    const auto w = rng.normal_vector(d);
    const auto codes = rng.normal_vector(n * d);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i)
      labels[i] = std::inner_product(w.begin(), w.end(), codes.begin() + static_cast<std::ptrdiff_t>(i * d), 0.0) >= 0 ? 1 : -1;
    steer::BoundaryDataset ds;
    ds.dim = d;
    ds.train_codes.assign(codes.begin(), codes.begin() + static_cast<std::ptrdiff_t>(n_train * d));
    ds.eval_codes.assign(codes.begin() + static_cast<std::ptrdiff_t>(n_train * d), codes.end());
    ds.train_labels.assign(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n_train));
    ds.eval_labels.assign(labels.begin() + static_cast<std::ptrdiff_t>(n_train), labels.end());
    const auto fit = steer::fit_linear_boundary(ds, {.seed = seed});
    planted_acc = std::min(planted_acc, fit.eval_accuracy);
    planted_angle = std::max(planted_angle, angle_deg(fit.direction.vector, w));
  }

  const auto& spec = m.config.data.shapes;
  const double sz = m.config.train.sigma_z;
  Rng rng(derive_seed(2024, "acceptance-brightness"));
  const auto ds = steer::collect_attribute_dataset(m.generator, data::Attribute::kBrightness, 20000, 2000, rng, spec, sz);
  const auto fit = steer::fit_linear_boundary(ds, {.seed = 5}, "brightness");

  // A strip is oracle-monotone when measured brightness never decreases along
  // alpha and no frame is empty.
  const std::vector<double> alphas{-2.0, -1.0, 0.0, 1.0, 2.0};
  const std::size_t px = m.generator.spec().image.numel(), strips = 200;
  std::size_t monotone = 0;
  double rise = 0.0;  // diagnostic only: mean brightness gain across the strip
  Rng zr(derive_seed(2024, "acceptance-strips"));
  for (std::size_t s = 0; s < strips; ++s) {
    const auto z = zr.normal_vector(m.generator.spec().latent_dim, sz);
    const Tensor strip = steer::latent_traverse(m.generator, z, fit.direction.vector, alphas);
    bool ok = true;
    double prev = -1.0, first = 0.0;
    for (std::size_t j = 0; j < alphas.size(); ++j) {
      const auto attrs = data::measure_attributes(strip.data().subspan(j * px, px), spec);
      ok = ok && !attrs.null && attrs.brightness >= prev;
      if (j == 0) first = attrs.brightness;
      prev = attrs.brightness;
    }
    rise += (prev - first) / static_cast<double>(strips);
    monotone += ok;
  }
  const double frac = static_cast<double>(monotone) / static_cast<double>(strips);
  report["A9"] = {{"planted_min_accuracy", planted_acc},
                  {"planted_max_angle_deg", planted_angle},
                  {"brightness_heldout_accuracy", fit.eval_accuracy},
                  {"brightness_null_fraction", ds.null_fraction},
                  {"monotone_fraction", frac},
                  {"mean_brightness_rise", rise}};
  const bool ok = planted_acc >= 0.99 && planted_angle < 5.0 && fit.eval_accuracy >= 0.75 && frac >= 0.80;
  return {ok, "planted " + fmt(100 * planted_acc) + "% / " + fmt(planted_angle, 3) + " deg; brightness held-out " +
                  fmt(100 * fit.eval_accuracy) + "%; monotone strips " + std::to_string(monotone) + "/200 (mean rise " + fmt(rise, 3) + ")"};
}

// ---- A10 -----------------------------------------------------------------

double mean_abs_off_diagonal(const steer::CorrelationMatrix& m) {
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < m.names.size(); ++i)
    for (std::size_t j = 0; j < m.names.size(); ++j)
      if (i != j && std::isfinite(m.at(i, j))) s += std::abs(m.at(i, j)), ++n;
  return n ? s / static_cast<double>(n) : std::nan("");
}

Outcome disentanglement_and_cas(nlohmann::json& report) {
  RunConfig base = RunConfig::preset("shapes");
  base.train.conditional = true;
  base.validate();
  const auto corpus = data::make_shapes_corpus(base.data.shapes, 2000, derive_seed(base.data.ring.seed, "cas-test"));
  const auto test = data::make_shapes_dataset(corpus, 0);
  std::size_t lt_wins = 0;
  std::string detail;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    double cas[2], corr[2];
    for (int lt = 0; lt < 2; ++lt) {
      RunConfig c = base;
      c.train.seed = seed;
      c.train.objective = lt ? Objective::kLt : Objective::kBaseline;
      Trainer t(c);
      t.train();
      eval::CasOptions opt;
      opt.sigma_z = c.train.sigma_z;
      opt.seed = seed;
      cas[lt] = eval::cas_toy(t.generator(), test, opt);
      corr[lt] = mean_abs_off_diagonal(steer::attribute_correlation(t.generator(), 5000, c.data.shapes, c.train.sigma_z, seed));
      report["A10"][lt ? "lt" : "baseline"].push_back(
          {{"seed", seed}, {"cas", cas[lt]}, {"mean_abs_offdiag_corr", corr[lt]}});
      std::cerr << "  seed " << seed << (lt ? " LT" : " baseline") << ": CAS " << cas[lt] << ", |rho| " << corr[lt]
                << std::endl;
    }
    lt_wins += cas[1] >= cas[0];
    detail += (seed ? "; " : "") + std::string("seed ") + std::to_string(seed) + " CAS LT " + fmt(cas[1], 3) + " vs " +
              fmt(cas[0], 3) + ", |rho| " + fmt(corr[1], 3) + " vs " + fmt(corr[0], 3);
  }
  return {lt_wins >= 2, detail, true};
}

// ---- A11 -----------------------------------------------------------------

Outcome serve_determinism(const std::vector<unsigned char>& checkpoint) {
  serve::Session session(decode_snapshot(checkpoint), {});
  Rng rng(9);
  const auto z = rng.normal_vector(session.snapshot().generator.spec().latent_dim);
  const std::string body = nlohmann::json{{"latent", z}}.dump();
  const auto first = session.generate(body);
  std::size_t identical = 0;
  for (int i = 0; i < 100; ++i) identical += session.generate(body).body == first.body && first.status == 200;

  steer::Direction dir{"d0", "random", "svm", rng.normal_vector(z.size()), {}};
  const double norm = std::sqrt(std::inner_product(dir.vector.begin(), dir.vector.end(), dir.vector.begin(), 0.0));
  for (double& v : dir.vector) v /= norm;
  serve::Session with_dir(decode_snapshot(checkpoint), {dir});
  const auto trav = with_dir.traverse(nlohmann::json{{"latent", z}, {"direction_id", "d0"}, {"alphas", {-1.0, 0.0, 1.0}}}.dump());
  const auto gen = nlohmann::json::parse(first.body);
  const auto tj = nlohmann::json::parse(trav.body);
  const bool consistent = trav.status == 200 && tj["images"][1] == gen["image"];
  return {identical == 100 && consistent, std::to_string(identical) + "/100 byte-identical generate replies; traverse at alpha 0 " +
                                              (consistent ? "equals" : "DIFFERS from") + " generate"};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<std::string> only;
  std::string report_path = "acceptance_report.json";
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      for (std::string id; std::getline(ss, id, ',');) only.insert(id);
    } else if (a == "--report" && i + 1 < argc) {
      report_path = argv[++i];
    } else {
      std::cerr << "usage: acceptance [--only A1,A2,...] [--report path]\n";
      return 2;
    }
  }
  auto wanted = [&](const std::string& id) { return only.empty() || only.count(id); };

  nlohmann::json report;
  int hard_failures = 0;
  auto emit = [&](const std::string& id, const std::string& title, const Outcome& o) {
    const char* verdict = o.pass ? "PASS" : (o.soft ? "FLAG" : "FAIL");
    std::cout << id << " " << verdict << "  " << title << ": " << o.detail << std::endl;
    report[id + "_verdict"] = verdict;
    if (!o.pass && !o.soft) ++hard_failures;
  };
  auto run = [&](const std::string& id, const std::string& title, const std::function<Outcome()>& f) {
    if (!wanted(id)) return;
    try {
      emit(id, title, f());
    } catch (const std::exception& e) {
      emit(id, title, {false, std::string("error: ") + e.what()});
    }
  };

  run("A1", "gradient correctness", gradient_correctness);
  run("A2", "Frechet oracle", frechet_oracle);
  run("A3", "pairing soundness", pairing_soundness);
  run("A4", "loss anchors", loss_anchors);
  run("A5", "update isolation and determinism", isolation_and_determinism);
  run("A6", "ring mode coverage", [&] { return ring_experiment(report); });

  std::optional<ShapesRuns> shapes;
  std::optional<ModelSnapshot> model;
  if (wanted("A7") || wanted("A8") || wanted("A9") || wanted("A11")) {
    try {
      shapes = shapes_sweep();
      model.emplace(decode_snapshot(shapes->checkpoint));
    } catch (const std::exception& e) {
      std::cerr << "shapes training failed: " << e.what() << "\n";
    }
  }
  auto needs_model = [&](const std::function<Outcome()>& f) {
    return [&, f] { return model ? f() : Outcome{false, "no trained shapes model"}; };
  };
  run("A7", "sigma_eps U-shape", needs_model([&] { return sigma_u_shape(*shapes, report); }));
  run("A8", "auxiliary accuracy peak", needs_model([&] { return aux_peak(*model, report); }));
  run("A9", "steerability", needs_model([&] { return steerability(*model, report); }));
  run("A10", "disentanglement and CAS (soft)", [&] { return disentanglement_and_cas(report); });
  run("A11", "serve determinism", needs_model([&] { return serve_determinism(shapes->checkpoint); }));

  std::ofstream(report_path) << report.dump(2) << "\n";
  std::cout << (hard_failures ? std::to_string(hard_failures) + " criteria failed" : std::string("all criteria passed"))
            << "; report in " << report_path << std::endl;
  return hard_failures ? 1 : 0;
}
