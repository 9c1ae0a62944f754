#include "ltgan/steer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"

#include "ltgan/binio.hpp"
#include "ltgan/optim.hpp"

namespace ltgan::steer {

namespace {

using json = nlohmann::json;

std::vector<std::size_t> random_classes(const nn::Generator& g, std::size_t n, Rng& rng) {
  std::vector<std::size_t> out;
  if (g.spec().conditional())
    for (std::size_t i = 0; i < n; ++i) out.push_back(rng.index(g.spec().n_classes));
  return out;
}

double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

double accuracy(const std::vector<double>& codes, const std::vector<int>& labels, const std::vector<double>& w,
                double bias, std::size_t d) {
  if (labels.empty()) return 0.0;
  std::size_t ok = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double s = dot(&codes[i * d], w.data(), d) + bias;
    ok += (s >= 0.0 ? 1 : -1) == labels[i];
  }
  return static_cast<double>(ok) / static_cast<double>(labels.size());
}

double bilinear(const double* img, std::size_t h, std::size_t w, double y, double x, double fill) {
  const double fy = std::floor(y), fx = std::floor(x);
  const double ty = y - fy, tx = x - fx;
  auto px = [&](double yy, double xx) {
    if (yy < 0 || xx < 0 || yy >= static_cast<double>(h) || xx >= static_cast<double>(w)) return fill;
    return img[static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xx)];
  };
  return (1 - ty) * ((1 - tx) * px(fy, fx) + tx * px(fy, fx + 1)) + ty * ((1 - tx) * px(fy + 1, fx) + tx * px(fy + 1, fx + 1));
}

}  // namespace

// ---------------------------------------------------------------------------

BoundaryDataset split_extremes(std::span<const double> codes, std::size_t dim, std::span<const double> scores,
                               std::size_t k, Rng& rng) {
  const std::size_t n = scores.size();
  if (codes.size() != n * dim) throw SteerError("split_extremes: codes and scores disagree");
  if (k == 0 || 2 * k > n) {
    throw SteerError("split_extremes: need 2k <= usable samples (k = " + std::to_string(k) + ", n = " +
                     std::to_string(n) + ")");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  BoundaryDataset out;
  out.dim = dim;
  out.top_k = k;
  out.bottom_k = k;
  out.min_top_score = scores[order[k - 1]];
  out.max_bottom_score = scores[order[n - k]];
  // Same share of each side in the training split keeps both splits balanced.
  const std::size_t k_train = static_cast<std::size_t>(std::llround(kTrainShare * static_cast<double>(k)));
  auto take = [&](std::vector<std::size_t> idx, int label) {
    const auto perm = rng.permutation(idx.size());
    for (std::size_t j = 0; j < idx.size(); ++j) {
      const std::size_t i = idx[perm[j]];
      auto& c = j < k_train ? out.train_codes : out.eval_codes;
      auto& l = j < k_train ? out.train_labels : out.eval_labels;
      c.insert(c.end(), codes.begin() + static_cast<std::ptrdiff_t>(i * dim),
               codes.begin() + static_cast<std::ptrdiff_t>((i + 1) * dim));
      l.push_back(label);
    }
  };
  take(std::vector<std::size_t>(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k)), 1);
  take(std::vector<std::size_t>(order.end() - static_cast<std::ptrdiff_t>(k), order.end()), -1);
  return out;
}

BoundaryDataset collect_attribute_dataset(const nn::Generator& g, data::Attribute attribute, std::size_t n_total,
                                          std::size_t k, Rng& rng, const data::ShapesSpec& spec, double sigma_z) {
  if (g.spec().image != spec.image()) throw SteerError("collect_attribute_dataset: generator does not make shapes images");
  const std::size_t d = g.spec().latent_dim, px = spec.image().numel();
  std::vector<double> codes, scores;
  std::size_t nulls = 0;
  const std::size_t chunk = 256;
  for (std::size_t start = 0; start < n_total; start += chunk) {
    const std::size_t m = std::min(chunk, n_total - start);
    Tensor z({m, d}, rng.normal_vector(m * d, sigma_z));
    const auto cls = random_classes(g, m, rng);
    Tensor x = g.forward(z, cls);
    for (std::size_t i = 0; i < m; ++i) {
      const auto attrs = data::measure_attributes(x.data().subspan(i * px, px), spec);
      if (attrs.null) {
        ++nulls;
        continue;
      }
      codes.insert(codes.end(), z.data().begin() + static_cast<std::ptrdiff_t>(i * d),
                   z.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
      scores.push_back(data::attribute_value(attrs, attribute));
    }
  }
  const double null_fraction = static_cast<double>(nulls) / static_cast<double>(n_total);
  if (null_fraction > 0.5) {
    throw SteerError("collect_attribute_dataset: " + std::to_string(nulls) + " of " + std::to_string(n_total) +
                     " generations have no measurable shape");
  }
  BoundaryDataset out = split_extremes(codes, d, scores, k, rng);
  out.null_fraction = null_fraction;
  if (null_fraction > 0.1) {
    out.null_warning = true;
    std::clog << "warning: " << nulls << " of " << n_total << " generations have no measurable shape\n";
  }
  return out;
}

BoundaryFit fit_linear_boundary(const BoundaryDataset& data, const SvmOptions& options, const std::string& name) {
  const std::size_t d = data.dim, n = data.train_size();
  if (n == 0 || d == 0) throw SteerError("fit_linear_boundary: empty training split");
  if (!(options.reg > 0.0)) throw SteerError("fit_linear_boundary: regularization must be positive");
  // Augmented with a constant feature so the hyperplane need not pass through the origin.
  std::vector<double> w(d + 1, 0.0);
  const double radius = 1.0 / std::sqrt(options.reg);
  Rng rng(derive_seed(options.seed, "svm"));
  std::uint64_t t = 0;
  // Suffix average: the mean of the iterates over the second half of training.
  std::vector<double> avg(d + 1, 0.0);
  std::size_t averaged = 0;
  for (std::size_t e = 0; e < options.epochs; ++e) {
    for (std::size_t i : rng.permutation(n)) {
      ++t;
      const double eta = 1.0 / (options.reg * static_cast<double>(t));
      const double* x = &data.train_codes[i * d];
      const double y = data.train_labels[i];
      const double margin = y * (dot(x, w.data(), d) + w[d]);
      for (double& v : w) v *= 1.0 - eta * options.reg;
      if (margin < 1.0) {
        for (std::size_t j = 0; j < d; ++j) w[j] += eta * y * x[j];
        w[d] += eta * y;
      }
      const double nw = norm(w);
      if (nw > radius)
        for (double& v : w) v *= radius / nw;
      if (2 * e >= options.epochs) {
        for (std::size_t j = 0; j <= d; ++j) avg[j] += w[j];
        ++averaged;
      }
    }
  }
  if (averaged > 0)
    for (std::size_t j = 0; j <= d; ++j) w[j] = avg[j] / static_cast<double>(averaged);
  BoundaryFit fit;
  std::vector<double> normal(w.begin(), w.begin() + static_cast<std::ptrdiff_t>(d));
  const double nn_ = norm(normal);
  fit.train_accuracy = accuracy(data.train_codes, data.train_labels, normal, w[d], d);
  fit.eval_accuracy = accuracy(data.eval_codes, data.eval_labels, normal, w[d], d);
  fit.converged = fit.train_accuracy >= 0.5 + options.margin && nn_ > 0.0;
  if (nn_ > 0.0) {
    for (double& v : normal) v /= nn_;
    fit.bias = w[d] / nn_;
  } else {
    normal.assign(d, 0.0);
    normal[0] = 1.0;
  }
  fit.direction.name = name;
  fit.direction.source = "svm";
  fit.direction.vector = std::move(normal);
  fit.direction.metadata = {{"train_accuracy", fit.train_accuracy},
                            {"eval_accuracy", fit.eval_accuracy},
                            {"bias", fit.bias},
                            {"converged", fit.converged ? 1.0 : 0.0}};
  if (!fit.converged) std::clog << "warning: boundary '" << name << "' did not converge\n";
  return fit;
}

Tensor latent_traverse(const nn::Generator& g, std::span<const double> z, std::span<const double> direction,
                       std::span<const double> alphas, std::span<const std::size_t> classes) {
  const std::size_t d = g.spec().latent_dim, n = alphas.size();
  if (z.size() != d || direction.size() != d) throw SteerError("latent_traverse: vectors must have latent length");
  if (n == 0) return Tensor::zeros(g.spec().image.batched(0));
  std::vector<double> codes(n * d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) codes[i * d + j] = z[j] + alphas[i] * direction[j];
  std::vector<std::size_t> cls;
  if (!classes.empty()) {
    if (classes.size() != 1) throw SteerError("latent_traverse: give one class for the strip");
    cls.assign(n, classes[0]);
  }
  return g.forward(Tensor({n, d}, std::move(codes)), cls);
}

CorrelationMatrix pearson_matrix(std::span<const double> table, std::size_t n, std::vector<std::string> names) {
  const std::size_t k = names.size();
  if (table.size() != n * k || n < 2) throw SteerError("pearson_matrix: table shape mismatch");
  CorrelationMatrix out;
  out.names = std::move(names);
  out.samples = n;
  std::vector<double> mean(k, 0.0), sd(k, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < k; ++a) mean[a] += table[i * k + a] / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < k; ++a) sd[a] += std::pow(table[i * k + a] - mean[a], 2);
  out.undefined.assign(k, false);
  for (std::size_t a = 0; a < k; ++a) {
    sd[a] = std::sqrt(sd[a]);
    out.undefined[a] = !(sd[a] > 1e-12 * std::max(1.0, std::abs(mean[a])) * std::sqrt(static_cast<double>(n)));
  }
  out.values.assign(k * k, std::nan(""));
  for (std::size_t a = 0; a < k; ++a) {
    if (out.undefined[a]) continue;
    out.values[a * k + a] = 1.0;
    for (std::size_t b = a + 1; b < k; ++b) {
      if (out.undefined[b]) continue;
      double c = 0.0;
      for (std::size_t i = 0; i < n; ++i) c += (table[i * k + a] - mean[a]) * (table[i * k + b] - mean[b]);
      const double r = std::clamp(c / (sd[a] * sd[b]), -1.0, 1.0);
      out.values[a * k + b] = out.values[b * k + a] = r;
    }
  }
  return out;
}

CorrelationMatrix attribute_correlation(const nn::Generator& g, std::size_t n, const data::ShapesSpec& spec,
                                        double sigma_z, std::uint64_t seed) {
  if (n < 5000) throw SteerError("attribute_correlation: need at least 5000 samples");
  Rng rng(derive_seed(seed, "correlation"));
  std::vector<Tensor> batches;
  const std::size_t px = spec.image().numel(), k = data::kAttributeCount;
  std::vector<double> table;
  std::size_t used = 0;
  Tensor x = eval::generate(g, n, sigma_z, rng);
  for (std::size_t i = 0; i < n; ++i) {
    const auto attrs = data::measure_attributes(x.data().subspan(i * px, px), spec);
    if (attrs.null) continue;
    for (std::size_t a = 0; a < k; ++a) table.push_back(data::attribute_value(attrs, static_cast<data::Attribute>(a)));
    ++used;
  }
  std::vector<std::string> names;
  for (std::size_t a = 0; a < k; ++a) names.push_back(data::attribute_name(static_cast<data::Attribute>(a)));
  return pearson_matrix(table, used, std::move(names));
}

// ---------------------------------------------------------------------------

std::vector<double> path_length_at(const GeneratorFn& g, const FeatureFn& features, std::span<const double> z1,
                                   std::span<const double> z2, std::span<const double> ts, double eps) {
  const std::size_t d = z1.size(), n = ts.size();
  std::vector<double> codes(2 * n * d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      codes[i * d + j] = z1[j] + ts[i] * (z2[j] - z1[j]);
      codes[(n + i) * d + j] = z1[j] + (ts[i] + eps) * (z2[j] - z1[j]);
    }
  }
  Tensor f = features(g(Tensor({2 * n, d}, std::move(codes))));
  const std::size_t k = f.numel() / (2 * n);
  std::vector<double> out(n);
  const auto fd = f.data();
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += std::pow(fd[i * k + j] - fd[(n + i) * k + j], 2);
    out[i] = s / (eps * eps);
  }
  return out;
}

double perceptual_path_length(const GeneratorFn& g, std::size_t latent_dim, const FeatureFn& features,
                              std::size_t n_paths, double eps, double sigma_z, std::uint64_t seed) {
  if (n_paths == 0 || !(eps > 0.0)) throw SteerError("perceptual_path_length: need paths and a positive step");
  Rng rng(derive_seed(seed, "ppl"));
  double total = 0.0;
  for (std::size_t p = 0; p < n_paths; ++p) {
    const auto z1 = rng.normal_vector(latent_dim, sigma_z);
    const auto z2 = rng.normal_vector(latent_dim, sigma_z);
    const double t = rng.uniform();
    total += path_length_at(g, features, z1, z2, std::span<const double>(&t, 1), eps)[0];
  }
  return total / static_cast<double>(n_paths);
}

double perceptual_path_length(const nn::Generator& g, const eval::ProxyExtractor& extractor, std::size_t n_paths,
                              double eps, double sigma_z, std::uint64_t seed) {
  std::vector<std::size_t> cls;
  Rng crng(derive_seed(seed, "ppl-class"));
  GeneratorFn gen = [&](const Tensor& z) {
    // Both ends of a path share one class.
    std::vector<std::size_t> c;
    if (g.spec().conditional()) {
      const std::size_t half = z.dim(0) / 2;
      for (std::size_t i = 0; i < half; ++i) c.push_back(crng.index(g.spec().n_classes));
      const auto copy = c;
      c.insert(c.end(), copy.begin(), copy.end());
    }
    return g.forward(z, c);
  };
  FeatureFn feat = [&](const Tensor& x) { return extractor.features_tensor(x); };
  return perceptual_path_length(gen, g.spec().latent_dim, feat, n_paths, eps, sigma_z, seed);
}

// ---------------------------------------------------------------------------

std::string transform_name(Transform t) {
  switch (t) {
    case Transform::kIdentity: return "identity";
    case Transform::kBrightness: return "brightness";
    case Transform::kHorizontalShift: return "hshift";
    case Transform::kVerticalShift: return "vshift";
    case Transform::kZoom: return "zoom";
  }
  return "?";
}

Transform parse_transform(const std::string& name) {
  for (Transform t : {Transform::kIdentity, Transform::kBrightness, Transform::kHorizontalShift,
                      Transform::kVerticalShift, Transform::kZoom}) {
    if (transform_name(t) == name) return t;
  }
  throw SteerError("unknown transform '" + name + "' (identity, brightness, hshift, vshift, zoom)");
}

Tensor apply_transform(const Tensor& images, Transform t, double alpha) {
  if (images.rank() != 4) throw ShapeError("apply_transform: need (n, C, H, W) images");
  const std::size_t h = images.dim(2), w = images.dim(3), planes = images.dim(0) * images.dim(1);
  const auto src = images.data();
  std::vector<double> out(src.begin(), src.end());
  const double fill = -1.0;  // zero intensity
  switch (t) {
    case Transform::kIdentity: break;
    case Transform::kBrightness:
      for (double& v : out) v = data::to_model(std::clamp(data::to_intensity(v) * (1.0 + alpha), 0.0, 1.0));
      break;
    case Transform::kHorizontalShift:
    case Transform::kVerticalShift: {
      const auto s = static_cast<std::ptrdiff_t>(std::llround(alpha));
      const bool horiz = t == Transform::kHorizontalShift;
      for (std::size_t p = 0; p < planes; ++p) {
        for (std::size_t i = 0; i < h; ++i) {
          for (std::size_t j = 0; j < w; ++j) {
            const auto si = static_cast<std::ptrdiff_t>(i) - (horiz ? 0 : s);
            const auto sj = static_cast<std::ptrdiff_t>(j) - (horiz ? s : 0);
            const bool inside = si >= 0 && sj >= 0 && si < static_cast<std::ptrdiff_t>(h) && sj < static_cast<std::ptrdiff_t>(w);
            out[p * h * w + i * w + j] =
                inside ? src[p * h * w + static_cast<std::size_t>(si) * w + static_cast<std::size_t>(sj)] : fill;
          }
        }
      }
      break;
    }
    case Transform::kZoom: {
      const double scale = 1.0 + alpha;
      if (!(scale > 0.0)) throw SteerError("zoom: 1 + alpha must be positive");
      const double cy = 0.5 * static_cast<double>(h) - 0.5, cx = 0.5 * static_cast<double>(w) - 0.5;
      for (std::size_t p = 0; p < planes; ++p) {
        const double* img = src.data() + p * h * w;
        for (std::size_t i = 0; i < h; ++i)
          for (std::size_t j = 0; j < w; ++j)
            out[p * h * w + i * w + j] = bilinear(img, h, w, cy + (static_cast<double>(i) - cy) / scale,
                                                  cx + (static_cast<double>(j) - cx) / scale, fill);
      }
      break;
    }
  }
  return Tensor(images.shape(), std::move(out));
}

namespace {

// Loss of w (a tensor that may require grad) over fixed codes, all alphas.
Tensor reconstruction_loss(const nn::Generator& g, Transform transform, std::span<const double> alphas,
                           const Tensor& w, const Tensor& z, std::span<const std::size_t> cls) {
  const std::size_t n = z.dim(0), d = z.dim(1);
  Tensor base = g.forward(z.detach(), cls).detach();
  Tensor total;
  for (double a : alphas) {
    Tensor target = apply_transform(base, transform, a);
    Tensor shifted = add(z, scale(reshape(w, {1, d}), a));
    Tensor diff = sub(g.forward(shifted, cls), target);
    Tensor term = scale(sum(mul(diff, diff)), 1.0 / static_cast<double>(n));
    total = total.defined() ? add(total, term) : term;
  }
  return scale(total, 1.0 / static_cast<double>(alphas.size()));
}

}  // namespace

double transform_loss(const nn::Generator& g, Transform transform, std::span<const double> alphas,
                      std::span<const double> w, const TransformOptions& options) {
  const std::size_t d = g.spec().latent_dim;
  Rng rng(derive_seed(options.seed, "transform-eval"));
  Tensor z({options.eval_codes, d}, rng.normal_vector(options.eval_codes * d, options.sigma_z));
  const auto cls = random_classes(g, options.eval_codes, rng);
  return reconstruction_loss(g, transform, alphas, Tensor({d}, std::vector<double>(w.begin(), w.end())), z, cls).item();
}

TransformFit learn_transform_direction(const nn::Generator& g, Transform transform, std::span<const double> alphas,
                                       const TransformOptions& options) {
  if (alphas.empty()) throw SteerError("learn_transform_direction: empty alpha grid");
  const std::size_t d = g.spec().latent_dim;
  nn::Generator frozen = g.clone();
  frozen.set_trainable(false);
  Tensor w = Tensor::zeros({d}, true);
  Adam opt({w}, AdamHyper{.lr = options.lr, .beta1 = 0.9, .beta2 = 0.999});
  Rng rng(derive_seed(options.seed, "transform-fit"));

  TransformFit fit;
  fit.loss_at_zero = transform_loss(frozen, transform, alphas, std::vector<double>(d, 0.0), options);
  std::vector<double> best(d, 0.0);
  double best_loss = fit.loss_at_zero;
  const std::size_t check_every = std::max<std::size_t>(1, options.steps / 20);
  for (std::size_t s = 0; s < options.steps; ++s) {
    Tensor z({options.batch, d}, rng.normal_vector(options.batch * d, options.sigma_z));
    const auto cls = random_classes(frozen, options.batch, rng);
    Tape tape;
    {
      TapeScope scope(tape);
      Tensor loss = reconstruction_loss(frozen, transform, alphas, w, z, cls);
      if (!std::isfinite(loss.item())) {
        fit.diverged = true;
        break;
      }
      opt.zero_grad();
      tape.backward(loss);
    }
    opt.step();
    const auto wv = w.data();
    if (!std::all_of(wv.begin(), wv.end(), [](double v) { return std::isfinite(v); })) {
      fit.diverged = true;
      break;
    }
    if ((s + 1) % check_every == 0 || s + 1 == options.steps) {
      const double l = transform_loss(frozen, transform, alphas, wv, options);
      if (!std::isfinite(l)) {
        fit.diverged = true;
        break;
      }
      if (l < best_loss) {
        best_loss = l;
        best.assign(wv.begin(), wv.end());
      }
    }
  }
  fit.raw = best;
  fit.loss = best_loss;
  const double nw = norm(best);
  fit.degenerate = nw < 1e-6;
  std::vector<double> unit(d, 0.0);
  if (fit.degenerate) {
    unit[0] = 1.0;
  } else {
    for (std::size_t j = 0; j < d; ++j) unit[j] = best[j] / nw;
  }
  fit.direction.name = transform_name(transform);
  fit.direction.source = "transform-fit";
  fit.direction.vector = std::move(unit);
  fit.direction.metadata = {{"loss", fit.loss},
                            {"loss_at_zero", fit.loss_at_zero},
                            {"raw_norm", nw},
                            {"degenerate", fit.degenerate ? 1.0 : 0.0},
                            {"diverged", fit.diverged ? 1.0 : 0.0}};
  return fit;
}

// ---------------------------------------------------------------------------

std::string encode_direction(const Direction& d) {
  json j;
  j["id"] = d.id;
  j["name"] = d.name;
  j["source"] = d.source;
  j["d"] = d.vector.size();
  j["vector"] = d.vector;
  j["metadata"] = json::object();
  for (const auto& [k, v] : d.metadata) j["metadata"][k] = v;
  return j.dump();
}

Direction decode_direction(const std::string& line) {
  Direction d;
  try {
    const json j = json::parse(line);
    d.id = j.at("id").get<std::string>();
    d.name = j.at("name").get<std::string>();
    d.source = j.at("source").get<std::string>();
    d.vector = j.at("vector").get<std::vector<double>>();
    if (j.at("d").get<std::size_t>() != d.vector.size()) throw SteerError("direction '" + d.id + "': d does not match");
    for (const auto& [k, v] : j.at("metadata").items()) d.metadata[k] = v.get<double>();
  } catch (const json::exception& e) {
    throw SteerError(std::string("malformed direction record: ") + e.what());
  }
  return d;
}

std::vector<Direction> read_directions(const std::string& path) {
  std::ifstream in(path);
  if (!in) return {};
  std::vector<Direction> out;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(decode_direction(line));
  return out;
}

Direction append_direction(const std::string& path, Direction d) {
  const double n = norm(d.vector);
  if (std::abs(n - 1.0) > 1e-9) throw SteerError("direction '" + d.name + "' is not unit norm");
  auto existing = read_directions(path);
  std::set<std::string> ids;
  for (const auto& e : existing) ids.insert(e.id);
  if (d.id.empty() || ids.count(d.id)) {
    const std::string stem = d.name.empty() ? "direction" : d.name;
    std::size_t i = 0;
    do d.id = stem + "-" + std::to_string(i++);
    while (ids.count(d.id));
  }
  std::string text;
  for (const auto& e : existing) text += encode_direction(e) + "\n";
  text += encode_direction(d) + "\n";
  binio::write_file_atomic(path, text);
  return d;
}

}  // namespace ltgan::steer
