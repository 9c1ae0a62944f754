#include "ltgan/nn.hpp"

#include <algorithm>

#include <cmath>
#include <iostream>
#include <sstream>

#include "ltgan/optim.hpp"

namespace ltgan::nn {

namespace {

constexpr double kSigmaFloor = 1e-12;

double norm(std::span<const double> x) {
  double acc = 0.0;
  for (double v : x) acc += v * v;
  return std::sqrt(acc);
}

void normalize_into(std::vector<double>& x, std::span<double> out) {
  const double n = std::max(norm(x), kSigmaFloor);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = round_fp32(x[i] / n);
}

Tensor deep_copy(const Tensor& t) { return t.defined() ? t.clone() : Tensor(); }

DenseLayer copy_layer(const DenseLayer& l) { return {l.name, deep_copy(l.weight), deep_copy(l.bias)}; }

SpectralNormState copy_state(const SpectralNormState& s) { return {deep_copy(s.u), deep_copy(s.v), s.sigma}; }

void push_layer(NamedTensors& out, const std::string& prefix, const DenseLayer& l) {
  out.emplace_back(prefix + l.name + ".weight", l.weight);
  out.emplace_back(prefix + l.name + ".bias", l.bias);
}

void set_flag(const DenseLayer& l, bool flag) {
  Tensor w = l.weight, b = l.bias;
  w.set_requires_grad(flag);
  b.set_requires_grad(flag);
}

}  // namespace

std::string to_string(const ImageShape& s) {
  return std::to_string(s.channels) + "x" + std::to_string(s.height) + "x" + std::to_string(s.width);
}

ImageShape parse_image_shape(const std::string& text) {
  ImageShape s;
  char x1 = 0, x2 = 0;
  std::istringstream is(text);
  if (!(is >> s.channels >> x1 >> s.height >> x2 >> s.width) || x1 != 'x' || x2 != 'x' || !is.eof() ||
      s.numel() == 0) {
    throw SpecError("image shape must look like CxHxW, got '" + text + "'");
  }
  return s;
}

void NetworkSpec::validate() const {
  if (latent_dim == 0) throw SpecError("latent_dim must be positive");
  if (image.numel() == 0) throw SpecError("image shape must be non-empty");
  if (d_hidden.empty()) throw SpecError("discriminator needs at least one hidden layer");
  if (tap_index >= d_hidden.size()) {
    throw SpecError("tap_index " + std::to_string(tap_index) + " does not address a hidden layer of D (" +
                    std::to_string(d_hidden.size()) + " hidden layers)");
  }
  if (tap_shape.numel() != d_hidden[tap_index]) {
    throw SpecError("tap shape " + to_string(tap_shape) + " does not match tap layer width " +
                    std::to_string(d_hidden[tap_index]));
  }
  if (pool == 0 || tap_shape.height < pool || tap_shape.width < pool) {
    throw SpecError("pool kernel must be positive and fit the tap shape");
  }
  for (std::size_t w : g_hidden)
    if (w == 0) throw SpecError("generator layer widths must be positive");
  for (std::size_t w : d_hidden)
    if (w == 0) throw SpecError("discriminator layer widths must be positive");
  if (n_classes > 0 && embed_dim == 0) throw SpecError("conditional spec needs embed_dim > 0");
  if (rotation_head && image.height != image.width) throw SpecError("rotation head needs square images");
}

ImageShape NetworkSpec::pooled_tap() const {
  return {tap_shape.channels, (tap_shape.height - pool) / pool + 1, (tap_shape.width - pool) / pool + 1};
}

NetworkSpec NetworkSpec::shapes_default() {
  NetworkSpec s;
  // Same 64 tap activations viewed as 16 channels: A gets 16 hidden units.
  s.tap_shape = {16, 2, 2};
  return s;
}

NetworkSpec NetworkSpec::ring_default() {
  NetworkSpec s;
  s.latent_dim = 16;
  s.image = {1, 1, 2};
  s.g_hidden = {128, 128};
  s.d_hidden = {128, 128};
  s.tap_index = 1;
  s.tap_shape = {8, 4, 4};
  s.pool = 2;
  return s;
}

DenseLayer make_dense(std::string name, std::size_t in, std::size_t out, Rng& rng, double gain) {
  const double stddev = std::sqrt(gain / static_cast<double>(in));
  std::vector<double> w(in * out);
  for (auto& v : w) v = round_fp32(rng.normal(0.0, stddev));
  return {std::move(name), Tensor({in, out}, std::move(w)), Tensor::zeros({out})};
}

Tensor dense(const Tensor& x, const Tensor& weight, const Tensor& bias) { return add(matmul(x, weight), bias); }

SpectralNormState make_spectral_state(const Tensor& weight, Rng& rng) {
  SpectralNormState s;
  std::vector<double> u = rng.normal_vector(weight.dim(0));
  s.u = Tensor::zeros({weight.dim(0)});
  s.v = Tensor::zeros({weight.dim(1)});
  normalize_into(u, s.u.mutable_data());
  return s;
}

double power_iteration(const Tensor& weight, SpectralNormState& state) {
  if (weight.rank() != 2) throw ShapeError("spectral norm: weight must be a matrix, got " + ltgan::to_string(weight.shape()));
  const std::size_t rows = weight.dim(0), cols = weight.dim(1);
  const auto w = weight.data();
  auto u = state.u.mutable_data();
  auto v = state.v.mutable_data();
  std::vector<double> tmp(cols, 0.0);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) tmp[j] += w[i * cols + j] * u[i];
  normalize_into(tmp, v);
  tmp.assign(rows, 0.0);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) tmp[i] += w[i * cols + j] * v[j];
  normalize_into(tmp, u);
  double sigma = 0.0;
  for (std::size_t i = 0; i < rows; ++i) sigma += u[i] * tmp[i];
  state.sigma = sigma;
  return sigma;
}

Tensor apply_spectral_norm(const Tensor& weight, const SpectralNormState& state) {
  const std::size_t cols = weight.dim(1);
  Tensor wv = matmul(weight, reshape(state.v, {cols, 1}));
  Tensor sigma = sum(mul(reshape(wv, {weight.dim(0)}), state.u));
  if (!(sigma.item() > kSigmaFloor)) {
    std::clog << "warning: spectral norm estimate " << sigma.item() << " below floor, using " << kSigmaFloor
              << '\n';
    return scale(weight, 1.0 / kSigmaFloor);
  }
  return div(weight, sigma);
}

Tensor spectral_normalize(const Tensor& weight, SpectralNormState& state) {
  power_iteration(weight, state);
  return apply_spectral_norm(weight, state);
}

Tensor conditional_embed(const Tensor& x, std::span<const std::size_t> classes, const Tensor& table) {
  if (!table.defined()) {
    if (!classes.empty()) throw std::invalid_argument("class labels given to an unconditional network");
    return x;
  }
  if (classes.size() != x.dim(0)) {
    throw ShapeError("conditional_embed: " + std::to_string(classes.size()) + " labels for batch of " +
                     std::to_string(x.dim(0)));
  }
  for (std::size_t c : classes) {
    if (c >= table.dim(0)) {
      throw std::invalid_argument("unknown class " + std::to_string(c) + " (have " + std::to_string(table.dim(0)) +
                                  ")");
    }
  }
  return concat({x, take_rows(table, classes)}, 1);
}

// ---------------------------------------------------------------------------

Generator::Generator(const NetworkSpec& spec, Rng& init) : spec_(spec) {
  spec_.validate();
  std::size_t in = spec_.latent_dim + (spec_.conditional() ? spec_.embed_dim : 0);
  for (std::size_t i = 0; i < spec_.g_hidden.size(); ++i) {
    layers_.push_back(make_dense("fc" + std::to_string(i), in, spec_.g_hidden[i], init));
    in = spec_.g_hidden[i];
  }
  layers_.push_back(make_dense("out", in, spec_.image.numel(), init, 1.0));
  if (spec_.conditional()) {
    std::vector<double> e(spec_.n_classes * spec_.embed_dim);
    for (auto& v : e) v = round_fp32(init.normal());
    embedding_ = Tensor({spec_.n_classes, spec_.embed_dim}, std::move(e));
  }
  set_trainable(true);
}

Tensor Generator::forward(const Tensor& z, std::span<const std::size_t> classes) const {
  if (z.rank() != 2 || z.dim(1) != spec_.latent_dim) {
    throw ShapeError("generator: expected codes of shape (b, " + std::to_string(spec_.latent_dim) + "), got " +
                     ltgan::to_string(z.shape()));
  }
  if (spec_.conditional() && classes.empty()) throw std::invalid_argument("generator: conditional model needs labels");
  Tensor h = conditional_embed(z, classes, embedding_);
  for (std::size_t i = 0; i + 1 < layers_.size(); ++i) h = relu(dense(h, layers_[i].weight, layers_[i].bias));
  h = tanh(dense(h, layers_.back().weight, layers_.back().bias));
  return reshape(h, spec_.image.batched(z.dim(0)));
}

Generator Generator::clone() const {
  Generator g;
  g.spec_ = spec_;
  for (const auto& l : layers_) g.layers_.push_back(copy_layer(l));
  g.embedding_ = deep_copy(embedding_);
  return g;
}

std::vector<Tensor> Generator::parameters() const {
  std::vector<Tensor> out;
  for (const auto& [name, t] : named_tensors()) out.push_back(t);
  return out;
}

NamedTensors Generator::named_tensors() const {
  NamedTensors out;
  for (const auto& l : layers_) push_layer(out, "G.", l);
  if (embedding_.defined()) out.emplace_back("G.embed", embedding_);
  return out;
}

void Generator::set_trainable(bool trainable) {
  for (auto& t : parameters()) t.set_requires_grad(trainable);
}

// ---------------------------------------------------------------------------

Discriminator::Discriminator(const NetworkSpec& spec, Rng& init, std::size_t initial_power_iterations)
    : spec_(spec) {
  spec_.validate();
  std::size_t in = spec_.image.numel();
  for (std::size_t i = 0; i < spec_.d_hidden.size(); ++i) {
    layers_.push_back(make_dense("fc" + std::to_string(i), in, spec_.d_hidden[i], init));
    in = spec_.d_hidden[i];
    if (i == spec_.tap_index && spec_.conditional()) in += spec_.embed_dim;
  }
  layers_.push_back(make_dense("logit", in, 1, init, 1.0));
  for (const auto& l : layers_) sn_.push_back(make_spectral_state(l.weight, init));
  if (spec_.rotation_head) {
    rotation_ = make_dense("rot", spec_.d_hidden.back(), 4, init, 1.0);
    rotation_sn_ = make_spectral_state(rotation_.weight, init);
  }
  if (spec_.conditional()) {
    std::vector<double> e(spec_.n_classes * spec_.embed_dim);
    for (auto& v : e) v = round_fp32(init.normal());
    embedding_ = Tensor({spec_.n_classes, spec_.embed_dim}, std::move(e));
  }
  for (std::size_t k = 0; k < initial_power_iterations; ++k) power_iterate();
  set_trainable(true);
}

Tensor Discriminator::layer(std::size_t i, const Tensor& x) const {
  return dense(x, apply_spectral_norm(layers_[i].weight, sn_[i]), layers_[i].bias);
}

Tensor Discriminator::pool_tap(const Tensor& tap) const {
  const std::size_t b = tap.dim(0);
  Tensor blocks = reshape(tap, spec_.tap_shape.batched(b));
  Tensor pooled = avg_pool2d(blocks, spec_.pool, spec_.pool);
  return reshape(pooled, {b, spec_.feature_width()});
}

DiscriminatorOutput Discriminator::forward(const Tensor& images, std::span<const std::size_t> classes,
                                           bool with_rotation) const {
  if (images.numel() % spec_.image.numel() != 0 || images.dim(0) * spec_.image.numel() != images.numel()) {
    throw ShapeError("discriminator: images " + ltgan::to_string(images.shape()) + " do not match " +
                     nn::to_string(spec_.image));
  }
  if (spec_.conditional() && classes.empty()) {
    throw std::invalid_argument("discriminator: conditional model needs labels");
  }
  if (with_rotation && !spec_.rotation_head) throw std::invalid_argument("discriminator: no rotation head");
  const std::size_t b = images.dim(0);
  DiscriminatorOutput out;
  Tensor h = reshape(images, {b, spec_.image.numel()});
  Tensor last_hidden;
  for (std::size_t i = 0; i < spec_.d_hidden.size(); ++i) {
    h = leaky_relu(layer(i, h), spec_.leaky_slope);
    last_hidden = h;
    if (i == spec_.tap_index) {
      out.tap = h;
      out.features = pool_tap(h);
      if (spec_.conditional()) h = conditional_embed(h, classes, embedding_);
    }
  }
  out.logits = layer(layers_.size() - 1, h);
  if (with_rotation) {
    out.rotation_logits = dense(last_hidden, apply_spectral_norm(rotation_.weight, rotation_sn_), rotation_.bias);
  }
  return out;
}

Tensor Discriminator::features(const Tensor& images) const {
  const std::size_t b = images.dim(0);
  if (b * spec_.image.numel() != images.numel()) {
    throw ShapeError("features: images " + ltgan::to_string(images.shape()) + " do not match " + nn::to_string(spec_.image));
  }
  Tensor h = reshape(images, {b, spec_.image.numel()});
  for (std::size_t i = 0; i <= spec_.tap_index; ++i) h = leaky_relu(layer(i, h), spec_.leaky_slope);
  return pool_tap(h);
}

void Discriminator::power_iterate() {
  for (std::size_t i = 0; i < layers_.size(); ++i) power_iteration(layers_[i].weight, sn_[i]);
  if (spec_.rotation_head) power_iteration(rotation_.weight, rotation_sn_);
}

Discriminator Discriminator::clone() const {
  Discriminator d;
  d.spec_ = spec_;
  for (const auto& l : layers_) d.layers_.push_back(copy_layer(l));
  for (const auto& s : sn_) d.sn_.push_back(copy_state(s));
  if (spec_.rotation_head) {
    d.rotation_ = copy_layer(rotation_);
    d.rotation_sn_ = copy_state(rotation_sn_);
  }
  d.embedding_ = deep_copy(embedding_);
  return d;
}

std::vector<Tensor> Discriminator::parameters() const {
  std::vector<Tensor> out;
  for (const auto& l : layers_) {
    out.push_back(l.weight);
    out.push_back(l.bias);
  }
  if (spec_.rotation_head) {
    out.push_back(rotation_.weight);
    out.push_back(rotation_.bias);
  }
  if (embedding_.defined()) out.push_back(embedding_);
  return out;
}

NamedTensors Discriminator::named_tensors() const {
  NamedTensors out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    push_layer(out, "D.", layers_[i]);
    out.emplace_back("D." + layers_[i].name + ".sn_u", sn_[i].u);
    out.emplace_back("D." + layers_[i].name + ".sn_v", sn_[i].v);
  }
  if (spec_.rotation_head) {
    push_layer(out, "D.", rotation_);
    out.emplace_back("D.rot.sn_u", rotation_sn_.u);
    out.emplace_back("D.rot.sn_v", rotation_sn_.v);
  }
  if (embedding_.defined()) out.emplace_back("D.embed", embedding_);
  return out;
}

std::vector<Tensor> Discriminator::normalized_weights() const {
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) out.push_back(apply_spectral_norm(layers_[i].weight.detach(), sn_[i]));
  if (spec_.rotation_head) out.push_back(apply_spectral_norm(rotation_.weight.detach(), rotation_sn_));
  return out;
}

void Discriminator::set_trainable(bool trainable) {
  for (auto& t : parameters()) t.set_requires_grad(trainable);
}

// ---------------------------------------------------------------------------

AuxNet::AuxNet(std::size_t feature_width, std::size_t hidden, Rng& init)
    : feature_width_(feature_width), hidden_(hidden) {
  if (feature_width == 0 || hidden == 0) throw SpecError("aux net needs positive widths");
  in_ = make_dense("fc0", 2 * feature_width, hidden, init);
  out_ = make_dense("fc1", hidden, 1, init, 1.0);
  set_trainable(true);
}

Tensor AuxNet::forward(const Tensor& f1, const Tensor& f2) const {
  if (f1.rank() != 2 || f2.rank() != 2 || f1.dim(1) != feature_width_ || f2.dim(1) != feature_width_ ||
      f1.dim(0) != f2.dim(0)) {
    throw ShapeError("aux net: feature pair " + ltgan::to_string(f1.shape()) + " / " + ltgan::to_string(f2.shape()) +
                     " does not match width " + std::to_string(feature_width_));
  }
  Tensor h = relu(dense(concat({f1, f2}, 1), in_.weight, in_.bias));
  return sigmoid(dense(h, out_.weight, out_.bias));
}

AuxNet AuxNet::clone() const {
  AuxNet a;
  a.feature_width_ = feature_width_;
  a.hidden_ = hidden_;
  a.in_ = copy_layer(in_);
  a.out_ = copy_layer(out_);
  return a;
}

std::size_t AuxNet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : parameters()) n += t.numel();
  return n;
}

std::vector<Tensor> AuxNet::parameters() const { return {in_.weight, in_.bias, out_.weight, out_.bias}; }

NamedTensors AuxNet::named_tensors() const {
  NamedTensors out;
  push_layer(out, "A.", in_);
  push_layer(out, "A.", out_);
  return out;
}

void AuxNet::set_trainable(bool trainable) {
  set_flag(in_, trainable);
  set_flag(out_, trainable);
}

void assign_tensors(const NamedTensors& dst, const NamedTensors& src) {
  if (dst.size() != src.size()) throw std::invalid_argument("assign_tensors: tensor count mismatch");
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (dst[i].first != src[i].first || dst[i].second.shape() != src[i].second.shape()) {
      throw std::invalid_argument("assign_tensors: mismatch at " + dst[i].first);
    }
    Tensor target = dst[i].second;
    auto out = target.mutable_data();
    auto in = src[i].second.data();
    std::copy(in.begin(), in.end(), out.begin());
  }
}

}  // namespace ltgan::nn
