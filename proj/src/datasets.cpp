#include "ltgan/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "ltgan/binio.hpp"

namespace ltgan::data {

namespace {

constexpr char kCorpusMagic[4] = {'L', 'T', 'S', 'H'};
constexpr std::uint32_t kCorpusVersion = 1;

bool inside(ShapeClass c, double dx, double dy, double half) {
  if (c == ShapeClass::kSquare) return std::abs(dx) <= half && std::abs(dy) <= half;
  return dx * dx + dy * dy <= half * half;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

struct Fit {
  double corr = -1.0;
  double size = 0.0;
  std::vector<double> tmpl;
};

// Normalized correlation of the image against a unit-brightness template.
Fit fit_at(std::span<const double> img, double img_norm, AttributeVector a, double size, const ShapesSpec& spec) {
  a.size = size;
  a.brightness = 1.0;
  Fit f;
  f.size = size;
  f.tmpl = render_unchecked(a, spec);
  const double tn = std::sqrt(dot(f.tmpl, f.tmpl));
  f.corr = tn > 0.0 && img_norm > 0.0 ? dot(img, f.tmpl) / (tn * img_norm) : -1.0;
  return f;
}

Fit best_size(std::span<const double> img, double img_norm, const AttributeVector& a, double guess,
              const ShapesSpec& spec) {
  const double min_size = 0.5 / static_cast<double>(spec.width);
  double lo = std::max(min_size, 0.6 * guess), hi = std::max(2.0 * min_size, 1.4 * guess);
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double x1 = hi - phi * (hi - lo), x2 = lo + phi * (hi - lo);
  Fit f1 = fit_at(img, img_norm, a, x1, spec), f2 = fit_at(img, img_norm, a, x2, spec);
  for (int it = 0; it < 16; ++it) {
    if (f1.corr >= f2.corr) {
      hi = x2;
      x2 = x1;
      f2 = std::move(f1);
      x1 = hi - phi * (hi - lo);
      f1 = fit_at(img, img_norm, a, x1, spec);
    } else {
      lo = x1;
      x1 = x2;
      f1 = std::move(f2);
      x2 = lo + phi * (hi - lo);
      f2 = fit_at(img, img_norm, a, x2, spec);
    }
  }
  return f1.corr >= f2.corr ? f1 : f2;
}

double clamp_flag(double v, const Range& r, bool& flag) {
  if (v < r.lo) {
    flag = true;
    return r.lo;
  }
  if (v > r.hi) {
    flag = true;
    return r.hi;
  }
  return v;
}

}  // namespace

// ---------------------------------------------------------------------------

void RingSpec::validate() const {
  if (n_modes == 0) throw std::invalid_argument("ring: n_modes must be positive");
  if (!(radius > 0.0) || !(std > 0.0)) throw std::invalid_argument("ring: radius and std must be positive");
  if (n_modes > 1 && !(std < mode_spacing() / 4.0)) {
    throw std::invalid_argument("ring: std must be below a quarter of the mode spacing (" +
                                std::to_string(mode_spacing() / 4.0) + ")");
  }
  if (samples_per_epoch == 0) throw std::invalid_argument("ring: samples_per_epoch must be positive");
}

std::array<double, 2> RingSpec::mode_center(std::size_t k) const {
  const double angle = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n_modes);
  return {radius * std::cos(angle), radius * std::sin(angle)};
}

double RingSpec::mode_spacing() const {
  return 2.0 * radius * std::sin(std::numbers::pi / static_cast<double>(n_modes));
}

Tensor sample_ring(const RingSpec& spec, Rng& rng, std::size_t count) {
  spec.validate();
  if (count == 0) throw std::invalid_argument("sample_ring: count must be positive");
  std::vector<double> pts(2 * count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto c = spec.mode_center(rng.index(spec.n_modes));
    pts[2 * i] = c[0] + rng.normal(0.0, spec.std);
    pts[2 * i + 1] = c[1] + rng.normal(0.0, spec.std);
  }
  return Tensor({count, 2}, std::move(pts));
}

// ---------------------------------------------------------------------------

std::string to_string(ShapeClass c) { return c == ShapeClass::kSquare ? "square" : "disc"; }

void ShapesSpec::validate() const {
  if (height == 0 || width == 0 || supersample == 0) throw std::invalid_argument("shapes: empty image");
  if (center.lo - size.hi / 2 < 0.0 || center.hi + size.hi / 2 > 1.0) {
    throw std::invalid_argument("shapes: ranges let shapes leave the frame");
  }
  if (!(brightness.lo >= 0.0 && brightness.hi <= 1.0 && brightness.lo <= brightness.hi)) {
    throw std::invalid_argument("shapes: brightness range must lie in [0, 1]");
  }
}

std::string attribute_name(Attribute a) {
  switch (a) {
    case Attribute::kBrightness: return "brightness";
    case Attribute::kCenterX: return "center_x";
    case Attribute::kCenterY: return "center_y";
    case Attribute::kSize: return "size";
    case Attribute::kClass: return "class";
  }
  return "?";
}

Attribute parse_attribute(const std::string& name) {
  for (std::size_t i = 0; i < kAttributeCount; ++i) {
    if (attribute_name(static_cast<Attribute>(i)) == name) return static_cast<Attribute>(i);
  }
  throw std::invalid_argument("unknown attribute '" + name + "'");
}

double attribute_value(const AttributeVector& v, Attribute a) {
  switch (a) {
    case Attribute::kBrightness: return v.brightness;
    case Attribute::kCenterX: return v.center_x;
    case Attribute::kCenterY: return v.center_y;
    case Attribute::kSize: return v.size;
    case Attribute::kClass: return static_cast<double>(v.shape);
  }
  return 0.0;
}

AttributeVector sample_attributes(const ShapesSpec& spec, Rng& rng) {
  auto draw = [&](const Range& r) { return r.lo + (r.hi - r.lo) * rng.uniform(); };
  AttributeVector a;
  a.brightness = draw(spec.brightness);
  a.center_x = draw(spec.center);
  a.center_y = draw(spec.center);
  a.size = draw(spec.size);
  a.shape = static_cast<ShapeClass>(rng.index(kShapeClasses));
  return a;
}

std::vector<double> render_unchecked(const AttributeVector& a, const ShapesSpec& spec) {
  const std::size_t H = spec.height, W = spec.width, S = spec.supersample;
  std::vector<double> img(H * W, 0.0);
  const double cx = a.center_x * static_cast<double>(W), cy = a.center_y * static_cast<double>(H);
  const double half = a.size * static_cast<double>(W) / 2.0;
  const auto clip = [](double v, std::size_t n) {
    return static_cast<std::size_t>(std::clamp(v, 0.0, static_cast<double>(n)));
  };
  const std::size_t r0 = clip(std::floor(cy - half), H), r1 = clip(std::ceil(cy + half) + 1, H);
  const std::size_t c0 = clip(std::floor(cx - half), W), c1 = clip(std::ceil(cx + half) + 1, W);
  const double weight = a.brightness / static_cast<double>(S * S);
  for (std::size_t r = r0; r < r1; ++r) {
    for (std::size_t c = c0; c < c1; ++c) {
      std::size_t hits = 0;
      for (std::size_t i = 0; i < S; ++i) {
        const double y = static_cast<double>(r) + (static_cast<double>(i) + 0.5) / static_cast<double>(S);
        for (std::size_t j = 0; j < S; ++j) {
          const double x = static_cast<double>(c) + (static_cast<double>(j) + 0.5) / static_cast<double>(S);
          hits += inside(a.shape, x - cx, y - cy, half);
        }
      }
      img[r * W + c] = weight * static_cast<double>(hits);
    }
  }
  return img;
}

std::vector<double> render_shape(const AttributeVector& a, const ShapesSpec& spec) {
  spec.validate();
  if (!spec.center.contains(a.center_x) || !spec.center.contains(a.center_y) || !spec.size.contains(a.size) ||
      !(a.brightness >= 0.0 && a.brightness <= 1.0)) {
    throw std::invalid_argument("render_shape: attributes out of range (brightness " + std::to_string(a.brightness) +
                                ", center " + std::to_string(a.center_x) + "," + std::to_string(a.center_y) +
                                ", size " + std::to_string(a.size) + ")");
  }
  return render_unchecked(a, spec);
}

AttributeVector measure_attributes(std::span<const double> image, const ShapesSpec& spec) {
  const std::size_t H = spec.height, W = spec.width;
  if (image.size() != H * W) {
    throw ShapeError("measure_attributes: image has " + std::to_string(image.size()) + " values, expected " +
                     std::to_string(H * W));
  }
  std::vector<double> intensity(H * W);
  for (std::size_t i = 0; i < H * W; ++i) intensity[i] = std::clamp(to_intensity(image[i]), 0.0, 1.0);

  double mass = 0.0, mx = 0.0, my = 0.0;
  for (std::size_t r = 0; r < H; ++r) {
    for (std::size_t c = 0; c < W; ++c) {
      const double v = intensity[r * W + c];
      if (v < spec.threshold) continue;
      mass += v;
      mx += v * (static_cast<double>(c) + 0.5);
      my += v * (static_cast<double>(r) + 0.5);
    }
  }
  AttributeVector out;
  if (mass <= 0.0) {
    out.null = true;
    return out;
  }
  mx /= mass;
  my /= mass;
  double var = 0.0;
  for (std::size_t r = 0; r < H; ++r) {
    for (std::size_t c = 0; c < W; ++c) {
      const double v = intensity[r * W + c];
      if (v < spec.threshold) continue;
      const double dx = static_cast<double>(c) + 0.5 - mx, dy = static_cast<double>(r) + 0.5 - my;
      var += v * (dx * dx + dy * dy);
    }
  }
  // Per-axis variance in pixels, less the grouping variance of unit pixels.
  var = std::max(var / mass / 2.0 - 1.0 / 12.0, 1.0 / 12.0);
  const double wpx = static_cast<double>(W);

  AttributeVector probe;
  probe.center_x = mx / wpx;
  probe.center_y = my / static_cast<double>(H);
  const double img_norm = std::sqrt(dot(intensity, intensity));

  // A uniform square of side s has per-axis variance s^2 / 12, a disc of diameter s has s^2 / 16.
  probe.shape = ShapeClass::kSquare;
  Fit sq = best_size(intensity, img_norm, probe, std::sqrt(12.0 * var) / wpx, spec);
  probe.shape = ShapeClass::kDisc;
  Fit disc = best_size(intensity, img_norm, probe, std::sqrt(16.0 * var) / wpx, spec);
  const bool is_square = sq.corr >= disc.corr;
  const Fit& best = is_square ? sq : disc;

  out.shape = is_square ? ShapeClass::kSquare : ShapeClass::kDisc;
  const double tt = dot(best.tmpl, best.tmpl);
  out.brightness = tt > 0.0 ? dot(intensity, best.tmpl) / tt : 0.0;
  out.center_x = clamp_flag(probe.center_x, spec.center, out.clamped);
  out.center_y = clamp_flag(probe.center_y, spec.center, out.clamped);
  out.size = clamp_flag(best.size, spec.size, out.clamped);
  out.brightness = clamp_flag(out.brightness, Range{0.0, 1.0}, out.clamped);
  return out;
}

// ---------------------------------------------------------------------------

Dataset::Dataset(nn::ImageShape shape, std::vector<double> samples, std::vector<std::size_t> labels,
                 std::size_t n_classes, std::uint64_t seed)
    : shape_(shape), samples_(std::move(samples)), labels_(std::move(labels)), n_classes_(n_classes), seed_(seed) {
  if (shape_.numel() == 0 || samples_.size() % shape_.numel() != 0 || samples_.empty()) {
    throw ShapeError("dataset: sample buffer does not hold whole " + nn::to_string(shape_) + " samples");
  }
  count_ = samples_.size() / shape_.numel();
  if (!labels_.empty() && labels_.size() != count_) throw ShapeError("dataset: one label per sample required");
  for (std::size_t l : labels_)
    if (l >= n_classes_) throw std::invalid_argument("dataset: label out of range");
}

const std::vector<std::size_t>& Dataset::order() {
  if (order_epoch_ != cursor_.epoch) {
    Rng rng(derive_seed(seed_, "epoch:" + std::to_string(cursor_.epoch)));
    order_ = rng.permutation(count_);
    order_epoch_ = cursor_.epoch;
  }
  return order_;
}

Batch Dataset::next(std::size_t b) {
  if (b == 0) throw std::invalid_argument("dataset: batch size must be positive");
  const std::size_t n = shape_.numel();
  std::vector<double> out(b * n);
  Batch batch;
  for (std::size_t k = 0; k < b; ++k) {
    const std::size_t idx = order()[cursor_.position];
    std::copy_n(samples_.begin() + static_cast<std::ptrdiff_t>(idx * n), n, out.begin() + static_cast<std::ptrdiff_t>(k * n));
    if (!labels_.empty()) batch.labels.push_back(labels_[idx]);
    if (++cursor_.position == count_) {
      cursor_.position = 0;
      ++cursor_.epoch;
    }
  }
  batch.images = Tensor(shape_.batched(b), std::move(out));
  return batch;
}

void Dataset::set_cursor(const Cursor& c) {
  if (c.position >= count_) throw std::invalid_argument("dataset: cursor position out of range");
  cursor_ = c;
}

Batch Dataset::slice(std::size_t begin, std::size_t end) const {
  if (begin >= end || end > count_) throw std::invalid_argument("dataset: bad slice");
  const std::size_t n = shape_.numel();
  Batch batch;
  batch.images = Tensor(shape_.batched(end - begin),
                        std::vector<double>(samples_.begin() + static_cast<std::ptrdiff_t>(begin * n),
                                            samples_.begin() + static_cast<std::ptrdiff_t>(end * n)));
  if (!labels_.empty()) batch.labels.assign(labels_.begin() + static_cast<std::ptrdiff_t>(begin), labels_.begin() + static_cast<std::ptrdiff_t>(end));
  return batch;
}

std::span<const double> Dataset::sample(std::size_t i) const {
  const std::size_t n = shape_.numel();
  return std::span<const double>(samples_).subspan(i * n, n);
}

Dataset make_ring_dataset(const RingSpec& spec) {
  Rng rng(derive_seed(spec.seed, "ring"));
  Tensor pts = sample_ring(spec, rng, spec.samples_per_epoch);
  return Dataset({1, 1, 2}, std::vector<double>(pts.data().begin(), pts.data().end()), {}, 0, spec.seed);
}

ShapesCorpus make_shapes_corpus(const ShapesSpec& spec, std::size_t count, std::uint64_t seed) {
  spec.validate();
  ShapesCorpus corpus;
  corpus.spec = spec;
  Rng rng(derive_seed(seed, "shapes"));
  corpus.images.reserve(count * spec.height * spec.width);
  for (std::size_t i = 0; i < count; ++i) {
    corpus.attributes.push_back(sample_attributes(spec, rng));
    const auto img = render_shape(corpus.attributes.back(), spec);
    corpus.images.insert(corpus.images.end(), img.begin(), img.end());
  }
  return corpus;
}

Dataset make_shapes_dataset(const ShapesCorpus& corpus, std::uint64_t seed) {
  std::vector<double> samples(corpus.images.size());
  std::transform(corpus.images.begin(), corpus.images.end(), samples.begin(), to_model);
  std::vector<std::size_t> labels;
  for (const auto& a : corpus.attributes) labels.push_back(static_cast<std::size_t>(a.shape));
  return Dataset(corpus.spec.image(), std::move(samples), std::move(labels), kShapeClasses, seed);
}

std::vector<unsigned char> encode_corpus(const ShapesCorpus& corpus) {
  const ShapesSpec& s = corpus.spec;
  binio::Writer w;
  w.bytes(kCorpusMagic, 4);
  w.u32(kCorpusVersion);
  w.u32(static_cast<std::uint32_t>(s.height));
  w.u32(static_cast<std::uint32_t>(s.width));
  w.u32(static_cast<std::uint32_t>(s.supersample));
  for (double v : {s.center.lo, s.center.hi, s.size.lo, s.size.hi, s.brightness.lo, s.brightness.hi, s.threshold}) {
    w.f32(static_cast<float>(v));
  }
  w.u64(corpus.size());
  const std::size_t n = s.height * s.width;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& a = corpus.attributes[i];
    for (double v : {a.brightness, a.center_x, a.center_y, a.size}) w.f32(static_cast<float>(v));
    w.u8(static_cast<std::uint8_t>(a.shape));
    for (std::size_t k = 0; k < n; ++k) w.f32(static_cast<float>(corpus.images[i * n + k]));
  }
  return w.take();
}

ShapesCorpus decode_corpus(std::span<const unsigned char> bytes) {
  binio::Reader r(bytes.data(), bytes.size());
  char magic[4];
  r.bytes(magic, 4, "magic");
  if (!std::equal(magic, magic + 4, kCorpusMagic)) throw std::runtime_error("corpus: bad magic");
  if (const auto v = r.u32("version"); v != kCorpusVersion) {
    throw std::runtime_error("corpus: unsupported version " + std::to_string(v));
  }
  ShapesCorpus c;
  c.spec.height = r.u32("height");
  c.spec.width = r.u32("width");
  c.spec.supersample = r.u32("supersample");
  c.spec.center = {r.f32("center"), r.f32("center")};
  c.spec.size = {r.f32("size"), r.f32("size")};
  c.spec.brightness = {r.f32("brightness"), r.f32("brightness")};
  c.spec.threshold = r.f32("threshold");
  const std::uint64_t count = r.u64("count");
  const std::size_t n = c.spec.height * c.spec.width;
  r.need(count * (17 + 4 * n), "records");
  for (std::uint64_t i = 0; i < count; ++i) {
    AttributeVector a;
    a.brightness = r.f32("attributes");
    a.center_x = r.f32("attributes");
    a.center_y = r.f32("attributes");
    a.size = r.f32("attributes");
    const std::uint8_t cls = r.u8("class");
    if (cls >= kShapeClasses) throw std::runtime_error("corpus: bad class byte " + std::to_string(cls));
    a.shape = static_cast<ShapeClass>(cls);
    c.attributes.push_back(a);
    for (std::size_t k = 0; k < n; ++k) c.images.push_back(r.f32("image"));
  }
  if (r.remaining() != 0) throw std::runtime_error("corpus: trailing bytes");
  return c;
}

void write_corpus(const ShapesCorpus& corpus, const std::string& path) {
  const auto bytes = encode_corpus(corpus);
  binio::write_file_atomic(path, bytes.data(), bytes.size());
}

ShapesCorpus read_corpus(const std::string& path) {
  const auto bytes = binio::read_file(path);
  return decode_corpus(bytes);
}

}  // namespace ltgan::data
