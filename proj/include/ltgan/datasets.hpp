#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ltgan/nn.hpp"
#include "ltgan/rng.hpp"
#include "ltgan/tensor.hpp"

namespace ltgan::data {

// ---- 2D Gaussian ring ----
struct RingSpec {
  std::size_t n_modes = 8;
  double radius = 0.8;
  double std = 0.05;
  std::size_t samples_per_epoch = 50000;
  std::uint64_t seed = 0;

  void validate() const;
  std::array<double, 2> mode_center(std::size_t k) const;
  double mode_spacing() const;
};

/// (count, 2) points: uniform mode choice plus isotropic Gaussian jitter.
Tensor sample_ring(const RingSpec& spec, Rng& rng, std::size_t count);

// ---- parametric shapes ----
enum class ShapeClass : std::uint8_t { kSquare = 0, kDisc = 1 };
constexpr std::size_t kShapeClasses = 2;
std::string to_string(ShapeClass c);

struct Range {
  double lo;
  double hi;
  bool contains(double v) const { return v >= lo && v <= hi; }
};

struct ShapesSpec {
  std::size_t height = 16;
  std::size_t width = 16;
  Range center{0.25, 0.75};
  Range size{0.15, 0.35};  // fraction of width: side of a square, diameter of a disc
  Range brightness{0.4, 1.0};
  std::size_t supersample = 4;
  double threshold = 0.1;

  void validate() const;
  nn::ImageShape image() const { return {1, height, width}; }
};

struct AttributeVector {
  double brightness = 0.0;
  double center_x = 0.5;
  double center_y = 0.5;
  double size = 0.0;
  ShapeClass shape = ShapeClass::kSquare;
  bool null = false;     // nothing above threshold: the other fields are meaningless
  bool clamped = false;  // some measured value fell outside the spec range and was clamped
};

enum class Attribute { kBrightness, kCenterX, kCenterY, kSize, kClass };
constexpr std::size_t kAttributeCount = 5;
std::string attribute_name(Attribute a);
Attribute parse_attribute(const std::string& name);
double attribute_value(const AttributeVector& v, Attribute a);

AttributeVector sample_attributes(const ShapesSpec& spec, Rng& rng);

/// Anti-aliased rendering into [0, 1] intensities (row-major H x W). Geometry
/// must lie inside the spec ranges; brightness may be anywhere in [0, 1].
std::vector<double> render_shape(const AttributeVector& attrs, const ShapesSpec& spec);
/// Same geometry without range checks (used for template fitting).
std::vector<double> render_unchecked(const AttributeVector& attrs, const ShapesSpec& spec);

/// The attribute oracle. `image` is in model range [-1, 1].
AttributeVector measure_attributes(std::span<const double> image, const ShapesSpec& spec);

inline double to_model(double intensity) { return 2.0 * intensity - 1.0; }
inline double to_intensity(double model) { return 0.5 * (model + 1.0); }

// ---- finite datasets with epoch shuffling ----
struct Cursor {
  std::uint64_t epoch = 0;
  std::uint64_t position = 0;
  bool operator==(const Cursor&) const = default;
};

struct Batch {
  Tensor images;                    // (b, C, H, W) in model range
  std::vector<std::size_t> labels;  // empty when unlabeled
};

/// Endless iterator over a fixed sample pool. Each epoch visits every sample
/// once in an order that depends only on (seed, epoch), so a cursor fully
/// describes the iteration state.
class Dataset {
 public:
  Dataset(nn::ImageShape shape, std::vector<double> samples, std::vector<std::size_t> labels, std::size_t n_classes,
          std::uint64_t seed);

  Batch next(std::size_t b);
  const Cursor& cursor() const { return cursor_; }
  void set_cursor(const Cursor& c);

  std::size_t size() const { return count_; }
  std::size_t n_classes() const { return n_classes_; }
  const nn::ImageShape& shape() const { return shape_; }
  // Rows [begin, end) in storage order, independent of the cursor.
  Batch slice(std::size_t begin, std::size_t end) const;
  std::span<const double> sample(std::size_t i) const;
  const std::vector<std::size_t>& labels() const { return labels_; }

 private:
  const std::vector<std::size_t>& order();

  nn::ImageShape shape_;
  std::vector<double> samples_;
  std::vector<std::size_t> labels_;
  std::size_t n_classes_ = 0;
  std::size_t count_ = 0;
  std::uint64_t seed_ = 0;
  Cursor cursor_;
  std::uint64_t order_epoch_ = UINT64_MAX;
  std::vector<std::size_t> order_;
};

Dataset make_ring_dataset(const RingSpec& spec);

struct ShapesCorpus {
  ShapesSpec spec;
  std::vector<AttributeVector> attributes;
  std::vector<double> images;  // count x H x W intensities in [0, 1]

  std::size_t size() const { return attributes.size(); }
};

ShapesCorpus make_shapes_corpus(const ShapesSpec& spec, std::size_t count, std::uint64_t seed);
Dataset make_shapes_dataset(const ShapesCorpus& corpus, std::uint64_t seed);

/// Binary corpus file: "LTSH", u32 version, spec header, u64 count, then per
/// record 4 f32 attributes (brightness, center_x, center_y, size), a class
/// byte and H*W f32 intensities.
std::vector<unsigned char> encode_corpus(const ShapesCorpus& corpus);
ShapesCorpus decode_corpus(std::span<const unsigned char> bytes);
void write_corpus(const ShapesCorpus& corpus, const std::string& path);
ShapesCorpus read_corpus(const std::string& path);

}  // namespace ltgan::data
