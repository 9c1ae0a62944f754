#include "ltgan/image_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cfenv>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace ltgan::image {

namespace {

constexpr unsigned char kSignature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

void put_u32_be(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 3; i >= 0; --i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

std::uint32_t get_u32_be(const unsigned char* p) {
  return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) | p[3];
}

void put_chunk(std::vector<unsigned char>& out, const char type[4], const std::vector<unsigned char>& data) {
  put_u32_be(out, static_cast<std::uint32_t>(data.size()));
  const std::size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  const uLong crc = crc32(0L, out.data() + start, static_cast<uInt>(out.size() - start));
  put_u32_be(out, static_cast<std::uint32_t>(crc));
}

std::uint8_t paeth(int a, int b, int c) {
  const int p = a + b - c, pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return static_cast<std::uint8_t>(a);
  return static_cast<std::uint8_t>(pb <= pc ? b : c);
}

}  // namespace

std::uint8_t to_byte(double x) {
  if (std::isnan(x)) return 0;
  const double v = std::clamp((x + 1.0) * 0.5 * 255.0, 0.0, 255.0);
  // nearbyint honors the current rounding mode; pin it to ties-to-even.
  const int saved = std::fegetround();
  std::fesetround(FE_TONEAREST);
  const double r = std::nearbyint(v);
  std::fesetround(saved);
  return static_cast<std::uint8_t>(r);
}

Gray8 to_gray(const Tensor& images, std::size_t index) {
  std::size_t h = 0, w = 0, n = 1;
  if (images.rank() == 3 && images.dim(0) == 1) {
    h = images.dim(1), w = images.dim(2);
  } else if (images.rank() == 4 && images.dim(1) == 1) {
    n = images.dim(0), h = images.dim(2), w = images.dim(3);
  } else {
    throw ShapeError("to_gray: expected single-channel images, got " + to_string(images.shape()));
  }
  if (index >= n) throw std::out_of_range("to_gray: image index out of range");
  Gray8 g{w, h, std::vector<std::uint8_t>(h * w)};
  const auto data = images.data();
  for (std::size_t i = 0; i < h * w; ++i) g.pixels[i] = to_byte(data[index * h * w + i]);
  return g;
}

Gray8 mosaic(const std::vector<Gray8>& tiles, std::size_t cols, std::size_t gap) {
  if (tiles.empty() || cols == 0) throw std::invalid_argument("mosaic: need tiles and a positive column count");
  const std::size_t tw = tiles[0].width, th = tiles[0].height;
  for (const auto& t : tiles)
    if (t.width != tw || t.height != th) throw std::invalid_argument("mosaic: tiles differ in size");
  const std::size_t rows = (tiles.size() + cols - 1) / cols;
  Gray8 out;
  out.width = cols * tw + (cols - 1) * gap;
  out.height = rows * th + (rows - 1) * gap;
  out.pixels.assign(out.width * out.height, 0);
  for (std::size_t k = 0; k < tiles.size(); ++k) {
    const std::size_t ox = (k % cols) * (tw + gap), oy = (k / cols) * (th + gap);
    for (std::size_t y = 0; y < th; ++y)
      std::copy_n(tiles[k].pixels.begin() + static_cast<std::ptrdiff_t>(y * tw), tw,
                  out.pixels.begin() + static_cast<std::ptrdiff_t>((oy + y) * out.width + ox));
  }
  return out;
}

std::vector<unsigned char> encode_png(const Gray8& img) {
  if (img.width == 0 || img.height == 0 || img.pixels.size() != img.width * img.height) {
    throw std::invalid_argument("encode_png: inconsistent image");
  }
  std::vector<unsigned char> raw;
  raw.reserve(img.height * (img.width + 1));
  for (std::size_t y = 0; y < img.height; ++y) {
    raw.push_back(0);
    raw.insert(raw.end(), img.pixels.begin() + static_cast<std::ptrdiff_t>(y * img.width),
               img.pixels.begin() + static_cast<std::ptrdiff_t>((y + 1) * img.width));
  }
  uLongf packed_size = compressBound(static_cast<uLong>(raw.size()));
  std::vector<unsigned char> packed(packed_size);
  if (compress2(packed.data(), &packed_size, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK) {
    throw std::runtime_error("encode_png: zlib compression failed");
  }
  packed.resize(packed_size);

  std::vector<unsigned char> out(kSignature, kSignature + 8);
  std::vector<unsigned char> ihdr;
  put_u32_be(ihdr, static_cast<std::uint32_t>(img.width));
  put_u32_be(ihdr, static_cast<std::uint32_t>(img.height));
  ihdr.insert(ihdr.end(), {8, 0, 0, 0, 0});
  put_chunk(out, "IHDR", ihdr);
  put_chunk(out, "IDAT", packed);
  put_chunk(out, "IEND", {});
  return out;
}

Gray8 decode_png(const std::vector<unsigned char>& png) {
  if (png.size() < 8 || std::memcmp(png.data(), kSignature, 8) != 0) throw std::runtime_error("decode_png: not a PNG");
  Gray8 img;
  std::vector<unsigned char> idat;
  std::size_t p = 8;
  while (p + 12 <= png.size()) {
    const std::uint32_t len = get_u32_be(&png[p]);
    if (p + 12 + len > png.size()) throw std::runtime_error("decode_png: truncated chunk");
    const std::string type(reinterpret_cast<const char*>(&png[p + 4]), 4);
    const unsigned char* data = &png[p + 8];
    if (crc32(0L, &png[p + 4], len + 4) != get_u32_be(data + len)) throw std::runtime_error("decode_png: bad CRC");
    if (type == "IHDR") {
      if (len != 13 || data[8] != 8 || data[9] != 0 || data[12] != 0) {
        throw std::runtime_error("decode_png: only 8-bit non-interlaced grayscale is supported");
      }
      img.width = get_u32_be(data);
      img.height = get_u32_be(data + 4);
    } else if (type == "IDAT") {
      idat.insert(idat.end(), data, data + len);
    } else if (type == "IEND") {
      break;
    }
    p += 12 + len;
  }
  if (img.width == 0 || img.height == 0) throw std::runtime_error("decode_png: missing header");
  const std::size_t stride = img.width + 1;
  std::vector<unsigned char> raw(stride * img.height);
  uLongf raw_size = static_cast<uLongf>(raw.size());
  if (uncompress(raw.data(), &raw_size, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
      raw_size != raw.size()) {
    throw std::runtime_error("decode_png: bad image data");
  }
  img.pixels.assign(img.width * img.height, 0);
  for (std::size_t y = 0; y < img.height; ++y) {
    const unsigned char filter = raw[y * stride];
    for (std::size_t x = 0; x < img.width; ++x) {
      const int a = x ? img.pixels[y * img.width + x - 1] : 0;
      const int b = y ? img.pixels[(y - 1) * img.width + x] : 0;
      const int c = x && y ? img.pixels[(y - 1) * img.width + x - 1] : 0;
      int v = raw[y * stride + 1 + x];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += paeth(a, b, c); break;
        default: throw std::runtime_error("decode_png: unknown filter type");
      }
      img.pixels[y * img.width + x] = static_cast<std::uint8_t>(v & 0xff);
    }
  }
  return img;
}

namespace {
constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
}

std::string base64_encode(const std::vector<unsigned char>& bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  for (std::size_t i = 0; i < bytes.size(); i += 3) {
    const std::uint32_t n = (std::uint32_t{bytes[i]} << 16) | (i + 1 < bytes.size() ? bytes[i + 1] << 8 : 0) |
                            (i + 2 < bytes.size() ? bytes[i + 2] : 0);
    out += kAlphabet[(n >> 18) & 63];
    out += kAlphabet[(n >> 12) & 63];
    out += i + 1 < bytes.size() ? kAlphabet[(n >> 6) & 63] : '=';
    out += i + 2 < bytes.size() ? kAlphabet[n & 63] : '=';
  }
  return out;
}

std::vector<unsigned char> base64_decode(std::string_view text) {
  std::array<int, 256> rev;
  rev.fill(-1);
  for (int i = 0; i < 64; ++i) rev[static_cast<unsigned char>(kAlphabet[i])] = i;
  if (text.size() % 4 != 0) throw std::invalid_argument("base64: length is not a multiple of 4");
  std::vector<unsigned char> out;
  for (std::size_t i = 0; i < text.size(); i += 4) {
    std::uint32_t n = 0;
    int pad = 0;
    for (int k = 0; k < 4; ++k) {
      const char ch = text[i + k];
      if (ch == '=' && i + 4 == text.size() && k >= 2) {
        ++pad;
        n <<= 6;
        continue;
      }
      if (pad || rev[static_cast<unsigned char>(ch)] < 0) throw std::invalid_argument("base64: bad character");
      n = (n << 6) | static_cast<std::uint32_t>(rev[static_cast<unsigned char>(ch)]);
    }
    out.push_back(static_cast<unsigned char>(n >> 16));
    if (pad < 2) out.push_back(static_cast<unsigned char>(n >> 8));
    if (pad < 1) out.push_back(static_cast<unsigned char>(n));
  }
  return out;
}

}  // namespace ltgan::image
