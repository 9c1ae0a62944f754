#include "ltgan/rng.hpp"

#include <numeric>
#include <sstream>
#include <stdexcept>

namespace ltgan {

Rng::Rng(std::uint64_t seed) : engine_(seed) {}

double Rng::normal(double mean, double stddev) { return mean + stddev * normal_(engine_); }

double Rng::uniform() { return std::generate_canonical<double, 53>(engine_); }

std::size_t Rng::index(std::size_t n) {
  if (n == 0) throw std::invalid_argument("Rng::index: empty range");
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
}

std::vector<std::size_t> Rng::permutation(std::size_t n) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  // Fisher-Yates with our own index draws so the result is library-independent.
  for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[index(i)]);
  return p;
}

std::vector<double> Rng::normal_vector(std::size_t n, double stddev) {
  std::vector<double> out(n);
  for (auto& v : out) v = normal(0.0, stddev);
  return out;
}

std::string Rng::serialize() const {
  std::ostringstream os;
  os << engine_ << ' ' << normal_;
  return os.str();
}

void Rng::deserialize(std::string_view text) {
  std::istringstream is{std::string(text)};
  is >> engine_ >> normal_;
  if (!is) throw std::runtime_error("Rng: malformed state");
}

std::string_view stream_name(Stream s) {
  switch (s) {
    case Stream::kInit: return "init";
    case Stream::kData: return "data";
    case Stream::kDiscZ: return "disc_z";
    case Stream::kDiscEps: return "disc_eps";
    case Stream::kGenZ: return "gen_z";
    case Stream::kGenEps: return "gen_eps";
    case Stream::kShuffle: return "shuffle";
    case Stream::kLabel: return "label";
    case Stream::kRotation: return "rotation";
    case Stream::kEval: return "eval";
    case Stream::kCount: break;
  }
  return "?";
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) {
  // FNV-1a over the tag, then a splitmix64 finalizer with the seed mixed in.
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : tag) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::uint64_t z = h ^ (seed + 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

RngStreams::RngStreams(std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(Stream::kCount);
  streams_.reserve(n);
  for (std::size_t i = 0; i < n; ++i) streams_.emplace_back(derive_seed(seed, stream_name(static_cast<Stream>(i))));
}

std::string RngStreams::serialize() const {
  std::string out;
  for (std::size_t i = 0; i < streams_.size(); ++i) {
    out += std::string(stream_name(static_cast<Stream>(i))) + " " + streams_[i].serialize() + "\n";
  }
  return out;
}

void RngStreams::deserialize(std::string_view text) {
  std::istringstream is{std::string(text)};
  std::string line;
  std::size_t seen = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto space = line.find(' ');
    const std::string name = line.substr(0, space);
    bool found = false;
    for (std::size_t i = 0; i < streams_.size(); ++i) {
      if (stream_name(static_cast<Stream>(i)) == name) {
        streams_[i].deserialize(std::string_view(line).substr(space + 1));
        found = true;
        ++seen;
      }
    }
    if (!found) throw std::runtime_error("RngStreams: unknown stream '" + name + "'");
  }
  if (seen != streams_.size()) throw std::runtime_error("RngStreams: missing streams");
}

}  // namespace ltgan
