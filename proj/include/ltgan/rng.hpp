#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace ltgan {

/// Seeded generator with a serializable state (engine plus the normal
/// distribution's cached value), so checkpoints can resume bit-exactly.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  double normal(double mean = 0.0, double stddev = 1.0);
  double uniform();  // [0, 1)
  std::size_t index(std::size_t n);  // uniform in [0, n)
  std::vector<std::size_t> permutation(std::size_t n);
  std::vector<double> normal_vector(std::size_t n, double stddev = 1.0);

  std::string serialize() const;
  void deserialize(std::string_view text);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

/// Independent stream per sampling role. Deriving every stream from the run
/// seed plus a role tag means turning one role on or off (e.g. the LT branch)
/// never shifts what the other roles draw.
enum class Stream : std::size_t {
  kInit = 0,
  kData,
  kDiscZ,
  kDiscEps,
  kGenZ,
  kGenEps,
  kShuffle,
  kLabel,
  kRotation,
  kEval,
  kCount
};

std::string_view stream_name(Stream s);
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag);

class RngStreams {
 public:
  explicit RngStreams(std::uint64_t seed = 0);
  Rng& operator[](Stream s) { return streams_[static_cast<std::size_t>(s)]; }
  const Rng& operator[](Stream s) const { return streams_[static_cast<std::size_t>(s)]; }

  std::string serialize() const;
  void deserialize(std::string_view text);

 private:
  std::vector<Rng> streams_;
};

}  // namespace ltgan
