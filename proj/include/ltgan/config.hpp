#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "ltgan/datasets.hpp"
#include "ltgan/nn.hpp"
#include "ltgan/objectives.hpp"

namespace ltgan {

class ConfigKeyError : public std::invalid_argument {
 public:
  ConfigKeyError(std::string key, const std::string& why)
      : std::invalid_argument(why), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

enum class Objective { kLt, kBaseline, kRotation };
std::string to_string(Objective o);
std::string to_string(obj::LossFamily f);

struct TrainConfig {
  double sigma_z = 1.0;
  double sigma_eps = 0.5;
  double lambda = 1.0;
  std::size_t d_step = 1;
  std::size_t warmup = 500;
  std::size_t batch = 32;
  std::size_t steps = 5000;  // generator steps
  double lr_g = 2e-4;
  double lr_d = 2e-4;
  double lr_a = 1e-3;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double beta1_a = 0.9;
  double beta2_a = 0.999;
  std::uint64_t seed = 0;
  obj::LossFamily loss = obj::LossFamily::kHinge;
  bool conditional = false;
  Objective objective = Objective::kLt;
  // Warmup also keeps eps-perturbed fakes away from D (toggleable extension).
  bool warmup_withholds_eps = true;
  double rotation_weight_g = 0.2;
  double rotation_weight_d = 1.0;
  std::size_t log_every = 100;
  std::size_t checkpoint_every = 0;  // 0: only at the end
  bool check_isolation = false;
  bool finite_checks = false;
};

struct DataConfig {
  std::string kind = "ring";  // ring | shapes
  data::RingSpec ring;
  data::ShapesSpec shapes;
  std::size_t shapes_count = 20000;
};

struct EvalConfig {
  std::uint64_t extractor_seed = 1234;
  std::size_t fid_samples = 1000;
  std::size_t fid_every = 0;  // 0: only at the end
  std::size_t mode_samples = 2000;
};

/// Every tunable of a run, addressable by dotted key (train.sigma_eps,
/// data.n_modes, net.g_hidden, ...).
struct RunConfig {
  TrainConfig train;
  nn::NetworkSpec net;
  DataConfig data;
  EvalConfig eval;

  static RunConfig preset(const std::string& kind);  // "ring" or "shapes"

  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static std::vector<std::string> keys();

  // Network spec with the fields implied by the run (classes, rotation head).
  nn::NetworkSpec network() const;
  void validate() const;

  // Sorted "key = value" lines; parse(canonical()) reproduces the config.
  std::string canonical() const;
};

/// Parses `key = value` lines with '#' comments into an ordered map.
/// Throws ConfigKeyError naming the line on malformed input.
std::map<std::string, std::string> parse_key_values(const std::string& text);

/// Builds a config from file text plus overrides (applied last). The preset is
/// chosen by data.kind (override first, then file, default ring).
RunConfig load_config(const std::string& text, const std::map<std::string, std::string>& overrides = {});
RunConfig parse_config(const std::string& text);

}  // namespace ltgan
