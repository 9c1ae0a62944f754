#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ltgan/config.hpp"

namespace ltgan {

class Trainer;
struct AblationRun;

struct AblationOptions {
  std::size_t seeds = 3;  // run seeds base, base + 1, ...
  std::size_t jobs = 1;   // worker threads over (cell, seed) runs
  // Called after each run finishes (from a worker thread, serialized).
  std::function<void(const std::string& line)> progress;
  // Called with each successfully trained model (serialized, like progress).
  std::function<void(const std::string& value, const AblationRun& run, const Trainer& trained)> on_trained;
};

struct AblationRun {
  std::uint64_t seed = 0;
  bool ok = false;
  double metric = 0.0;
  std::string error;
};

struct AblationCell {
  std::string key;
  std::string value;
  std::vector<AblationRun> runs;
  double median = 0.0;  // over successful runs; NaN when none succeeded
  double min = 0.0;
  std::size_t failures = 0;
};

struct AblationTable {
  std::string metric;  // proxy_fid (shapes) or mode_kl (ring); lower is better for both
  std::vector<AblationCell> cells;
  std::string csv() const;
};

/// Config for one cell and seed. A lambda = 0 cell trains the plain baseline
/// (no perturbed fakes), so it is the baseline run under the same seed.
RunConfig ablation_config(const RunConfig& base, const std::string& key, const std::string& value,
                          std::uint64_t seed);
/// Rejects the whole grid before any training when a cell is invalid
/// (e.g. sigma_eps >= sigma_z). Throws ConfigKeyError naming the key.
void validate_grid(const RunConfig& base, const std::string& key, const std::vector<std::string>& values);
/// Trains every cell x seed; a failing run is recorded and the grid continues.
AblationTable run_ablation(const RunConfig& base, const std::string& key, const std::vector<std::string>& values,
                           const AblationOptions& options = {});

}  // namespace ltgan
