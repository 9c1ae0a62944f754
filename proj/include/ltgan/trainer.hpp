#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "ltgan/config.hpp"
#include "ltgan/datasets.hpp"
#include "ltgan/nn.hpp"
#include "ltgan/objectives.hpp"
#include "ltgan/optim.hpp"
#include "ltgan/rng.hpp"

namespace ltgan {

class TrainError : public std::runtime_error {
 public:
  TrainError(std::size_t step, const std::string& what) : std::runtime_error(what), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

// A network that should have been frozen changed during an update.
class IsolationError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class CheckpointMagicError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class CheckpointVersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class CheckpointTruncatedError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class CheckpointChecksumError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

struct MetricRecord {
  std::size_t step = 0;
  std::string name;
  double value = 0.0;
};

/// Line-delimited `step,metric,value` records.
class MetricLog {
 public:
  void add(std::size_t step, std::string name, double value);
  const std::vector<MetricRecord>& records() const { return records_; }
  std::string text() const;
  static MetricLog parse(const std::string& text);
  // Last value of a metric; throws if absent.
  double last(const std::string& name) const;
  bool has(const std::string& name) const;

 private:
  std::vector<MetricRecord> records_;
};

std::string format_value(double v);

/// Dataset named by the config (ring pool or rendered shapes corpus).
data::Dataset make_dataset(const RunConfig& config);

/// FNV-1a over the names and values of a tensor list.
std::uint64_t hash_tensors(const nn::NamedTensors& tensors);

struct StepCounters {
  std::size_t d_updates = 0;
  std::size_t eps_images_to_d = 0;  // perturbed fakes in the most recent D step
  std::uint64_t d_ops = 0;          // tensor ops in the most recent D step
  std::uint64_t g_ops = 0;          // tensor ops in the most recent G step
};

/// Owns G, D, A, their optimizers, the sampling streams and the data cursor.
class Trainer {
 public:
  static constexpr std::uint32_t kCheckpointVersion = 1;

  explicit Trainer(RunConfig config);
  Trainer(RunConfig config, data::Dataset dataset);

  // One discriminator update on `real` (2b rows), or on the next data batch.
  obj::LossReport step_d(const data::Batch& real);
  obj::LossReport step_d();
  // One generator (and auxiliary) update. Does not advance the step counter.
  obj::LossReport step_g();
  // d_step D updates then one G update; advances the step and logs metrics.
  obj::LossReport step();
  // Runs until `config().train.steps` generator steps, checkpointing to
  // `checkpoint_path` (if non-empty) every checkpoint_every steps and at the end.
  void train(const std::string& checkpoint_path = {});

  bool in_warmup() const { return step_ < config_.train.warmup; }
  bool lt_active() const { return config_.train.objective == Objective::kLt && !in_warmup(); }

  std::size_t current_step() const { return step_; }
  const RunConfig& config() const { return config_; }
  const nn::Generator& generator() const { return g_; }
  const nn::Discriminator& discriminator() const { return d_; }
  const nn::AuxNet& aux() const { return a_; }
  nn::AuxNet& mutable_aux() { return a_; }
  const data::Dataset& dataset() const { return data_; }
  const MetricLog& log() const { return log_; }
  const StepCounters& counters() const { return counters_; }
  const obj::LossReport& last_report() const { return last_; }
  // Proxy-FID for shapes runs, mode coverage for ring runs, logged at `current_step()`.
  void log_eval_metrics();

  std::vector<unsigned char> encode_checkpoint() const;
  void save_checkpoint(const std::string& path) const;
  static Trainer decode_checkpoint(const std::vector<unsigned char>& bytes);
  static Trainer load_checkpoint(const std::string& path);

 private:
  void check_finite(const obj::LossReport& r, const char* phase) const;
  std::vector<std::size_t> draw_classes(std::size_t n);
  Tensor draw_codes(std::size_t n, Stream stream);
  void record(const obj::LossReport& r);

  RunConfig config_;
  data::Dataset data_;
  RngStreams rng_;
  nn::Generator g_;
  nn::Discriminator d_;
  nn::AuxNet a_;
  Adam opt_g_, opt_d_, opt_a_;
  std::size_t step_ = 0;
  StepCounters counters_;
  MetricLog log_;
  obj::LossReport last_;
};

/// The networks of a checkpoint without optimizer state or training data.
struct ModelSnapshot {
  RunConfig config;
  std::size_t step = 0;
  nn::Generator generator;
  nn::Discriminator discriminator;
  nn::AuxNet aux;
  std::uint64_t digest = 0;  // FNV-1a of the checkpoint bytes
};

/// Same validation and errors as Trainer::decode_checkpoint.
ModelSnapshot decode_snapshot(const std::vector<unsigned char>& bytes);
ModelSnapshot load_snapshot(const std::string& path);

}  // namespace ltgan
