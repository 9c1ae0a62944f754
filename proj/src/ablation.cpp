#include "ltgan/ablation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include "ltgan/trainer.hpp"

namespace ltgan {

namespace {

std::string metric_for(const RunConfig& c) { return c.data.kind == "ring" ? "mode_kl" : "proxy_fid"; }

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) out += ch == '"' ? std::string("\"\"") : std::string(1, ch);
  return out + "\"";
}

double median_of(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

RunConfig ablation_config(const RunConfig& base, const std::string& key, const std::string& value,
                          std::uint64_t seed) {
  RunConfig c = base;
  c.set(key, value);
  c.train.seed = seed;
  if (c.train.objective == Objective::kLt && c.train.lambda == 0.0) c.train.objective = Objective::kBaseline;
  c.validate();
  return c;
}

void validate_grid(const RunConfig& base, const std::string& key, const std::vector<std::string>& values) {
  if (values.empty()) throw ConfigKeyError(key, "ablation grid for " + key + " is empty");
  for (const auto& v : values) ablation_config(base, key, v, base.train.seed);
}

AblationTable run_ablation(const RunConfig& base, const std::string& key, const std::vector<std::string>& values,
                           const AblationOptions& options) {
  validate_grid(base, key, values);
  if (options.seeds == 0) throw ConfigKeyError(key, "ablation needs at least one seed");
  AblationTable table;
  table.metric = metric_for(base);
  for (const auto& v : values) {
    AblationCell cell{key, v, {}, 0.0, 0.0, 0};
    for (std::size_t s = 0; s < options.seeds; ++s) cell.runs.push_back({base.train.seed + s, false, 0.0, {}});
    table.cells.push_back(std::move(cell));
  }

  const std::size_t total = values.size() * options.seeds;
  std::atomic<std::size_t> next{0};
  std::mutex report;
  auto worker = [&] {
    for (std::size_t i = next++; i < total; i = next++) {
      AblationCell& cell = table.cells[i / options.seeds];
      AblationRun& run = cell.runs[i % options.seeds];
      std::optional<Trainer> t;
      try {
        t.emplace(ablation_config(base, key, cell.value, run.seed));
        t->train();
        run.metric = t->log().last(table.metric);
        run.ok = std::isfinite(run.metric);
        if (!run.ok) run.error = table.metric + " is not finite";
      } catch (const std::exception& e) {
        run.error = e.what();
      }
      std::lock_guard lock(report);
      if (run.ok && options.on_trained) options.on_trained(cell.value, run, *t);
      if (options.progress) {
        std::ostringstream line;
        line << key << "=" << cell.value << " seed " << run.seed << ": ";
        if (run.ok) line << table.metric << " " << format_value(run.metric);
        else line << "failed (" << run.error << ")";
        options.progress(line.str());
      }
    }
  };
  const std::size_t jobs = std::clamp<std::size_t>(options.jobs, 1, total);
  std::vector<std::thread> pool;
  for (std::size_t j = 1; j < jobs; ++j) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();

  for (auto& cell : table.cells) {
    std::vector<double> good;
    for (const auto& r : cell.runs) {
      if (r.ok) good.push_back(r.metric);
      else ++cell.failures;
    }
    cell.median = median_of(good);
    cell.min = good.empty() ? std::numeric_limits<double>::quiet_NaN() : *std::min_element(good.begin(), good.end());
  }
  return table;
}

std::string AblationTable::csv() const {
  std::string out = "key,value,metric,median,min,runs,failures,per_seed,errors\n";
  for (const auto& c : cells) {
    std::string per_seed, errors;
    for (const auto& r : c.runs) {
      if (!per_seed.empty()) per_seed += ";";
      per_seed += std::to_string(r.seed) + ":" + (r.ok ? format_value(r.metric) : std::string("failed"));
      if (!r.ok) errors += (errors.empty() ? "" : "; ") + std::to_string(r.seed) + ": " + r.error;
    }
    out += csv_field(c.key) + "," + csv_field(c.value) + "," + metric + "," + format_value(c.median) + "," +
           format_value(c.min) + "," + std::to_string(c.runs.size()) + "," + std::to_string(c.failures) + "," +
           csv_field(per_seed) + "," + csv_field(errors) + "\n";
  }
  return out;
}

}  // namespace ltgan
