// ltgan command-line tool: train, eval, ablate, steer, serve, dataset.
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ltgan/ablation.hpp"
#include "ltgan/binio.hpp"
#include "ltgan/config.hpp"
#include "ltgan/eval.hpp"
#include "ltgan/image_io.hpp"
#include "ltgan/serve.hpp"
#include "ltgan/steer.hpp"
#include "ltgan/trainer.hpp"

namespace fs = std::filesystem;
using namespace ltgan;

namespace {

constexpr int kUsageError = 2;

// Config or flag problem; exits with kUsageError.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::string config_path;
  std::string out = "out";
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::size_t jobs = 1;
  std::map<std::string, std::string> overrides;  // from --a.b value
};

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot read config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<double> parse_doubles(const std::string& list, const char* what) {
  std::vector<double> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || item.find_first_not_of(" \t", used) != std::string::npos) {
      throw UsageError(std::string(what) + ": '" + item + "' is not a number");
    }
    out.push_back(v);
  }
  if (out.empty()) throw UsageError(std::string(what) + ": empty list");
  return out;
}

std::vector<std::string> split_commas(const std::string& list) {
  std::vector<std::string> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(item);
  return out;
}

class Outputs {
 public:
  explicit Outputs(std::string dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }
  std::string path(const std::string& name) const { return (fs::path(dir_) / name).string(); }
  void text(const std::string& name, const std::string& body) const {
    binio::write_file_atomic(path(name), body);
    std::cout << "wrote " << path(name) << "\n";
  }
  void bytes(const std::string& name, const std::vector<unsigned char>& body) const {
    binio::write_file_atomic(path(name), body.data(), body.size());
    std::cout << "wrote " << path(name) << "\n";
  }
  void config(const RunConfig& c) const { text("config.cfg", c.canonical()); }

 private:
  std::string dir_;
};

RunConfig resolve_config(const Globals& g) {
  auto overrides = g.overrides;
  if (g.seed_given) overrides["train.seed"] = std::to_string(g.seed);
  return load_config(g.config_path.empty() ? std::string{} : read_text(g.config_path), overrides);
}

// Checkpoint-based commands take their config from the checkpoint; only
// evaluation settings may be changed.
void apply_eval_overrides(RunConfig& c, const Globals& g) {
  for (const auto& [k, v] : g.overrides) {
    if (k.rfind("eval.", 0) != 0) {
      throw ConfigKeyError(k, "'" + k + "' cannot be changed for an existing checkpoint (only eval.* keys)");
    }
    c.set(k, v);
  }
}

ModelSnapshot open_checkpoint(const std::string& path, const Globals& g) {
  if (path.empty()) throw UsageError("--checkpoint is required");
  ModelSnapshot s = load_snapshot(path);
  apply_eval_overrides(s.config, g);
  return s;
}

std::string csv_number(double v) { return format_value(v); }

// ---------------------------------------------------------------- train

int cmd_train(const Globals& g, const std::string& resume) {
  const Outputs out(g.out);
  Trainer t = [&] {
    if (resume.empty()) return Trainer(resolve_config(g));
    if (!g.overrides.empty() || !g.config_path.empty() || g.seed_given) {
      throw UsageError("--resume takes its configuration from the checkpoint; drop --config/--seed/overrides");
    }
    return Trainer::load_checkpoint(resume);
  }();
  out.config(t.config());
  const std::string ckpt = out.path("checkpoint.ltgn");
  int status = 0;
  try {
    t.train(ckpt);
  } catch (const TrainError& e) {
    std::cerr << "error: " << e.what() << "\n";
    status = 1;
  }
  out.text("metrics.csv", t.log().text());
  if (status == 0) std::cout << "wrote " << ckpt << "\n";
  return status;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string checkpoint;
  std::string sigmas;
  std::size_t pairs = 2000;
  std::size_t samples = 0;
  std::size_t paths = 500;
  std::uint64_t eval_seed = 0;
};

int cmd_eval(const Globals& g, const std::string& metric, const EvalArgs& a) {
  ModelSnapshot s = open_checkpoint(a.checkpoint, g);
  const RunConfig& c = s.config;
  const Outputs out(g.out);
  const double sz = c.train.sigma_z;
  std::string csv;
  if (metric == "fid") {
    if (c.data.kind != "shapes") throw UsageError("eval fid needs a shapes checkpoint");
    const auto data = make_dataset(c);
    const auto r = eval::proxy_fid(data, s.generator, c.eval.fid_samples, eval::ProxyExtractor(c.eval.extractor_seed, c.net.image),
                                   sz, c.train.seed);
    csv = "metric,value\nproxy_fid," + csv_number(r.value) + "\nridge_applied," + (r.ridge_applied ? "1" : "0") + "\n";
    std::cout << "proxy_fid " << csv_number(r.value) << "\n";
  } else if (metric == "modes") {
    if (c.data.kind != "ring") throw UsageError("eval modes needs a ring checkpoint");
    const std::size_t n = a.samples ? a.samples : c.eval.mode_samples;
    const auto m = eval::mode_coverage(s.generator, c.data.ring, n, sz, c.train.seed);
    csv = "metric,value\nmodes_covered," + std::to_string(m.covered) + "\nmode_kl," + csv_number(m.kl_to_uniform) +
          "\nunassigned," + std::to_string(m.unassigned) + "\n";
    for (std::size_t k = 0; k < m.histogram.size(); ++k)
      csv += "mode_" + std::to_string(k) + "," + std::to_string(m.histogram[k]) + "\n";
    std::cout << "modes_covered " << m.covered << " of " << m.histogram.size() << ", mode_kl "
              << csv_number(m.kl_to_uniform) << "\n";
  } else if (metric == "aux-sweep") {
    const double se = c.train.sigma_eps;
    const auto sigmas = a.sigmas.empty() ? std::vector<double>{se / 10.0, se, 10.0 * se} : parse_doubles(a.sigmas, "--sigmas");
    const auto acc = eval::aux_accuracy_sweep(s.generator, s.discriminator, s.aux, sigmas, a.pairs, sz, a.eval_seed);
    csv = "sigma_eps,accuracy\n";
    for (std::size_t i = 0; i < sigmas.size(); ++i) {
      csv += csv_number(sigmas[i]) + "," + csv_number(acc[i]) + "\n";
      std::cout << "sigma_eps " << csv_number(sigmas[i]) << ": accuracy " << csv_number(acc[i]) << "\n";
    }
  } else if (metric == "cas") {
    if (!s.generator.spec().conditional()) throw UsageError("eval cas needs a class-conditional checkpoint");
    const std::size_t n = a.samples ? a.samples : 2000;
    const auto corpus = data::make_shapes_corpus(c.data.shapes, n, derive_seed(c.data.ring.seed, "cas-test"));
    const auto test = data::make_shapes_dataset(corpus, 0);
    eval::CasOptions opt;
    opt.sigma_z = sz;
    opt.seed = a.eval_seed;
    const double acc = eval::cas_toy(s.generator, test, opt);
    csv = "metric,value\ncas," + csv_number(acc) + "\n";
    std::cout << "cas " << csv_number(acc) << "\n";
  } else if (metric == "ppl") {
    if (c.data.kind != "shapes") throw UsageError("eval ppl needs a shapes checkpoint");
    const double v = steer::perceptual_path_length(s.generator, eval::ProxyExtractor(c.eval.extractor_seed, c.net.image),
                                                   a.paths, 1e-4, sz, a.eval_seed);
    csv = "metric,value\nppl," + csv_number(v) + "\n";
    std::cout << "ppl " << csv_number(v) << "\n";
  } else if (metric == "correlation") {
    if (c.data.kind != "shapes") throw UsageError("eval correlation needs a shapes checkpoint");
    const std::size_t n = a.samples ? a.samples : 5000;
    const auto m = steer::attribute_correlation(s.generator, n, c.data.shapes, sz, a.eval_seed);
    csv = "attribute";
    for (const auto& name : m.names) csv += "," + name;
    csv += "\n";
    for (std::size_t i = 0; i < m.names.size(); ++i) {
      csv += m.names[i];
      for (std::size_t j = 0; j < m.names.size(); ++j) csv += "," + csv_number(m.at(i, j));
      csv += "\n";
    }
    std::cout << csv;
  } else {
    throw UsageError("unknown metric '" + metric + "' (fid, modes, aux-sweep, cas, ppl, correlation)");
  }
  out.config(c);
  out.text("eval_" + metric + ".csv", csv);
  return 0;
}

// ---------------------------------------------------------------- ablate

int cmd_ablate(const Globals& g, const std::string& key, const std::string& values, std::size_t seeds) {
  const RunConfig base = resolve_config(g);
  const auto vals = split_commas(values);
  validate_grid(base, key, vals);
  const Outputs out(g.out);
  out.config(base);
  AblationOptions opt;
  opt.seeds = seeds;
  opt.jobs = g.jobs;
  opt.progress = [](const std::string& line) { std::cout << line << std::endl; };
  const auto table = run_ablation(base, key, vals, opt);
  out.text("ablation.csv", table.csv());
  return 0;
}

// ---------------------------------------------------------------- steer

struct SteerArgs {
  std::string checkpoint;
  std::string directions;
  std::string attribute = "brightness";
  std::size_t samples = 20000;
  std::size_t k = 2000;
  std::string direction_id;
  std::string alphas;
  std::size_t strips = 4;
  std::string transform = "brightness";
  std::size_t steps = 200;
  std::uint64_t steer_seed = 0;
};

std::string directions_path(const SteerArgs& a, const Outputs& out) {
  return a.directions.empty() ? out.path("directions.jsonl") : a.directions;
}

int cmd_steer_fit(const Globals& g, const SteerArgs& a) {
  ModelSnapshot s = open_checkpoint(a.checkpoint, g);
  if (s.config.data.kind != "shapes") throw UsageError("steer fit needs a shapes checkpoint");
  const Outputs out(g.out);
  const auto attr = data::parse_attribute(a.attribute);
  Rng rng(derive_seed(a.steer_seed, "steer-fit"));
  const auto ds = steer::collect_attribute_dataset(s.generator, attr, a.samples, a.k, rng, s.config.data.shapes,
                                                   s.config.train.sigma_z);
  steer::SvmOptions opt;
  opt.seed = a.steer_seed;
  auto fit = steer::fit_linear_boundary(ds, opt, a.attribute);
  fit.direction.metadata["null_fraction"] = ds.null_fraction;
  const auto saved = steer::append_direction(directions_path(a, out), fit.direction);
  std::cout << "direction " << saved.id << ": train accuracy " << csv_number(fit.train_accuracy)
            << ", held-out accuracy " << csv_number(fit.eval_accuracy) << "\n";
  out.config(s.config);
  out.text("fit_" + a.attribute + ".csv",
           "metric,value\ntrain_accuracy," + csv_number(fit.train_accuracy) + "\neval_accuracy," +
               csv_number(fit.eval_accuracy) + "\nbias," + csv_number(fit.bias) + "\nconverged," +
               (fit.converged ? "1" : "0") + "\nnull_fraction," + csv_number(ds.null_fraction) + "\n");
  std::cout << "wrote " << directions_path(a, out) << "\n";
  return 0;
}

int cmd_steer_traverse(const Globals& g, const SteerArgs& a) {
  ModelSnapshot s = open_checkpoint(a.checkpoint, g);
  const Outputs out(g.out);
  if (a.direction_id.empty()) throw UsageError("--direction is required");
  const auto dirs = steer::read_directions(directions_path(a, out));
  const steer::Direction* dir = nullptr;
  for (const auto& d : dirs)
    if (d.id == a.direction_id) dir = &d;
  if (!dir) throw UsageError("unknown direction '" + a.direction_id + "'");
  const auto alphas = parse_doubles(a.alphas.empty() ? "-3,-2,-1,0,1,2,3" : a.alphas, "--alphas");
  const auto& gen = s.generator;
  if (gen.spec().image.channels != 1 || gen.spec().image.height < 2) throw UsageError("steer traverse needs an image model");
  Rng rng(derive_seed(a.steer_seed, "steer-traverse"));
  std::vector<image::Gray8> tiles;
  std::string csv = "sample,alpha";
  const bool shapes = s.config.data.kind == "shapes";
  if (shapes) csv += ",brightness,center_x,center_y,size,class,null";
  csv += "\n";
  for (std::size_t i = 0; i < a.strips; ++i) {
    const auto z = rng.normal_vector(gen.spec().latent_dim, s.config.train.sigma_z);
    std::vector<std::size_t> cls;
    if (gen.spec().conditional()) cls.push_back(rng.index(gen.spec().n_classes));
    const Tensor strip = steer::latent_traverse(gen, z, dir->vector, alphas, cls);
    for (std::size_t j = 0; j < alphas.size(); ++j) {
      tiles.push_back(image::to_gray(strip, j));
      csv += std::to_string(i) + "," + csv_number(alphas[j]);
      if (shapes) {
        const std::size_t px = gen.spec().image.numel();
        const auto m = data::measure_attributes(strip.data().subspan(j * px, px), s.config.data.shapes);
        csv += "," + csv_number(m.brightness) + "," + csv_number(m.center_x) + "," + csv_number(m.center_y) + "," +
               csv_number(m.size) + "," + data::to_string(m.shape) + "," + (m.null ? "1" : "0");
      }
      csv += "\n";
    }
  }
  out.config(s.config);
  out.bytes("traverse_" + dir->id + ".png", image::encode_png(image::mosaic(tiles, alphas.size())));
  out.text("traverse_" + dir->id + ".csv", csv);
  return 0;
}

int cmd_steer_learn(const Globals& g, const SteerArgs& a) {
  ModelSnapshot s = open_checkpoint(a.checkpoint, g);
  const Outputs out(g.out);
  const auto t = steer::parse_transform(a.transform);
  const auto alphas = parse_doubles(a.alphas.empty() ? "-0.5,-0.25,0.25,0.5" : a.alphas, "--alphas");
  steer::TransformOptions opt;
  opt.steps = a.steps;
  opt.sigma_z = s.config.train.sigma_z;
  opt.seed = a.steer_seed;
  const auto fit = steer::learn_transform_direction(s.generator, t, alphas, opt);
  out.config(s.config);
  out.text("transform_" + a.transform + ".csv",
           "metric,value\nloss," + csv_number(fit.loss) + "\nloss_at_zero," + csv_number(fit.loss_at_zero) +
               "\ndegenerate," + (fit.degenerate ? "1" : "0") + "\ndiverged," + (fit.diverged ? "1" : "0") + "\n");
  if (fit.degenerate) {
    std::cout << "no latent direction reproduces '" << a.transform << "'; nothing appended\n";
    return 0;
  }
  const auto saved = steer::append_direction(directions_path(a, out), fit.direction);
  std::cout << "direction " << saved.id << ": loss " << csv_number(fit.loss) << " (at w = 0: "
            << csv_number(fit.loss_at_zero) << ")\nwrote " << directions_path(a, out) << "\n";
  return 0;
}

// ---------------------------------------------------------------- serve

int cmd_serve(const Globals& g, const std::string& checkpoint, const std::string& directions, const std::string& host,
              int port) {
  if (checkpoint.empty()) throw UsageError("--checkpoint is required");
  if (!g.overrides.empty()) throw UsageError("serve takes no config overrides");
  serve::Service service(serve::Session::load(checkpoint, directions));
  serve::HttpServer server(service);
  const int bound = server.bind(host, port);
  std::cout << "listening on http://" << host << ":" << bound << std::endl;
  server.listen();
  return 0;
}

// ---------------------------------------------------------------- dataset

int cmd_dataset(const Globals& g, std::size_t count) {
  RunConfig c = resolve_config(g);
  const Outputs out(g.out);
  out.config(c);
  if (c.data.kind == "shapes") {
    const auto corpus = data::make_shapes_corpus(c.data.shapes, count ? count : c.data.shapes_count, c.data.ring.seed);
    out.bytes("corpus.ltsh", data::encode_corpus(corpus));
    const std::size_t px = c.data.shapes.height * c.data.shapes.width, shown = std::min<std::size_t>(64, corpus.size());
    std::vector<image::Gray8> tiles;
    for (std::size_t i = 0; i < shown; ++i) {
      image::Gray8 t{c.data.shapes.width, c.data.shapes.height, std::vector<std::uint8_t>(px)};
      for (std::size_t p = 0; p < px; ++p) t.pixels[p] = image::to_byte(data::to_model(corpus.images[i * px + p]));
      tiles.push_back(std::move(t));
    }
    out.bytes("preview.png", image::encode_png(image::mosaic(tiles, 8)));
  } else {
    Rng rng(c.data.ring.seed);
    const Tensor pts = data::sample_ring(c.data.ring, rng, count ? count : c.data.ring.samples_per_epoch);
    std::string csv = "x,y\n";
    const auto p = pts.data();
    for (std::size_t i = 0; i + 1 < p.size(); i += 2) csv += csv_number(p[i]) + "," + csv_number(p[i + 1]) + "\n";
    out.text("ring.csv", csv);
  }
  return 0;
}

// Pulls `--section.key value` / `--section.key=value` pairs out of argv.
std::vector<std::string> take_overrides(int argc, char** argv, std::map<std::string, std::string>& overrides) {
  std::vector<std::string> rest;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg.rfind("--", 0) == 0 && arg.find('.') != std::string::npos &&
        arg.find('.') < arg.find('=')) {
      std::string key = arg.substr(2), value;
      if (const auto eq = key.find('='); eq != std::string::npos) {
        value = key.substr(eq + 1);
        key = key.substr(0, eq);
      } else {
        if (i + 1 >= argc) throw UsageError("override --" + key + " needs a value");
        value = argv[++i];
      }
      overrides[key] = value;
    } else {
      rest.push_back(arg);
    }
  }
  return rest;
}

}  // namespace

int main(int argc, char** argv) {
  Globals g;
  std::vector<std::string> args;
  try {
    args = take_overrides(argc, argv, g.overrides);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsageError;
  }

  CLI::App app{"ltgan: latent-transformation GAN experiments"};
  app.require_subcommand(1);
  app.add_option("--config", g.config_path, "key = value config file");
  app.add_option("--out", g.out, "output directory")->capture_default_str();
  auto* seed_opt = app.add_option("--seed", g.seed, "shorthand for --train.seed");
  app.add_option("--jobs", g.jobs, "parallel workers (ablate)")->check(CLI::PositiveNumber)->capture_default_str();
  app.footer("Any config key can be overridden as --section.key value, e.g. --train.sigma_eps 0.3");

  std::string resume;
  auto* train = app.add_subcommand("train", "train a model; writes checkpoint, metrics and the resolved config");
  train->add_option("--resume", resume, "continue from a checkpoint");

  std::string metric;
  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  ev->add_option("metric", metric, "fid | modes | aux-sweep | cas | ppl | correlation")->required();
  ev->add_option("--checkpoint", ea.checkpoint)->required();
  ev->add_option("--sigmas", ea.sigmas, "aux-sweep perturbation scales, comma separated");
  ev->add_option("--pairs", ea.pairs, "aux-sweep pairs per scale")->capture_default_str();
  ev->add_option("--samples", ea.samples, "sample count (modes, cas test set, correlation)");
  ev->add_option("--paths", ea.paths, "ppl path count")->capture_default_str();
  ev->add_option("--eval-seed", ea.eval_seed)->capture_default_str();

  std::string key, values;
  std::size_t seeds = 3;
  auto* ab = app.add_subcommand("ablate", "train a grid of configs x seeds; writes ablation.csv");
  ab->add_option("--key", key, "config key to vary, e.g. train.sigma_eps")->required();
  ab->add_option("--values", values, "comma-separated values")->required();
  ab->add_option("--seeds", seeds, "seeds per cell")->check(CLI::PositiveNumber)->capture_default_str();

  SteerArgs sa;
  auto* st = app.add_subcommand("steer", "latent directions");
  st->require_subcommand(1);
  auto add_common = [&](CLI::App* s) {
    s->add_option("--checkpoint", sa.checkpoint)->required();
    s->add_option("--directions", sa.directions, "directions file (default <out>/directions.jsonl)");
    s->add_option("--steer-seed", sa.steer_seed)->capture_default_str();
  };
  auto* fit = st->add_subcommand("fit", "SVM boundary for an oracle attribute");
  add_common(fit);
  fit->add_option("--attribute", sa.attribute, "brightness | center_x | center_y | size | class")->capture_default_str();
  fit->add_option("--samples", sa.samples, "generated samples scored")->capture_default_str();
  fit->add_option("--k", sa.k, "extremes kept per side")->capture_default_str();
  auto* trav = st->add_subcommand("traverse", "PNG mosaic of traversal strips (row per sample, column per alpha)");
  add_common(trav);
  trav->add_option("--direction", sa.direction_id)->required();
  trav->add_option("--alphas", sa.alphas, "comma-separated steps");
  trav->add_option("--samples", sa.strips, "number of strips")->capture_default_str();
  auto* learn = st->add_subcommand("learn-transform", "latent direction reproducing an image edit");
  add_common(learn);
  learn->add_option("--transform", sa.transform, "identity | brightness | hshift | vshift | zoom")->capture_default_str();
  learn->add_option("--alphas", sa.alphas, "comma-separated edit strengths");
  learn->add_option("--steps", sa.steps)->capture_default_str();

  std::string sv_ckpt, sv_dirs, host = "127.0.0.1";
  int port = 8080;
  auto* sv = app.add_subcommand("serve", "HTTP JSON API over a checkpoint");
  sv->add_option("--checkpoint", sv_ckpt)->required();
  sv->add_option("--directions", sv_dirs);
  sv->add_option("--port", port)->capture_default_str();
  sv->add_option("--host", host)->capture_default_str();

  std::size_t count = 0;
  auto* ds = app.add_subcommand("dataset", "write the training corpus (shapes) or ring samples");
  ds->add_option("--count", count, "number of samples (default from config)");

  for (auto* sub : {train, ev, ab, st, fit, trav, learn, sv, ds}) sub->fallthrough();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsageError;
  }
  g.seed_given = seed_opt->count() > 0;

  try {
    if (*train) return cmd_train(g, resume);
    if (*ev) return cmd_eval(g, metric, ea);
    if (*ab) return cmd_ablate(g, key, values, seeds);
    if (*fit) return cmd_steer_fit(g, sa);
    if (*trav) return cmd_steer_traverse(g, sa);
    if (*learn) return cmd_steer_learn(g, sa);
    if (*sv) return cmd_serve(g, sv_ckpt, sv_dirs, host, port);
    if (*ds) return cmd_dataset(g, count);
  } catch (const ConfigKeyError& e) {
    std::cerr << "error: config key '" << e.key() << "': " << e.what() << "\n";
    return kUsageError;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kUsageError;
}
