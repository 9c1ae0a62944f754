#include "ltgan/config.hpp"

#include <algorithm>
#include <charconv>
#include <functional>
#include <sstream>

namespace ltgan {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string fmt(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigKeyError(key, key + ": expected a number, got '" + v + "'");
  return out;
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigKeyError(key, key + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigKeyError(key, key + ": expected true or false, got '" + v + "'");
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_uint(key, trim(item)));
  if (out.empty()) throw ConfigKeyError(key, key + ": expected a comma-separated list");
  return out;
}

std::string fmt_list(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

struct Key {
  std::string name;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

#define LTGAN_DOUBLE(name, field)                                                      \
  Key{name, [](const RunConfig& c) { return fmt(c.field); },                           \
      [](RunConfig& c, const std::string& v) { c.field = parse_double(name, v); }}
#define LTGAN_UINT(name, field)                                                        \
  Key{name, [](const RunConfig& c) { return std::to_string(c.field); },                \
      [](RunConfig& c, const std::string& v) { c.field = parse_uint(name, v); }}
#define LTGAN_BOOL(name, field)                                                        \
  Key{name, [](const RunConfig& c) { return std::string(c.field ? "true" : "false"); }, \
      [](RunConfig& c, const std::string& v) { c.field = parse_bool(name, v); }}
#define LTGAN_LIST(name, field)                                                        \
  Key{name, [](const RunConfig& c) { return fmt_list(c.field); },                      \
      [](RunConfig& c, const std::string& v) { c.field = parse_list(name, v); }}
#define LTGAN_SHAPE(name, field)                                                       \
  Key{name, [](const RunConfig& c) { return nn::to_string(c.field); },                 \
      [](RunConfig& c, const std::string& v) { c.field = nn::parse_image_shape(v); }}

const std::vector<Key>& key_table() {
  static const std::vector<Key> table = {
      LTGAN_DOUBLE("train.sigma_z", train.sigma_z),
      LTGAN_DOUBLE("train.sigma_eps", train.sigma_eps),
      LTGAN_DOUBLE("train.lambda", train.lambda),
      LTGAN_UINT("train.d_step", train.d_step),
      LTGAN_UINT("train.warmup", train.warmup),
      LTGAN_UINT("train.batch", train.batch),
      LTGAN_UINT("train.steps", train.steps),
      LTGAN_DOUBLE("train.lr_g", train.lr_g),
      LTGAN_DOUBLE("train.lr_d", train.lr_d),
      LTGAN_DOUBLE("train.lr_a", train.lr_a),
      LTGAN_DOUBLE("train.beta1", train.beta1),
      LTGAN_DOUBLE("train.beta2", train.beta2),
      LTGAN_DOUBLE("train.beta1_a", train.beta1_a),
      LTGAN_DOUBLE("train.beta2_a", train.beta2_a),
      LTGAN_UINT("train.seed", train.seed),
      Key{"train.loss", [](const RunConfig& c) { return to_string(c.train.loss); },
          [](RunConfig& c, const std::string& v) {
            if (v == "hinge") c.train.loss = obj::LossFamily::kHinge;
            else if (v == "nonsat") c.train.loss = obj::LossFamily::kNonSaturating;
            else throw ConfigKeyError("train.loss", "train.loss: expected hinge or nonsat, got '" + v + "'");
          }},
      LTGAN_BOOL("train.conditional", train.conditional),
      Key{"train.objective", [](const RunConfig& c) { return to_string(c.train.objective); },
          [](RunConfig& c, const std::string& v) {
            if (v == "lt") c.train.objective = Objective::kLt;
            else if (v == "baseline") c.train.objective = Objective::kBaseline;
            else if (v == "rotation") c.train.objective = Objective::kRotation;
            else throw ConfigKeyError("train.objective", "train.objective: expected lt, baseline or rotation, got '" + v + "'");
          }},
      LTGAN_BOOL("train.warmup_withholds_eps", train.warmup_withholds_eps),
      LTGAN_DOUBLE("train.rotation_weight_g", train.rotation_weight_g),
      LTGAN_DOUBLE("train.rotation_weight_d", train.rotation_weight_d),
      LTGAN_UINT("train.log_every", train.log_every),
      LTGAN_UINT("train.checkpoint_every", train.checkpoint_every),
      LTGAN_BOOL("train.check_isolation", train.check_isolation),
      LTGAN_BOOL("train.finite_checks", train.finite_checks),

      LTGAN_UINT("net.latent_dim", net.latent_dim),
      LTGAN_SHAPE("net.image", net.image),
      LTGAN_LIST("net.g_hidden", net.g_hidden),
      LTGAN_LIST("net.d_hidden", net.d_hidden),
      LTGAN_UINT("net.tap_index", net.tap_index),
      LTGAN_SHAPE("net.tap_shape", net.tap_shape),
      LTGAN_UINT("net.pool", net.pool),
      LTGAN_UINT("net.embed_dim", net.embed_dim),
      LTGAN_DOUBLE("net.leaky_slope", net.leaky_slope),

      Key{"data.kind", [](const RunConfig& c) { return c.data.kind; },
          [](RunConfig& c, const std::string& v) {
            if (v != "ring" && v != "shapes") throw ConfigKeyError("data.kind", "data.kind: expected ring or shapes, got '" + v + "'");
            c.data.kind = v;
          }},
      LTGAN_UINT("data.n_modes", data.ring.n_modes),
      LTGAN_DOUBLE("data.radius", data.ring.radius),
      LTGAN_DOUBLE("data.std", data.ring.std),
      LTGAN_UINT("data.samples", data.ring.samples_per_epoch),
      LTGAN_UINT("data.seed", data.ring.seed),
      LTGAN_UINT("data.shapes_count", data.shapes_count),
      LTGAN_UINT("data.supersample", data.shapes.supersample),

      LTGAN_UINT("eval.extractor_seed", eval.extractor_seed),
      LTGAN_UINT("eval.fid_samples", eval.fid_samples),
      LTGAN_UINT("eval.fid_every", eval.fid_every),
      LTGAN_UINT("eval.mode_samples", eval.mode_samples),
  };
  return table;
}

#undef LTGAN_DOUBLE
#undef LTGAN_UINT
#undef LTGAN_BOOL
#undef LTGAN_LIST
#undef LTGAN_SHAPE

const Key& find_key(const std::string& key) {
  for (const auto& k : key_table())
    if (k.name == key) return k;
  throw ConfigKeyError(key, "unknown config key '" + key + "'");
}

}  // namespace

std::string to_string(Objective o) {
  switch (o) {
    case Objective::kLt: return "lt";
    case Objective::kBaseline: return "baseline";
    case Objective::kRotation: return "rotation";
  }
  return "?";
}

std::string to_string(obj::LossFamily f) { return f == obj::LossFamily::kHinge ? "hinge" : "nonsat"; }

RunConfig RunConfig::preset(const std::string& kind) {
  RunConfig c;
  if (kind == "ring") {
    c.data.kind = "ring";
    c.net = nn::NetworkSpec::ring_default();
    c.train.steps = 20000;
    // 2D outputs: a strong LT term keeps G from sharpening the modes.
    c.train.lambda = 0.1;
    c.train.lr_g = 1e-3;
    c.train.lr_d = 1e-3;
    c.train.beta1 = 0.0;
    c.train.beta2 = 0.9;
  } else if (kind == "shapes") {
    c.data.kind = "shapes";
    c.net = nn::NetworkSpec::shapes_default();
    c.train.steps = 5000;
  } else {
    throw ConfigKeyError("data.kind", "data.kind: expected ring or shapes, got '" + kind + "'");
  }
  return c;
}

void RunConfig::set(const std::string& key, const std::string& value) { find_key(key).set(*this, trim(value)); }

std::string RunConfig::get(const std::string& key) const { return find_key(key).get(*this); }

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const auto& k : key_table()) out.push_back(k.name);
  return out;
}

nn::NetworkSpec RunConfig::network() const {
  nn::NetworkSpec s = net;
  s.n_classes = train.conditional ? data::kShapeClasses : 0;
  s.rotation_head = train.objective == Objective::kRotation;
  if (data.kind == "shapes") s.image = data.shapes.image();
  return s;
}

void RunConfig::validate() const {
  const auto& t = train;
  if (!(t.sigma_z > 0.0)) throw ConfigKeyError("train.sigma_z", "train.sigma_z must be positive");
  if (!(t.sigma_eps > 0.0) || !(t.sigma_eps < t.sigma_z)) {
    throw ConfigKeyError("train.sigma_eps", "train.sigma_eps must lie in (0, sigma_z)");
  }
  if (t.lambda < 0.0) throw ConfigKeyError("train.lambda", "train.lambda must be non-negative");
  if (t.d_step < 1) throw ConfigKeyError("train.d_step", "train.d_step must be at least 1");
  if (t.batch < 1) throw ConfigKeyError("train.batch", "train.batch must be at least 1");
  for (auto [key, v] : {std::pair{"train.lr_g", t.lr_g}, {"train.lr_d", t.lr_d}, {"train.lr_a", t.lr_a}}) {
    if (!(v > 0.0)) throw ConfigKeyError(key, std::string(key) + " must be positive");
  }
  if (t.conditional && data.kind != "shapes") {
    throw ConfigKeyError("train.conditional", "train.conditional needs data.kind = shapes");
  }
  if (data.kind == "ring") {
    data.ring.validate();
    if (net.image.numel() != 2) throw ConfigKeyError("net.image", "ring data needs a 2-value image (1x1x2)");
    if (t.objective == Objective::kRotation) {
      throw ConfigKeyError("train.objective", "rotation objective needs square images");
    }
  } else {
    data.shapes.validate();
  }
  try {
    network().validate();
  } catch (const nn::SpecError& e) {
    throw ConfigKeyError("net", e.what());
  }
}

std::string RunConfig::canonical() const {
  std::vector<std::string> lines;
  for (const auto& k : key_table()) lines.push_back(k.name + " = " + k.get(*this));
  std::sort(lines.begin(), lines.end());
  std::string out;
  for (const auto& l : lines) out += l + "\n";
  return out;
}

std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> out;
  std::stringstream ss(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigKeyError(t, "line " + std::to_string(lineno) + ": expected 'key = value', got '" + t + "'");
    }
    out[trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
  }
  return out;
}

RunConfig load_config(const std::string& text, const std::map<std::string, std::string>& overrides) {
  auto kv = parse_key_values(text);
  for (const auto& [k, v] : overrides) kv[k] = v;
  for (const auto& [k, v] : kv) find_key(k);  // reject unknown keys before doing anything
  const auto kind = kv.find("data.kind");
  RunConfig c = RunConfig::preset(kind == kv.end() ? "ring" : kind->second);
  for (const auto& [k, v] : kv) c.set(k, v);
  c.validate();
  return c;
}

RunConfig parse_config(const std::string& text) { return load_config(text); }

}  // namespace ltgan
