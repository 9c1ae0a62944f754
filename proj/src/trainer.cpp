#include "ltgan/trainer.hpp"

#include <charconv>
#include <cmath>
#include <map>
#include <sstream>

#include "ltgan/binio.hpp"
#include "ltgan/eval.hpp"

namespace ltgan {

namespace {

constexpr char kMagic[4] = {'L', 'T', 'G', 'N'};

struct FiniteChecksScope {
  explicit FiniteChecksScope(bool on) : previous(finite_checks()) { set_finite_checks(on || previous); }
  ~FiniteChecksScope() { set_finite_checks(previous); }
  bool previous;
};

AdamHyper hyper(double lr, double b1, double b2) { return AdamHyper{.lr = lr, .beta1 = b1, .beta2 = b2}; }

std::vector<std::size_t> doubled_prefix(const std::vector<std::size_t>& cls, std::size_t b) {
  if (cls.empty()) return {};
  std::vector<std::size_t> out(cls.begin(), cls.begin() + static_cast<std::ptrdiff_t>(b));
  out.insert(out.end(), cls.begin(), cls.begin() + static_cast<std::ptrdiff_t>(b));
  return out;
}

void write_tensor(binio::Writer& w, const std::string& name, const Tensor& t) {
  w.str(name);
  w.u32(static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) w.u64(d);
  for (double v : t.data()) w.f32(static_cast<float>(v));
}

void write_moments(binio::Writer& w, const std::string& prefix, const AdamState& s) {
  for (std::size_t i = 0; i < s.m.size(); ++i) {
    write_tensor(w, prefix + ".m." + std::to_string(i), Tensor({s.m[i].size()}, s.m[i]));
    write_tensor(w, prefix + ".v." + std::to_string(i), Tensor({s.v[i].size()}, s.v[i]));
  }
}

std::size_t count_moments(const AdamState& s) { return 2 * s.m.size(); }

void read_moments(const std::map<std::string, Tensor>& tensors, const std::string& prefix, const Adam& opt,
                  AdamState& s) {
  s.m.clear();
  s.v.clear();
  if (s.t == 0) return;
  for (std::size_t i = 0; i < opt.params().size(); ++i) {
    const auto m = tensors.find(prefix + ".m." + std::to_string(i));
    const auto v = tensors.find(prefix + ".v." + std::to_string(i));
    if (m == tensors.end() || v == tensors.end()) {
      throw CheckpointError("checkpoint: missing optimizer moments for " + prefix + " parameter " + std::to_string(i));
    }
    if (m->second.numel() != opt.params()[i].numel() || v->second.numel() != opt.params()[i].numel()) {
      throw CheckpointError("checkpoint: optimizer moments for " + prefix + " have the wrong size");
    }
    s.m.emplace_back(m->second.data().begin(), m->second.data().end());
    s.v.emplace_back(v->second.data().begin(), v->second.data().end());
  }
}

nn::NamedTensors pick(const std::map<std::string, Tensor>& tensors, const nn::NamedTensors& like) {
  nn::NamedTensors out;
  for (const auto& [name, t] : like) {
    const auto it = tensors.find(name);
    if (it == tensors.end()) throw CheckpointError("checkpoint: missing tensor '" + name + "'");
    out.emplace_back(name, it->second);
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------

std::string format_value(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

void MetricLog::add(std::size_t step, std::string name, double value) {
  records_.push_back({step, std::move(name), value});
}

std::string MetricLog::text() const {
  std::string out;
  for (const auto& r : records_) out += std::to_string(r.step) + "," + r.name + "," + format_value(r.value) + "\n";
  return out;
}

MetricLog MetricLog::parse(const std::string& text) {
  MetricLog log;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto a = line.find(','), b = line.rfind(',');
    if (a == std::string::npos || a == b) throw std::invalid_argument("metric log: malformed line '" + line + "'");
    MetricRecord r;
    r.step = std::stoull(line.substr(0, a));
    r.name = line.substr(a + 1, b - a - 1);
    const std::string v = line.substr(b + 1);
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), r.value);
    if (ec != std::errc()) {
      if (v == "inf") r.value = INFINITY;
      else if (v == "-inf") r.value = -INFINITY;
      else if (v == "nan") r.value = NAN;
      else throw std::invalid_argument("metric log: bad value in '" + line + "'");
    }
    log.records_.push_back(std::move(r));
  }
  return log;
}

double MetricLog::last(const std::string& name) const {
  for (auto it = records_.rbegin(); it != records_.rend(); ++it)
    if (it->name == name) return it->value;
  throw std::out_of_range("metric log: no '" + name + "' records");
}

bool MetricLog::has(const std::string& name) const {
  for (const auto& r : records_)
    if (r.name == name) return true;
  return false;
}

data::Dataset make_dataset(const RunConfig& config) {
  if (config.data.kind == "ring") return data::make_ring_dataset(config.data.ring);
  auto corpus = data::make_shapes_corpus(config.data.shapes, config.data.shapes_count, config.data.ring.seed);
  return data::make_shapes_dataset(corpus, derive_seed(config.train.seed, "data"));
}

std::uint64_t hash_tensors(const nn::NamedTensors& tensors) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [name, t] : tensors) {
    h = binio::fnv1a(reinterpret_cast<const unsigned char*>(name.data()), name.size(), h);
    const auto d = t.data();
    h = binio::fnv1a(reinterpret_cast<const unsigned char*>(d.data()), d.size() * sizeof(double), h);
  }
  return h;
}

// ---------------------------------------------------------------------------

Trainer::Trainer(RunConfig config) : Trainer(config, make_dataset(config)) {}

Trainer::Trainer(RunConfig config, data::Dataset dataset)
    : config_((config.validate(), std::move(config))),
      data_(std::move(dataset)),
      rng_(config_.train.seed),
      g_(config_.network(), rng_[Stream::kInit]),
      d_(config_.network(), rng_[Stream::kInit]),
      a_(config_.network().feature_width(), config_.network().aux_hidden(), rng_[Stream::kInit]) {
  const auto& t = config_.train;
  if (data_.shape() != config_.network().image) {
    throw ShapeError("trainer: dataset images " + nn::to_string(data_.shape()) + " do not match the network");
  }
  opt_g_ = Adam(g_.parameters(), hyper(t.lr_g, t.beta1, t.beta2), true);
  opt_d_ = Adam(d_.parameters(), hyper(t.lr_d, t.beta1, t.beta2), true);
  opt_a_ = Adam(a_.parameters(), hyper(t.lr_a, t.beta1_a, t.beta2_a), true);
}

Tensor Trainer::draw_codes(std::size_t n, Stream stream) {
  const std::size_t d = config_.net.latent_dim;
  return Tensor({n, d}, rng_[stream].normal_vector(n * d, config_.train.sigma_z));
}

std::vector<std::size_t> Trainer::draw_classes(std::size_t n) {
  std::vector<std::size_t> out;
  if (!config_.train.conditional) return out;
  const std::size_t k = config_.network().n_classes;
  for (std::size_t i = 0; i < n; ++i) out.push_back(rng_[Stream::kLabel].index(k));
  return out;
}

void Trainer::check_finite(const obj::LossReport& r, const char* phase) const {
  for (const auto& v : {r.l_d, r.l_g_adv, r.l_a, r.total_g, r.l_rot}) {
    if (v && !std::isfinite(*v)) {
      throw TrainError(step_, std::string("non-finite ") + phase + " loss at step " + std::to_string(step_));
    }
  }
}

obj::LossReport Trainer::step_d() {
  return step_d(data_.next(2 * config_.train.batch));
}

obj::LossReport Trainer::step_d(const data::Batch& real) {
  const auto& t = config_.train;
  const std::size_t b = t.batch, n = 2 * b;
  const nn::ImageShape image = config_.network().image;
  if (real.images.numel() != n * image.numel() || real.images.rank() == 0 || real.images.dim(0) != n) {
    throw ShapeError("train_step_d: expected " + std::to_string(n) + " real images of " + nn::to_string(image) +
                     ", got " + ltgan::to_string(real.images.shape()));
  }
  if (t.conditional && real.labels.size() != n) throw ShapeError("train_step_d: conditional run needs real labels");
  FiniteChecksScope finite(t.finite_checks);
  const std::uint64_t ops0 = op_count();
  const std::uint64_t hg = t.check_isolation ? hash_tensors(g_.named_tensors()) : 0;
  const std::uint64_t ha = t.check_isolation ? hash_tensors(a_.named_tensors()) : 0;

  d_.power_iterate();
  Tensor z = draw_codes(n, Stream::kDiscZ);
  std::vector<std::size_t> cls = draw_classes(n);
  const bool with_eps = t.objective == Objective::kLt && (!in_warmup() || !t.warmup_withholds_eps);
  Tensor codes = z;
  if (with_eps) {
    const std::size_t dim = config_.net.latent_dim;
    Tensor head = slice(z, 0, 0, b);
    Tensor e({b, dim}, rng_[Stream::kDiscEps].normal_vector(b * dim, t.sigma_eps));
    codes = concat({head, add(head, e)}, 0);
    cls = doubled_prefix(cls, b);
    counters_.eps_images_to_d = b;
  } else {
    counters_.eps_images_to_d = 0;
  }
  Tensor fake = g_.forward(codes, cls).detach();

  std::span<const std::size_t> real_cls;
  if (t.conditional) real_cls = real.labels;
  obj::LossReport report;
  Tape tape;
  {
    TapeScope scope(tape);
    Tensor loss = obj::d_loss(t.loss, d_.forward(real.images, real_cls).logits, d_.forward(fake, cls).logits);
    report.l_d = loss.item();
    if (t.objective == Objective::kRotation) {
      Tensor r = obj::rotation_ss_loss(d_, real.images, rng_[Stream::kRotation], real_cls);
      report.l_rot = r.item();
      loss = add(loss, scale(r, t.rotation_weight_d));
    }
    check_finite(report, "discriminator");
    opt_d_.zero_grad();
    tape.backward(loss);
  }
  opt_d_.step();
  opt_d_.zero_grad();
  ++counters_.d_updates;
  counters_.d_ops = op_count() - ops0;
  if (t.check_isolation && (hash_tensors(g_.named_tensors()) != hg || hash_tensors(a_.named_tensors()) != ha)) {
    throw IsolationError("discriminator step changed G or A at step " + std::to_string(step_));
  }
  return report;
}

obj::LossReport Trainer::step_g() {
  const auto& t = config_.train;
  const std::size_t b = t.batch, n = 2 * b;
  FiniteChecksScope finite(t.finite_checks);
  const std::uint64_t ops0 = op_count();
  const std::uint64_t hd = t.check_isolation ? hash_tensors(d_.named_tensors()) : 0;

  obj::LossReport report;
  d_.set_trainable(false);
  try {
    Tape tape;
    TapeScope scope(tape);
    if (lt_active()) {
      obj::LatentBatch batch = obj::make_latent_batch(b, config_.net.latent_dim, t.sigma_z, t.sigma_eps,
                                                      rng_[Stream::kGenZ], rng_[Stream::kGenEps],
                                                      rng_[Stream::kShuffle]);
      const std::vector<std::size_t> cls = draw_classes(n);
      obj::ObjectiveTerms terms = obj::ltgan_objective(g_, d_, a_, batch, {.lambda = t.lambda, .family = t.loss}, cls);
      report = terms.report;
      const double literal = terms.total_g.item();
      if (std::abs(literal - *report.total_g) > 1e-12 * std::max(1.0, std::abs(literal))) {
        throw TrainError(step_, "total generator loss does not decompose at step " + std::to_string(step_));
      }
      check_finite(report, "generator");
      opt_g_.zero_grad();
      opt_a_.zero_grad();
      tape.backward(terms.update_loss);
      opt_g_.step();
      opt_a_.step();
      opt_a_.zero_grad();
    } else {
      Tensor z = draw_codes(n, Stream::kGenZ);
      const std::vector<std::size_t> cls = draw_classes(n);
      Tensor fake = g_.forward(z, cls);
      Tensor loss = obj::g_loss(t.loss, d_.forward(fake, cls).logits);
      report.l_g_adv = loss.item();
      report.total_g = *report.l_g_adv;
      if (t.objective == Objective::kRotation) {
        Tensor r = obj::rotation_ss_loss(d_, fake, rng_[Stream::kRotation], cls);
        loss = add(loss, scale(r, t.rotation_weight_g));
        report.total_g = loss.item();
      }
      check_finite(report, "generator");
      opt_g_.zero_grad();
      tape.backward(loss);
      opt_g_.step();
    }
    opt_g_.zero_grad();
  } catch (...) {
    d_.set_trainable(true);
    throw;
  }
  d_.set_trainable(true);
  counters_.g_ops = op_count() - ops0;
  if (t.check_isolation && hash_tensors(d_.named_tensors()) != hd) {
    throw IsolationError("generator step changed D at step " + std::to_string(step_));
  }
  return report;
}

obj::LossReport Trainer::step() {
  obj::LossReport merged;
  for (std::size_t k = 0; k < config_.train.d_step; ++k) {
    const obj::LossReport r = step_d();
    merged.l_d = r.l_d;
    merged.l_rot = r.l_rot;
  }
  const obj::LossReport g = step_g();
  merged.l_g_adv = g.l_g_adv;
  merged.l_a = g.l_a;
  merged.total_g = g.total_g;
  merged.aux_accuracy = g.aux_accuracy;
  ++step_;
  last_ = merged;
  if (config_.train.log_every > 0 && step_ % config_.train.log_every == 0) record(merged);
  return merged;
}

void Trainer::record(const obj::LossReport& r) {
  const std::pair<const char*, const std::optional<double>*> fields[] = {
      {"loss_d", &r.l_d},   {"loss_g_adv", &r.l_g_adv},       {"loss_a", &r.l_a},
      {"total_g", &r.total_g}, {"aux_accuracy", &r.aux_accuracy}, {"loss_rot", &r.l_rot}};
  for (const auto& [name, v] : fields)
    if (v->has_value()) log_.add(step_, name, **v);
}

void Trainer::log_eval_metrics() {
  const auto& e = config_.eval;
  if (config_.data.kind == "ring") {
    const auto m = eval::mode_coverage(g_, config_.data.ring, e.mode_samples, config_.train.sigma_z, config_.train.seed);
    log_.add(step_, "modes_covered", static_cast<double>(m.covered));
    log_.add(step_, "mode_kl", m.kl_to_uniform);
  } else {
    const eval::ProxyExtractor extractor(e.extractor_seed, config_.network().image);
    const auto fid = eval::proxy_fid(data_, g_, e.fid_samples, extractor, config_.train.sigma_z, config_.train.seed);
    log_.add(step_, "proxy_fid", fid.value);
  }
}

void Trainer::train(const std::string& checkpoint_path) {
  const auto& t = config_.train;
  std::size_t last_eval = SIZE_MAX;
  while (step_ < t.steps) {
    step();
    if (config_.eval.fid_every > 0 && step_ % config_.eval.fid_every == 0) {
      log_eval_metrics();
      last_eval = step_;
    }
    if (!checkpoint_path.empty() && t.checkpoint_every > 0 && step_ % t.checkpoint_every == 0 && step_ < t.steps) {
      save_checkpoint(checkpoint_path);
    }
  }
  if (last_eval != step_) log_eval_metrics();
  if (!checkpoint_path.empty()) save_checkpoint(checkpoint_path);
}

// ---------------------------------------------------------------------------

std::vector<unsigned char> Trainer::encode_checkpoint() const {
  binio::Writer w;
  w.bytes(kMagic, 4);
  w.u32(kCheckpointVersion);
  w.str(config_.canonical());
  std::ostringstream state;
  state << "step " << step_ << "\n"
        << "d_updates " << counters_.d_updates << "\n"
        << "cursor " << data_.cursor().epoch << " " << data_.cursor().position << "\n"
        << "adam_t " << opt_g_.state().t << " " << opt_d_.state().t << " " << opt_a_.state().t << "\n";
  w.text64(state.str());
  w.text64(rng_.serialize());

  nn::NamedTensors tensors = g_.named_tensors();
  for (auto& nt : d_.named_tensors()) tensors.push_back(std::move(nt));
  for (auto& nt : a_.named_tensors()) tensors.push_back(std::move(nt));
  const std::size_t count =
      tensors.size() + count_moments(opt_g_.state()) + count_moments(opt_d_.state()) + count_moments(opt_a_.state());
  w.u32(static_cast<std::uint32_t>(count));
  for (const auto& [name, t] : tensors) write_tensor(w, name, t);
  write_moments(w, "opt.G", opt_g_.state());
  write_moments(w, "opt.D", opt_d_.state());
  write_moments(w, "opt.A", opt_a_.state());
  w.u64(binio::fnv1a(w.data().data(), w.data().size()));
  return w.take();
}

void Trainer::save_checkpoint(const std::string& path) const {
  const auto bytes = encode_checkpoint();
  binio::write_file_atomic(path, bytes.data(), bytes.size());
}

namespace {

struct CheckpointParts {
  std::string config_text, state_text, rng_text;
  std::map<std::string, Tensor> tensors;
};

CheckpointParts parse_checkpoint(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < 4) throw CheckpointTruncatedError("checkpoint: truncated before the magic bytes");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw CheckpointMagicError("checkpoint: bad magic bytes");
  CheckpointParts out;
  try {
    binio::Reader r(bytes.data() + 4, bytes.size() - 4);
    const std::uint32_t version = r.u32("version");
    if (version != Trainer::kCheckpointVersion) {
      throw CheckpointVersionError("checkpoint: version " + std::to_string(version) + ", expected " +
                                   std::to_string(Trainer::kCheckpointVersion));
    }
    out.config_text = r.str("config");
    out.state_text = r.text64("state");
    out.rng_text = r.text64("rng state");
    const std::uint32_t count = r.u32("tensor count");
    for (std::uint32_t i = 0; i < count; ++i) {
      std::string name = r.str("tensor name");
      const std::uint32_t rank = r.u32("tensor rank");
      if (rank > 8) throw CheckpointError("checkpoint: tensor '" + name + "' has rank " + std::to_string(rank));
      Shape shape;
      std::size_t numel = 1;
      for (std::uint32_t k = 0; k < rank; ++k) {
        shape.push_back(r.u64("tensor dims"));
        numel *= shape.back();
      }
      r.need(numel * 4, "tensor data");
      std::vector<double> values(numel);
      for (auto& v : values) v = r.f32("tensor data");
      out.tensors[name] = Tensor(shape, std::move(values));
    }
    if (r.remaining() < 8) throw binio::TruncatedError("truncated while reading checksum");
    if (r.remaining() > 8) throw CheckpointError("checkpoint: trailing bytes after the tensor records");
  } catch (const binio::TruncatedError& e) {
    throw CheckpointTruncatedError(std::string("checkpoint: ") + e.what());
  }
  binio::Reader tail(bytes.data() + bytes.size() - 8, 8);
  if (tail.u64("checksum") != binio::fnv1a(bytes.data(), bytes.size() - 8)) {
    throw CheckpointChecksumError("checkpoint: checksum mismatch");
  }
  return out;
}

}  // namespace

Trainer Trainer::decode_checkpoint(const std::vector<unsigned char>& bytes) {
  auto [config_text, state_text, rng_text, tensors] = parse_checkpoint(bytes);
  Trainer t(load_config(config_text));
  std::istringstream is(state_text);
  std::string key;
  data::Cursor cursor;
  std::uint64_t tg = 0, td = 0, ta = 0;
  while (is >> key) {
    if (key == "step") is >> t.step_;
    else if (key == "d_updates") is >> t.counters_.d_updates;
    else if (key == "cursor") is >> cursor.epoch >> cursor.position;
    else if (key == "adam_t") is >> tg >> td >> ta;
    else throw CheckpointError("checkpoint: unknown state key '" + key + "'");
  }
  if (is.bad() || (!is.eof() && is.fail())) throw CheckpointError("checkpoint: malformed state block");
  t.data_.set_cursor(cursor);
  t.rng_.deserialize(rng_text);
  nn::assign_tensors(t.g_.named_tensors(), pick(tensors, t.g_.named_tensors()));
  nn::assign_tensors(t.d_.named_tensors(), pick(tensors, t.d_.named_tensors()));
  nn::assign_tensors(t.a_.named_tensors(), pick(tensors, t.a_.named_tensors()));
  t.opt_g_.state().t = tg;
  t.opt_d_.state().t = td;
  t.opt_a_.state().t = ta;
  read_moments(tensors, "opt.G", t.opt_g_, t.opt_g_.state());
  read_moments(tensors, "opt.D", t.opt_d_, t.opt_d_.state());
  read_moments(tensors, "opt.A", t.opt_a_, t.opt_a_.state());
  return t;
}

Trainer Trainer::load_checkpoint(const std::string& path) { return decode_checkpoint(binio::read_file(path)); }

ModelSnapshot decode_snapshot(const std::vector<unsigned char>& bytes) {
  auto parts = parse_checkpoint(bytes);
  RunConfig config = load_config(parts.config_text);
  const nn::NetworkSpec spec = config.network();
  Rng init(0);
  ModelSnapshot s{std::move(config), 0, nn::Generator(spec, init), nn::Discriminator(spec, init),
                  nn::AuxNet(spec.feature_width(), spec.aux_hidden(), init), binio::fnv1a(bytes.data(), bytes.size())};
  std::istringstream is(parts.state_text);
  std::string key;
  while (is >> key) {
    if (key == "step") {
      is >> s.step;
      break;
    }
  }
  nn::assign_tensors(s.generator.named_tensors(), pick(parts.tensors, s.generator.named_tensors()));
  nn::assign_tensors(s.discriminator.named_tensors(), pick(parts.tensors, s.discriminator.named_tensors()));
  nn::assign_tensors(s.aux.named_tensors(), pick(parts.tensors, s.aux.named_tensors()));
  return s;
}

ModelSnapshot load_snapshot(const std::string& path) { return decode_snapshot(binio::read_file(path)); }

}  // namespace ltgan
