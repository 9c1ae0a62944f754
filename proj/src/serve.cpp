#include "ltgan/serve.hpp"

#include <cstdio>
#include <stdexcept>

#include "httplib.h"
#include "json.hpp"
#include "ltgan/image_io.hpp"
#include "ltgan/objectives.hpp"
#include "ltgan/rng.hpp"

namespace ltgan::serve {

using json = nlohmann::json;

namespace {

struct BadRequest : std::runtime_error {
  int status;
  BadRequest(int s, const std::string& what) : std::runtime_error(what), status(s) {}
};

Reply ok(const json& j) { return {200, j.dump()}; }
Reply error(int status, const std::string& message) { return {status, json{{"error", message}}.dump()}; }

json parse_body(std::string_view body) {
  try {
    json j = json::parse(body);
    if (!j.is_object()) throw BadRequest(400, "request body must be a JSON object");
    return j;
  } catch (const json::parse_error& e) {
    throw BadRequest(400, std::string("malformed JSON: ") + e.what());
  }
}

std::vector<double> number_list(const json& j, const char* key) {
  if (!j.contains(key)) throw BadRequest(400, std::string("missing field '") + key + "'");
  const json& v = j.at(key);
  if (!v.is_array()) throw BadRequest(400, std::string("'") + key + "' must be an array of numbers");
  std::vector<double> out;
  for (const auto& x : v) {
    if (!x.is_number()) throw BadRequest(400, std::string("'") + key + "' must be an array of numbers");
    out.push_back(x.get<double>());
  }
  return out;
}

json image_json(const Tensor& batch, std::size_t index) {
  return image::base64_encode(image::encode_png(image::to_gray(batch, index)));
}

json raw_json(const Tensor& batch, std::size_t index) {
  const std::size_t per = batch.numel() / batch.dim(0);
  const auto d = batch.data();
  return std::vector<double>(d.begin() + static_cast<std::ptrdiff_t>(index * per),
                             d.begin() + static_cast<std::ptrdiff_t>((index + 1) * per));
}

}  // namespace

Session::Session(ModelSnapshot snapshot, std::vector<steer::Direction> directions)
    : model_(std::move(snapshot)), directions_(std::move(directions)) {
  const std::size_t d = model_.generator.spec().latent_dim;
  for (const auto& dir : directions_) {
    if (dir.vector.size() != d) {
      throw steer::SteerError("direction '" + dir.id + "' has length " + std::to_string(dir.vector.size()) +
                              ", model latent_dim is " + std::to_string(d));
    }
  }
}

std::shared_ptr<const Session> Session::load(const std::string& checkpoint_path, const std::string& directions_path) {
  return std::make_shared<const Session>(load_snapshot(checkpoint_path),
                                         directions_path.empty() ? std::vector<steer::Direction>{}
                                                                 : steer::read_directions(directions_path));
}

std::string Session::digest_hex() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(model_.digest));
  return buf;
}

namespace {

// Validates the latent and optional class of a request against the model.
struct Code {
  std::vector<double> z;
  std::vector<std::size_t> classes;
};

Code read_code(const json& j, const nn::Generator& g, bool class_required) {
  const auto& spec = g.spec();
  Code c;
  c.z = number_list(j, "latent");
  if (c.z.size() != spec.latent_dim) {
    throw BadRequest(400, "latent has length " + std::to_string(c.z.size()) + ", expected " +
                              std::to_string(spec.latent_dim));
  }
  if (j.contains("class") && !j.at("class").is_null()) {
    if (!spec.conditional()) throw BadRequest(400, "class given for an unconditional model");
    const json& v = j.at("class");
    if (!v.is_number_integer() || v.get<long long>() < 0 ||
        static_cast<std::size_t>(v.get<long long>()) >= spec.n_classes) {
      throw BadRequest(400, "class must be an integer in [0, " + std::to_string(spec.n_classes) + ")");
    }
    c.classes.push_back(static_cast<std::size_t>(v.get<long long>()));
  } else if (spec.conditional() && class_required) {
    throw BadRequest(400, "conditional model needs a class");
  }
  return c;
}

}  // namespace

Reply Session::info() const {
  const auto& spec = model_.generator.spec();
  return ok({{"latent_dim", spec.latent_dim},
             {"image_shape", {spec.image.channels, spec.image.height, spec.image.width}},
             {"conditional", spec.conditional()},
             {"n_classes", spec.n_classes},
             {"step", model_.step},
             {"config_digest", digest_hex()}});
}

Reply Session::generate(std::string_view body) const {
  const json j = parse_body(body);
  const Code c = read_code(j, model_.generator, true);
  const Tensor img = model_.generator.forward(Tensor({1, c.z.size()}, c.z), c.classes);
  return ok({{"image", image_json(img, 0)}, {"raw", raw_json(img, 0)}});
}

Reply Session::traverse(std::string_view body) const {
  const json j = parse_body(body);
  const Code c = read_code(j, model_.generator, true);
  if (!j.contains("direction_id") || !j.at("direction_id").is_string()) {
    throw BadRequest(400, "missing string field 'direction_id'");
  }
  const std::string id = j.at("direction_id").get<std::string>();
  const steer::Direction* dir = nullptr;
  for (const auto& d : directions_)
    if (d.id == id) dir = &d;
  if (!dir) throw BadRequest(404, "unknown direction '" + id + "'");
  const std::vector<double> alphas = number_list(j, "alphas");
  json images = json::array(), raw = json::array();
  // One forward per alpha so each image matches /v1/generate exactly.
  for (double alpha : alphas) {
    const Tensor img = steer::latent_traverse(model_.generator, c.z, dir->vector, std::span(&alpha, 1), c.classes);
    images.push_back(image_json(img, 0));
    raw.push_back(raw_json(img, 0));
  }
  return ok({{"direction_id", id}, {"alphas", alphas}, {"images", images}, {"raw", raw}});
}

Reply Session::epsilon_pair(std::string_view body) const {
  const json j = parse_body(body);
  const auto& g = model_.generator;
  const std::size_t d = g.spec().latent_dim;
  if (!j.contains("sigma_eps") || !j.at("sigma_eps").is_number()) throw BadRequest(400, "missing number 'sigma_eps'");
  const double sigma = j.at("sigma_eps").get<double>();
  if (!(sigma > 0.0)) throw BadRequest(400, "sigma_eps must be positive");
  if (!j.contains("seed") || !j.at("seed").is_number_unsigned()) throw BadRequest(400, "missing unsigned 'seed'");
  const std::uint64_t seed = j.at("seed").get<std::uint64_t>();

  Code c;
  if (j.contains("latent") && !j.at("latent").is_null()) {
    c = read_code(j, g, false);
  } else {
    Rng zr(derive_seed(seed, "serve-z"));
    c.z = zr.normal_vector(d, model_.config.train.sigma_z);
    if (j.contains("class") && !j.at("class").is_null()) {
      json with_latent = j;
      with_latent["latent"] = c.z;
      c.classes = read_code(with_latent, g, false).classes;
    }
  }
  if (g.spec().conditional() && c.classes.empty()) {
    Rng cr(derive_seed(seed, "serve-class"));
    c.classes.push_back(cr.index(g.spec().n_classes));
  }
  Rng er(derive_seed(seed, "serve-eps"));
  const std::vector<double> eps = er.normal_vector(d, sigma);

  obj::LatentBatch batch;
  batch.b = 1;
  batch.z = Tensor({1, d}, c.z);
  batch.eps_pattern = Tensor({1, d}, eps);
  const Tensor a = g.forward(batch.z, c.classes);
  const Tensor zb = batch.z_plus_eps();
  const Tensor b = g.forward(zb, c.classes);
  const Tensor f = obj::lt_feature_delta(model_.discriminator, g, batch, c.classes);
  const double prob = model_.aux.forward(f, f).item();

  const auto zb_data = zb.data();
  json out{{"z", c.z},
           {"eps", eps},
           {"z_plus_eps", std::vector<double>(zb_data.begin(), zb_data.end())},
           {"image_a", image_json(a, 0)},
           {"image_b", image_json(b, 0)},
           {"raw_a", raw_json(a, 0)},
           {"raw_b", raw_json(b, 0)},
           {"aux_same_prob", prob}};
  if (!c.classes.empty()) out["class"] = c.classes.front();
  return ok(out);
}

Reply Session::directions() const {
  json list = json::array();
  for (const auto& d : directions_) {
    json meta = json::object();
    for (const auto& [k, v] : d.metadata) meta[k] = v;
    list.push_back({{"id", d.id}, {"name", d.name}, {"source", d.source}, {"metadata", meta}});
  }
  return ok(list);
}

Reply Service::handle(std::string_view method, std::string_view path, std::string_view body) const {
  struct Route {
    std::string_view method, path;
    Reply (Session::*get)() const;
    Reply (Session::*post)(std::string_view) const;
  };
  static const Route routes[] = {
      {"GET", "/v1/model/info", &Session::info, nullptr},
      {"GET", "/v1/directions", &Session::directions, nullptr},
      {"POST", "/v1/generate", nullptr, &Session::generate},
      {"POST", "/v1/traverse", nullptr, &Session::traverse},
      {"POST", "/v1/epsilon_pair", nullptr, &Session::epsilon_pair},
  };
  const Route* route = nullptr;
  bool path_known = false;
  for (const auto& r : routes) {
    if (r.path != path) continue;
    path_known = true;
    if (r.method == method) route = &r;
  }
  if (!path_known) return error(404, "no such endpoint");
  if (!route) return error(405, "method not allowed");
  const auto s = session();
  if (!s) return error(503, "no checkpoint loaded");
  try {
    return route->get ? ((*s).*(route->get))() : ((*s).*(route->post))(body);
  } catch (const BadRequest& e) {
    return error(e.status, e.what());
  } catch (const std::exception& e) {
    return error(500, e.what());
  }
}

HttpServer::HttpServer(const Service& service) : service_(service), server_(std::make_unique<httplib::Server>()) {
  auto handler = [this](const httplib::Request& req, httplib::Response& res) {
    const Reply r = service_.handle(req.method, req.path, req.body);
    res.status = r.status;
    res.set_content(r.body, "application/json");
  };
  server_->Get(R"(/.*)", handler);
  server_->Post(R"(/.*)", handler);
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  const int bound = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw std::runtime_error("serve: could not bind " + host + ":" + std::to_string(port));
  return bound;
}

void HttpServer::listen() { server_->listen_after_bind(); }

void HttpServer::stop() {
  if (server_) server_->stop();
}

}  // namespace ltgan::serve
