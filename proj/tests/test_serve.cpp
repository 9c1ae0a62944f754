#include <cmath>
#include <filesystem>
#include <thread>

#include "doctest.h"
#include "json.hpp"
#include "ltgan/image_io.hpp"
#include "ltgan/serve.hpp"
// After Eigen: <resolv.h> defines a _res macro.
#include "httplib.h"

using namespace ltgan;
using json = nlohmann::json;

namespace {

RunConfig tiny_shapes(bool conditional = false, std::uint64_t seed = 4) {
  RunConfig c = RunConfig::preset("shapes");
  c.set("train.seed", std::to_string(seed));
  c.set("train.batch", "4");
  c.set("train.warmup", "1");
  c.set("train.steps", "3");
  c.set("data.shapes_count", "600");
  c.train.conditional = conditional;
  c.validate();
  return c;
}

std::vector<unsigned char> tiny_checkpoint(bool conditional = false, int steps = 3) {
  Trainer t(tiny_shapes(conditional));
  for (int i = 0; i < steps; ++i) t.step();
  return t.encode_checkpoint();
}

steer::Direction unit_direction(std::size_t d, std::size_t axis, const std::string& id) {
  steer::Direction dir;
  dir.id = id;
  dir.name = id;
  dir.source = "svm";
  dir.vector.assign(d, 0.0);
  dir.vector[axis] = 1.0;
  dir.metadata["eval_accuracy"] = 0.9;
  return dir;
}

std::shared_ptr<const serve::Session> session(bool conditional = false,
                                              std::vector<steer::Direction> dirs = {}) {
  return std::make_shared<const serve::Session>(decode_snapshot(tiny_checkpoint(conditional)), std::move(dirs));
}

std::string latent_body(const std::vector<double>& z, const json& extra = json::object()) {
  json j = extra;
  j["latent"] = z;
  return j.dump();
}

std::vector<double> ramp(std::size_t d) {
  std::vector<double> z(d);
  for (std::size_t i = 0; i < d; ++i) z[i] = std::sin(0.7 * static_cast<double>(i));
  return z;
}

}  // namespace

TEST_CASE("pixel mapping rounds half to even and clamps") {
  CHECK(image::to_byte(-1.0) == 0);
  CHECK(image::to_byte(1.0) == 255);
  CHECK(image::to_byte(0.0) == 128);  // 127.5 is a tie; 128 is even
  CHECK(image::to_byte(-7.0) == 0);
  CHECK(image::to_byte(3.0) == 255);
  // Away from ties the mapping is plain nearest rounding.
  for (int k = 0; k <= 2000; ++k) {
    const double x = -1.0 + k / 1000.0;
    const long double v = (static_cast<long double>(x) + 1.0L) * 127.5L;
    const long double frac = v - std::floor(v);
    if (std::abs(frac - 0.5L) < 1e-9L) continue;
    CHECK(image::to_byte(x) == static_cast<int>(std::floor(v + 0.5L)));
  }
}

TEST_CASE("png and base64 round trip") {
  image::Gray8 img{7, 5, {}};
  for (std::size_t i = 0; i < 35; ++i) img.pixels.push_back(static_cast<std::uint8_t>(i * 37));
  const auto png = image::encode_png(img);
  CHECK(png == image::encode_png(img));
  const auto back = image::decode_png(png);
  CHECK(back.width == 7);
  CHECK(back.height == 5);
  CHECK(back.pixels == img.pixels);
  for (std::size_t n : {0, 1, 2, 3, 4, 5}) {
    std::vector<unsigned char> bytes(png.begin(), png.begin() + static_cast<std::ptrdiff_t>(n));
    CHECK(image::base64_decode(image::base64_encode(bytes)) == bytes);
  }
  CHECK(image::base64_encode({'M', 'a', 'n'}) == "TWFu");
  CHECK(image::base64_encode({'M', 'a'}) == "TWE=");
  CHECK(image::base64_encode({'M'}) == "TQ==");
  CHECK_THROWS(image::base64_decode("TQ="));
}

TEST_CASE("mosaic places tiles row-major") {
  std::vector<image::Gray8> tiles;
  for (std::uint8_t v : {10, 20, 30, 40, 50}) tiles.push_back({2, 2, std::vector<std::uint8_t>(4, v)});
  const auto m = image::mosaic(tiles, 3, 1);
  CHECK(m.width == 3 * 2 + 2);
  CHECK(m.height == 2 * 2 + 1);
  CHECK(m.pixels[0] == 10);
  CHECK(m.pixels[3] == 20);
  CHECK(m.pixels[6] == 30);
  CHECK(m.pixels[3 * m.width + 0] == 40);
  CHECK(m.pixels[3 * m.width + 3] == 50);
  CHECK(m.pixels[3 * m.width + 6] == 0);  // empty slot
  CHECK(m.pixels[2] == 0);                // gap
}

TEST_CASE("snapshot carries the trained networks") {
  Trainer t(tiny_shapes());
  for (int i = 0; i < 3; ++i) t.step();
  const auto bytes = t.encode_checkpoint();
  const auto s = decode_snapshot(bytes);
  CHECK(s.step == 3);
  CHECK(hash_tensors(s.generator.named_tensors()) == hash_tensors(t.generator().named_tensors()));
  CHECK(hash_tensors(s.discriminator.named_tensors()) == hash_tensors(t.discriminator().named_tensors()));
  CHECK(hash_tensors(s.aux.named_tensors()) == hash_tensors(t.aux().named_tensors()));
  auto bad = bytes;
  bad[bad.size() / 2] ^= 1;
  CHECK_THROWS_AS(decode_snapshot(bad), CheckpointChecksumError);
}

TEST_CASE("model info") {
  serve::Service empty;
  CHECK(empty.handle("GET", "/v1/model/info", "").status == 503);

  const auto bytes = tiny_checkpoint();
  serve::Service svc(std::make_shared<const serve::Session>(decode_snapshot(bytes), std::vector<steer::Direction>{}));
  const auto r = svc.handle("GET", "/v1/model/info", "");
  REQUIRE(r.status == 200);
  const json j = json::parse(r.body);
  CHECK(j["latent_dim"] == 64);
  CHECK(j["image_shape"] == json::array({1, 16, 16}));
  CHECK(j["conditional"] == false);
  CHECK(j["step"] == 3);
  CHECK(svc.handle("GET", "/v1/model/info", "").body == r.body);
  CHECK(svc.handle("GET", "/nope", "").status == 404);
  CHECK(svc.handle("POST", "/v1/model/info", "{}").status == 405);

  // Digest tracks the checkpoint bytes.
  const auto same = serve::Session(decode_snapshot(bytes), {});
  const auto other = serve::Session(decode_snapshot(tiny_checkpoint(false, 2)), {});
  CHECK(same.digest_hex() == j["config_digest"]);
  CHECK(other.digest_hex() != j["config_digest"]);
}

TEST_CASE("generate is deterministic and validates input") {
  serve::Service svc(session());
  const auto z = ramp(64);
  const auto first = svc.handle("POST", "/v1/generate", latent_body(z));
  REQUIRE(first.status == 200);
  for (int i = 0; i < 100; ++i) CHECK(svc.handle("POST", "/v1/generate", latent_body(z)).body == first.body);
  const json j = json::parse(first.body);
  const auto raw = j["raw"].get<std::vector<double>>();
  CHECK(raw.size() == 256);
  for (double v : raw) CHECK(std::abs(v) <= 1.0);
  const auto png = image::decode_png(image::base64_decode(j["image"].get<std::string>()));
  CHECK(png.width == 16);
  for (std::size_t i = 0; i < raw.size(); ++i) CHECK(png.pixels[i] == image::to_byte(raw[i]));

  auto shifted = z;
  shifted[0] += 0.5;
  CHECK(svc.handle("POST", "/v1/generate", latent_body(shifted)).body != first.body);

  CHECK(svc.handle("POST", "/v1/generate", latent_body(ramp(63))).status == 400);
  CHECK(svc.handle("POST", "/v1/generate", latent_body(z, {{"class", 0}})).status == 400);
  CHECK(svc.handle("POST", "/v1/generate", "{not json").status == 400);
  CHECK(svc.handle("POST", "/v1/generate", "{}").status == 400);
}

TEST_CASE("conditional generate needs a valid class") {
  serve::Service svc(session(true));
  const auto z = ramp(64);
  CHECK(svc.handle("POST", "/v1/generate", latent_body(z)).status == 400);
  CHECK(svc.handle("POST", "/v1/generate", latent_body(z, {{"class", 2}})).status == 400);
  const auto a = svc.handle("POST", "/v1/generate", latent_body(z, {{"class", 0}}));
  const auto b = svc.handle("POST", "/v1/generate", latent_body(z, {{"class", 1}}));
  CHECK(a.status == 200);
  CHECK(a.body != b.body);
}

TEST_CASE("traverse: order, alpha 0 consistency, unknown direction") {
  serve::Service svc(session(false, {unit_direction(64, 3, "axis-3"), unit_direction(64, 5, "axis-5")}));
  const auto z = ramp(64);
  const json base = json::parse(svc.handle("POST", "/v1/generate", latent_body(z)).body);

  const auto r = svc.handle("POST", "/v1/traverse",
                            latent_body(z, {{"direction_id", "axis-3"}, {"alphas", {-2.0, -1.0, 0.0, 1.0, 2.0}}}));
  REQUIRE(r.status == 200);
  const json j = json::parse(r.body);
  REQUIRE(j["images"].size() == 5);
  CHECK(j["images"][2] == base["image"]);
  CHECK(j["raw"][2] == base["raw"]);

  const json rev = json::parse(
      svc.handle("POST", "/v1/traverse",
                 latent_body(z, {{"direction_id", "axis-3"}, {"alphas", {2.0, 1.0, 0.0, -1.0, -2.0}}}))
          .body);
  for (std::size_t i = 0; i < 5; ++i) CHECK(rev["images"][i] == j["images"][4 - i]);

  const json zero = json::parse(
      svc.handle("POST", "/v1/traverse", latent_body(z, {{"direction_id", "axis-5"}, {"alphas", {0.0}}})).body);
  CHECK(zero["images"][0] == base["image"]);

  CHECK(svc.handle("POST", "/v1/traverse", latent_body(z, {{"direction_id", "nope"}, {"alphas", {0.0}}})).status ==
        404);
  CHECK(svc.handle("POST", "/v1/traverse", latent_body(z, {{"direction_id", "axis-3"}})).status == 400);
}

TEST_CASE("epsilon pair") {
  serve::Service svc(session());
  const json body{{"sigma_eps", 0.5}, {"seed", 11}};
  const auto r = svc.handle("POST", "/v1/epsilon_pair", body.dump());
  REQUIRE(r.status == 200);
  CHECK(svc.handle("POST", "/v1/epsilon_pair", body.dump()).body == r.body);
  const json j = json::parse(r.body);
  const auto z = j["z"].get<std::vector<double>>(), zb = j["z_plus_eps"].get<std::vector<double>>(),
             eps = j["eps"].get<std::vector<double>>();
  REQUIRE(z.size() == 64);
  for (std::size_t i = 0; i < 64; ++i) CHECK(zb[i] == doctest::Approx(z[i] + eps[i]).epsilon(1e-12));
  const double p = j["aux_same_prob"].get<double>();
  CHECK(p > 0.0);
  CHECK(p < 1.0);
  CHECK(j["image_a"] != j["image_b"]);

  // image_a is the plain render of the echoed code.
  const json plain = json::parse(svc.handle("POST", "/v1/generate", latent_body(z)).body);
  CHECK(plain["image"] == j["image_a"]);

  // A caller-supplied code is used as is.
  const json given = json::parse(
      svc.handle("POST", "/v1/epsilon_pair", json{{"latent", ramp(64)}, {"sigma_eps", 0.5}, {"seed", 11}}.dump())
          .body);
  CHECK(given["z"].get<std::vector<double>>() == ramp(64));
  CHECK(given["eps"] == j["eps"]);

  const json tiny = json::parse(
      svc.handle("POST", "/v1/epsilon_pair", json{{"sigma_eps", 1e-12}, {"seed", 3}}.dump()).body);
  CHECK(tiny["image_a"] == tiny["image_b"]);

  CHECK(svc.handle("POST", "/v1/epsilon_pair", json{{"sigma_eps", 0.0}, {"seed", 1}}.dump()).status == 400);
  CHECK(svc.handle("POST", "/v1/epsilon_pair", json{{"sigma_eps", -1.0}, {"seed", 1}}.dump()).status == 400);
  CHECK(svc.handle("POST", "/v1/epsilon_pair", json{{"sigma_eps", 0.5}}.dump()).status == 400);
}

TEST_CASE("directions listing matches the file") {
  serve::Service empty(session());
  CHECK(empty.handle("GET", "/v1/directions", "").body == "[]");

  const std::string path = (std::filesystem::temp_directory_path() / "ltgan_test_dirs.jsonl").string();
  std::filesystem::remove(path);
  steer::append_direction(path, unit_direction(64, 1, ""));
  steer::append_direction(path, unit_direction(64, 2, ""));
  const auto file = steer::read_directions(path);
  serve::Service svc(std::make_shared<const serve::Session>(decode_snapshot(tiny_checkpoint()), file));
  const json list = json::parse(svc.handle("GET", "/v1/directions", "").body);
  REQUIRE(list.size() == file.size());
  for (std::size_t i = 0; i < file.size(); ++i) {
    CHECK(list[i]["id"] == file[i].id);
    CHECK(list[i]["name"] == file[i].name);
    CHECK(list[i]["source"] == file[i].source);
    CHECK(list[i]["metadata"]["eval_accuracy"] == file[i].metadata.at("eval_accuracy"));
  }
  CHECK(list[0]["id"] != list[1]["id"]);
  CHECK_THROWS_AS(serve::Session(decode_snapshot(tiny_checkpoint()), {unit_direction(8, 1, "short")}),
                  steer::SteerError);
  std::filesystem::remove(path);
}

TEST_CASE("http front end on loopback") {
  serve::Service svc;
  serve::HttpServer server(svc);
  const int port = server.bind("127.0.0.1", 0);
  std::thread th([&] { server.listen(); });
  httplib::Client client("127.0.0.1", port);
  auto before = client.Get("/v1/model/info");
  REQUIRE(before);
  CHECK(before->status == 503);

  svc.swap(session());
  auto info = client.Get("/v1/model/info");
  REQUIRE(info);
  CHECK(info->status == 200);
  CHECK(json::parse(info->body)["latent_dim"] == 64);
  auto gen = client.Post("/v1/generate", latent_body(ramp(64)), "application/json");
  REQUIRE(gen);
  CHECK(gen->status == 200);
  CHECK(gen->body == svc.handle("POST", "/v1/generate", latent_body(ramp(64))).body);
  auto bad = client.Post("/v1/generate", latent_body(ramp(3)), "application/json");
  REQUIRE(bad);
  CHECK(bad->status == 400);
  server.stop();
  th.join();
}
