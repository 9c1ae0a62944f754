#pragma once

#include <cstdint>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

#include "ltgan/steer.hpp"
#include "ltgan/trainer.hpp"

namespace httplib {
class Server;
}

namespace ltgan::serve {

struct Reply {
  int status = 200;
  std::string body;  // JSON
};

/// Immutable model snapshot plus the directions registry. Every handler is a
/// pure function of (snapshot, request body).
class Session {
 public:
  Session(ModelSnapshot snapshot, std::vector<steer::Direction> directions);
  static std::shared_ptr<const Session> load(const std::string& checkpoint_path,
                                             const std::string& directions_path = {});

  Reply info() const;
  Reply generate(std::string_view body) const;
  Reply traverse(std::string_view body) const;
  Reply epsilon_pair(std::string_view body) const;
  Reply directions() const;

  const ModelSnapshot& snapshot() const { return model_; }
  std::string digest_hex() const;

 private:
  ModelSnapshot model_;
  std::vector<steer::Direction> directions_;
};

/// Routes requests to the current session. A swap takes effect between
/// requests; a request in flight keeps the snapshot it started with.
class Service {
 public:
  Service() = default;
  explicit Service(std::shared_ptr<const Session> session) : session_(std::move(session)) {}

  void swap(std::shared_ptr<const Session> session) {
    std::lock_guard lock(mu_);
    session_ = std::move(session);
  }
  std::shared_ptr<const Session> session() const {
    std::lock_guard lock(mu_);
    return session_;
  }

  Reply handle(std::string_view method, std::string_view path, std::string_view body) const;

 private:
  mutable std::mutex mu_;
  std::shared_ptr<const Session> session_;
};

/// HTTP/1.1 front end over a Service.
class HttpServer {
 public:
  explicit HttpServer(const Service& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  // Binds (port 0 picks a free port) and returns the bound port; throws on failure.
  int bind(const std::string& host, int port);
  // Blocks until stop().
  void listen();
  void stop();

 private:
  const Service& service_;
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace ltgan::serve
