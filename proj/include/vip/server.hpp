#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "vip/catalog.hpp"
#include "vip/sim.hpp"

namespace vip::service {

struct ServiceConfig {
  std::string address = "0.0.0.0";
  std::uint16_t port = 8080;  ///< 0 picks a free port
  std::filesystem::path models_dir = "models";
  std::filesystem::path runs_dir = "runs";
  std::filesystem::path static_dir = "web";
  double tick_hz = 60.0;
  double idle_timeout_s = 300.0;
  /// Session seed; drawn from the clock when unset. Logs record it either way.
  std::optional<std::uint64_t> seed;
  std::optional<double> trial_duration_s;
  sim::SimConfig sim;

  void validate() const;
};

/// HTTP static assets and the vip-wire/1 WebSocket on one port. Every
/// connection that selects an assistant owns one Session ticked at tick_hz.
/// Network I/O and all sessions run on one I/O thread; fine-tune jobs run on
/// their own worker threads.
class Server {
 public:
  Server(ServiceConfig config, Catalog catalog);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Binds and starts serving on a background thread.
  void start();
  /// Port actually bound; valid after start().
  std::uint16_t port() const;
  /// Blocks until stop() is called from another thread or a signal handler.
  void wait();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace vip::service
