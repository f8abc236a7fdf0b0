#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedfusion/federation.hpp"

namespace fedfusion {

class TransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Blocking frame I/O on a connected socket. read_frame returns nullopt on a
// clean EOF at a frame boundary; a short frame or socket error throws.
void send_frame(int fd, std::span<const std::uint8_t> frame);
std::optional<std::vector<std::uint8_t>> read_frame(int fd);

struct ServerOptions {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;  // 0 picks a free port
  std::size_t expected_clients = 1;
  std::size_t rounds = 1;
  std::chrono::milliseconds register_timeout{30'000};
  std::chrono::milliseconds round_timeout{600'000};
  // Called once the socket is listening, with the bound port.
  std::function<void(std::uint16_t)> on_listening;
};

// Waits for registrations, drives the rounds, then broadcasts Shutdown.
// Clients that time out or disconnect are dropped; falling below the
// coordinator's quorum aborts with TransportError.
std::vector<RoundSummary> run_server(const ServerOptions& options, RoundCoordinator& coordinator);

struct ClientOptions {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;
};

// Registers, answers every GlobalModel, returns the number of rounds served once Shutdown arrives.
std::size_t run_client(const ClientOptions& options, FedClient& client);

}  // namespace fedfusion
