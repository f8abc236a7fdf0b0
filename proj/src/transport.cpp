#include "fedfusion/transport.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <thread>

#include <spdlog/spdlog.h>

namespace fedfusion {

namespace {

std::string errno_text() { return std::strerror(errno); }

class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  ~Socket() { reset(); }
  Socket(Socket&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Socket& operator=(Socket&& o) noexcept {
    if (this != &o) {
      reset();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  int fd() const { return fd_; }
  void reset() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

 private:
  int fd_ = -1;
};

bool read_exact(int fd, std::uint8_t* dst, std::size_t n, bool eof_ok_at_start) {
  std::size_t got = 0;
  while (got < n) {
    const ssize_t r = ::recv(fd, dst + got, n - got, 0);
    if (r == 0) {
      if (got == 0 && eof_ok_at_start) return false;
      throw TransportError("connection closed mid-frame");
    }
    if (r < 0) {
      if (errno == EINTR) continue;
      throw TransportError("recv failed: " + errno_text());
    }
    got += static_cast<std::size_t>(r);
  }
  return true;
}

addrinfo* resolve(const std::string& host, std::uint16_t port, bool passive) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  if (passive) hints.ai_flags = AI_PASSIVE;
  addrinfo* res = nullptr;
  const int rc = ::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res);
  if (rc != 0) throw TransportError("cannot resolve " + host + ": " + ::gai_strerror(rc));
  return res;
}

template <typename T>
class BlockingQueue {
 public:
  void push(T v) {
    {
      std::lock_guard lock(mu_);
      items_.push_back(std::move(v));
    }
    cv_.notify_one();
  }
  std::optional<T> pop_until(std::chrono::steady_clock::time_point deadline) {
    std::unique_lock lock(mu_);
    if (!cv_.wait_until(lock, deadline, [&] { return !items_.empty(); })) return std::nullopt;
    T v = std::move(items_.front());
    items_.pop_front();
    return v;
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<T> items_;
};

struct Event {
  std::size_t conn = 0;
  std::optional<FedMessage> msg;  // empty: connection closed or failed
  std::string error;
};

struct Connection {
  Socket sock;
  std::thread reader;
  std::optional<std::uint32_t> client_id;
  bool alive = true;
};

// Reader threads only enqueue; every decision and every send happens on the calling thread.
class Server {
 public:
  Server(const ServerOptions& opts, RoundCoordinator& coord) : opts_(opts), coord_(coord) {}

  ~Server() {
    stop_accepting_ = true;
    if (acceptor_.joinable()) acceptor_.join();
    std::lock_guard lock(mu_);
    for (auto& c : conns_) {
      if (c->sock.fd() >= 0) ::shutdown(c->sock.fd(), SHUT_RDWR);
    }
    for (auto& c : conns_) {
      if (c->reader.joinable()) c->reader.join();
    }
  }

  std::vector<RoundSummary> run() {
    listen();
    acceptor_ = std::thread([this] { accept_loop(); });
    register_clients();
    std::vector<RoundSummary> log;
    for (std::size_t r = 0; r < opts_.rounds; ++r) log.push_back(round());
    broadcast(ShutdownMsg{});
    return log;
  }

 private:
  void listen() {
    addrinfo* res = resolve(opts_.host, opts_.port, true);
    std::unique_ptr<addrinfo, decltype(&::freeaddrinfo)> guard(res, ::freeaddrinfo);
    listener_ = Socket(::socket(res->ai_family, res->ai_socktype, res->ai_protocol));
    if (listener_.fd() < 0) throw TransportError("socket failed: " + errno_text());
    int one = 1;
    ::setsockopt(listener_.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    if (::bind(listener_.fd(), res->ai_addr, res->ai_addrlen) != 0) {
      throw TransportError("bind " + opts_.host + ":" + std::to_string(opts_.port) + " failed: " + errno_text());
    }
    if (::listen(listener_.fd(), 64) != 0) throw TransportError("listen failed: " + errno_text());
    sockaddr_in addr{};
    socklen_t len = sizeof(addr);
    ::getsockname(listener_.fd(), reinterpret_cast<sockaddr*>(&addr), &len);
    const std::uint16_t port = ntohs(addr.sin_port);
    spdlog::info("server listening on {}:{}", opts_.host, port);
    if (opts_.on_listening) opts_.on_listening(port);
  }

  void accept_loop() {
    while (!stop_accepting_) {
      pollfd p{listener_.fd(), POLLIN, 0};
      const int rc = ::poll(&p, 1, 50);
      if (rc <= 0) continue;
      const int fd = ::accept(listener_.fd(), nullptr, nullptr);
      if (fd < 0) continue;
      int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
      std::lock_guard lock(mu_);
      if (stop_accepting_) {
        ::close(fd);
        break;
      }
      auto conn = std::make_unique<Connection>();
      conn->sock = Socket(fd);
      const std::size_t id = conns_.size();
      conn->reader = std::thread([this, fd, id] { read_loop(fd, id); });
      conns_.push_back(std::move(conn));
    }
  }

  void read_loop(int fd, std::size_t id) {
    for (;;) {
      try {
        auto frame = read_frame(fd);
        if (!frame) {
          events_.push({id, std::nullopt, "connection closed"});
          return;
        }
        try {
          events_.push({id, decode(*frame), {}});
        } catch (const CodecError& e) {
          // The frame boundary is intact, so the stream can continue.
          spdlog::warn("connection {}: dropping bad frame: {}", id, e.what());
        }
      } catch (const std::exception& e) {
        events_.push({id, std::nullopt, e.what()});
        return;
      }
    }
  }

  Connection& conn(std::size_t id) {
    std::lock_guard lock(mu_);
    return *conns_.at(id);
  }

  void drop(std::size_t id, const std::string& why) {
    Connection& c = conn(id);
    if (!c.alive) return;
    c.alive = false;
    spdlog::warn("dropping client {}: {}", c.client_id ? std::to_string(*c.client_id) : "?", why);
    ::shutdown(c.sock.fd(), SHUT_RDWR);
  }

  std::vector<std::size_t> live_clients() {
    std::lock_guard lock(mu_);
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < conns_.size(); ++i) {
      if (conns_[i]->alive && conns_[i]->client_id) out.push_back(i);
    }
    return out;
  }

  void send_to(std::size_t id, std::span<const std::uint8_t> frame) {
    try {
      send_frame(conn(id).sock.fd(), frame);
    } catch (const TransportError& e) {
      drop(id, e.what());
    }
  }

  void broadcast(const FedMessage& msg) {
    const auto frame = encode(msg);
    for (std::size_t id : live_clients()) send_to(id, frame);
  }

  void abort(const std::string& why) {
    broadcast(ShutdownMsg{});
    throw TransportError(why);
  }

  void register_clients() {
    const auto deadline = std::chrono::steady_clock::now() + opts_.register_timeout;
    std::set<std::uint32_t> ids;
    while (ids.size() < opts_.expected_clients) {
      auto ev = events_.pop_until(deadline);
      if (!ev) break;
      if (!ev->msg) {
        drop(ev->conn, ev->error);
        if (auto cid = conn(ev->conn).client_id) ids.erase(*cid);
        continue;
      }
      const auto* reg = std::get_if<RegisterMsg>(&*ev->msg);
      if (!reg) {
        spdlog::warn("connection {}: expected Register, got tag {}", ev->conn, static_cast<int>(message_tag(*ev->msg)));
        continue;
      }
      if (conn(ev->conn).client_id || ids.count(reg->client_id)) {
        drop(ev->conn, "duplicate registration for client " + std::to_string(reg->client_id));
        continue;
      }
      conn(ev->conn).client_id = reg->client_id;
      ids.insert(reg->client_id);
      spdlog::info("client {} registered ({}/{})", reg->client_id, ids.size(), opts_.expected_clients);
    }
    stop_accepting_ = true;
    if (acceptor_.joinable()) acceptor_.join();
    if (ids.size() < std::max<std::size_t>(coord_.state().min_clients_per_round, 1)) {
      abort("only " + std::to_string(ids.size()) + " clients registered; quorum is " +
            std::to_string(coord_.state().min_clients_per_round));
    }
  }

  RoundSummary round() {
    const GlobalModelMsg gm = coord_.begin_round();
    const auto frame = encode(gm);
    std::map<std::size_t, std::uint32_t> waiting;
    for (std::size_t id : live_clients()) {
      waiting[id] = *conn(id).client_id;
      send_to(id, frame);
    }
    const auto deadline = std::chrono::steady_clock::now() + opts_.round_timeout;
    while (!waiting.empty()) {
      auto ev = events_.pop_until(deadline);
      if (!ev) break;
      if (!ev->msg) {
        drop(ev->conn, ev->error);
        waiting.erase(ev->conn);
        continue;
      }
      auto* upd = std::get_if<LocalUpdateMsg>(&*ev->msg);
      auto it = waiting.find(ev->conn);
      if (!upd || it == waiting.end() || upd->client_id != it->second) {
        spdlog::warn("connection {}: unexpected frame (tag {}) during round {}", ev->conn,
                     static_cast<int>(message_tag(*ev->msg)), gm.round);
        continue;
      }
      if (coord_.submit(std::move(*upd))) waiting.erase(it);
    }
    for (const auto& [id, cid] : waiting) drop(id, "timed out in round " + std::to_string(gm.round));
    if (coord_.submitted() < std::max<std::size_t>(coord_.state().min_clients_per_round, 1)) {
      abort("round " + std::to_string(gm.round) + " aborted: " + std::to_string(coord_.submitted()) +
            " updates, quorum is " + std::to_string(coord_.state().min_clients_per_round));
    }
    RoundSummary s = coord_.finish_round();
    broadcast(RoundResultMsg{s.round, s.promoted, s.global_accuracy});
    return s;
  }

  const ServerOptions& opts_;
  RoundCoordinator& coord_;
  Socket listener_;
  std::thread acceptor_;
  std::atomic<bool> stop_accepting_{false};
  std::mutex mu_;
  std::vector<std::unique_ptr<Connection>> conns_;
  BlockingQueue<Event> events_;
};

}  // namespace

void send_frame(int fd, std::span<const std::uint8_t> frame) {
  std::size_t sent = 0;
  while (sent < frame.size()) {
    const ssize_t r = ::send(fd, frame.data() + sent, frame.size() - sent, MSG_NOSIGNAL);
    if (r < 0) {
      if (errno == EINTR) continue;
      throw TransportError("send failed: " + errno_text());
    }
    sent += static_cast<std::size_t>(r);
  }
}

std::optional<std::vector<std::uint8_t>> read_frame(int fd) {
  std::vector<std::uint8_t> frame(kFrameHeaderSize);
  if (!read_exact(fd, frame.data(), kFrameHeaderSize, true)) return std::nullopt;
  const FrameHeader h = decode_header(frame);
  frame.resize(kFrameHeaderSize + h.payload_length);
  read_exact(fd, frame.data() + kFrameHeaderSize, h.payload_length, false);
  return frame;
}

std::vector<RoundSummary> run_server(const ServerOptions& options, RoundCoordinator& coordinator) {
  if (options.expected_clients == 0) throw std::invalid_argument("server needs at least one expected client");
  Server server(options, coordinator);
  return server.run();
}

std::size_t run_client(const ClientOptions& options, FedClient& client) {
  addrinfo* res = resolve(options.host, options.port, false);
  std::unique_ptr<addrinfo, decltype(&::freeaddrinfo)> guard(res, ::freeaddrinfo);
  Socket sock(::socket(res->ai_family, res->ai_socktype, res->ai_protocol));
  if (sock.fd() < 0) throw TransportError("socket failed: " + errno_text());
  if (::connect(sock.fd(), res->ai_addr, res->ai_addrlen) != 0) {
    throw TransportError("connect to " + options.host + ":" + std::to_string(options.port) + " failed: " + errno_text());
  }
  int one = 1;
  ::setsockopt(sock.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  send_frame(sock.fd(), encode(RegisterMsg{client.id()}));
  spdlog::info("client {} connected to {}:{}", client.id(), options.host, options.port);

  std::size_t rounds = 0;
  for (;;) {
    auto frame = read_frame(sock.fd());
    if (!frame) throw TransportError("server closed the connection before Shutdown");
    FedMessage msg;
    try {
      msg = decode(*frame);
    } catch (const CodecError& e) {
      spdlog::warn("client {}: dropping bad frame: {}", client.id(), e.what());
      continue;
    }
    if (auto* gm = std::get_if<GlobalModelMsg>(&msg)) {
      spdlog::info("client {}: training for round {}", client.id(), gm->round);
      send_frame(sock.fd(), encode(client.handle(*gm)));
      ++rounds;
    } else if (auto* rr = std::get_if<RoundResultMsg>(&msg)) {
      spdlog::info("client {}: round {} promoted={} global_accuracy={:.4f}", client.id(), rr->round, rr->promoted,
                   rr->global_accuracy);
    } else if (std::holds_alternative<ShutdownMsg>(msg)) {
      spdlog::info("client {}: shutdown after {} rounds", client.id(), rounds);
      return rounds;
    } else {
      spdlog::warn("client {}: unexpected message tag {}", client.id(), static_cast<int>(message_tag(msg)));
    }
  }
}

}  // namespace fedfusion
