#pragma once

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <cstring>
#include <deque>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include "cmpamp/runtime/protocol.hpp"

namespace cmpamp::runtime {

enum class TransportErrorCode { timeout, closed, io };

class TransportError : public std::runtime_error {
 public:
  TransportError(TransportErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  TransportErrorCode code() const noexcept { return code_; }

 private:
  TransportErrorCode code_;
};

using Millis = std::chrono::milliseconds;

/// One ordered, reliable, bidirectional link between the center and a worker.
/// Messages travel as encoded frames on every transport.
class Channel {
 public:
  virtual ~Channel() = default;
  virtual void send(const FusionMessage& msg) = 0;
  virtual FusionMessage receive(Millis timeout) = 0;
  /// Idempotent; wakes a peer blocked in receive.
  virtual void close() = 0;
};

namespace detail {

// Frames queued in one direction.
class FrameQueue {
 public:
  void push(std::vector<std::uint8_t> frame) {
    {
      std::lock_guard lock(mu_);
      if (closed_) throw TransportError(TransportErrorCode::closed, "in-process channel closed");
      frames_.push_back(std::move(frame));
    }
    cv_.notify_one();
  }

  std::vector<std::uint8_t> pop(Millis timeout) {
    std::unique_lock lock(mu_);
    if (!cv_.wait_for(lock, timeout, [&] { return !frames_.empty() || closed_; }))
      throw TransportError(TransportErrorCode::timeout, "timed out waiting for a message");
    if (frames_.empty()) throw TransportError(TransportErrorCode::closed, "in-process channel closed");
    auto frame = std::move(frames_.front());
    frames_.pop_front();
    return frame;
  }

  void close() {
    {
      std::lock_guard lock(mu_);
      closed_ = true;
    }
    cv_.notify_all();
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::vector<std::uint8_t>> frames_;
  bool closed_ = false;
};

class InProcessChannel final : public Channel {
 public:
  InProcessChannel(std::shared_ptr<FrameQueue> out, std::shared_ptr<FrameQueue> in)
      : out_(std::move(out)), in_(std::move(in)) {}
  ~InProcessChannel() override { close(); }

  void send(const FusionMessage& msg) override { out_->push(encode_message(msg)); }
  FusionMessage receive(Millis timeout) override { return decode_message(in_->pop(timeout)); }
  void close() override {
    out_->close();
    in_->close();
  }

 private:
  std::shared_ptr<FrameQueue> out_;
  std::shared_ptr<FrameQueue> in_;
};

inline std::string errno_text(std::string_view what) {
  return std::string(what) + ": " + std::strerror(errno);
}

}  // namespace detail

/// Two connected in-process endpoints (center side, worker side).
inline std::pair<std::unique_ptr<Channel>, std::unique_ptr<Channel>> make_in_process_pair() {
  auto a = std::make_shared<detail::FrameQueue>();
  auto b = std::make_shared<detail::FrameQueue>();
  return {std::make_unique<detail::InProcessChannel>(a, b), std::make_unique<detail::InProcessChannel>(b, a)};
}

class TcpChannel final : public Channel {
 public:
  explicit TcpChannel(int fd) : fd_(fd) {
    int one = 1;
    ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  }
  ~TcpChannel() override {
    close();
    if (fd_ >= 0) ::close(fd_);
  }
  TcpChannel(const TcpChannel&) = delete;
  TcpChannel& operator=(const TcpChannel&) = delete;

  void send(const FusionMessage& msg) override {
    const auto frame = encode_message(msg);
    std::size_t sent = 0;
    while (sent < frame.size()) {
      const ssize_t w = ::send(fd_, frame.data() + sent, frame.size() - sent, MSG_NOSIGNAL);
      if (w < 0) {
        if (errno == EINTR) continue;
        if (errno == EPIPE || errno == ECONNRESET) throw TransportError(TransportErrorCode::closed, "peer closed");
        throw TransportError(TransportErrorCode::io, detail::errno_text("send"));
      }
      sent += static_cast<std::size_t>(w);
    }
  }

  FusionMessage receive(Millis timeout) override {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    std::vector<std::uint8_t> frame(kFrameHeaderSize);
    read_exact(frame.data(), kFrameHeaderSize, deadline);
    const std::size_t total = *frame_size(frame);
    frame.resize(total);
    read_exact(frame.data() + kFrameHeaderSize, total - kFrameHeaderSize, deadline);
    return decode_message(frame);
  }

  void close() override {
    if (fd_ >= 0 && !shut_.exchange(true)) ::shutdown(fd_, SHUT_RDWR);
  }

 private:
  void read_exact(std::uint8_t* dst, std::size_t count, std::chrono::steady_clock::time_point deadline) {
    std::size_t got = 0;
    while (got < count) {
      const auto left = std::chrono::duration_cast<Millis>(deadline - std::chrono::steady_clock::now()).count();
      if (left <= 0) throw TransportError(TransportErrorCode::timeout, "timed out waiting for a message");
      pollfd pfd{fd_, POLLIN, 0};
      const int ready = ::poll(&pfd, 1, static_cast<int>(std::min<long long>(left, 1 << 30)));
      if (ready < 0) {
        if (errno == EINTR) continue;
        throw TransportError(TransportErrorCode::io, detail::errno_text("poll"));
      }
      if (ready == 0) continue;
      const ssize_t r = ::recv(fd_, dst + got, count - got, 0);
      if (r == 0) throw TransportError(TransportErrorCode::closed, "peer closed the connection");
      if (r < 0) {
        if (errno == EINTR || errno == EAGAIN) continue;
        if (errno == ECONNRESET) throw TransportError(TransportErrorCode::closed, "connection reset");
        throw TransportError(TransportErrorCode::io, detail::errno_text("recv"));
      }
      got += static_cast<std::size_t>(r);
    }
  }

  int fd_;
  std::atomic<bool> shut_ = false;
};

/// host:port, as used in the `workers` config key.
struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;

  static Endpoint parse(std::string_view text) {
    const auto colon = text.rfind(':');
    if (colon == std::string_view::npos || colon == 0 || colon + 1 == text.size())
      throw std::invalid_argument("endpoint must be host:port, got '" + std::string(text) + "'");
    Endpoint ep;
    ep.host = std::string(text.substr(0, colon));
    const std::string port(text.substr(colon + 1));
    std::size_t used = 0;
    unsigned long value = 0;
    try {
      value = std::stoul(port, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != port.size() || value == 0 || value > 65535)
      throw std::invalid_argument("bad port in endpoint '" + std::string(text) + "'");
    ep.port = static_cast<std::uint16_t>(value);
    return ep;
  }

  std::string str() const { return host + ":" + std::to_string(port); }
};

/// Listening socket on a worker. Port 0 picks an ephemeral port.
class TcpListener {
 public:
  explicit TcpListener(const Endpoint& where) {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd_ < 0) throw TransportError(TransportErrorCode::io, detail::errno_text("socket"));
    int one = 1;
    ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(where.port);
    if (::inet_pton(AF_INET, where.host.c_str(), &addr.sin_addr) != 1) {
      ::close(fd_);
      throw std::invalid_argument("listen address must be a dotted IPv4 address: " + where.host);
    }
    if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0 || ::listen(fd_, 8) < 0) {
      const auto msg = detail::errno_text("bind/listen " + where.str());
      ::close(fd_);
      throw TransportError(TransportErrorCode::io, msg);
    }
    socklen_t len = sizeof addr;
    ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
  }
  ~TcpListener() {
    if (fd_ >= 0) ::close(fd_);
  }
  TcpListener(const TcpListener&) = delete;
  TcpListener& operator=(const TcpListener&) = delete;

  std::uint16_t port() const noexcept { return port_; }

  std::unique_ptr<Channel> accept(Millis timeout) {
    pollfd pfd{fd_, POLLIN, 0};
    int ready;
    do {
      ready = ::poll(&pfd, 1, static_cast<int>(timeout.count()));
    } while (ready < 0 && errno == EINTR);
    if (ready == 0) throw TransportError(TransportErrorCode::timeout, "no connection from the fusion center");
    if (ready < 0) throw TransportError(TransportErrorCode::io, detail::errno_text("poll"));
    const int fd = ::accept(fd_, nullptr, nullptr);
    if (fd < 0) throw TransportError(TransportErrorCode::io, detail::errno_text("accept"));
    return std::make_unique<TcpChannel>(fd);
  }

 private:
  int fd_ = -1;
  std::uint16_t port_ = 0;
};

/// Connects to a listening worker, retrying until the timeout (workers may
/// still be starting up).
inline std::unique_ptr<Channel> connect_tcp(const Endpoint& to, Millis timeout) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const std::string port = std::to_string(to.port);
  if (const int rc = ::getaddrinfo(to.host.c_str(), port.c_str(), &hints, &res); rc != 0)
    throw TransportError(TransportErrorCode::io, "cannot resolve " + to.str() + ": " + ::gai_strerror(rc));
  std::unique_ptr<addrinfo, decltype(&::freeaddrinfo)> guard(res, &::freeaddrinfo);
  while (true) {
    const int fd = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
    if (fd < 0) throw TransportError(TransportErrorCode::io, detail::errno_text("socket"));
    if (::connect(fd, res->ai_addr, res->ai_addrlen) == 0) return std::make_unique<TcpChannel>(fd);
    ::close(fd);
    if (std::chrono::steady_clock::now() >= deadline)
      throw TransportError(TransportErrorCode::timeout, "cannot connect to worker at " + to.str());
    std::this_thread::sleep_for(Millis(50));
  }
}

}  // namespace cmpamp::runtime
