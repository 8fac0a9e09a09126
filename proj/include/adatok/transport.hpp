#pragma once

// Framed TCP transport for TOK frames.
//
// A message is a 4-byte little-endian length prefix followed by one TOK frame.
// The receiver answers with a single byte: 0x06 (ACK) once the frame is
// validated and stored, 0x15 (NAK) for anything malformed, after which it
// closes the connection. Bodies larger than 64 MiB are refused.

#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <openssl/evp.h>

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <chrono>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <system_error>
#include <thread>
#include <vector>

#include "adatok/detail/bytes.hpp"
#include "adatok/errors.hpp"
#include "adatok/token_wire.hpp"

namespace adatok {

inline constexpr std::uint8_t kAck = 0x06;
inline constexpr std::uint8_t kNak = 0x15;

namespace detail {

class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(Socket&& other) noexcept : fd_(std::exchange(other.fd_, -1)) {}
  Socket& operator=(Socket&& other) noexcept {
    if (this != &other) {
      reset();
      fd_ = std::exchange(other.fd_, -1);
    }
    return *this;
  }
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  ~Socket() { reset(); }

  int fd() const { return fd_; }
  bool valid() const { return fd_ >= 0; }
  void reset() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

 private:
  int fd_ = -1;
};

inline std::string errno_text() { return std::system_category().message(errno); }

enum class IoStatus { ok, eof, timeout, error };

// Waits for readiness; a negative deadline means no timeout.
inline IoStatus wait_fd(int fd, short events, std::chrono::milliseconds timeout) {
  pollfd pfd{fd, events, 0};
  for (;;) {
    const int rc = ::poll(&pfd, 1, static_cast<int>(timeout.count()));
    if (rc > 0) return IoStatus::ok;
    if (rc == 0) return IoStatus::timeout;
    if (errno != EINTR) return IoStatus::error;
  }
}

inline IoStatus read_exact(int fd, std::span<std::uint8_t> out, std::chrono::milliseconds timeout) {
  std::size_t got = 0;
  while (got < out.size()) {
    if (auto st = wait_fd(fd, POLLIN, timeout); st != IoStatus::ok) return st;
    const ssize_t n = ::recv(fd, out.data() + got, out.size() - got, 0);
    if (n == 0) return IoStatus::eof;
    if (n < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      return IoStatus::error;
    }
    got += static_cast<std::size_t>(n);
  }
  return IoStatus::ok;
}

inline bool write_all(int fd, std::span<const std::uint8_t> data) {
  std::size_t sent = 0;
  while (sent < data.size()) {
    const ssize_t n = ::send(fd, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      return false;
    }
    sent += static_cast<std::size_t>(n);
  }
  return true;
}

inline std::string sha256_hex(std::span<const std::uint8_t> data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw IoError("sha256 failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

inline Socket connect_tcp(const std::string& host, std::uint16_t port) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const std::string service = std::to_string(port);
  if (int rc = ::getaddrinfo(host.c_str(), service.c_str(), &hints, &res); rc != 0)
    throw TransportError("cannot resolve " + host + ": " + ::gai_strerror(rc));
  std::unique_ptr<addrinfo, decltype(&::freeaddrinfo)> guard(res, &::freeaddrinfo);
  std::string last_error = "no addresses";
  for (addrinfo* ai = res; ai != nullptr; ai = ai->ai_next) {
    Socket s(::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol));
    if (!s.valid()) {
      last_error = errno_text();
      continue;
    }
    if (::connect(s.fd(), ai->ai_addr, ai->ai_addrlen) == 0) return s;
    last_error = errno_text();
  }
  throw TransportError("connect to " + host + ":" + service + " failed: " + last_error);
}

}  // namespace detail

struct SendOptions {
  // Pacing limit in KB/s (KB = 1024 bytes); unset means unthrottled.
  std::optional<double> throttle_kbps;
  std::chrono::milliseconds ack_timeout{10'000};
  std::size_t chunk_bytes = 4096;
};

struct SendReport {
  std::uint64_t frame_bytes = 0;  // TOK frame only
  std::uint64_t wire_bytes = 0;   // prefix + frame
  double seconds = 0.0;           // first byte to ack
  double throughput_kbps = 0.0;
};

namespace detail {

inline void send_message(const Socket& sock, std::span<const std::uint8_t> frame,
                         const SendOptions& opts, std::chrono::steady_clock::time_point start,
                         std::uint64_t& sent_total) {
  if (frame.size() > kMaxFrameBytes) throw TransportError("frame exceeds 64 MiB");
  std::vector<std::uint8_t> wire;
  wire.reserve(frame.size() + 4);
  put_u32le(wire, static_cast<std::uint32_t>(frame.size()));
  wire.insert(wire.end(), frame.begin(), frame.end());

  using clock = std::chrono::steady_clock;
  const std::size_t chunk = std::max<std::size_t>(opts.chunk_bytes, 1);
  for (std::size_t sent = 0; sent < wire.size();) {
    const std::size_t n = std::min(chunk, wire.size() - sent);
    if (!write_all(sock.fd(), std::span(wire).subspan(sent, n)))
      throw TransportError("send failed: " + errno_text());
    sent += n;
    sent_total += n;
    if (opts.throttle_kbps) {
      const double due = static_cast<double>(sent_total) / (*opts.throttle_kbps * 1024.0);
      std::this_thread::sleep_until(
          start + std::chrono::duration_cast<clock::duration>(std::chrono::duration<double>(due)));
    }
  }

  std::uint8_t reply = 0;
  switch (read_exact(sock.fd(), std::span(&reply, 1), opts.ack_timeout)) {
    case IoStatus::ok: break;
    case IoStatus::timeout: throw AckTimeout("no acknowledgment from server");
    case IoStatus::eof: throw TransportError("connection closed before acknowledgment");
    case IoStatus::error: throw TransportError("receive failed: " + errno_text());
  }
  if (reply == kNak) throw TransportError("server rejected the frame");
  if (reply != kAck) throw TransportError("unexpected reply byte");
}

}  // namespace detail

// Sends frames over one connection, waiting for the reply after each. More
// than one frame requires a server in persistent mode.
inline SendReport send_frames(const std::string& host, std::uint16_t port,
                              std::span<const FrameBytes> frames, const SendOptions& opts = {}) {
  if (opts.throttle_kbps && !(*opts.throttle_kbps > 0.0))
    throw InvalidArgument("throttle must be positive");
  detail::Socket sock = detail::connect_tcp(host, port);
  const auto start = std::chrono::steady_clock::now();
  SendReport rep;
  for (const auto& frame : frames) {
    detail::send_message(sock, frame, opts, start, rep.wire_bytes);
    rep.frame_bytes += frame.size();
  }
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  rep.throughput_kbps =
      rep.seconds > 0.0 ? static_cast<double>(rep.wire_bytes) / 1024.0 / rep.seconds : 0.0;
  return rep;
}

// One frame per connection.
inline SendReport send_frame(const std::string& host, std::uint16_t port,
                             std::span<const std::uint8_t> frame, const SendOptions& opts = {}) {
  const FrameBytes copy(frame.begin(), frame.end());
  return send_frames(host, port, std::span(&copy, 1), opts);
}

struct ServerOptions {
  std::uint16_t port = 0;  // 0 picks an ephemeral port
  std::filesystem::path sink;
  bool persistent = false;  // accept several frames per connection
  std::chrono::milliseconds read_timeout{10'000};
  std::size_t max_frames = 0;  // stop after this many accepted frames; 0 = never
};

// Content-addressed frame sink. Each connection runs on its own thread;
// files are written to a temporary name and renamed into place, so readers
// never observe partial frames.
class TokenServer {
 public:
  explicit TokenServer(ServerOptions opts) : opts_(std::move(opts)) {
    std::error_code ec;
    std::filesystem::create_directories(opts_.sink, ec);
    if (ec) throw StartupError("cannot create sink directory " + opts_.sink.string());

    listener_ = detail::Socket(::socket(AF_INET6, SOCK_STREAM, 0));
    bool v6 = listener_.valid();
    if (!v6) listener_ = detail::Socket(::socket(AF_INET, SOCK_STREAM, 0));
    if (!listener_.valid()) throw StartupError("socket: " + detail::errno_text());
    int one = 1;
    ::setsockopt(listener_.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    int rc = -1;
    if (v6) {
      int zero = 0;
      ::setsockopt(listener_.fd(), IPPROTO_IPV6, IPV6_V6ONLY, &zero, sizeof(zero));
      sockaddr_in6 addr{};
      addr.sin6_family = AF_INET6;
      addr.sin6_addr = in6addr_any;
      addr.sin6_port = htons(opts_.port);
      rc = ::bind(listener_.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof(addr));
    } else {
      sockaddr_in addr{};
      addr.sin_family = AF_INET;
      addr.sin_addr.s_addr = htonl(INADDR_ANY);
      addr.sin_port = htons(opts_.port);
      rc = ::bind(listener_.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof(addr));
    }
    if (rc != 0) throw StartupError("bind port " + std::to_string(opts_.port) + ": " + detail::errno_text());
    if (::listen(listener_.fd(), 128) != 0) throw StartupError("listen: " + detail::errno_text());

    sockaddr_storage bound{};
    socklen_t len = sizeof(bound);
    ::getsockname(listener_.fd(), reinterpret_cast<sockaddr*>(&bound), &len);
    port_ = bound.ss_family == AF_INET6
                ? ntohs(reinterpret_cast<sockaddr_in6*>(&bound)->sin6_port)
                : ntohs(reinterpret_cast<sockaddr_in*>(&bound)->sin_port);
  }

  TokenServer(const TokenServer&) = delete;
  TokenServer& operator=(const TokenServer&) = delete;

  ~TokenServer() {
    stop();
    join_workers(true);
  }

  std::uint16_t port() const { return port_; }
  std::uint64_t frames_accepted() const { return accepted_.load(); }
  std::uint64_t frames_rejected() const { return rejected_.load(); }
  std::uint64_t files_written() const { return written_.load(); }

  void stop() { stopping_.store(true); }
  bool stopping() const { return stopping_.load(); }

  // Accept loop; returns after stop() or once max_frames frames were accepted.
  void run() {
    while (!stopping_.load()) {
      if (opts_.max_frames != 0 && accepted_.load() >= opts_.max_frames) break;
      join_workers(false);
      const auto st = detail::wait_fd(listener_.fd(), POLLIN, std::chrono::milliseconds(50));
      if (st != detail::IoStatus::ok) continue;
      detail::Socket conn(::accept(listener_.fd(), nullptr, nullptr));
      if (!conn.valid()) continue;
      auto worker = std::make_unique<Worker>();
      Worker* raw = worker.get();
      raw->thread = std::thread([this, raw, c = std::move(conn)]() mutable {
        handle(std::move(c));
        raw->done.store(true);
      });
      std::lock_guard lock(workers_mutex_);
      workers_.push_back(std::move(worker));
    }
    join_workers(true);
  }

 private:
  struct Worker {
    std::thread thread;
    std::atomic<bool> done{false};
  };

  void join_workers(bool all) {
    std::lock_guard lock(workers_mutex_);
    for (auto it = workers_.begin(); it != workers_.end();) {
      if (all || (*it)->done.load()) {
        if ((*it)->thread.joinable()) (*it)->thread.join();
        it = workers_.erase(it);
      } else {
        ++it;
      }
    }
  }

  void reply(const detail::Socket& conn, std::uint8_t byte) {
    detail::write_all(conn.fd(), std::span(&byte, 1));
  }

  void reject(const detail::Socket& conn) {
    ++rejected_;
    reply(conn, kNak);
  }

  void handle(detail::Socket conn) {
    int one = 1;
    ::setsockopt(conn.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    bool first = true;
    for (;;) {
      std::uint8_t prefix[4];
      const auto st = detail::read_exact(conn.fd(), prefix, opts_.read_timeout);
      if (st == detail::IoStatus::eof && !first) return;  // clean end of a persistent session
      if (st != detail::IoStatus::ok) return reject(conn);
      first = false;
      const std::uint32_t len = detail::get_u32le(prefix);
      if (len == 0 || len > kMaxFrameBytes) return reject(conn);

      std::vector<std::uint8_t> body(len);
      if (detail::read_exact(conn.fd(), body, opts_.read_timeout) != detail::IoStatus::ok)
        return reject(conn);
      try {
        (void)unpack(body);
        store(body);
      } catch (const std::exception&) {
        return reject(conn);
      }
      ++accepted_;
      reply(conn, kAck);
      if (!opts_.persistent) return;
    }
  }

  void store(std::span<const std::uint8_t> frame) {
    const std::string hash = detail::sha256_hex(frame);
    const auto final_path = opts_.sink / (hash + ".tok");
    std::lock_guard lock(sink_mutex_);
    if (std::filesystem::exists(final_path)) return;
    const auto tmp = opts_.sink / (".incoming-" + hash + ".tmp");
    try {
      detail::write_file(tmp, frame);
      std::filesystem::rename(tmp, final_path);
    } catch (...) {
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw;
    }
    ++written_;
  }

  ServerOptions opts_;
  detail::Socket listener_;
  std::uint16_t port_ = 0;
  std::atomic<bool> stopping_{false};
  std::atomic<std::uint64_t> accepted_{0};
  std::atomic<std::uint64_t> rejected_{0};
  std::atomic<std::uint64_t> written_{0};
  std::mutex workers_mutex_;
  std::mutex sink_mutex_;
  std::list<std::unique_ptr<Worker>> workers_;
};

}  // namespace adatok
