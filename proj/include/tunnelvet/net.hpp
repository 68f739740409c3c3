#pragma once

// Thin RAII wrapper over IPv4 UDP sockets; everything the forwarder and the
// test fixtures need and nothing more.

#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <cstdint>
#include <cstring>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace tunnelvet::net {

class NetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Endpoint {
  std::uint32_t addr = 0;  // host byte order
  std::uint16_t port = 0;

  static Endpoint parse(const std::string& text) {
    auto colon = text.rfind(':');
    if (colon == std::string::npos)
      throw NetError("endpoint must be host:port, got '" + text + "'");
    std::string host = text.substr(0, colon);
    std::string port_text = text.substr(colon + 1);
    in_addr a{};
    if (inet_pton(AF_INET, host.c_str(), &a) != 1)
      throw NetError("not an IPv4 address: '" + host + "'");
    unsigned long port = 0;
    try {
      std::size_t used = 0;
      port = std::stoul(port_text, &used);
      if (used != port_text.size()) throw std::invalid_argument(port_text);
    } catch (const std::exception&) {
      throw NetError("bad port: '" + port_text + "'");
    }
    if (port > 65535) throw NetError("port out of range: " + port_text);
    return Endpoint{ntohl(a.s_addr), static_cast<std::uint16_t>(port)};
  }

  std::string to_string() const {
    in_addr a{};
    a.s_addr = htonl(addr);
    char buf[INET_ADDRSTRLEN] = {};
    inet_ntop(AF_INET, &a, buf, sizeof buf);
    return std::string(buf) + ":" + std::to_string(port);
  }

  sockaddr_in to_sockaddr() const {
    sockaddr_in sa{};
    sa.sin_family = AF_INET;
    sa.sin_addr.s_addr = htonl(addr);
    sa.sin_port = htons(port);
    return sa;
  }

  static Endpoint from_sockaddr(const sockaddr_in& sa) {
    return Endpoint{ntohl(sa.sin_addr.s_addr), ntohs(sa.sin_port)};
  }

  friend bool operator==(const Endpoint&, const Endpoint&) = default;
};

class UdpSocket {
 public:
  UdpSocket() = default;

  static UdpSocket bind(const Endpoint& local) {
    UdpSocket s = open();
    sockaddr_in sa = local.to_sockaddr();
    if (::bind(s.fd_, reinterpret_cast<sockaddr*>(&sa), sizeof sa) != 0)
      throw NetError("bind to " + local.to_string() + " failed: " +
                     std::strerror(errno));
    return s;
  }

  static UdpSocket open() {
    UdpSocket s;
    s.fd_ = ::socket(AF_INET, SOCK_DGRAM, 0);
    if (s.fd_ < 0)
      throw NetError(std::string("socket() failed: ") + std::strerror(errno));
    return s;
  }

  UdpSocket(UdpSocket&& other) noexcept : fd_(std::exchange(other.fd_, -1)) {}
  UdpSocket& operator=(UdpSocket&& other) noexcept {
    if (this != &other) {
      close();
      fd_ = std::exchange(other.fd_, -1);
    }
    return *this;
  }
  UdpSocket(const UdpSocket&) = delete;
  UdpSocket& operator=(const UdpSocket&) = delete;
  ~UdpSocket() { close(); }

  bool valid() const { return fd_ >= 0; }

  Endpoint local_endpoint() const {
    sockaddr_in sa{};
    socklen_t len = sizeof sa;
    if (::getsockname(fd_, reinterpret_cast<sockaddr*>(&sa), &len) != 0)
      throw NetError(std::string("getsockname failed: ") +
                     std::strerror(errno));
    return Endpoint::from_sockaddr(sa);
  }

  void send_to(std::span<const std::uint8_t> payload, const Endpoint& peer) {
    sockaddr_in sa = peer.to_sockaddr();
    ssize_t n = ::sendto(fd_, payload.data(), payload.size(), 0,
                         reinterpret_cast<sockaddr*>(&sa), sizeof sa);
    if (n < 0 || static_cast<std::size_t>(n) != payload.size())
      throw NetError("sendto " + peer.to_string() + " failed: " +
                     std::strerror(errno));
  }

  // Blocks up to `timeout`; nullopt on timeout or if the socket was closed
  // from another thread.
  std::optional<std::pair<std::vector<std::uint8_t>, Endpoint>> recv_from(
      std::chrono::milliseconds timeout) {
    pollfd pfd{fd_, POLLIN, 0};
    int rc = ::poll(&pfd, 1, static_cast<int>(timeout.count()));
    if (rc <= 0) return std::nullopt;
    std::vector<std::uint8_t> buf(65535);
    sockaddr_in sa{};
    socklen_t len = sizeof sa;
    ssize_t n = ::recvfrom(fd_, buf.data(), buf.size(), 0,
                           reinterpret_cast<sockaddr*>(&sa), &len);
    if (n < 0) return std::nullopt;
    buf.resize(static_cast<std::size_t>(n));
    return std::make_pair(std::move(buf), Endpoint::from_sockaddr(sa));
  }

  void close() {
    if (fd_ >= 0) {
      ::close(fd_);
      fd_ = -1;
    }
  }

  // Unblocks pollers from another thread during shutdown.
  void shutdown_read() {
    if (fd_ >= 0) ::shutdown(fd_, SHUT_RD);
  }

 private:
  int fd_ = -1;
};

}  // namespace tunnelvet::net
