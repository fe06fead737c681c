// SPDX-License-Identifier: Apache-2.0
// Thin blocking wrappers over loopback TCP sockets.
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "flame/common/error.hpp"

namespace flame::net {

FLAME_DEFINE_ERROR(SocketError);

// Owns a file descriptor; move-only.
class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(Socket&& other) noexcept : fd_(other.release()) {}
  Socket& operator=(Socket&& other) noexcept;
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  ~Socket() { close(); }

  int fd() const { return fd_; }
  bool valid() const { return fd_ >= 0; }
  int release();
  void close();
  // Wakes up a thread blocked in read or accept on this socket.
  void shutdown();
  void shutdown_write();

 private:
  int fd_ = -1;
};

// Listens on 127.0.0.1; port 0 picks a free port.
Socket listen_loopback(std::uint16_t port = 0, int backlog = 64);
std::uint16_t local_port(const Socket& s);
// Returns an invalid socket once the listener has been shut down.
Socket accept(const Socket& listener);
Socket connect_loopback(std::uint16_t port);
Socket connect_to(const std::string& host, std::uint16_t port);

void write_all(const Socket& s, std::span<const std::uint8_t> data);
// False on clean EOF before the first byte; throws on a short read.
bool read_exact(const Socket& s, std::span<std::uint8_t> out);

}  // namespace flame::net
