// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "flame/common/error.hpp"
#include "flame/common/net.hpp"

namespace flame::channel {

FLAME_DEFINE_ERROR(FrameError);

using Bytes = std::vector<std::uint8_t>;

struct EndId {
  std::string worker_id;
  std::string channel;
  std::string group;

  auto operator<=>(const EndId&) const = default;
  bool operator==(const EndId&) const = default;
  std::string str() const { return channel + "/" + group + "/" + worker_id; }
};

namespace header {
inline constexpr const char* kFuncTag = "func_tag";
inline constexpr const char* kSeq = "seq";
inline constexpr const char* kSender = "sender";
inline constexpr const char* kRound = "round";
}  // namespace header

struct Message {
  std::map<std::string, std::string> headers;
  Bytes payload;

  std::string get(const std::string& key, const std::string& fallback = "") const;
  std::string func_tag() const { return get(header::kFuncTag); }
  std::string sender() const { return get(header::kSender); }
  std::uint64_t seq() const;

  bool operator==(const Message&) const = default;
};

Message make_message(std::string func_tag, Bytes payload = {});

// Frame: u32 BE length of the rest, u32 BE header count, per header a
// u32 BE key length + key and u32 BE value length + value, then payload.
Bytes encode_frame(const Message& msg);
// `body` is the frame without its leading length field.
Message decode_frame_body(std::span<const std::uint8_t> body);

void write_frame(const net::Socket& s, const Message& msg);
// nullopt on clean EOF.
std::optional<Message> read_frame(const net::Socket& s);

}  // namespace flame::channel
