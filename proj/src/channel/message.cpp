// SPDX-License-Identifier: Apache-2.0
#include "flame/channel/message.hpp"

#include <charconv>

namespace flame::channel {

namespace {

constexpr std::uint32_t kMaxFrame = 1u << 30;

void put_u32(Bytes& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

std::uint32_t get_u32(std::span<const std::uint8_t> in, std::size_t& pos) {
  if (pos + 4 > in.size()) throw FrameError("truncated frame");
  std::uint32_t v = (std::uint32_t{in[pos]} << 24) | (std::uint32_t{in[pos + 1]} << 16) |
                    (std::uint32_t{in[pos + 2]} << 8) | std::uint32_t{in[pos + 3]};
  pos += 4;
  return v;
}

void put_str(Bytes& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.insert(out.end(), s.begin(), s.end());
}

std::string get_str(std::span<const std::uint8_t> in, std::size_t& pos) {
  auto len = get_u32(in, pos);
  if (pos + len > in.size()) throw FrameError("truncated frame string");
  std::string s(reinterpret_cast<const char*>(in.data() + pos), len);
  pos += len;
  return s;
}

}  // namespace

std::string Message::get(const std::string& key, const std::string& fallback) const {
  auto it = headers.find(key);
  return it == headers.end() ? fallback : it->second;
}

std::uint64_t Message::seq() const {
  auto s = get(header::kSeq, "0");
  std::uint64_t v = 0;
  std::from_chars(s.data(), s.data() + s.size(), v);
  return v;
}

Message make_message(std::string func_tag, Bytes payload) {
  Message m;
  m.headers[header::kFuncTag] = std::move(func_tag);
  m.payload = std::move(payload);
  return m;
}

Bytes encode_frame(const Message& msg) {
  Bytes out;
  std::size_t size = 8 + msg.payload.size();
  for (const auto& [k, v] : msg.headers) size += 8 + k.size() + v.size();
  out.reserve(size);
  put_u32(out, 0);
  put_u32(out, static_cast<std::uint32_t>(msg.headers.size()));
  for (const auto& [k, v] : msg.headers) {
    put_str(out, k);
    put_str(out, v);
  }
  out.insert(out.end(), msg.payload.begin(), msg.payload.end());
  auto body = static_cast<std::uint32_t>(out.size() - 4);
  out[0] = static_cast<std::uint8_t>(body >> 24);
  out[1] = static_cast<std::uint8_t>(body >> 16);
  out[2] = static_cast<std::uint8_t>(body >> 8);
  out[3] = static_cast<std::uint8_t>(body);
  return out;
}

Message decode_frame_body(std::span<const std::uint8_t> body) {
  std::size_t pos = 0;
  Message m;
  auto count = get_u32(body, pos);
  for (std::uint32_t i = 0; i < count; ++i) {
    auto k = get_str(body, pos);
    m.headers[std::move(k)] = get_str(body, pos);
  }
  m.payload.assign(body.begin() + static_cast<std::ptrdiff_t>(pos), body.end());
  return m;
}

void write_frame(const net::Socket& s, const Message& msg) { net::write_all(s, encode_frame(msg)); }

std::optional<Message> read_frame(const net::Socket& s) {
  std::uint8_t len_buf[4];
  if (!net::read_exact(s, len_buf)) return std::nullopt;
  std::size_t pos = 0;
  auto len = get_u32(len_buf, pos);
  if (len > kMaxFrame) throw FrameError("frame of " + std::to_string(len) + " bytes exceeds limit");
  Bytes body(len);
  if (len > 0 && !net::read_exact(s, body)) throw FrameError("connection closed mid-frame");
  return decode_frame_body(body);
}

}  // namespace flame::channel
