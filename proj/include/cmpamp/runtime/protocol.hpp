#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <boost/crc.hpp>

#include "cmpamp/detail/bytes.hpp"

namespace cmpamp::runtime {

// Frame: "CMPM" | version u16 | kind u8 | processor u16 | round u32 | n u32 |
// n x f64 payload | CRC32 of everything before it. All integers little-endian.
inline constexpr std::array<std::uint8_t, 4> kFrameMagic{'C', 'M', 'P', 'M'};
inline constexpr std::uint16_t kProtocolVersion = 1;
inline constexpr std::size_t kFrameHeaderSize = 17;
inline constexpr std::size_t kFrameTrailerSize = 4;

/// `report` carries a worker's trajectory rows back to the center after the
/// last round (see encode_report).
enum class MessageKind : std::uint8_t { contribution = 1, aggregate = 2, shutdown = 3, report = 4 };

inline std::string_view to_string(MessageKind kind) {
  switch (kind) {
    case MessageKind::contribution: return "contribution";
    case MessageKind::aggregate: return "aggregate";
    case MessageKind::shutdown: return "shutdown";
    case MessageKind::report: return "report";
  }
  return "?";
}

/// Processor 0 is the fusion center; worker p (0-based) is p + 1 on the wire.
struct FusionMessage {
  MessageKind kind = MessageKind::contribution;
  std::uint32_t round = 0;
  std::uint16_t processor = 0;
  std::vector<double> payload;

  bool operator==(const FusionMessage& other) const {
    if (kind != other.kind || round != other.round || processor != other.processor ||
        payload.size() != other.payload.size())
      return false;
    // Bitwise, so NaN payloads still compare equal to themselves.
    for (std::size_t i = 0; i < payload.size(); ++i)
      if (std::bit_cast<std::uint64_t>(payload[i]) != std::bit_cast<std::uint64_t>(other.payload[i])) return false;
    return true;
  }
};

enum class ProtocolErrorCode { bad_magic, unsupported_version, crc_mismatch, truncated, trailing_bytes, bad_kind,
                               payload_too_large };

inline std::string_view to_string(ProtocolErrorCode code) {
  switch (code) {
    case ProtocolErrorCode::bad_magic: return "bad magic";
    case ProtocolErrorCode::unsupported_version: return "unsupported version";
    case ProtocolErrorCode::crc_mismatch: return "CRC mismatch";
    case ProtocolErrorCode::truncated: return "truncated frame";
    case ProtocolErrorCode::trailing_bytes: return "trailing bytes after frame";
    case ProtocolErrorCode::bad_kind: return "unknown message kind";
    case ProtocolErrorCode::payload_too_large: return "payload too large";
  }
  return "?";
}

class ProtocolError : public std::runtime_error {
 public:
  explicit ProtocolError(ProtocolErrorCode code)
      : std::runtime_error(std::string(to_string(code))), code_(code) {}
  ProtocolErrorCode code() const noexcept { return code_; }

 private:
  ProtocolErrorCode code_;
};

inline std::uint32_t frame_crc(std::span<const std::uint8_t> bytes) {
  boost::crc_32_type crc;
  crc.process_bytes(bytes.data(), bytes.size());
  return crc.checksum();
}

inline std::vector<std::uint8_t> encode_message(const FusionMessage& msg) {
  using namespace cmpamp::detail;
  if (msg.payload.size() > std::numeric_limits<std::uint32_t>::max())
    throw ProtocolError(ProtocolErrorCode::payload_too_large);
  std::vector<std::uint8_t> out;
  out.reserve(kFrameHeaderSize + 8 * msg.payload.size() + kFrameTrailerSize);
  for (std::uint8_t c : kFrameMagic) put_u8(out, c);
  put_u16(out, kProtocolVersion);
  put_u8(out, static_cast<std::uint8_t>(msg.kind));
  put_u16(out, msg.processor);
  put_u32(out, msg.round);
  put_u32(out, static_cast<std::uint32_t>(msg.payload.size()));
  for (double v : msg.payload) put_f64(out, v);
  put_u32(out, frame_crc(out));
  return out;
}

/// Total frame length announced by a header, once at least kFrameHeaderSize
/// bytes are available; validates magic and version on the way.
inline std::optional<std::size_t> frame_size(std::span<const std::uint8_t> prefix) {
  const std::size_t check = std::min(prefix.size(), kFrameMagic.size());
  for (std::size_t i = 0; i < check; ++i)
    if (prefix[i] != kFrameMagic[i]) throw ProtocolError(ProtocolErrorCode::bad_magic);
  if (prefix.size() >= 6) {
    detail::ByteReader rd(prefix.subspan(4, 2));
    if (rd.u16() != kProtocolVersion) throw ProtocolError(ProtocolErrorCode::unsupported_version);
  }
  if (prefix.size() < kFrameHeaderSize) return std::nullopt;
  detail::ByteReader rd(prefix.subspan(13, 4));
  return kFrameHeaderSize + 8 * static_cast<std::size_t>(rd.u32()) + kFrameTrailerSize;
}

inline FusionMessage decode_message(std::span<const std::uint8_t> bytes) {
  const auto size = frame_size(bytes);
  if (!size || bytes.size() < *size) throw ProtocolError(ProtocolErrorCode::truncated);
  if (bytes.size() > *size) throw ProtocolError(ProtocolErrorCode::trailing_bytes);
  detail::ByteReader rd(bytes);
  rd.take(6);
  const std::uint8_t kind = rd.u8();
  FusionMessage msg;
  msg.processor = rd.u16();
  msg.round = rd.u32();
  const std::uint32_t n = rd.u32();
  msg.payload.resize(n);
  for (auto& v : msg.payload) v = rd.f64();
  const std::uint32_t stored = rd.u32();
  if (stored != frame_crc(bytes.first(bytes.size() - kFrameTrailerSize)))
    throw ProtocolError(ProtocolErrorCode::crc_mismatch);
  if (kind < 1 || kind > 4) throw ProtocolError(ProtocolErrorCode::bad_kind);
  msg.kind = static_cast<MessageKind>(kind);
  return msg;
}

}  // namespace cmpamp::runtime
