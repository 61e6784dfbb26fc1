#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace scalelab::wire {

enum class MessageType : std::uint8_t { ReduceChunk = 1, BroadcastChunk = 2, Barrier = 3 };

inline constexpr std::uint8_t kVersion = 1;
inline constexpr std::size_t kHeaderSize = 16;  // "SLAB" + ver + type + rank u16 + chunk u32 + len u32

/// One message on a ring link. All integers and payload floats are little-endian.
struct Frame {
  MessageType type = MessageType::ReduceChunk;
  std::uint16_t rank = 0;
  std::uint32_t chunk_index = 0;
  std::vector<double> payload;

  bool operator==(const Frame&) const = default;
};

std::vector<std::uint8_t> encode(const Frame& frame);

struct Header {
  MessageType type;
  std::uint16_t rank;
  std::uint32_t chunk_index;
  std::uint32_t payload_len;  // bytes
};

/// Validates magic, version, type and payload length alignment.
Header decode_header(std::span<const std::uint8_t> bytes);
std::vector<double> decode_payload(std::span<const std::uint8_t> bytes);

/// Decodes a complete frame; throws on any mismatch including trailing bytes.
Frame decode(std::span<const std::uint8_t> bytes);

}  // namespace scalelab::wire
