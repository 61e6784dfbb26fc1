#include "scalelab/wire.hpp"

#include <cstring>
#include <string>

#include "scalelab/error.hpp"

namespace scalelab::wire {

namespace {

void put_le(std::vector<std::uint8_t>& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xffu));
}

std::uint64_t get_le(std::span<const std::uint8_t> in, std::size_t at, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(in[at + i]) << (8 * i);
  return v;
}

}  // namespace

std::vector<std::uint8_t> encode(const Frame& frame) {
  std::vector<std::uint8_t> out;
  out.reserve(kHeaderSize + 8 * frame.payload.size());
  for (char c : {'S', 'L', 'A', 'B'}) out.push_back(static_cast<std::uint8_t>(c));
  out.push_back(kVersion);
  out.push_back(static_cast<std::uint8_t>(frame.type));
  put_le(out, frame.rank, 2);
  put_le(out, frame.chunk_index, 4);
  put_le(out, 8 * frame.payload.size(), 4);
  for (double d : frame.payload) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, 8);
    put_le(out, bits, 8);
  }
  return out;
}

Header decode_header(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeaderSize)
    throw Error("frame header truncated: " + std::to_string(bytes.size()) + " of 16 bytes");
  if (std::memcmp(bytes.data(), "SLAB", 4) != 0) throw Error("frame has bad magic");
  if (bytes[4] != kVersion) throw Error("unsupported frame version " + std::to_string(bytes[4]));
  const auto type = bytes[5];
  if (type < 1 || type > 3) throw Error("unknown frame message type " + std::to_string(type));
  Header h{static_cast<MessageType>(type), static_cast<std::uint16_t>(get_le(bytes, 6, 2)),
           static_cast<std::uint32_t>(get_le(bytes, 8, 4)), static_cast<std::uint32_t>(get_le(bytes, 12, 4))};
  if (h.payload_len % 8 != 0) throw Error("frame payload length is not a multiple of 8");
  return h;
}

std::vector<double> decode_payload(std::span<const std::uint8_t> bytes) {
  if (bytes.size() % 8 != 0) throw Error("frame payload length is not a multiple of 8");
  std::vector<double> out(bytes.size() / 8);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::uint64_t bits = get_le(bytes, 8 * i, 8);
    std::memcpy(&out[i], &bits, 8);
  }
  return out;
}

Frame decode(std::span<const std::uint8_t> bytes) {
  const Header h = decode_header(bytes);
  if (bytes.size() != kHeaderSize + h.payload_len)
    throw Error("frame length " + std::to_string(bytes.size()) + " does not match header (" +
                std::to_string(kHeaderSize + h.payload_len) + ")");
  Frame f;
  f.type = h.type;
  f.rank = h.rank;
  f.chunk_index = h.chunk_index;
  f.payload = decode_payload(bytes.subspan(kHeaderSize));
  return f;
}

}  // namespace scalelab::wire
