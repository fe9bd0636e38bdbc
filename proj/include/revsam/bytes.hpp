#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

// Little-endian scalar packing shared by the RVOL format and the wire protocol.
namespace revsam::le {

inline void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(std::uint8_t(v & 0xff));
  out.push_back(std::uint8_t(v >> 8));
}

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(std::uint8_t((v >> (8 * i)) & 0xff));
}

inline void put_f32(std::vector<std::uint8_t>& out, float v) {
  put_u32(out, std::bit_cast<std::uint32_t>(v));
}

inline std::uint16_t get_u16(std::span<const std::uint8_t> in, std::size_t at) {
  return std::uint16_t(in[at] | (std::uint16_t(in[at + 1]) << 8));
}

inline std::uint32_t get_u32(std::span<const std::uint8_t> in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t(in[at + i]) << (8 * i);
  return v;
}

inline float get_f32(std::span<const std::uint8_t> in, std::size_t at) {
  return std::bit_cast<float>(get_u32(in, at));
}

}  // namespace revsam::le
