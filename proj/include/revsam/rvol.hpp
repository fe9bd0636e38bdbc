#pragma once

#include "revsam/volume.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace revsam {

// RVOL layout, little-endian:
//   "RVOL" | u16 version=1 | u8 dtype (0 = f32 intensity, 1 = u8 mask) | u8 reserved=0
//   | u32 M | u32 H | u32 W | payload, slice-major
inline constexpr std::size_t kRvolHeaderBytes = 20;
inline constexpr std::uint16_t kRvolVersion = 1;

enum class RvolType : std::uint8_t { Intensity = 0, Mask = 1 };

class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

using AnyVolume = std::variant<IntensityVolume, MaskVolume>;

std::vector<std::uint8_t> encode_rvol(const IntensityVolume& v);
std::vector<std::uint8_t> encode_rvol(const MaskVolume& v);

/// Intensities are clamped to [0,1]; non-finite values and non-binary masks are rejected.
AnyVolume decode_rvol(std::span<const std::uint8_t> bytes);

void write_volume(const std::filesystem::path& path, const IntensityVolume& v);
void write_volume(const std::filesystem::path& path, const MaskVolume& v);
AnyVolume read_volume(const std::filesystem::path& path);
IntensityVolume read_intensity_volume(const std::filesystem::path& path);
MaskVolume read_mask_volume(const std::filesystem::path& path);

}  // namespace revsam
