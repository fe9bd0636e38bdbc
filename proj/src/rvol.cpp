#include "revsam/rvol.hpp"

#include "revsam/bytes.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>

namespace revsam {

namespace {

constexpr char kMagic[4] = {'R', 'V', 'O', 'L'};

// Dimension product cap keeps M*H*W*4 well inside size_t and u32 fields sane.
constexpr std::uint64_t kMaxVoxels = std::uint64_t(1) << 32;

void put_header(std::vector<std::uint8_t>& out, RvolType type, const Shape3& shape) {
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  le::put_u16(out, kRvolVersion);
  out.push_back(static_cast<std::uint8_t>(type));
  out.push_back(0);
  for (auto d : {shape.slices, shape.rows, shape.cols}) {
    if (d > std::numeric_limits<std::uint32_t>::max()) {
      throw ShapeError("dimension " + std::to_string(d) + " does not fit in u32");
    }
    le::put_u32(out, static_cast<std::uint32_t>(d));
  }
}

void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!f) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace

std::vector<std::uint8_t> encode_rvol(const IntensityVolume& v) {
  std::vector<std::uint8_t> out;
  out.reserve(kRvolHeaderBytes + 4 * v.shape().voxels());
  put_header(out, RvolType::Intensity, v.shape());
  for (float x : v.data()) le::put_f32(out, x);
  return out;
}

std::vector<std::uint8_t> encode_rvol(const MaskVolume& v) {
  std::vector<std::uint8_t> out;
  out.reserve(kRvolHeaderBytes + v.shape().voxels());
  put_header(out, RvolType::Mask, v.shape());
  out.insert(out.end(), v.data().begin(), v.data().end());
  return out;
}

AnyVolume decode_rvol(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || !std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin())) {
    throw FormatError("bad magic: expected \"RVOL\"", 0);
  }
  if (bytes.size() < kRvolHeaderBytes) {
    throw FormatError("truncated header: need " + std::to_string(kRvolHeaderBytes) + " bytes",
                      bytes.size());
  }
  if (auto version = le::get_u16(bytes, 4); version != kRvolVersion) {
    throw FormatError("unsupported version " + std::to_string(version), 4);
  }
  const std::uint8_t dtype = bytes[6];
  if (dtype > 1) throw FormatError("unknown dtype " + std::to_string(dtype), 6);
  if (bytes[7] != 0) throw FormatError("reserved byte must be 0", 7);

  const std::uint64_t m = le::get_u32(bytes, 8);
  const std::uint64_t h = le::get_u32(bytes, 12);
  const std::uint64_t w = le::get_u32(bytes, 16);
  if (m == 0 || h == 0 || w == 0) throw FormatError("zero dimension", 8);
  if (m > kMaxVoxels / h || m * h > kMaxVoxels / w) {
    throw FormatError("dimension overflow: " + std::to_string(m) + "x" + std::to_string(h) + "x" +
                          std::to_string(w),
                      8);
  }
  const std::uint64_t voxels = m * h * w;
  const std::uint64_t elem = dtype == 0 ? 4 : 1;
  const std::uint64_t expected = kRvolHeaderBytes + voxels * elem;
  if (bytes.size() < expected) {
    throw FormatError("truncated payload: expected " + std::to_string(expected) + " bytes, got " +
                          std::to_string(bytes.size()),
                      bytes.size());
  }
  if (bytes.size() > expected) {
    throw FormatError("trailing bytes after payload", std::size_t(expected));
  }

  const Shape3 shape{std::size_t(m), std::size_t(h), std::size_t(w)};
  if (dtype == static_cast<std::uint8_t>(RvolType::Intensity)) {
    std::vector<float> data(voxels);
    for (std::size_t i = 0; i < voxels; ++i) {
      const std::size_t at = kRvolHeaderBytes + 4 * i;
      const float x = le::get_f32(bytes, at);
      if (!std::isfinite(x)) throw FormatError("non-finite intensity", at);
      data[i] = std::clamp(x, 0.0f, 1.0f);
    }
    return IntensityVolume(shape, std::move(data));
  }
  std::vector<std::uint8_t> data(bytes.begin() + kRvolHeaderBytes, bytes.end());
  for (std::size_t i = 0; i < voxels; ++i) {
    if (data[i] > 1) throw FormatError("mask value is not 0/1", kRvolHeaderBytes + i);
  }
  return MaskVolume(shape, std::move(data));
}

void write_volume(const std::filesystem::path& path, const IntensityVolume& v) {
  write_bytes(path, encode_rvol(v));
}

void write_volume(const std::filesystem::path& path, const MaskVolume& v) {
  write_bytes(path, encode_rvol(v));
}

AnyVolume read_volume(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open " + path.string(), 0);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  return decode_rvol(bytes);
}

IntensityVolume read_intensity_volume(const std::filesystem::path& path) {
  auto v = read_volume(path);
  if (auto* p = std::get_if<IntensityVolume>(&v)) return std::move(*p);
  throw FormatError(path.string() + " holds a mask, expected intensities", 6);
}

MaskVolume read_mask_volume(const std::filesystem::path& path) {
  auto v = read_volume(path);
  if (auto* p = std::get_if<MaskVolume>(&v)) return std::move(*p);
  throw FormatError(path.string() + " holds intensities, expected a mask", 6);
}

}  // namespace revsam
