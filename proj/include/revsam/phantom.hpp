#pragma once

#include "revsam/volume.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <utility>

namespace revsam {

class PhantomSpecError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Axis-aligned ellipsoid. `center` is (slice, row, col) on slice 0 of the volume;
/// in-plane drift moves it per slice.
struct Ellipsoid {
  std::array<double, 3> center{0, 0, 0};
  std::array<double, 3> radii{1, 1, 1};
  double intensity_mean = 0.7;
  double intensity_sigma = 0.0;

  bool operator==(const Ellipsoid&) const = default;
};

struct PhantomSpec {
  Shape3 shape{40, 64, 64};
  Ellipsoid target;
  std::optional<Ellipsoid> decoy;
  /// Target center displacement per slice, (row, col) voxels.
  std::array<double, 2> drift{0, 0};
  /// Same for the decoy; zero keeps it stationary.
  std::array<double, 2> decoy_drift{0, 0};
  double background = 0.1;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
  /// Slice on which target and decoy must be disjoint.
  std::size_t support_slice = 0;

  bool operator==(const PhantomSpec&) const = default;
};

/// In-plane center (row, col) of the target on slice j.
std::array<double, 2> target_center(const PhantomSpec& spec, std::size_t j);

/// In-plane center (row, col) of the decoy on slice j. Requires a decoy.
std::array<double, 2> decoy_center(const PhantomSpec& spec, std::size_t j);

/// Ellipsoid membership test for voxel (s, r, c); `center_rc` is the in-plane center on slice s.
bool inside(const Ellipsoid& e, std::array<double, 2> center_rc, double s, double r, double c);

/// Throws PhantomSpecError naming the offending field or slice.
void validate(const PhantomSpec& spec);

/// Deterministic phantom: intensities in [0,1] and the target mask. The decoy only
/// shows up in the intensities.
std::pair<IntensityVolume, MaskVolume> gen_phantom(const PhantomSpec& spec);

void to_json(nlohmann::json& j, const Ellipsoid& e);
void from_json(const nlohmann::json& j, Ellipsoid& e);
void to_json(nlohmann::json& j, const PhantomSpec& s);
void from_json(const nlohmann::json& j, PhantomSpec& s);

}  // namespace revsam
