#pragma once

#include "revsam/backbone.hpp"
#include "revsam/phantom.hpp"
#include "revsam/propagation.hpp"
#include "revsam/volume.hpp"

#include <json.hpp>

#include <cstdint>
#include <vector>

namespace revsam {

/// Pinned family of decoy phantoms. Each seed yields one query volume plus support
/// slices drawn from independently jittered support volumes of the same family.
struct DecoySuite {
  PhantomSpec base;
  /// Uniform +/- jitter (voxels) applied to target and decoy in-plane centers.
  double center_jitter = 2.0;
  /// Uniform +/- shift of the intensity means, shared by target and decoy of a volume.
  double intensity_jitter = 0.0;
  std::size_t support_volumes = 3;
  /// Support slices are sampled from [first, last] of each support volume.
  std::size_t support_first = 0;
  std::size_t support_last = 0;
  std::size_t num_seeds = 20;
  std::uint64_t base_seed = 0;
  std::size_t supports = 10;
  BackboneConfig backbone;
  PipelineConfig pipeline;

  /// The suite used by the acceptance checks: 64x64x40, drift 1 voxel/slice.
  static DecoySuite standard();
};

void to_json(nlohmann::json& j, const DecoySuite& s);
void from_json(const nlohmann::json& j, DecoySuite& s);

struct SuiteCase {
  std::uint64_t seed = 0;
  PhantomSpec query_spec;
  IntensityVolume query;
  MaskVolume truth;
  SupportSet support;
};

/// Deterministic case for `seed` with `num_supports` support slices.
SuiteCase make_case(const DecoySuite& suite, std::uint64_t seed, std::size_t num_supports);

}  // namespace revsam
