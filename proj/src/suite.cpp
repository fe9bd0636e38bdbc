#include "revsam/suite.hpp"

#include "revsam/json_util.hpp"

#include <algorithm>
#include <random>
#include <stdexcept>

namespace revsam {

DecoySuite DecoySuite::standard() {
  // A tube drifting one pixel per slice, and a short decoy blob that sits across the
  // tube's path in the upper slices. Support slices come from that same region.
  DecoySuite s;
  s.base.shape = Shape3{40, 64, 64};
  s.base.target.center = {0, 37, 12};
  s.base.target.radii = {200, 9, 9};
  s.base.target.intensity_mean = 0.7;
  s.base.target.intensity_sigma = 0.05;
  Ellipsoid decoy;
  decoy.center = {28, 30, 14};
  decoy.radii = {10, 7, 7};
  decoy.intensity_mean = 0.7;
  decoy.intensity_sigma = 0.05;
  s.base.decoy = decoy;
  s.base.drift = {0, 1};
  s.base.decoy_drift = {0, 0.5};
  s.base.background = 0.2;
  s.base.noise_sigma = 0.15;
  s.base.support_slice = 0;
  s.center_jitter = 1.0;
  s.intensity_jitter = 0.05;
  s.support_volumes = 5;
  s.support_first = 28;
  s.support_last = 35;
  s.num_seeds = 20;
  s.base_seed = 20240;
  s.supports = 10;
  s.backbone.patch = 4;
  s.backbone.temperature = 0.01;
  s.backbone.lambda_pos = 1.33;
  s.pipeline.k = 7;
  s.pipeline.tau = 7;
  return s;
}

void to_json(nlohmann::json& j, const DecoySuite& s) {
  j = nlohmann::json{{"base", s.base},
                     {"center_jitter", s.center_jitter},
                     {"intensity_jitter", s.intensity_jitter},
                     {"support_volumes", s.support_volumes},
                     {"support_first", s.support_first},
                     {"support_last", s.support_last},
                     {"num_seeds", s.num_seeds},
                     {"base_seed", s.base_seed},
                     {"supports", s.supports},
                     {"backbone", s.backbone},
                     {"pipeline", s.pipeline}};
}

void from_json(const nlohmann::json& j, DecoySuite& s) {
  reject_unknown_keys(j,
                      {"base", "center_jitter", "intensity_jitter", "support_volumes", "support_first",
                       "support_last", "num_seeds", "base_seed", "supports", "backbone",
                       "pipeline"},
                      "suite");
  DecoySuite out = DecoySuite::standard();
  if (j.contains("base")) out.base = j.at("base").get<PhantomSpec>();
  read_optional(j, "center_jitter", out.center_jitter);
  read_optional(j, "intensity_jitter", out.intensity_jitter);
  read_optional(j, "support_volumes", out.support_volumes);
  read_optional(j, "support_first", out.support_first);
  read_optional(j, "support_last", out.support_last);
  read_optional(j, "num_seeds", out.num_seeds);
  read_optional(j, "base_seed", out.base_seed);
  read_optional(j, "supports", out.supports);
  if (j.contains("backbone")) out.backbone = j.at("backbone").get<BackboneConfig>();
  if (j.contains("pipeline")) out.pipeline = j.at("pipeline").get<PipelineConfig>();
  if (out.support_volumes < 1) throw ConfigError("suite needs at least one support volume");
  if (out.support_first > out.support_last || out.support_last >= out.base.shape.slices) {
    throw ConfigError("support slice range is empty or outside the volume");
  }
  s = out;
}

namespace {

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  // splitmix64 step over a combined value.
  std::uint64_t z = a * 0x9E3779B97F4A7C15ull + b + 0x632BE59BD9B4E5F9ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

PhantomSpec jittered(const DecoySuite& suite, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-suite.center_jitter, suite.center_jitter);
  std::uniform_real_distribution<double> v(-suite.intensity_jitter, suite.intensity_jitter);
  // Redraw until the jittered geometry is valid; the bound only guards against a
  // suite whose jitter can never fit the frame.
  for (int attempt = 0; attempt < 1000; ++attempt) {
    PhantomSpec spec = suite.base;
    spec.seed = seed;
    spec.target.center[1] += u(rng);
    spec.target.center[2] += u(rng);
    if (spec.decoy) {
      spec.decoy->center[1] += u(rng);
      spec.decoy->center[2] += u(rng);
    }
    // One shift per volume: target and decoy keep identical intensity statistics.
    const double shift = v(rng);
    spec.target.intensity_mean += shift;
    if (spec.decoy) spec.decoy->intensity_mean += shift;
    try {
      validate(spec);
      return spec;
    } catch (const PhantomSpecError&) {
    }
  }
  throw ConfigError("suite jitter never yields a valid phantom");
}

}  // namespace

SuiteCase make_case(const DecoySuite& suite, std::uint64_t seed, std::size_t num_supports) {
  if (num_supports < 1) throw std::invalid_argument("suite case needs at least one support");
  SuiteCase c;
  c.seed = seed;
  const std::uint64_t root = mix_seed(suite.base_seed, seed);
  c.query_spec = jittered(suite, mix_seed(root, 0));
  std::tie(c.query, c.truth) = gen_phantom(c.query_spec);

  struct Candidate {
    std::size_t volume;
    std::size_t slice;
  };
  std::vector<std::pair<IntensityVolume, MaskVolume>> volumes;
  std::vector<Candidate> candidates;
  for (std::size_t v = 0; v < suite.support_volumes; ++v) {
    volumes.push_back(gen_phantom(jittered(suite, mix_seed(root, v + 1))));
    for (std::size_t s = suite.support_first; s <= suite.support_last; ++s) {
      if ((volumes.back().second.slice_view(s) != 0).any()) candidates.push_back({v, s});
    }
  }
  std::mt19937_64 pick(mix_seed(root, 0xfeed));
  std::shuffle(candidates.begin(), candidates.end(), pick);
  if (candidates.size() < num_supports) {
    throw std::invalid_argument("suite offers " + std::to_string(candidates.size()) +
                                " support slices, " + std::to_string(num_supports) +
                                " requested");
  }
  for (std::size_t n = 0; n < num_supports; ++n) {
    const auto& [img, mask] = volumes[candidates[n].volume];
    c.support.images.push_back(img.slice(candidates[n].slice));
    c.support.masks.push_back(mask.slice(candidates[n].slice));
  }
  return c;
}

}  // namespace revsam
