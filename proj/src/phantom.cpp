#include "revsam/phantom.hpp"

#include "revsam/json_util.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

namespace revsam {

std::array<double, 2> target_center(const PhantomSpec& spec, std::size_t j) {
  const double t = static_cast<double>(j);
  return {spec.target.center[1] + t * spec.drift[0], spec.target.center[2] + t * spec.drift[1]};
}

std::array<double, 2> decoy_center(const PhantomSpec& spec, std::size_t j) {
  if (!spec.decoy) throw PhantomSpecError("phantom has no decoy");
  const double t = static_cast<double>(j);
  return {spec.decoy->center[1] + t * spec.decoy_drift[0],
          spec.decoy->center[2] + t * spec.decoy_drift[1]};
}

bool inside(const Ellipsoid& e, std::array<double, 2> center_rc, double s, double r, double c) {
  const double ds = (s - e.center[0]) / e.radii[0];
  const double dr = (r - center_rc[0]) / e.radii[1];
  const double dc = (c - center_rc[1]) / e.radii[2];
  return ds * ds + dr * dr + dc * dc <= 1.0;
}

namespace {

void check_ellipsoid(const Ellipsoid& e, const char* name) {
  for (double r : e.radii) {
    if (!(r > 0) || !std::isfinite(r)) {
      throw PhantomSpecError(std::string(name) + ": radii must be positive and finite");
    }
  }
  if (!(e.intensity_mean >= 0 && e.intensity_mean <= 1)) {
    throw PhantomSpecError(std::string(name) + ": intensity_mean must lie in [0,1]");
  }
  if (!(e.intensity_sigma >= 0) || !std::isfinite(e.intensity_sigma)) {
    throw PhantomSpecError(std::string(name) + ": intensity_sigma must be >= 0");
  }
}

// Cross-section of the ellipsoid on slice s must stay inside the H x W frame.
void check_bounds(const Ellipsoid& e, std::array<double, 2> center_rc, const Shape3& shape,
                  std::size_t s, const char* name) {
  const double ds = (static_cast<double>(s) - e.center[0]) / e.radii[0];
  const double k = 1.0 - ds * ds;
  if (k < 0) return;
  const double half_r = e.radii[1] * std::sqrt(k);
  const double half_c = e.radii[2] * std::sqrt(k);
  const double rmax = static_cast<double>(shape.rows - 1);
  const double cmax = static_cast<double>(shape.cols - 1);
  if (center_rc[0] - half_r < 0 || center_rc[0] + half_r > rmax || center_rc[1] - half_c < 0 ||
      center_rc[1] + half_c > cmax) {
    throw PhantomSpecError(std::string(name) + " ellipsoid leaves the " +
                           std::to_string(shape.rows) + "x" + std::to_string(shape.cols) +
                           " frame on slice " + std::to_string(s));
  }
}

}  // namespace

void validate(const PhantomSpec& spec) {
  const auto& sh = spec.shape;
  if (sh.slices < 1 || sh.rows < 8 || sh.cols < 8) {
    throw PhantomSpecError("shape " + to_string(sh) + " violates M >= 1, H >= 8, W >= 8");
  }
  if (!(spec.background >= 0 && spec.background <= 1)) {
    throw PhantomSpecError("background must lie in [0,1]");
  }
  if (!(spec.noise_sigma >= 0) || !std::isfinite(spec.noise_sigma)) {
    throw PhantomSpecError("noise_sigma must be >= 0");
  }
  if (!std::isfinite(spec.drift[0]) || !std::isfinite(spec.drift[1]) ||
      !std::isfinite(spec.decoy_drift[0]) || !std::isfinite(spec.decoy_drift[1])) {
    throw PhantomSpecError("drift must be finite");
  }
  if (spec.support_slice >= sh.slices) {
    throw PhantomSpecError("support_slice " + std::to_string(spec.support_slice) +
                           " outside the volume");
  }
  check_ellipsoid(spec.target, "target");
  if (spec.decoy) check_ellipsoid(*spec.decoy, "decoy");

  for (std::size_t s = 0; s < sh.slices; ++s) {
    check_bounds(spec.target, target_center(spec, s), sh, s, "target");
    if (spec.decoy) check_bounds(*spec.decoy, decoy_center(spec, s), sh, s, "decoy");
  }

  if (spec.decoy) {
    const auto s = spec.support_slice;
    const auto tc = target_center(spec, s);
    const auto dc = decoy_center(spec, s);
    for (std::size_t r = 0; r < sh.rows; ++r) {
      for (std::size_t c = 0; c < sh.cols; ++c) {
        const double sd = double(s), rd = double(r), cd = double(c);
        if (inside(spec.target, tc, sd, rd, cd) && inside(*spec.decoy, dc, sd, rd, cd)) {
          throw PhantomSpecError("target and decoy intersect on support slice " +
                                 std::to_string(s));
        }
      }
    }
  }
}

std::pair<IntensityVolume, MaskVolume> gen_phantom(const PhantomSpec& spec) {
  validate(spec);
  const auto& sh = spec.shape;
  IntensityVolume image(sh);
  MaskVolume mask(sh);

  // Two normal draws per voxel in a fixed order, independent of geometry.
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  for (std::size_t s = 0; s < sh.slices; ++s) {
    const auto tc = target_center(spec, s);
    const auto dc = spec.decoy ? decoy_center(spec, s) : std::array<double, 2>{0, 0};
    for (std::size_t r = 0; r < sh.rows; ++r) {
      for (std::size_t c = 0; c < sh.cols; ++c) {
        const double texture = normal(rng);
        const double noise = normal(rng);
        const double sd = double(s), rd = double(r), cd = double(c);
        double value = spec.background;
        if (inside(spec.target, tc, sd, rd, cd)) {
          mask.at(s, r, c) = 1;
          value = spec.target.intensity_mean + spec.target.intensity_sigma * texture;
        } else if (spec.decoy && inside(*spec.decoy, dc, sd, rd, cd)) {
          value = spec.decoy->intensity_mean + spec.decoy->intensity_sigma * texture;
        }
        value += spec.noise_sigma * noise;
        image.at(s, r, c) = static_cast<float>(std::clamp(value, 0.0, 1.0));
      }
    }
  }
  return {std::move(image), std::move(mask)};
}

void to_json(nlohmann::json& j, const Ellipsoid& e) {
  j = nlohmann::json{{"center", e.center},
                     {"radii", e.radii},
                     {"intensity_mean", e.intensity_mean},
                     {"intensity_sigma", e.intensity_sigma}};
}

void from_json(const nlohmann::json& j, Ellipsoid& e) {
  reject_unknown_keys(j, {"center", "radii", "intensity_mean", "intensity_sigma"}, "ellipsoid");
  Ellipsoid out;
  out.center = j.at("center").get<std::array<double, 3>>();
  out.radii = j.at("radii").get<std::array<double, 3>>();
  read_optional(j, "intensity_mean", out.intensity_mean);
  read_optional(j, "intensity_sigma", out.intensity_sigma);
  e = out;
}

void to_json(nlohmann::json& j, const PhantomSpec& s) {
  j = nlohmann::json{{"shape", {s.shape.slices, s.shape.rows, s.shape.cols}},
                     {"target", s.target},
                     {"drift", s.drift},
                     {"decoy_drift", s.decoy_drift},
                     {"background", s.background},
                     {"noise_sigma", s.noise_sigma},
                     {"seed", s.seed},
                     {"support_slice", s.support_slice}};
  if (s.decoy) j["decoy"] = *s.decoy;
}

void from_json(const nlohmann::json& j, PhantomSpec& s) {
  reject_unknown_keys(j,
                      {"shape", "target", "decoy", "drift", "decoy_drift", "background", "noise_sigma", "seed",
                       "support_slice"},
                      "phantom spec");
  PhantomSpec out;
  if (j.contains("shape")) {
    const auto dims = j.at("shape").get<std::array<std::size_t, 3>>();
    out.shape = Shape3{dims[0], dims[1], dims[2]};
  }
  out.target = j.at("target").get<Ellipsoid>();
  if (j.contains("decoy") && !j.at("decoy").is_null()) out.decoy = j.at("decoy").get<Ellipsoid>();
  read_optional(j, "drift", out.drift);
  read_optional(j, "decoy_drift", out.decoy_drift);
  read_optional(j, "background", out.background);
  read_optional(j, "noise_sigma", out.noise_sigma);
  read_optional(j, "seed", out.seed);
  read_optional(j, "support_slice", out.support_slice);
  s = out;
}

}  // namespace revsam
