#include "revsam/manifest.hpp"

#include "revsam/json_util.hpp"
#include "revsam/rvol.hpp"

#include <algorithm>
#include <fstream>
#include <map>

namespace revsam {

namespace fs = std::filesystem;

void to_json(nlohmann::json& j, const Manifest& m) {
  auto supports = nlohmann::json::array();
  for (const auto& s : m.supports) {
    supports.push_back(
        {{"class", s.class_name}, {"image", s.image}, {"mask", s.mask}, {"slice", s.slice}});
  }
  j = nlohmann::json{{"classes", m.classes}, {"supports", supports}};
}

void from_json(const nlohmann::json& j, Manifest& m) {
  reject_unknown_keys(j, {"classes", "supports"}, "manifest");
  Manifest out;
  try {
    out.classes = j.at("classes").get<std::vector<std::string>>();
    for (const auto& s : j.at("supports")) {
      reject_unknown_keys(s, {"class", "image", "mask", "slice"}, "manifest support");
      SupportRef ref;
      ref.class_name = s.at("class").get<std::string>();
      ref.image = s.at("image").get<std::string>();
      ref.mask = s.at("mask").get<std::string>();
      read_optional(s, "slice", ref.slice);
      out.supports.push_back(std::move(ref));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("manifest: ") + e.what());
  }
  auto sorted = out.classes;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw ConfigError("manifest lists a class twice");
  }
  for (const auto& s : out.supports) {
    if (!std::binary_search(sorted.begin(), sorted.end(), s.class_name)) {
      throw ConfigError("manifest support names undeclared class '" + s.class_name + "'");
    }
  }
  m = std::move(out);
}

Manifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open manifest " + path.string());
  try {
    return nlohmann::json::parse(in).get<Manifest>();
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("manifest " + path.string() + ": " + e.what());
  }
}

void write_manifest(const fs::path& path, const Manifest& m) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << nlohmann::json(m).dump(2) << "\n";
}

SupportSet load_support(const Manifest& m, const fs::path& base_dir,
                        const std::string& class_name) {
  if (std::find(m.classes.begin(), m.classes.end(), class_name) == m.classes.end()) {
    throw ConfigError("class '" + class_name + "' is not in the manifest");
  }
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base_dir / p; };
  // Volumes are often shared between entries; read each file once.
  std::map<fs::path, IntensityVolume> images;
  std::map<fs::path, MaskVolume> masks;
  SupportSet out;
  for (const auto& s : m.supports) {
    if (s.class_name != class_name) continue;
    const auto ip = resolve(s.image), mp = resolve(s.mask);
    if (!images.count(ip)) images.emplace(ip, read_intensity_volume(ip));
    if (!masks.count(mp)) masks.emplace(mp, read_mask_volume(mp));
    const auto& img = images.at(ip);
    const auto& mask = masks.at(mp);
    if (s.slice >= img.num_slices() || s.slice >= mask.num_slices()) {
      throw ConfigError("support slice " + std::to_string(s.slice) + " is outside " + ip.string() +
                        " or " + mp.string());
    }
    out.images.push_back(img.slice(s.slice));
    out.masks.push_back(mask.slice(s.slice));
  }
  if (out.images.empty()) throw ConfigError("manifest has no supports for class '" + class_name + "'");
  return out;
}

}  // namespace revsam
