#pragma once

#include "revsam/volume.hpp"

#include <json.hpp>

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

namespace revsam {

/// One labelled support slice: slice `slice` of the image volume and of the mask volume.
struct SupportRef {
  std::string class_name;
  std::string image;
  std::string mask;
  std::size_t slice = 0;

  bool operator==(const SupportRef&) const = default;
};

/// Support set on disk. Paths are relative to the manifest's directory unless absolute.
struct Manifest {
  std::vector<std::string> classes;
  std::vector<SupportRef> supports;

  bool operator==(const Manifest&) const = default;
};

void to_json(nlohmann::json& j, const Manifest& m);
/// Rejects unknown keys, duplicate classes and supports naming an undeclared class.
void from_json(const nlohmann::json& j, Manifest& m);

Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const Manifest& m);

/// Loads every support of `class_name`; paths resolve against `base_dir`.
SupportSet load_support(const Manifest& m, const std::filesystem::path& base_dir,
                        const std::string& class_name);

}  // namespace revsam
