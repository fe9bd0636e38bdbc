#pragma once

#include "revsam/volume.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <cstdint>
#include <span>
#include <string>

namespace revsam {

struct BackboneConfig {
  int patch = 8;
  /// Total feature width: feat_dim - 2 projected appearance channels plus 2 positional ones.
  int feat_dim = 8;
  double temperature = 0.05;
  double lambda_pos = 0.5;
  double threshold = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const BackboneConfig&) const = default;
};

void to_json(nlohmann::json& j, const BackboneConfig& c);
void from_json(const nlohmann::json& j, BackboneConfig& c);

/// Per-cell feature vectors, one row per cell in row-major cell order.
struct FeatureGrid {
  using Matrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  Eigen::Index grid_rows = 0;
  Eigen::Index grid_cols = 0;
  Matrix features;

  Eigen::Index cells() const { return grid_rows * grid_cols; }
  Eigen::Index dim() const { return features.cols(); }
  bool operator==(const FeatureGrid& o) const {
    return grid_rows == o.grid_rows && grid_cols == o.grid_cols &&
           features.rows() == o.features.rows() && features.cols() == o.features.cols() &&
           features == o.features;
  }
};

/// One scalar per grid cell. The tag keeps prompt fractions and attended
/// probabilities from being mixed up.
template <typename Tag>
struct CellGrid {
  Eigen::Index grid_rows = 0;
  Eigen::Index grid_cols = 0;
  Eigen::ArrayXf values;

  Eigen::Index cells() const { return grid_rows * grid_cols; }
  float at(Eigen::Index r, Eigen::Index c) const { return values(r * grid_cols + c); }
  bool operator==(const CellGrid& o) const {
    return grid_rows == o.grid_rows && grid_cols == o.grid_cols &&
           values.size() == o.values.size() && (values == o.values).all();
  }
};

struct PromptTag {};
struct ProbabilityTag {};
using PromptGrid = CellGrid<PromptTag>;
using ProbabilityGrid = CellGrid<ProbabilityTag>;

enum class MemoryKind : std::uint8_t { Support = 0, Conditional = 1, Recent = 2 };

std::string to_string(MemoryKind k);
MemoryKind memory_kind_from_string(const std::string& s);

struct MemoryEntry {
  FeatureGrid keys;
  PromptGrid values;
  MemoryKind kind = MemoryKind::Support;

  bool operator==(const MemoryEntry&) const = default;
};

using RowMatrixXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Decoded {
  Mask mask;
  Image soft;
};

/// Fixed seeded projection of (patch mean, patch std, mean gradient magnitude), (feat_dim-2) x 3.
Eigen::MatrixXf appearance_projection(const BackboneConfig& cfg);

FeatureGrid encode_image(const Eigen::Ref<const Image>& slice, const BackboneConfig& cfg);
PromptGrid encode_prompt(const Eigen::Ref<const Mask>& mask, const BackboneConfig& cfg);
MemoryEntry encode_memory(FeatureGrid img, PromptGrid prompt, MemoryKind kind);

/// Softmax weights of every query cell over every memory cell (rows sum to 1).
RowMatrixXd attention_weights(const FeatureGrid& query, std::span<const MemoryEntry> memory,
                                  const BackboneConfig& cfg);
RowMatrixXd attention_weights(const FeatureGrid& query,
                                  std::span<const MemoryEntry* const> memory,
                                  const BackboneConfig& cfg);

ProbabilityGrid memory_attention(const FeatureGrid& query, std::span<const MemoryEntry> memory,
                                 const BackboneConfig& cfg);
ProbabilityGrid memory_attention(const FeatureGrid& query,
                                 std::span<const MemoryEntry* const> memory,
                                 const BackboneConfig& cfg);

Decoded decode_mask(const ProbabilityGrid& probs, std::size_t rows, std::size_t cols,
                    const BackboneConfig& cfg);

}  // namespace revsam
