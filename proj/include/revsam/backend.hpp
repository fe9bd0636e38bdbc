#pragma once

#include "revsam/backbone.hpp"
#include "revsam/volume.hpp"

#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace revsam {

enum class ErrorCode { BadMagic, BadShape, UnknownOp, State };

std::string to_string(ErrorCode c);
ErrorCode error_code_from_string(const std::string& s);

/// Failure reported by a backend, in-process or over the wire. Never retried.
class BackendError : public std::runtime_error {
 public:
  BackendError(ErrorCode code, const std::string& detail)
      : std::runtime_error(to_string(code) + ": " + detail), code_(code), detail_(detail) {}
  ErrorCode code() const { return code_; }
  const std::string& detail() const { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

struct MemoryId {
  std::uint32_t value = 0;
  bool operator==(const MemoryId&) const = default;
  auto operator<=>(const MemoryId&) const = default;
};

/// Five-stage promptable memory segmenter. The caller owns the memory policy:
/// `attend` receives the exact ordered list of entries to condition on.
class Backend {
 public:
  virtual ~Backend() = default;

  virtual void init(const BackboneConfig& cfg) = 0;
  virtual FeatureGrid encode_image(const Image& slice) = 0;
  virtual PromptGrid encode_prompt(const Mask& mask) = 0;
  virtual MemoryId encode_memory(const FeatureGrid& img, const PromptGrid& prompt,
                                 MemoryKind kind) = 0;
  virtual ProbabilityGrid attend(const FeatureGrid& query, std::span<const MemoryId> memory) = 0;
  /// Binary mask at rows x cols.
  virtual Mask decode(const ProbabilityGrid& probs, std::size_t rows, std::size_t cols) = 0;
  /// Drops every stored memory entry; the negotiated config survives.
  virtual void reset() = 0;
};

/// In-process toy segmenter. Enforces the same session state machine as the wire server.
class ToyBackend final : public Backend {
 public:
  ToyBackend() = default;
  explicit ToyBackend(const BackboneConfig& cfg) { init(cfg); }

  void init(const BackboneConfig& cfg) override;
  FeatureGrid encode_image(const Image& slice) override;
  PromptGrid encode_prompt(const Mask& mask) override;
  MemoryId encode_memory(const FeatureGrid& img, const PromptGrid& prompt,
                         MemoryKind kind) override;
  ProbabilityGrid attend(const FeatureGrid& query, std::span<const MemoryId> memory) override;
  Mask decode(const ProbabilityGrid& probs, std::size_t rows, std::size_t cols) override;
  void reset() override;

  bool initialized() const { return initialized_; }
  const BackboneConfig& config() const { return cfg_; }
  std::size_t stored_entries() const { return entries_.size(); }
  const MemoryEntry& entry(MemoryId id) const;

 private:
  void require_init(const char* op) const;
  void check_grid(Eigen::Index rows, Eigen::Index cols, const char* what);

  BackboneConfig cfg_{};
  bool initialized_ = false;
  // Grid shape is locked by the first encode of a session.
  Eigen::Index grid_rows_ = 0;
  Eigen::Index grid_cols_ = 0;
  std::vector<MemoryEntry> entries_;
};

/// Test backend that answers with ground truth by fiat. Every image the pipeline
/// will see must be registered with its true mask; unknown images are a STATE error.
class OracleBackend final : public Backend {
 public:
  void add(const Image& image, const Mask& truth);
  void add(const IntensityVolume& images, const MaskVolume& truth);
  void add(const SupportSet& support);

  void init(const BackboneConfig& cfg) override;
  FeatureGrid encode_image(const Image& slice) override;
  PromptGrid encode_prompt(const Mask& mask) override;
  MemoryId encode_memory(const FeatureGrid& img, const PromptGrid& prompt,
                         MemoryKind kind) override;
  ProbabilityGrid attend(const FeatureGrid& query, std::span<const MemoryId> memory) override;
  Mask decode(const ProbabilityGrid& probs, std::size_t rows, std::size_t cols) override;
  void reset() override;

 private:
  std::size_t lookup(const Image& image) const;

  bool initialized_ = false;
  std::uint32_t next_id_ = 0;
  std::vector<Mask> truths_;
  std::unordered_multimap<std::size_t, std::pair<Image, std::size_t>> index_;
};

}  // namespace revsam
