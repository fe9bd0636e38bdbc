#pragma once

#include "revsam/backend.hpp"
#include "revsam/volume.hpp"

#include <json.hpp>

#include <cstddef>
#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace revsam {

enum class Variant { Baseline, ForwardFifo, RandomSelect, RevProp };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);

struct PipelineConfig {
  std::size_t k = 7;
  std::size_t tau = 7;
  Variant variant = Variant::RevProp;
  std::uint64_t random_seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const PipelineConfig& c);
void from_json(const nlohmann::json& j, PipelineConfig& c);

struct ScoredPrediction {
  std::size_t index = 0;
  Mask mask;
  /// Reverse-propagation score in [0,1]; unset until scored.
  std::optional<double> score;
};

/// Permanent entries (support or conditional) plus a capacity-tau FIFO of recent
/// non-conditional entries. Attention sees permanent entries first, then the FIFO
/// oldest to newest.
class MemoryBank {
 public:
  explicit MemoryBank(std::size_t tau);

  void add_permanent(MemoryId id) { permanent_.push_back(id); }
  /// Appends to the FIFO, evicting the oldest entry when full. Returns the evicted id.
  std::optional<MemoryId> push_recent(MemoryId id);

  std::vector<MemoryId> attention_list() const;
  const std::vector<MemoryId>& permanent() const { return permanent_; }
  const std::deque<MemoryId>& recent() const { return fifo_; }
  std::size_t capacity() const { return tau_; }
  std::size_t size() const { return permanent_.size() + fifo_.size(); }

 private:
  std::size_t tau_;
  std::vector<MemoryId> permanent_;
  std::deque<MemoryId> fifo_;
};

/// Support images encoded once: their features are reused as reverse-propagation queries.
struct EncodedSupport {
  std::vector<FeatureGrid> features;
  std::vector<MemoryId> memory;
};

EncodedSupport encode_support(const SupportSet& support, Backend& backend);

/// Predicts every query slice from a static memory holding exactly the support entries.
std::vector<ScoredPrediction> forward_propagate(const SupportSet& support,
                                                const IntensityVolume& query, Backend& backend);
std::vector<ScoredPrediction> forward_propagate(const EncodedSupport& encoded,
                                                const IntensityVolume& query, Backend& backend);

/// Score of a (slice, predicted mask) pair: segment every support image with the pair
/// as the only memory entry and average Dice against the support labels.
double reverse_score(const SupportSet& support, const Image& slice, const Mask& prediction,
                     Backend& backend);
double reverse_score(const SupportSet& support, const EncodedSupport& encoded, const Image& slice,
                     const Mask& prediction, Backend& backend);

/// The min(k, M) indices with the largest score, ordered by (score desc, index asc).
/// Unscored entries rank as 0.
std::vector<std::size_t> select_conditional(std::span<const ScoredPrediction> scored,
                                            std::size_t k);

struct ConditionalSlices {
  std::vector<std::size_t> indices;
  std::vector<Mask> masks;
};

/// Conditional slices go into permanent memory first and keep their masks; the
/// remaining slices are predicted in ascending order, each pushed into the FIFO.
MaskVolume self_propagate(const IntensityVolume& query, const ConditionalSlices& conditional,
                          Backend& backend, std::size_t tau);

struct PipelineResult {
  MaskVolume prediction;
  std::vector<ScoredPrediction> forward;
  std::vector<std::size_t> selected;
  Variant variant = Variant::RevProp;
  double seconds = 0;
};

PipelineResult run_pipeline(const SupportSet& support, const IntensityVolume& query,
                            Backend& backend, const PipelineConfig& cfg);
PipelineResult run_variant(Variant variant, const SupportSet& support,
                           const IntensityVolume& query, Backend& backend,
                           const PipelineConfig& cfg);

struct SliceReport {
  std::size_t index = 0;
  std::optional<double> score;
  std::optional<double> forward_dice;
  std::optional<double> final_dice;
};

struct PipelineReport {
  Variant variant = Variant::RevProp;
  std::vector<SliceReport> slices;
  std::optional<std::vector<std::size_t>> selected;
  std::optional<double> final_dice;
  std::optional<double> final_nsd;
  nlohmann::json config;
  double seconds = 0;
};

PipelineReport make_report(const PipelineResult& result, const nlohmann::json& config_echo,
                           const MaskVolume* truth = nullptr, double nsd_tol = 1.0);

void to_json(nlohmann::json& j, const PipelineReport& r);
/// Per-slice CSV: index,score,forward_dice,final_dice (blank when unknown).
void write_slice_csv(std::ostream& os, const PipelineReport& r);

}  // namespace revsam
