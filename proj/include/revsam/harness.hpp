#pragma once

#include "revsam/backbone.hpp"
#include "revsam/backend.hpp"
#include "revsam/metrics.hpp"
#include "revsam/propagation.hpp"
#include "revsam/suite.hpp"
#include "revsam/volume.hpp"

#include <json.hpp>

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace revsam {

/// One segmentation run read from disk. Relative paths resolve against the
/// directory holding the config file.
struct RunConfig {
  BackboneConfig backbone;
  PipelineConfig pipeline;
  std::filesystem::path support_manifest;
  std::filesystem::path query;
  std::optional<std::filesystem::path> ground_truth;
  std::filesystem::path output_dir;
  /// Empty selects the manifest's only class.
  std::string class_name;
  double nsd_tolerance = 1.0;
};

/// Rejects unknown keys and missing input files.
RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& c);

/// Suite file; an absent path yields the pinned standard suite.
DecoySuite load_suite(const std::optional<std::filesystem::path>& path);

/// Inputs of one run, already in memory.
struct RunInputs {
  std::string class_name;
  SupportSet support;
  IntensityVolume query;
  std::optional<MaskVolume> truth;
};

RunInputs load_inputs(const RunConfig& cfg);
RunInputs suite_inputs(const DecoySuite& suite, std::uint64_t seed, std::size_t supports);

/// "toy", "oracle" or "subprocess:<shell command>".
struct BackendSpec {
  enum class Kind { Toy, Oracle, Subprocess };
  Kind kind = Kind::Toy;
  std::string command;

  static BackendSpec parse(const std::string& s);
};

/// Initialized backend. Oracle backends learn every image in `inputs` and need its truth.
std::unique_ptr<Backend> open_backend(const BackendSpec& spec, const BackboneConfig& cfg,
                                      const RunInputs* inputs = nullptr);

struct Summary {
  double mean = 0;
  /// Sample standard deviation; zero for a single value.
  double stddev = 0;
  std::size_t n = 0;
};

Summary summarize(const std::vector<double>& v);

/// Final volume Dice of `variant` on every suite seed.
std::vector<double> suite_dice(const DecoySuite& suite, Variant variant, std::size_t supports,
                               const PipelineConfig& pipeline, Backend& backend);

struct AblationRow {
  Variant variant;
  Summary dice;
  std::vector<double> per_seed;
};

/// Baseline, ForwardFifo, RandomSelect, RevProp on the suite at its own N, k and tau.
std::vector<AblationRow> ablate(const DecoySuite& suite, Backend& backend);
void write_ablation_csv(std::ostream& os, const std::vector<AblationRow>& rows);

struct SweepCell {
  std::size_t k = 0;
  std::size_t supports = 0;
  Summary dice;
};

/// RevProp over the k x N grid; N-major order.
std::vector<SweepCell> sweep(const DecoySuite& suite, const std::vector<std::size_t>& ks,
                             const std::vector<std::size_t>& ns, Backend& backend);
void write_sweep_csv(std::ostream& os, const std::vector<SweepCell>& cells);

struct ScoreCurve {
  std::vector<double> score;
  std::vector<double> dice;
  std::optional<double> spearman;
};

/// Reverse score and true Dice of every forward prediction.
ScoreCurve score_curve(const SupportSet& support, const IntensityVolume& query,
                       const MaskVolume& truth, Backend& backend);
/// Columns i,pi,dice. A trailing comment line carries rho, or "undefined".
void write_score_curve_csv(std::ostream& os, const ScoreCurve& curve);

struct FixtureCheck {
  std::string name;
  std::string source;
  std::vector<EvalRow> rows;
  double expected = 0;
  double tolerance = 0;
};

struct FixtureOutcome {
  std::string name;
  double value = 0;
  double expected = 0;
  double tolerance = 0;
  bool pass = false;
};

std::vector<FixtureCheck> load_fixtures(const std::filesystem::path& path);
std::vector<FixtureOutcome> run_fixtures(const std::vector<FixtureCheck>& checks);

}  // namespace revsam
