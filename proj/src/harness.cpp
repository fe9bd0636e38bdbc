#include "revsam/harness.hpp"

#include "revsam/json_util.hpp"
#include "revsam/manifest.hpp"
#include "revsam/remote.hpp"
#include "revsam/rvol.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>

namespace revsam {

namespace fs = std::filesystem;

namespace {

fs::path existing(const nlohmann::json& j, const char* key, const fs::path& base_dir) {
  if (!j.contains(key)) throw ConfigError(std::string("run config needs '") + key + "'");
  fs::path p = j.at(key).get<std::string>();
  if (p.is_relative()) p = base_dir / p;
  if (!fs::is_regular_file(p)) {
    throw ConfigError(std::string("run config '") + key + "': no such file " + p.string());
  }
  return p;
}

}  // namespace

RunConfig parse_run_config(const nlohmann::json& j, const fs::path& base_dir) {
  reject_unknown_keys(j,
                      {"backbone", "pipeline", "support_manifest", "query", "ground_truth",
                       "output_dir", "class", "nsd_tolerance"},
                      "run config");
  RunConfig c;
  try {
    if (j.contains("backbone")) c.backbone = j.at("backbone").get<BackboneConfig>();
    if (j.contains("pipeline")) c.pipeline = j.at("pipeline").get<PipelineConfig>();
    c.support_manifest = existing(j, "support_manifest", base_dir);
    c.query = existing(j, "query", base_dir);
    if (j.contains("ground_truth") && !j.at("ground_truth").is_null()) {
      c.ground_truth = existing(j, "ground_truth", base_dir);
    }
    c.output_dir = j.value("output_dir", std::string("out"));
    if (c.output_dir.is_relative()) c.output_dir = base_dir / c.output_dir;
    read_optional(j, "class", c.class_name);
    read_optional(j, "nsd_tolerance", c.nsd_tolerance);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
  if (!(c.nsd_tolerance >= 0) || !std::isfinite(c.nsd_tolerance)) {
    throw ConfigError("nsd_tolerance must be a finite value >= 0");
  }
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open run config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("run config " + path.string() + ": " + e.what());
  }
  return parse_run_config(j, path.parent_path());
}

nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j{{"backbone", c.backbone},
                   {"pipeline", c.pipeline},
                   {"support_manifest", c.support_manifest.string()},
                   {"query", c.query.string()},
                   {"output_dir", c.output_dir.string()},
                   {"nsd_tolerance", c.nsd_tolerance}};
  j["ground_truth"] = c.ground_truth ? nlohmann::json(c.ground_truth->string()) : nlohmann::json();
  if (!c.class_name.empty()) j["class"] = c.class_name;
  return j;
}

DecoySuite load_suite(const std::optional<fs::path>& path) {
  if (!path) return DecoySuite::standard();
  std::ifstream in(*path);
  if (!in) throw ConfigError("cannot open suite " + path->string());
  try {
    return nlohmann::json::parse(in).get<DecoySuite>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("suite " + path->string() + ": " + e.what());
  }
}

RunInputs load_inputs(const RunConfig& cfg) {
  const Manifest m = read_manifest(cfg.support_manifest);
  RunInputs in;
  in.class_name = cfg.class_name;
  if (in.class_name.empty()) {
    if (m.classes.size() != 1) {
      throw ConfigError("manifest has " + std::to_string(m.classes.size()) +
                        " classes; the run config must name one");
    }
    in.class_name = m.classes.front();
  }
  in.support = load_support(m, cfg.support_manifest.parent_path(), in.class_name);
  in.query = read_intensity_volume(cfg.query);
  if (cfg.ground_truth) in.truth = read_mask_volume(*cfg.ground_truth);
  return in;
}

RunInputs suite_inputs(const DecoySuite& suite, std::uint64_t seed, std::size_t supports) {
  SuiteCase c = make_case(suite, seed, supports);
  return RunInputs{"target", std::move(c.support), std::move(c.query), std::move(c.truth)};
}

BackendSpec BackendSpec::parse(const std::string& s) {
  if (s == "toy") return {Kind::Toy, {}};
  if (s == "oracle") return {Kind::Oracle, {}};
  const std::string prefix = "subprocess:";
  if (s.rfind(prefix, 0) == 0) {
    if (s.size() == prefix.size()) throw ConfigError("subprocess backend needs a command");
    return {Kind::Subprocess, s.substr(prefix.size())};
  }
  throw ConfigError("unknown backend '" + s + "' (expected toy, oracle or subprocess:<cmd>)");
}

std::unique_ptr<Backend> open_backend(const BackendSpec& spec, const BackboneConfig& cfg,
                                      const RunInputs* inputs) {
  switch (spec.kind) {
    case BackendSpec::Kind::Toy:
      return std::make_unique<ToyBackend>(cfg);
    case BackendSpec::Kind::Subprocess: {
      auto b = std::make_unique<RemoteBackend>(std::make_unique<SubprocessChannel>(spec.command));
      b->init(cfg);
      return b;
    }
    case BackendSpec::Kind::Oracle: {
      if (!inputs || !inputs->truth) {
        throw ConfigError("the oracle backend needs ground truth for the query");
      }
      auto b = std::make_unique<OracleBackend>();
      b->add(inputs->support);
      b->add(inputs->query, *inputs->truth);
      b->init(cfg);
      return b;
    }
  }
  throw ConfigError("unhandled backend kind");
}

Summary summarize(const std::vector<double>& v) {
  Summary s;
  s.n = v.size();
  if (v.empty()) return s;
  for (double x : v) s.mean += x;
  s.mean /= double(v.size());
  if (v.size() > 1) {
    double ss = 0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.stddev = std::sqrt(ss / double(v.size() - 1));
  }
  return s;
}

std::vector<double> suite_dice(const DecoySuite& suite, Variant variant, std::size_t supports,
                               const PipelineConfig& pipeline, Backend& backend) {
  std::vector<double> out;
  for (std::size_t s = 0; s < suite.num_seeds; ++s) {
    const SuiteCase c = make_case(suite, s, supports);
    PipelineConfig pc = pipeline;
    pc.random_seed = pipeline.random_seed + s;
    const auto res = run_variant(variant, c.support, c.query, backend, pc);
    out.push_back(dice(res.prediction, c.truth));
  }
  return out;
}

std::vector<AblationRow> ablate(const DecoySuite& suite, Backend& backend) {
  std::vector<AblationRow> rows;
  for (Variant v : {Variant::Baseline, Variant::ForwardFifo, Variant::RandomSelect,
                    Variant::RevProp}) {
    AblationRow r{v, {}, suite_dice(suite, v, suite.supports, suite.pipeline, backend)};
    r.dice = summarize(r.per_seed);
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_ablation_csv(std::ostream& os, const std::vector<AblationRow>& rows) {
  os << "variant,mean_dice,std_dice,seeds\n" << std::fixed << std::setprecision(4);
  for (const auto& r : rows) {
    os << to_string(r.variant) << ',' << r.dice.mean << ',' << r.dice.stddev << ',' << r.dice.n
       << '\n';
  }
}

std::vector<SweepCell> sweep(const DecoySuite& suite, const std::vector<std::size_t>& ks,
                             const std::vector<std::size_t>& ns, Backend& backend) {
  std::vector<SweepCell> cells;
  for (auto n : ns) {
    for (auto k : ks) {
      PipelineConfig pc = suite.pipeline;
      pc.k = k;
      pc.validate();
      cells.push_back({k, n, summarize(suite_dice(suite, Variant::RevProp, n, pc, backend))});
    }
  }
  return cells;
}

void write_sweep_csv(std::ostream& os, const std::vector<SweepCell>& cells) {
  os << "k,supports,mean_dice,std_dice,seeds\n" << std::fixed << std::setprecision(4);
  for (const auto& c : cells) {
    os << c.k << ',' << c.supports << ',' << c.dice.mean << ',' << c.dice.stddev << ','
       << c.dice.n << '\n';
  }
}

ScoreCurve score_curve(const SupportSet& support, const IntensityVolume& query,
                       const MaskVolume& truth, Backend& backend) {
  if (!(truth.shape() == query.shape())) {
    throw ShapeError("ground truth " + to_string(truth.shape()) + " does not match query " +
                     to_string(query.shape()));
  }
  backend.reset();
  const EncodedSupport enc = encode_support(support, backend);
  ScoreCurve c;
  for (const auto& p : forward_propagate(enc, query, backend)) {
    c.score.push_back(reverse_score(support, enc, query.slice(p.index), p.mask, backend));
    c.dice.push_back(dice(p.mask, Mask(truth.slice(p.index))));
  }
  if (c.score.size() >= 2) c.spearman = spearman(c.score, c.dice);
  return c;
}

void write_score_curve_csv(std::ostream& os, const ScoreCurve& curve) {
  os << "i,pi,dice\n" << std::fixed << std::setprecision(6);
  for (std::size_t i = 0; i < curve.score.size(); ++i) {
    os << i << ',' << curve.score[i] << ',' << curve.dice[i] << '\n';
  }
  os << "# spearman,";
  if (curve.spearman) {
    os << *curve.spearman;
  } else {
    os << "undefined";
  }
  os << '\n';
}

std::vector<FixtureCheck> load_fixtures(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open fixture file " + path.string());
  std::vector<FixtureCheck> out;
  try {
    const auto j = nlohmann::json::parse(in);
    reject_unknown_keys(j, {"checks"}, "fixture file");
    for (const auto& c : j.at("checks")) {
      reject_unknown_keys(c, {"name", "source", "expected", "tolerance", "rows"}, "fixture check");
      FixtureCheck f;
      f.name = c.at("name").get<std::string>();
      f.source = c.value("source", std::string());
      f.expected = c.at("expected").get<double>();
      f.tolerance = c.at("tolerance").get<double>();
      for (const auto& r : c.at("rows")) {
        reject_unknown_keys(r, {"class", "group", "dsc", "nsd"}, "fixture row");
        EvalRow row;
        row.class_name = r.at("class").get<std::string>();
        row.group = r.at("group").get<std::string>();
        row.dsc = r.at("dsc").get<double>();
        if (r.contains("nsd")) row.nsd = r.at("nsd").get<double>();
        f.rows.push_back(std::move(row));
      }
      out.push_back(std::move(f));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("fixture file " + path.string() + ": " + e.what());
  }
  if (out.empty()) throw ConfigError("fixture file " + path.string() + " has no checks");
  return out;
}

std::vector<FixtureOutcome> run_fixtures(const std::vector<FixtureCheck>& checks) {
  std::vector<FixtureOutcome> out;
  for (const auto& c : checks) {
    const double v = aggregate(c.rows).mdsc;
    out.push_back({c.name, v, c.expected, c.tolerance, std::abs(v - c.expected) <= c.tolerance});
  }
  return out;
}

}  // namespace revsam
