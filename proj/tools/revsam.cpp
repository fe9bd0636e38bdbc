#include "revsam/harness.hpp"
#include "revsam/json_util.hpp"
#include "revsam/manifest.hpp"
#include "revsam/phantom.hpp"
#include "revsam/protocol.hpp"
#include "revsam/rvol.hpp"

#include <CLI11.hpp>

#include <unistd.h>

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#ifndef REVSAM_DATA_DIR
#define REVSAM_DATA_DIR "data"
#endif

using namespace revsam;
namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kInternal = 1, kConfig = 2, kBackend = 3, kFixture = 4 };

std::vector<std::size_t> parse_list(const std::string& s, const char* what) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const long long v = std::stoll(item, &used);
      if (used != item.size() || v < 1) throw std::invalid_argument(item);
      out.push_back(std::size_t(v));
    } catch (const std::exception&) {
      throw ConfigError(std::string("bad ") + what + " entry '" + item + "'");
    }
  }
  if (out.empty()) throw ConfigError(std::string(what) + " list is empty");
  return out;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream f(p);
  if (!f) throw ConfigError("cannot write " + p.string());
  return f;
}

// Overrides shared by commands that run the pipeline.
struct RunFlags {
  std::optional<std::string> variant;
  std::optional<std::size_t> k;
  std::optional<std::size_t> tau;
  std::optional<std::uint64_t> seed;
  std::string backend = "toy";
  std::optional<std::string> out;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--variant", variant, "baseline, forward_fifo, random_select or revprop");
    cmd->add_option("--k", k, "Conditional slices to keep");
    cmd->add_option("--tau", tau, "FIFO capacity");
    cmd->add_option("--seed", seed, "Random seed for random_select");
    cmd->add_option("--backend", backend, "toy, oracle or subprocess:<cmd>")->capture_default_str();
    cmd->add_option("--out", out, "Output directory");
  }

  void apply(PipelineConfig& p) const {
    if (variant) p.variant = variant_from_string(*variant);
    if (k) p.k = *k;
    if (tau) p.tau = *tau;
    if (seed) p.random_seed = *seed;
    p.validate();
  }
};

// Either a run config file or one case of a suite.
struct InputFlags {
  std::optional<std::string> config;
  std::optional<std::string> suite;
  std::optional<std::uint64_t> suite_seed;
  std::optional<std::size_t> supports;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--config", config, "Run config (JSON)");
    cmd->add_option("--suite", suite, "Suite file for --suite-seed; default is the standard suite");
    cmd->add_option("--suite-seed", suite_seed, "Run on one case of the decoy suite");
    cmd->add_option("--supports", supports, "Support slices for --suite-seed");
  }

  struct Resolved {
    RunInputs inputs;
    BackboneConfig backbone;
    PipelineConfig pipeline;
    fs::path out;
    double nsd_tolerance = 1.0;
    nlohmann::json echo;
  };

  Resolved resolve(const RunFlags& flags) const {
    if (config.has_value() == suite_seed.has_value()) {
      throw ConfigError("give exactly one of --config or --suite-seed");
    }
    Resolved r;
    if (config) {
      const RunConfig rc = load_run_config(*config);
      r.inputs = load_inputs(rc);
      r.backbone = rc.backbone;
      r.pipeline = rc.pipeline;
      r.out = rc.output_dir;
      r.nsd_tolerance = rc.nsd_tolerance;
      r.echo = to_json(rc);
    } else {
      const DecoySuite s = load_suite(suite ? std::optional<fs::path>(*suite) : std::nullopt);
      const std::size_t n = supports.value_or(s.supports);
      r.inputs = suite_inputs(s, *suite_seed, n);
      r.backbone = s.backbone;
      r.pipeline = s.pipeline;
      r.out = "out";
      r.echo = {{"suite", s}, {"suite_seed", *suite_seed}, {"supports", n}};
    }
    flags.apply(r.pipeline);
    if (flags.out) r.out = *flags.out;
    r.echo["pipeline"] = r.pipeline;
    r.echo["backend"] = flags.backend;
    return r;
  }
};

int cmd_gen(const std::optional<std::string>& spec_path, std::optional<std::uint64_t> seed,
            const std::string& out) {
  PhantomSpec spec;
  if (spec_path) {
    std::ifstream in(*spec_path);
    if (!in) throw ConfigError("cannot open phantom spec " + *spec_path);
    try {
      spec = nlohmann::json::parse(in).get<PhantomSpec>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("phantom spec " + *spec_path + ": " + e.what());
    }
  } else {
    const DecoySuite s = DecoySuite::standard();
    spec = s.base;
    spec.seed = s.base_seed;
  }
  if (seed) spec.seed = *seed;
  const auto [img, mask] = gen_phantom(spec);
  const DecoySuite standard = DecoySuite::standard();

  const fs::path dir(out);
  fs::create_directories(dir);
  write_volume(dir / "volume.rvol", img);
  write_volume(dir / "mask.rvol", mask);
  Manifest m;
  m.classes = {"target"};
  m.supports.push_back({"target", "volume.rvol", "mask.rvol", spec.support_slice});
  write_manifest(dir / "manifest.json", m);
  open_out(dir / "spec.json") << nlohmann::json(spec).dump(2) << "\n";
  const nlohmann::json run{{"backbone", standard.backbone},
                           {"pipeline", standard.pipeline},
                           {"support_manifest", "manifest.json"},
                           {"query", "volume.rvol"},
                           {"ground_truth", "mask.rvol"},
                           {"output_dir", "out"}};
  open_out(dir / "run.json") << run.dump(2) << "\n";
  std::cout << "wrote " << to_string(img.shape()) << " phantom to " << dir.string() << "\n";
  return kOk;
}

int cmd_gen_case(const std::optional<std::string>& suite_path, std::uint64_t seed,
                 std::optional<std::size_t> supports, const std::string& out) {
  const DecoySuite s = load_suite(suite_path ? std::optional<fs::path>(*suite_path) : std::nullopt);
  const std::size_t n = supports.value_or(s.supports);
  const SuiteCase c = make_case(s, seed, n);

  const fs::path dir(out);
  fs::create_directories(dir);
  write_volume(dir / "volume.rvol", c.query);
  write_volume(dir / "mask.rvol", c.truth);
  write_volume(dir / "supports.rvol", IntensityVolume::stack(c.support.images));
  write_volume(dir / "supports_mask.rvol", MaskVolume::stack(c.support.masks));
  Manifest m;
  m.classes = {"target"};
  for (std::size_t i = 0; i < n; ++i) {
    m.supports.push_back({"target", "supports.rvol", "supports_mask.rvol", i});
  }
  write_manifest(dir / "manifest.json", m);
  open_out(dir / "spec.json") << nlohmann::json(c.query_spec).dump(2) << "\n";
  const nlohmann::json run{{"backbone", s.backbone},
                           {"pipeline", s.pipeline},
                           {"support_manifest", "manifest.json"},
                           {"query", "volume.rvol"},
                           {"ground_truth", "mask.rvol"},
                           {"output_dir", "out"}};
  open_out(dir / "run.json") << run.dump(2) << "\n";
  std::cout << "wrote suite case " << seed << " with " << n << " supports to " << dir.string()
            << "\n";
  return kOk;
}

int cmd_segment(const InputFlags& in, const RunFlags& flags) {
  auto r = in.resolve(flags);
  const auto backend = open_backend(BackendSpec::parse(flags.backend), r.backbone, &r.inputs);
  const auto res =
      run_variant(r.pipeline.variant, r.inputs.support, r.inputs.query, *backend, r.pipeline);
  const MaskVolume* truth = r.inputs.truth ? &*r.inputs.truth : nullptr;
  const PipelineReport rep = make_report(res, r.echo, truth, r.nsd_tolerance);

  fs::create_directories(r.out);
  write_volume(r.out / "prediction.rvol", res.prediction);
  open_out(r.out / "report.json") << nlohmann::json(rep).dump(2) << "\n";
  {
    auto f = open_out(r.out / "slices.csv");
    write_slice_csv(f, rep);
  }
  std::cout << "variant " << to_string(rep.variant);
  if (rep.selected) {
    std::cout << " selected";
    for (auto i : *rep.selected) std::cout << ' ' << i;
  }
  if (rep.final_dice) {
    EvalRow row{r.inputs.class_name, "query", 100.0 * *rep.final_dice, 100.0 * *rep.final_nsd};
    auto f = open_out(r.out / "eval.csv");
    write_eval_csv(f, aggregate(std::span<const EvalRow>(&row, 1)));
    std::cout << " dice " << *rep.final_dice << " nsd " << *rep.final_nsd;
  }
  std::cout << "\nwrote " << r.out.string() << "\n";
  return kOk;
}

int cmd_ablate(const std::optional<std::string>& suite_path, const RunFlags& flags,
               std::optional<std::size_t> seeds, std::optional<std::size_t> supports) {
  DecoySuite s = load_suite(suite_path ? std::optional<fs::path>(*suite_path) : std::nullopt);
  if (flags.variant) throw ConfigError("ablate runs every variant; drop --variant");
  flags.apply(s.pipeline);
  if (seeds) s.num_seeds = *seeds;
  if (supports) s.supports = *supports;
  if (BackendSpec::parse(flags.backend).kind == BackendSpec::Kind::Oracle) {
    throw ConfigError("suite commands need a toy or subprocess backend");
  }
  const auto backend = open_backend(BackendSpec::parse(flags.backend), s.backbone);
  const auto rows = ablate(s, *backend);
  write_ablation_csv(std::cout, rows);
  if (flags.out) {
    fs::create_directories(*flags.out);
    auto f = open_out(fs::path(*flags.out) / "ablation.csv");
    write_ablation_csv(f, rows);
  }
  return kOk;
}

int cmd_sweep(const std::optional<std::string>& suite_path, const RunFlags& flags,
              const std::string& ks, const std::string& ns, std::optional<std::size_t> seeds) {
  DecoySuite s = load_suite(suite_path ? std::optional<fs::path>(*suite_path) : std::nullopt);
  if (flags.variant || flags.k) throw ConfigError("sweep sets k itself and always runs revprop");
  flags.apply(s.pipeline);
  if (seeds) s.num_seeds = *seeds;
  if (BackendSpec::parse(flags.backend).kind == BackendSpec::Kind::Oracle) {
    throw ConfigError("suite commands need a toy or subprocess backend");
  }
  const auto kl = parse_list(ks, "k");
  const auto nl = parse_list(ns, "N");
  const auto backend = open_backend(BackendSpec::parse(flags.backend), s.backbone);
  const auto cells = sweep(s, kl, nl, *backend);
  write_sweep_csv(std::cout, cells);
  if (flags.out) {
    fs::create_directories(*flags.out);
    auto f = open_out(fs::path(*flags.out) / "sweep.csv");
    write_sweep_csv(f, cells);
  }
  return kOk;
}

int cmd_score_curve(const InputFlags& in, const RunFlags& flags) {
  auto r = in.resolve(flags);
  if (!r.inputs.truth) throw ConfigError("score-curve needs ground truth");
  const auto backend = open_backend(BackendSpec::parse(flags.backend), r.backbone, &r.inputs);
  const auto curve = score_curve(r.inputs.support, r.inputs.query, *r.inputs.truth, *backend);
  fs::create_directories(r.out);
  {
    auto f = open_out(r.out / "score_curve.csv");
    write_score_curve_csv(f, curve);
  }
  std::cout << "spearman ";
  if (curve.spearman) {
    std::cout << *curve.spearman;
  } else {
    std::cout << "undefined";
  }
  std::cout << "\nwrote " << (r.out / "score_curve.csv").string() << "\n";
  return kOk;
}

int cmd_fixture(const std::string& data) {
  const auto outcomes = run_fixtures(load_fixtures(data));
  bool ok = true;
  for (const auto& o : outcomes) {
    std::cout << (o.pass ? "PASS " : "FAIL ") << o.name << ": " << o.value << " vs "
              << o.expected << " +/- " << o.tolerance << "\n";
    ok = ok && o.pass;
  }
  return ok ? kOk : kFixture;
}

int cmd_serve() {
  ToyBackend toy;
  wire::Server server(toy);
  wire::FdStream io(STDIN_FILENO, STDOUT_FILENO);
  server.serve(io);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reverse-propagation few-shot segmentation on synthetic phantoms"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen", "Write a phantom (or a suite case) with manifest");
  std::optional<std::string> gen_config, gen_suite;
  std::optional<std::uint64_t> gen_seed, gen_case;
  std::optional<std::size_t> gen_supports;
  std::string gen_out = ".";
  gen->add_option("--config", gen_config, "Phantom spec (JSON); default is the standard phantom");
  gen->add_option("--seed", gen_seed, "Phantom seed");
  gen->add_option("--suite", gen_suite, "Suite file for --suite-seed");
  gen->add_option("--suite-seed", gen_case, "Export this case of the decoy suite instead");
  gen->add_option("--supports", gen_supports, "Support slices for --suite-seed");
  gen->add_option("--out", gen_out, "Output directory")->capture_default_str();

  auto* segment = app.add_subcommand("segment", "Run one pipeline variant");
  InputFlags seg_in;
  RunFlags seg_flags;
  seg_in.add_to(segment);
  seg_flags.add_to(segment);

  auto* abl = app.add_subcommand("ablate", "Mean Dice per variant over the suite");
  std::optional<std::string> abl_config;
  RunFlags abl_flags;
  std::optional<std::size_t> abl_seeds, abl_supports;
  abl->add_option("--config", abl_config, "Suite file; default is the standard suite");
  abl->add_option("--seeds", abl_seeds, "Number of suite seeds");
  abl->add_option("--supports", abl_supports, "Support slices per case");
  abl_flags.add_to(abl);

  auto* swp = app.add_subcommand("sweep", "RevProp mean Dice over a k x N grid");
  std::optional<std::string> swp_config;
  RunFlags swp_flags;
  std::string ks = "1,3,7,9", ns = "1,5,10";
  std::optional<std::size_t> swp_seeds;
  swp->add_option("--config", swp_config, "Suite file; default is the standard suite");
  swp->add_option("--ks", ks, "Comma-separated k values")->capture_default_str();
  swp->add_option("--ns", ns, "Comma-separated support counts")->capture_default_str();
  swp->add_option("--seeds", swp_seeds, "Number of suite seeds");
  swp_flags.add_to(swp);

  auto* curve = app.add_subcommand("score-curve", "Reverse score vs true Dice per slice");
  InputFlags cur_in;
  RunFlags cur_flags;
  cur_in.add_to(curve);
  cur_flags.add_to(curve);

  auto* fix = app.add_subcommand("fixture", "Check table aggregation against stored numbers");
  std::string fix_data = std::string(REVSAM_DATA_DIR) + "/paper_tables.json";
  fix->add_option("--data", fix_data, "Fixture file")->capture_default_str();

  app.add_subcommand("serve", "Serve the toy backend over stdin/stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }

  try {
    if (*gen) {
      if (gen_case) return cmd_gen_case(gen_suite, *gen_case, gen_supports, gen_out);
      if (gen_suite || gen_supports) throw ConfigError("--suite and --supports need --suite-seed");
      return cmd_gen(gen_config, gen_seed, gen_out);
    }
    if (*segment) return cmd_segment(seg_in, seg_flags);
    if (*abl) return cmd_ablate(abl_config, abl_flags, abl_seeds, abl_supports);
    if (*swp) return cmd_sweep(swp_config, swp_flags, ks, ns, swp_seeds);
    if (*curve) return cmd_score_curve(cur_in, cur_flags);
    if (*fix) return cmd_fixture(fix_data);
    return cmd_serve();
  } catch (const BackendError& e) {
    std::cerr << "backend error: " << e.what() << "\n";
    return kBackend;
  } catch (const wire::FrameError& e) {
    std::cerr << "protocol error: " << e.what() << "\n";
    return kBackend;
  } catch (const wire::StreamClosed& e) {
    std::cerr << "protocol error: " << e.what() << "\n";
    return kBackend;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const PhantomSpecError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const FormatError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInternal;
  }
}
