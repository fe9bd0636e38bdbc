#include "revsam/harness.hpp"
#include "revsam/json_util.hpp"
#include "revsam/manifest.hpp"
#include "revsam/phantom.hpp"
#include "revsam/rvol.hpp"

#include <doctest.h>

#include <fstream>
#include <sstream>

using namespace revsam;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name)
      : path(fs::temp_directory_path() / ("revsam_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

PhantomSpec tiny() {
  PhantomSpec s;
  s.shape = Shape3{5, 16, 16};
  s.target.center = {0, 8, 6};
  s.target.radii = {100, 3, 3};
  s.drift = {0, 0.5};
  s.noise_sigma = 0.02;
  return s;
}

void write_text(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

// A tiny on-disk task: one volume used as support (slice 0) and as query.
void write_task(const fs::path& dir) {
  const auto [img, mask] = gen_phantom(tiny());
  write_volume(dir / "img.rvol", img);
  write_volume(dir / "mask.rvol", mask);
  Manifest m;
  m.classes = {"organ"};
  m.supports = {{"organ", "img.rvol", "mask.rvol", 0}, {"organ", "img.rvol", "mask.rvol", 4}};
  write_manifest(dir / "manifest.json", m);
}

}  // namespace

TEST_CASE("manifest round trip and validation") {
  TempDir d("manifest");
  Manifest m;
  m.classes = {"liver", "spleen"};
  m.supports = {{"liver", "a.rvol", "b.rvol", 3}};
  write_manifest(d.path / "m.json", m);
  CHECK(read_manifest(d.path / "m.json") == m);

  write_text(d.path / "dup.json", R"({"classes":["a","a"],"supports":[]})");
  CHECK_THROWS_AS(read_manifest(d.path / "dup.json"), ConfigError);
  write_text(d.path / "undeclared.json",
             R"({"classes":["a"],"supports":[{"class":"b","image":"i","mask":"m","slice":0}]})");
  CHECK_THROWS_AS(read_manifest(d.path / "undeclared.json"), ConfigError);
  write_text(d.path / "extra.json", R"({"classes":[],"supports":[],"notes":1})");
  CHECK_THROWS_AS(read_manifest(d.path / "extra.json"), ConfigError);
  CHECK_THROWS_AS(read_manifest(d.path / "absent.json"), ConfigError);
}

TEST_CASE("supports load relative to the manifest") {
  TempDir d("support");
  write_task(d.path);
  const Manifest m = read_manifest(d.path / "manifest.json");
  const SupportSet s = load_support(m, d.path, "organ");
  const auto [img, mask] = gen_phantom(tiny());
  REQUIRE(s.size() == 2);
  CHECK((s.images[1] == img.slice(4)).all());
  CHECK((s.masks[0] == mask.slice(0)).all());
  CHECK_THROWS_AS(load_support(m, d.path, "kidney"), ConfigError);

  Manifest far = m;
  far.supports[1].slice = 5;
  CHECK_THROWS_AS(load_support(far, d.path, "organ"), ConfigError);
}

TEST_CASE("run config parsing") {
  TempDir d("runcfg");
  write_task(d.path);
  nlohmann::json j{{"support_manifest", "manifest.json"},
                   {"query", "img.rvol"},
                   {"ground_truth", "mask.rvol"},
                   {"backbone", {{"patch", 4}}},
                   {"pipeline", {{"k", 2}, {"tau", 2}}}};
  const RunConfig c = parse_run_config(j, d.path);
  CHECK(c.query == d.path / "img.rvol");
  CHECK(c.output_dir == d.path / "out");
  CHECK(c.backbone.patch == 4);
  CHECK(c.pipeline.k == 2);
  CHECK(c.nsd_tolerance == 1.0);

  const RunInputs in = load_inputs(c);
  CHECK(in.class_name == "organ");
  CHECK(in.truth.has_value());
  CHECK(in.query.num_slices() == 5);

  auto bad = j;
  bad["verbose"] = true;
  CHECK_THROWS_AS(parse_run_config(bad, d.path), ConfigError);
  bad = j;
  bad["query"] = "nowhere.rvol";
  CHECK_THROWS_AS(parse_run_config(bad, d.path), ConfigError);
  bad = j;
  bad.erase("support_manifest");
  CHECK_THROWS_AS(parse_run_config(bad, d.path), ConfigError);
  bad = j;
  bad["nsd_tolerance"] = -1;
  CHECK_THROWS_AS(parse_run_config(bad, d.path), ConfigError);
  bad = j;
  bad["pipeline"]["k"] = 0;
  CHECK_THROWS_AS(parse_run_config(bad, d.path), ConfigError);

  const nlohmann::json back = to_json(c);
  CHECK(parse_run_config(back, d.path).query == c.query);
}

TEST_CASE("backend specs") {
  CHECK(BackendSpec::parse("toy").kind == BackendSpec::Kind::Toy);
  CHECK(BackendSpec::parse("oracle").kind == BackendSpec::Kind::Oracle);
  const auto s = BackendSpec::parse("subprocess:python3 bridge.py --x");
  CHECK(s.kind == BackendSpec::Kind::Subprocess);
  CHECK(s.command == "python3 bridge.py --x");
  CHECK_THROWS_AS(BackendSpec::parse("subprocess:"), ConfigError);
  CHECK_THROWS_AS(BackendSpec::parse("gpu"), ConfigError);
  CHECK_THROWS_AS(open_backend(BackendSpec::parse("oracle"), BackboneConfig{}), ConfigError);
}

TEST_CASE("summaries use the sample standard deviation") {
  const auto s = summarize({1, 2, 3, 4});
  CHECK(s.mean == 2.5);
  CHECK(s.stddev == doctest::Approx(std::sqrt(5.0 / 3.0)));
  CHECK(s.n == 4);
  CHECK(summarize({7}).stddev == 0);
  CHECK(summarize({}).n == 0);
}

TEST_CASE("oracle score curve is flat and its correlation undefined") {
  const auto [img, mask] = gen_phantom(tiny());
  RunInputs in{"organ", {}, img, mask};
  in.support.images = {img.slice(2)};
  in.support.masks = {mask.slice(2)};
  auto b = open_backend(BackendSpec::parse("oracle"), BackboneConfig{}, &in);
  const ScoreCurve c = score_curve(in.support, img, mask, *b);
  REQUIRE(c.score.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(c.score[i] == 1.0);
    CHECK(c.dice[i] == 1.0);
  }
  CHECK_FALSE(c.spearman.has_value());
  std::ostringstream os;
  write_score_curve_csv(os, c);
  CHECK(os.str().rfind("i,pi,dice\n0,1.000000,1.000000\n", 0) == 0);
  CHECK(os.str().find("# spearman,undefined\n") != std::string::npos);
}

TEST_CASE("ablation and sweep tables") {
  DecoySuite suite = DecoySuite::standard();
  suite.base = tiny();
  suite.base.decoy = Ellipsoid{{0, 8, 13}, {100, 2, 2}, 0.7, 0.0};
  suite.center_jitter = 0.5;
  suite.support_first = 0;
  suite.support_last = 4;
  suite.support_volumes = 1;
  suite.num_seeds = 2;
  suite.supports = 2;
  suite.backbone.patch = 4;
  suite.pipeline.k = 2;
  suite.pipeline.tau = 2;
  ToyBackend toy(suite.backbone);

  const auto rows = ablate(suite, toy);
  REQUIRE(rows.size() == 4);
  CHECK(rows[0].variant == Variant::Baseline);
  CHECK(rows[3].variant == Variant::RevProp);
  for (const auto& r : rows) {
    CHECK(r.per_seed.size() == 2);
    CHECK(r.dice.mean == doctest::Approx((r.per_seed[0] + r.per_seed[1]) / 2));
  }
  std::ostringstream os;
  write_ablation_csv(os, rows);
  std::istringstream lines(os.str());
  std::string line;
  std::getline(lines, line);
  CHECK(line == "variant,mean_dice,std_dice,seeds");
  std::getline(lines, line);
  CHECK(line.rfind("baseline,", 0) == 0);
  CHECK(line.substr(line.size() - 2) == ",2");

  const auto cells = sweep(suite, {1, 2}, {1, 2}, toy);
  REQUIRE(cells.size() == 4);
  CHECK(cells[0].supports == 1);
  CHECK(cells[0].k == 1);
  CHECK(cells[1].k == 2);
  CHECK(cells[2].supports == 2);
  std::ostringstream ss;
  write_sweep_csv(ss, cells);
  CHECK(ss.str().rfind("k,supports,mean_dice,std_dice,seeds\n1,1,", 0) == 0);
  // The suite's own N and k reproduce the RevProp ablation row.
  CHECK(cells[3].dice.mean == rows[3].dice.mean);
}

TEST_CASE("published table fixtures reproduce their aggregates") {
  const auto checks = load_fixtures(fs::path(REVSAM_DATA_DIR) / "paper_tables.json");
  REQUIRE(checks.size() == 3);
  for (const auto& o : run_fixtures(checks)) {
    INFO(o.name << " = " << o.value);
    CHECK(o.pass);
  }
  auto broken = checks;
  broken[0].rows[0].dsc += 10;
  CHECK_FALSE(run_fixtures(broken)[0].pass);

  TempDir d("fixtures");
  write_text(d.path / "bad.json", R"({"checks":[{"name":"x","expected":1,"tolerance":0,"rows":[],"extra":1}]})");
  CHECK_THROWS_AS(load_fixtures(d.path / "bad.json"), ConfigError);
  write_text(d.path / "empty.json", R"({"checks":[]})");
  CHECK_THROWS_AS(load_fixtures(d.path / "empty.json"), ConfigError);
}
