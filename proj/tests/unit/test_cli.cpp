#include "revsam/rvol.hpp"

#include <doctest.h>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

// Runs the CLI with `args`, capturing stdout and stderr together.
Run cli(const std::string& args) {
  const std::string cmd = std::string(REVSAM_CLI) + " " + args + " 2>&1";
  Run r;
  FILE* p = ::popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  const int status = ::pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(slurp(p)); }

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name)
      : path(fs::temp_directory_path() / ("revsam_cli_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& s) const { return (path / s).string(); }
};

}  // namespace

TEST_CASE("gen writes the phantom files deterministically") {
  TempDir d("gen");
  REQUIRE(cli("gen --out " + d / "a").code == 0);
  REQUIRE(cli("gen --out " + d / "b").code == 0);
  for (const char* f : {"volume.rvol", "mask.rvol", "manifest.json", "spec.json", "run.json"}) {
    INFO(f);
    CHECK(fs::exists(d.path / "a" / f));
    CHECK(slurp(d.path / "a" / f) == slurp(d.path / "b" / f));
  }
  const auto vol = revsam::read_intensity_volume(d.path / "a" / "volume.rvol");
  CHECK(vol.shape() == revsam::Shape3{40, 64, 64});
  const auto manifest = read_json(d.path / "a" / "manifest.json");
  CHECK(manifest.at("classes") == nlohmann::json::array({"target"}));

  REQUIRE(cli("gen --seed 99 --out " + d / "c").code == 0);
  CHECK(slurp(d.path / "a" / "volume.rvol") != slurp(d.path / "c" / "volume.rvol"));
  CHECK(slurp(d.path / "a" / "mask.rvol") == slurp(d.path / "c" / "mask.rvol"));
}

TEST_CASE("gen rejects a spec that leaves the frame and names the slice") {
  TempDir d("genbad");
  std::ofstream(d / "spec.json") << R"({"shape":[10,32,32],
    "target":{"center":[0,16,6],"radii":[100,4,4]},"drift":[0,3]})";
  const Run r = cli("gen --config " + d / "spec.json" + " --out " + d / "o");
  CHECK(r.code == 2);
  CHECK(r.out.find("slice 8") != std::string::npos);
  std::ofstream(d / "typo.json") << R"({"target":{"center":[0,16,6],"radii":[9,4,4]},"drfit":[0,1]})";
  CHECK(cli("gen --config " + d / "typo.json" + " --out " + d / "o").code == 2);
}

TEST_CASE("segment reports, variants and oracle") {
  TempDir d("segment");
  REQUIRE(cli("gen --out " + d / "case").code == 0);
  const std::string cfg = " --config " + d / "case/run.json";

  Run r = cli("segment" + cfg + " --k 5 --out " + d / "rp");
  REQUIRE(r.code == 0);
  auto rep = read_json(d.path / "rp" / "report.json");
  CHECK(rep.at("variant") == "revprop");
  CHECK(rep.at("selected").size() == 5);
  CHECK(rep.at("slices").size() == 40);
  CHECK(rep.at("final_dice").get<double>() > 0.0);
  for (const char* f : {"prediction.rvol", "slices.csv", "eval.csv"}) CHECK(fs::exists(d.path / "rp" / f));

  // k above the slice count keeps every slice.
  REQUIRE(cli("segment" + cfg + " --k 64 --out " + d / "all").code == 0);
  CHECK(read_json(d.path / "all" / "report.json").at("selected").size() == 40);

  REQUIRE(cli("segment" + cfg + " --variant baseline --out " + d / "base").code == 0);
  rep = read_json(d.path / "base" / "report.json");
  CHECK_FALSE(rep.contains("selected"));

  REQUIRE(cli("segment" + cfg + " --backend oracle --out " + d / "oracle").code == 0);
  rep = read_json(d.path / "oracle" / "report.json");
  CHECK(rep.at("final_dice").get<double>() == 1.0);
  for (const auto& s : rep.at("slices")) CHECK(s.at("score").get<double>() == 1.0);

  REQUIRE(cli("segment" + cfg + " --k 5 --backend \"subprocess:" + std::string(REVSAM_CLI) +
              " serve\" --out " + d / "sub5")
              .code == 0);
  CHECK(slurp(d.path / "sub5" / "prediction.rvol") == slurp(d.path / "rp" / "prediction.rvol"));
}

TEST_CASE("score curve with the oracle is flat") {
  TempDir d("curve");
  REQUIRE(cli("gen --out " + d / "case").code == 0);
  const Run r = cli("score-curve --config " + d / "case/run.json" + " --backend oracle --out " +
                    d / "o");
  REQUIRE(r.code == 0);
  CHECK(r.out.find("spearman undefined") != std::string::npos);
  const std::string csv = slurp(d.path / "o" / "score_curve.csv");
  CHECK(csv.find("39,1.000000,1.000000\n") != std::string::npos);
}

TEST_CASE("exit codes") {
  TempDir d("codes");
  REQUIRE(cli("gen --out " + d / "case").code == 0);
  const std::string cfg = " --config " + d / "case/run.json";
  CHECK(cli("--help").code == 0);
  CHECK(cli("").code == 2);
  CHECK(cli("segment --bogus").code == 2);
  CHECK(cli("segment").code == 2);
  CHECK(cli("segment" + cfg + " --backend gpu").code == 2);
  CHECK(cli("segment" + cfg + " --variant magic").code == 2);
  CHECK(cli("segment" + cfg + " --k 0").code == 2);
  CHECK(cli("segment --config " + d / "missing.json").code == 2);
  CHECK(cli("segment" + cfg + " --backend subprocess:false").code == 3);
  CHECK(cli("segment" + cfg + " --backend \"subprocess:cat /dev/zero\"").code == 3);
  CHECK(cli("ablate --backend oracle").code == 2);

  std::ofstream(d / "case/extra.json") << R"({"support_manifest":"manifest.json",
    "query":"volume.rvol","speed":"fast"})";
  CHECK(cli("segment --config " + d / "case/extra.json").code == 2);

  std::ofstream(d / "case/bad.rvol") << "RVOLxx";
  std::ofstream(d / "case/badq.json") << R"({"support_manifest":"manifest.json","query":"bad.rvol"})";
  CHECK(cli("segment --config " + d / "case/badq.json").code == 2);
}

TEST_CASE("fixture command") {
  TempDir d("fixture");
  const Run ok = cli("fixture");
  CHECK(ok.code == 0);
  CHECK(ok.out.find("PASS btcv_revsam2_mdsc") != std::string::npos);

  auto j = nlohmann::json::parse(slurp(fs::path(REVSAM_DATA_DIR) / "paper_tables.json"));
  j["checks"][1]["expected"] = j["checks"][1]["expected"].get<double>() + 1.0;
  std::ofstream(d / "off.json") << j.dump();
  const Run bad = cli("fixture --data " + d / "off.json");
  CHECK(bad.code == 4);
  CHECK(bad.out.find("FAIL") != std::string::npos);
  CHECK(cli("fixture --data " + d / "none.json").code == 2);
}

TEST_CASE("suite cases export and run") {
  TempDir d("suitecase");
  REQUIRE(cli("gen --suite-seed 2 --supports 3 --out " + d / "c").code == 0);
  CHECK(fs::exists(d.path / "c" / "supports.rvol"));
  CHECK(read_json(d.path / "c" / "manifest.json").at("supports").size() == 3);
  // Running the exported files equals running the case directly.
  REQUIRE(cli("segment --config " + d / "c/run.json" + " --out " + d / "files").code == 0);
  REQUIRE(cli("segment --suite-seed 2 --supports 3 --out " + d / "direct").code == 0);
  CHECK(slurp(d.path / "files" / "prediction.rvol") ==
        slurp(d.path / "direct" / "prediction.rvol"));
  CHECK(cli("segment --suite-seed 2 --config " + d / "c/run.json").code == 2);
}
