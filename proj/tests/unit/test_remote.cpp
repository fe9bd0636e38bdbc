#include "revsam/phantom.hpp"
#include "revsam/propagation.hpp"
#include "revsam/remote.hpp"

#include "helpers.hpp"

#include <doctest.h>

#include <functional>

using namespace revsam;

namespace {

const std::string kServe = std::string(REVSAM_CLI) + " serve";

BackboneConfig cfg4() {
  BackboneConfig c;
  c.patch = 4;
  c.temperature = 0.02;
  c.lambda_pos = 1.0;
  return c;
}

struct Case {
  SupportSet support;
  IntensityVolume query;
};

Case make() {
  PhantomSpec s;
  s.shape = Shape3{12, 16, 16};
  s.target.center = {0, 8, 4};
  s.target.radii = {1000, 3, 3};
  s.drift = {0, 0.6};
  s.decoy = Ellipsoid{{6, 4, 12}, {4, 2, 2}, 0.7, 0.02};
  s.noise_sigma = 0.03;
  s.seed = 4;
  auto [img, mask] = gen_phantom(s);
  Case c;
  c.support.images = {img.slice(0), img.slice(11)};
  c.support.masks = {mask.slice(0), mask.slice(11)};
  s.seed = 5;
  s.target.center[2] = 4.5;
  c.query = gen_phantom(s).first;
  return c;
}

void check_identical(const PipelineResult& a, const PipelineResult& b) {
  CHECK(a.prediction == b.prediction);
  CHECK(a.selected == b.selected);
  REQUIRE(a.forward.size() == b.forward.size());
  for (std::size_t i = 0; i < a.forward.size(); ++i) {
    CHECK((a.forward[i].mask == b.forward[i].mask).all());
    CHECK(a.forward[i].score == b.forward[i].score);
  }
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const BackendError& e) {
    return e.code();
  }
  FAIL("no BackendError raised");
  return ErrorCode::State;
}

}  // namespace

TEST_CASE("loopback backend is bit-identical to the in-process toy") {
  const Case c = make();
  ToyBackend direct(cfg4());
  ToyBackend served;
  RemoteBackend remote(std::make_unique<LoopbackChannel>(served));
  remote.init(cfg4());
  CHECK(remote.capabilities().at("feat_dim") == 8);
  PipelineConfig pc;
  pc.k = 3;
  pc.tau = 2;
  for (Variant v : {Variant::Baseline, Variant::ForwardFifo, Variant::RevProp}) {
    check_identical(run_variant(v, c.support, c.query, direct, pc),
                    run_variant(v, c.support, c.query, remote, pc));
  }
}

TEST_CASE("subprocess backend is bit-identical to the in-process toy") {
  const Case c = make();
  ToyBackend direct(cfg4());
  RemoteBackend remote(std::make_unique<SubprocessChannel>(kServe));
  remote.init(cfg4());
  PipelineConfig pc;
  pc.k = 4;
  pc.tau = 3;
  check_identical(run_pipeline(c.support, c.query, direct, pc),
                  run_pipeline(c.support, c.query, remote, pc));
}

TEST_CASE("server errors arrive with their codes") {
  ToyBackend served;
  RemoteBackend remote(std::make_unique<LoopbackChannel>(served));
  CHECK(code_of([&] { remote.encode_image(Image::Zero(8, 8)); }) == ErrorCode::State);
  BackboneConfig bad;
  bad.threshold = 2;
  CHECK(code_of([&] { remote.init(bad); }) == ErrorCode::State);
  remote.init(cfg4());
  const auto f = remote.encode_image(Image::Zero(8, 8));
  CHECK(code_of([&] { remote.encode_image(Image::Zero(8, 12)); }) == ErrorCode::BadShape);
  CHECK(code_of([&] { remote.attend(f, {}); }) == ErrorCode::State);
  const std::vector<MemoryId> ghost{MemoryId{3}};
  CHECK(code_of([&] { remote.attend(f, ghost); }) == ErrorCode::State);
  Mask m = Mask::Zero(8, 8);
  m(1, 1) = 5;
  CHECK(code_of([&] { remote.encode_prompt(m); }) == ErrorCode::BadShape);
  const std::vector<MemoryId> ids{
      remote.encode_memory(f, remote.encode_prompt(Mask::Ones(8, 8)), MemoryKind::Support)};
  const auto probs = remote.attend(f, ids);
  CHECK((remote.decode(probs, 8, 8) == 1).all());
  remote.reset();
  CHECK(code_of([&] { remote.attend(f, ids); }) == ErrorCode::State);
}

TEST_CASE("a child that exits is a state error") {
  for (const char* cmd : {"true", "exit 3", "head -c 3 >/dev/null"}) {
    RemoteBackend remote(std::make_unique<SubprocessChannel>(cmd));
    CHECK(code_of([&] { remote.init(cfg4()); }) == ErrorCode::State);
  }
}

TEST_CASE("a child that speaks garbage is reported") {
  RemoteBackend remote(std::make_unique<SubprocessChannel>(
      "head -c 1 >/dev/null; printf '\\002\\000\\000\\000\\001\\002\\000\\000\\000[]'"));
  CHECK_THROWS_AS(remote.init(cfg4()), BackendError);
}
