#include "revsam/harness.hpp"
#include "revsam/json_util.hpp"
#include "revsam/metrics.hpp"
#include "revsam/suite.hpp"

#include <doctest.h>

using namespace revsam;

TEST_CASE("standard suite geometry") {
  const DecoySuite s = DecoySuite::standard();
  CHECK(s.base.shape == Shape3{40, 64, 64});
  CHECK(s.base.drift[0] * s.base.drift[0] + s.base.drift[1] * s.base.drift[1] == 1.0);
  CHECK(s.num_seeds == 20);
  CHECK(s.supports == 10);
  CHECK(s.pipeline.k == 7);
  CHECK(s.pipeline.tau == 7);
  REQUIRE(s.base.decoy.has_value());
  CHECK(s.base.decoy->intensity_mean == s.base.target.intensity_mean);
  CHECK(s.base.decoy->intensity_sigma == s.base.target.intensity_sigma);
  CHECK_NOTHROW(validate(s.base));
}

TEST_CASE("the shipped suite file matches the built-in suite") {
  const DecoySuite file = load_suite(std::filesystem::path(REVSAM_DATA_DIR) / "decoy_suite.json");
  CHECK(nlohmann::json(file) == nlohmann::json(DecoySuite::standard()));
}

TEST_CASE("suite json round trip and validation") {
  const DecoySuite s = DecoySuite::standard();
  const nlohmann::json j = s;
  CHECK(nlohmann::json(j.get<DecoySuite>()) == j);
  auto bad = j;
  bad["supports_per_class"] = 3;
  CHECK_THROWS_AS(bad.get<DecoySuite>(), ConfigError);
  bad = j;
  bad["support_last"] = 40;
  CHECK_THROWS_AS(bad.get<DecoySuite>(), ConfigError);
  bad = j;
  bad["support_volumes"] = 0;
  CHECK_THROWS_AS(bad.get<DecoySuite>(), ConfigError);
}

TEST_CASE("cases are deterministic and shaped as requested") {
  const DecoySuite s = DecoySuite::standard();
  const SuiteCase a = make_case(s, 3, 10);
  const SuiteCase b = make_case(s, 3, 10);
  CHECK(a.query == b.query);
  CHECK(a.truth == b.truth);
  REQUIRE(a.support.size() == 10);
  for (std::size_t i = 0; i < 10; ++i) {
    CHECK((a.support.images[i] == b.support.images[i]).all());
    CHECK((a.support.masks[i] != 0).any());
  }
  CHECK(a.query.shape() == s.base.shape);
  const SuiteCase c = make_case(s, 4, 10);
  CHECK_FALSE(c.query == a.query);
  // Fewer supports are a prefix of the same shuffled candidates.
  const SuiteCase one = make_case(s, 3, 1);
  CHECK((one.support.images[0] == a.support.images[0]).all());
  CHECK(one.query == a.query);
  CHECK_THROWS_AS(make_case(s, 0, 0), std::invalid_argument);
  CHECK_THROWS_AS(make_case(s, 0, 100000), std::invalid_argument);
}

TEST_CASE("jitter shifts target and decoy intensities together") {
  DecoySuite s = DecoySuite::standard();
  s.intensity_jitter = 0.1;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const SuiteCase c = make_case(s, seed, 1);
    CHECK(c.query_spec.target.intensity_mean == c.query_spec.decoy->intensity_mean);
    CHECK(std::abs(c.query_spec.target.intensity_mean - s.base.target.intensity_mean) <= 0.1);
  }
}

TEST_CASE("supports come from the configured slice window") {
  DecoySuite s = DecoySuite::standard();
  s.support_volumes = 1;
  s.center_jitter = 0;
  s.intensity_jitter = 0;
  s.support_first = 7;
  s.support_last = 7;
  const SuiteCase c = make_case(s, 0, 1);
  PhantomSpec spec = c.query_spec;
  // The single support volume uses the same geometry; compare masks only.
  const auto truth = gen_phantom(spec).second;
  CHECK((c.support.masks[0] == truth.slice(7)).all());
}

TEST_CASE("a decoy captures propagation from the first slice") {
  const DecoySuite s = DecoySuite::standard();
  PhantomSpec spec = s.base;
  spec.seed = s.base_seed;
  const auto [img, truth] = gen_phantom(spec);
  SupportSet own;
  own.images.push_back(img.slice(0));
  own.masks.push_back(truth.slice(0));
  ToyBackend toy(s.backbone);
  const auto fw = forward_propagate(encode_support(own, toy), img, toy);
  const std::size_t last = img.num_slices() - 1;
  const double first = dice(fw[0].mask, Mask(truth.slice(0)));
  const double end = dice(fw[last].mask, Mask(truth.slice(last)));
  CHECK(end < first - 0.3);
}

TEST_CASE("captured slices score below correct ones") {
  const DecoySuite s = DecoySuite::standard();
  const SuiteCase c = make_case(s, 0, s.supports);
  ToyBackend toy(s.backbone);
  const ScoreCurve curve = score_curve(c.support, c.query, c.truth, toy);
  double captured_max = -1, correct_min = 2;
  std::size_t captured = 0, correct = 0;
  for (std::size_t i = 0; i < curve.score.size(); ++i) {
    if (curve.dice[i] < 0.2) {
      ++captured;
      captured_max = std::max(captured_max, curve.score[i]);
    } else if (curve.dice[i] > 0.8) {
      ++correct;
      correct_min = std::min(correct_min, curve.score[i]);
    }
  }
  REQUIRE(captured > 0);
  REQUIRE(correct > 0);
  CHECK(captured_max < correct_min);
}
