// Acceptance run: one PASS/FAIL line per numbered criterion, exit status 1 if any fail.

#include "revsam/harness.hpp"
#include "revsam/metrics.hpp"
#include "revsam/propagation.hpp"
#include "revsam/remote.hpp"
#include "revsam/suite.hpp"

#include "../unit/helpers.hpp"
#include "../unit/oracles.hpp"
#include "../unit/spy_backend.hpp"

#include <chrono>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <functional>
#include <numeric>
#include <iostream>
#include <sstream>
#include <string>

using namespace revsam;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) {
  return std::chrono::duration<double>(Clock::now() - t).count();
}

struct Verdict {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

int failures = 0;

void report(int id, const std::string& title, const std::function<void(Verdict&)>& body) {
  Verdict v;
  const auto t0 = Clock::now();
  try {
    body(v);
  } catch (const std::exception& e) {
    v.pass = false;
    v.detail << " [exception: " << e.what() << "]";
  }
  std::printf("%s %d %s:%s (%.2f s)\n", v.pass ? "PASS" : "FAIL", id, title.c_str(),
              v.detail.str().c_str(), seconds_since(t0));
  std::fflush(stdout);
  if (!v.pass) ++failures;
}

std::string fmt(double x, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, x);
  return buf;
}

std::vector<ScoredPrediction> as_scored(const std::vector<double>& s) {
  std::vector<ScoredPrediction> out;
  for (std::size_t i = 0; i < s.size(); ++i) out.push_back({i, Mask(), s[i]});
  return out;
}

}  // namespace

int main() {
  const DecoySuite suite = DecoySuite::standard();

  report(1, "published aggregates", [](Verdict& v) {
    const auto t0 = Clock::now();
    const auto outcomes = run_fixtures(load_fixtures(std::filesystem::path(REVSAM_DATA_DIR) /
                                                     "paper_tables.json"));
    const double took = seconds_since(t0);
    for (const auto& o : outcomes) {
      v.detail << ' ' << o.name << '=' << fmt(o.value);
      v.require(o.pass, o.name + " outside +/-" + fmt(o.tolerance, 3));
    }
    v.require(outcomes.size() == 3, "expected three fixtures");
    v.require(took < 1.0, "took " + fmt(took, 3) + " s");
  });

  report(2, "oracle backend is perfect on every suite phantom", [&](Verdict& v) {
    double worst_pi = 1, worst_dice = 1;
    for (std::size_t s = 0; s < suite.num_seeds; ++s) {
      const RunInputs in = suite_inputs(suite, s, suite.supports);
      auto b = open_backend(BackendSpec::parse("oracle"), suite.backbone, &in);
      for (Variant var : {Variant::RandomSelect, Variant::RevProp}) {
        PipelineConfig pc = suite.pipeline;
        pc.random_seed = s;
        const auto r = run_variant(var, in.support, in.query, *b, pc);
        worst_dice = std::min(worst_dice, dice(r.prediction, *in.truth));
        for (const auto& p : r.forward) {
          if (var == Variant::RevProp) worst_pi = std::min(worst_pi, p.score.value_or(-1));
        }
      }
    }
    v.detail << " min pi " << worst_pi << ", min final Dice " << worst_dice << " over "
             << suite.num_seeds << " phantoms";
    v.require(worst_pi == 1.0, "a score below 1");
    v.require(worst_dice == 1.0, "a Dice below 1");
  });

  report(3, "metrics agree with brute force on 200 random masks", [](Verdict& v) {
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<int> side(1, 16);
    std::uniform_real_distribution<double> u(0, 1);
    int exact = 0;
    double nsd_err = 0, rho_err = 0;
    bool undefined_ok = true;
    for (int t = 0; t < 200; ++t) {
      const int h = side(rng), w = side(rng);
      std::vector<Mask> a, b;
      for (int i = 0; i < 3; ++i) {
        a.push_back(testutil::random_mask(rng, h, w, u(rng)));
        b.push_back(testutil::random_mask(rng, h, w, u(rng)));
      }
      exact += dice(a[0], b[0]) == oracle::dice(a[0], b[0]) &&
               avg_dice(a, b) == oracle::avg_dice(a, b);
      for (double tol : {0.0, 1.0, 2.5}) {
        nsd_err = std::max(nsd_err, std::abs(nsd(a[0], b[0], tol) - oracle::nsd(a[0], b[0], tol)));
      }
      std::vector<double> x, y;
      for (int i = 0; i < h * w; ++i) {
        x.push_back(double(a[0].data()[i] + a[1].data()[i] + a[2].data()[i]));
        y.push_back(u(rng) < 0.3 ? 0.5 : u(rng));
      }
      if (x.size() < 2) continue;
      const auto got = spearman(x, y);
      const auto want = oracle::spearman(x, y);
      if (got.has_value() != want.has_value()) {
        undefined_ok = false;
      } else if (got) {
        rho_err = std::max(rho_err, std::abs(*got - *want));
      }
    }
    v.detail << " exact dice " << exact << "/200, max nsd error " << nsd_err
             << ", max spearman error " << rho_err;
    v.require(exact == 200, "dice mismatch");
    v.require(nsd_err <= 1e-9, "nsd error");
    v.require(rho_err <= 1e-9 && undefined_ok, "spearman error");
  });

  report(4, "conditional selection equals brute force", [](Verdict& v) {
    std::mt19937_64 rng(7);
    std::uniform_int_distribution<int> len(1, 64), level(0, 4);
    int agree = 0;
    for (int t = 0; t < 1000; ++t) {
      std::vector<double> s(std::size_t(len(rng)));
      for (auto& x : s) x = double(level(rng)) / 4.0;
      const std::size_t k = std::uniform_int_distribution<std::size_t>(1, s.size() + 2)(rng);
      agree += select_conditional(as_scored(s), k) == oracle::top_k(s, k);
    }
    v.detail << ' ' << agree << "/1000 vectors agree";
    v.require(agree == 1000, "disagreement");
  });

  report(5, "FIFO invariants on random traces", [](Verdict& v) {
    std::mt19937_64 rng(11);
    BackboneConfig cfg;
    cfg.patch = 4;
    ToyBackend toy(cfg);
    testutil::SpyBackend spy(toy);
    int traces = 0, bad = 0;
    for (int t = 0; t < 60; ++t) {
      const std::size_t m = t == 0 ? 64 : std::uniform_int_distribution<std::size_t>(1, 64)(rng);
      const std::size_t tau = std::uniform_int_distribution<std::size_t>(1, 12)(rng);
      const std::size_t k = std::uniform_int_distribution<std::size_t>(1, m)(rng);
      IntensityVolume q(Shape3{m, 8, 8});
      for (std::size_t j = 0; j < m; ++j) q.set_slice(j, testutil::random_image(rng, 8, 8));
      std::vector<std::size_t> idx(m);
      std::iota(idx.begin(), idx.end(), 0);
      std::shuffle(idx.begin(), idx.end(), rng);
      ConditionalSlices cond;
      cond.indices.assign(idx.begin(), idx.begin() + long(k));
      for (std::size_t i = 0; i < k; ++i) cond.masks.push_back(testutil::random_mask(rng, 8, 8, 0.4));
      spy.reset();
      const MaskVolume out = self_propagate(q, cond, spy, tau);

      bool ok = spy.attends.size() == m - k && spy.stored.size() == m;
      for (std::size_t i = 0; ok && i < k; ++i) {
        ok = (out.slice(cond.indices[i]) == cond.masks[i]).all() &&
             spy.stored[i].kind == MemoryKind::Conditional;
      }
      std::deque<MemoryId> model;
      for (std::size_t a = 0; ok && a < spy.attends.size(); ++a) {
        std::vector<MemoryId> want;
        for (std::size_t i = 0; i < k; ++i) want.push_back(spy.stored[i].id);
        want.insert(want.end(), model.begin(), model.end());
        ok = spy.attends[a] == want && model.size() <= tau &&
             spy.stored[k + a].kind == MemoryKind::Recent;
        model.push_back(spy.stored[k + a].id);
        if (model.size() > tau) model.pop_front();
      }
      ++traces;
      bad += !ok;
    }
    v.detail << ' ' << traces - bad << '/' << traces << " traces hold";
    v.require(bad == 0, "invariant broken");
  });

  // Shared by criteria 6 and 8.
  std::vector<double> revprop_n10;

  report(6, "RevProp beats RandomSelect and ForwardFifo on the pinned suite", [&](Verdict& v) {
    ToyBackend toy(suite.backbone);
    const auto t0 = Clock::now();
    revprop_n10 = suite_dice(suite, Variant::RevProp, suite.supports, suite.pipeline, toy);
    const auto rnd = suite_dice(suite, Variant::RandomSelect, suite.supports, suite.pipeline, toy);
    const auto ff = suite_dice(suite, Variant::ForwardFifo, suite.supports, suite.pipeline, toy);
    const double took = seconds_since(t0);
    const auto base = suite_dice(suite, Variant::Baseline, suite.supports, suite.pipeline, toy);
    const double rp = summarize(revprop_n10).mean, r = summarize(rnd).mean,
                 f = summarize(ff).mean, b = summarize(base).mean;
    v.detail << " revprop " << fmt(rp) << ", random_select " << fmt(r) << ", forward_fifo "
             << fmt(f) << " (baseline " << fmt(b) << "), " << fmt(took, 1) << " s for "
             << suite.num_seeds << " seeds";
    // Not a numbered criterion: the toy's forward-only baseline is reported for context.
    std::printf("INFO ablation order: baseline %s %s revprop %s\n", fmt(b).c_str(),
                b < rp ? "<" : ">=", fmt(rp).c_str());
    v.require(rp - r >= 0.02, "margin over random_select " + fmt(rp - r));
    v.require(rp - f >= 0.02, "margin over forward_fifo " + fmt(rp - f));
    v.require(took <= 120.0, "slower than 2 minutes");
  });

  report(7, "reverse score tracks forward Dice", [&](Verdict& v) {
    ToyBackend toy(suite.backbone);
    auto mean_rho = [&](std::size_t n, std::size_t& defined) {
      double sum = 0;
      defined = 0;
      for (std::size_t s = 0; s < suite.num_seeds; ++s) {
        const SuiteCase c = make_case(suite, s, n);
        const auto curve = score_curve(c.support, c.query, c.truth, toy);
        if (curve.spearman) {
          sum += *curve.spearman;
          ++defined;
        }
      }
      return defined ? sum / double(defined) : 0.0;
    };
    std::size_t d10 = 0, d1 = 0;
    const double r10 = mean_rho(10, d10), r1 = mean_rho(1, d1);
    v.detail << " mean rho N=10 " << fmt(r10) << " (" << d10 << " seeds), N=1 " << fmt(r1)
             << " (" << d1 << " seeds)";
    v.require(d10 > 0 && r10 >= 0.5, "rho at N=10 below 0.5");
    v.require(d1 > 0 && r1 < r10, "rho at N=1 not below N=10");
  });

  report(8, "more conditionals help and the k x N grid is affordable", [&](Verdict& v) {
    ToyBackend toy(suite.backbone);
    const auto t0 = Clock::now();
    const auto cells = sweep(suite, {1, 3, 7, 9}, {1, 5, 10}, toy);
    const double took = seconds_since(t0);
    double k1 = -1, k7 = -1;
    for (const auto& c : cells) {
      if (c.supports == 10 && c.k == 1) k1 = c.dice.mean;
      if (c.supports == 10 && c.k == 7) k7 = c.dice.mean;
    }
    v.detail << " N=10: k=7 " << fmt(k7) << ", k=1 " << fmt(k1) << "; grid of " << cells.size()
             << " cells in " << fmt(took, 1) << " s";
    v.require(k7 >= k1, "k=7 below k=1");
    v.require(took <= 600.0, "grid slower than 10 minutes");
    if (!revprop_n10.empty()) {
      v.require(k7 == summarize(revprop_n10).mean, "grid cell disagrees with the suite run");
    }
  });

  report(9, "bit-determinism, in-process and over a pipe", [&](Verdict& v) {
    const SuiteCase c = make_case(suite, 0, suite.supports);
    const SuiteCase again = make_case(suite, 0, suite.supports);
    v.require(c.query == again.query && c.truth == again.truth, "suite case not reproducible");

    ToyBackend a(suite.backbone), b(suite.backbone);
    const auto ra = run_pipeline(c.support, c.query, a, suite.pipeline);
    const auto rb = run_pipeline(c.support, c.query, b, suite.pipeline);
    const auto ra2 = run_pipeline(c.support, c.query, a, suite.pipeline);
    RemoteBackend remote(std::make_unique<SubprocessChannel>(std::string(REVSAM_CLI) + " serve"));
    remote.init(suite.backbone);
    const auto rr = run_pipeline(c.support, c.query, remote, suite.pipeline);

    auto same = [](const PipelineResult& x, const PipelineResult& y) {
      if (!(x.prediction == y.prediction) || x.selected != y.selected ||
          x.forward.size() != y.forward.size()) {
        return false;
      }
      for (std::size_t i = 0; i < x.forward.size(); ++i) {
        if (x.forward[i].score != y.forward[i].score || !(x.forward[i].mask == y.forward[i].mask).all()) {
          return false;
        }
      }
      return true;
    };
    v.require(same(ra, rb) && same(ra, ra2), "in-process runs differ");
    v.require(same(ra, rr), "subprocess run differs from in-process");
    v.detail << " repeated and subprocess runs identical on "
             << c.query.num_slices() << " slices, selected";
    for (auto i : ra.selected) v.detail << ' ' << i;
  });

  std::printf("%s: %d of 9 criteria failed\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
