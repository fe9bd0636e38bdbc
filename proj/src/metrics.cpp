#include "revsam/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <iomanip>
#include <map>
#include <numeric>

namespace revsam {

double dice(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
  if (a.size() != b.size()) throw ShapeError("dice: inputs have different sizes");
  std::int64_t sa = 0, sb = 0, inter = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool x = a[i] != 0, y = b[i] != 0;
    sa += x;
    sb += y;
    inter += x && y;
  }
  if (sa + sb == 0) return 1.0;
  return 2.0 * double(inter) / double(sa + sb);
}

double avg_dice(std::span<const Mask> preds, std::span<const Mask> truths) {
  if (preds.size() != truths.size()) {
    throw std::invalid_argument("avg_dice: " + std::to_string(preds.size()) + " predictions vs " +
                                std::to_string(truths.size()) + " ground truths");
  }
  if (preds.empty()) throw std::invalid_argument("avg_dice: needs at least one pair");
  double sum = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) sum += dice(preds[i], truths[i]);
  return sum / double(preds.size());
}

namespace {

using Coord = std::array<long, 3>;

std::vector<Coord> boundary_voxels(const MaskVolume& m) {
  const auto& sh = m.shape();
  const long dims[3] = {long(sh.slices), long(sh.rows), long(sh.cols)};
  std::vector<Coord> out;
  auto fg = [&](long s, long r, long c) {
    if (s < 0 || r < 0 || c < 0 || s >= dims[0] || r >= dims[1] || c >= dims[2]) return false;
    return m.at(std::size_t(s), std::size_t(r), std::size_t(c)) != 0;
  };
  for (long s = 0; s < dims[0]; ++s) {
    for (long r = 0; r < dims[1]; ++r) {
      for (long c = 0; c < dims[2]; ++c) {
        if (!fg(s, r, c)) continue;
        bool edge = false;
        for (int axis = 0; axis < 3 && !edge; ++axis) {
          // A single-slice volume is a 2D mask: no neighbours across slices.
          if (axis == 0 && dims[0] == 1) continue;
          for (int step : {-1, 1}) {
            Coord n{s, r, c};
            n[axis] += step;
            if (!fg(n[0], n[1], n[2])) edge = true;
          }
        }
        if (edge) out.push_back({s, r, c});
      }
    }
  }
  return out;
}

// Number of points in `from` with some point of `to` within Euclidean distance tol.
std::size_t count_within(const std::vector<Coord>& from, const std::vector<Coord>& to,
                         const Shape3& sh, double tol) {
  if (to.empty()) return 0;
  std::vector<std::uint8_t> grid(sh.voxels(), 0);
  for (const auto& p : to) grid[(std::size_t(p[0]) * sh.rows + std::size_t(p[1])) * sh.cols + std::size_t(p[2])] = 1;
  const long reach = long(std::floor(tol));
  const long lim[3] = {sh.slices > 1 ? reach : 0, reach, reach};
  const double tol2 = tol * tol;
  std::size_t hits = 0;
  for (const auto& p : from) {
    bool found = false;
    for (long ds = -lim[0]; ds <= lim[0] && !found; ++ds) {
      const long s = p[0] + ds;
      if (s < 0 || s >= long(sh.slices)) continue;
      for (long dr = -lim[1]; dr <= lim[1] && !found; ++dr) {
        const long r = p[1] + dr;
        if (r < 0 || r >= long(sh.rows)) continue;
        for (long dc = -lim[2]; dc <= lim[2] && !found; ++dc) {
          const long c = p[2] + dc;
          if (c < 0 || c >= long(sh.cols)) continue;
          if (double(ds * ds + dr * dr + dc * dc) > tol2) continue;
          found = grid[(std::size_t(s) * sh.rows + std::size_t(r)) * sh.cols + std::size_t(c)] != 0;
        }
      }
    }
    hits += found;
  }
  return hits;
}

}  // namespace

double nsd(const MaskVolume& a, const MaskVolume& b, double tol) {
  if (!(a.shape() == b.shape())) {
    throw ShapeError("nsd: shapes " + to_string(a.shape()) + " and " + to_string(b.shape()) +
                     " differ");
  }
  if (!(tol >= 0)) throw std::invalid_argument("nsd: tolerance must be >= 0");
  const auto ba = boundary_voxels(a);
  const auto bb = boundary_voxels(b);
  if (ba.empty() && bb.empty()) return 1.0;
  if (ba.empty() || bb.empty()) return 0.0;
  const auto hits = count_within(ba, bb, a.shape(), tol) + count_within(bb, ba, a.shape(), tol);
  return double(hits) / double(ba.size() + bb.size());
}

double nsd(const Mask& a, const Mask& b, double tol) {
  return nsd(MaskVolume::stack({a}), MaskVolume::stack({b}), tol);
}

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto i, auto j) { return v[i] < v[j]; });
  std::vector<double> ranks(v.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = 0.5 * double(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

std::optional<double> spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("spearman: length mismatch");
  if (x.size() < 2) throw std::invalid_argument("spearman: needs at least two samples");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const Eigen::Map<const Eigen::ArrayXd> ax(rx.data(), Eigen::Index(rx.size()));
  const Eigen::Map<const Eigen::ArrayXd> ay(ry.data(), Eigen::Index(ry.size()));
  const Eigen::ArrayXd cx = ax - ax.mean();
  const Eigen::ArrayXd cy = ay - ay.mean();
  const double sxx = cx.square().sum(), syy = cy.square().sum();
  if (sxx == 0 || syy == 0) return std::nullopt;
  return std::clamp((cx * cy).sum() / std::sqrt(sxx * syy), -1.0, 1.0);
}

EvalReport aggregate(std::span<const EvalRow> rows) {
  if (rows.empty()) throw std::invalid_argument("aggregate: no rows");
  EvalReport rep;
  rep.rows.assign(rows.begin(), rows.end());

  // Groups in first-seen order.
  std::vector<std::string> order;
  std::map<std::string, std::vector<const EvalRow*>> by_group;
  for (const auto& r : rows) {
    if (!by_group.contains(r.group)) order.push_back(r.group);
    by_group[r.group].push_back(&r);
  }
  double dsc_sum = 0, nsd_sum = 0;
  std::size_t nsd_groups = 0;
  for (const auto& g : order) {
    const auto& members = by_group[g];
    GroupSummary s{g, 0, std::nullopt};
    double nsum = 0;
    std::size_t ncount = 0;
    for (const auto* r : members) {
      s.mdsc += r->dsc;
      if (r->nsd) {
        nsum += *r->nsd;
        ++ncount;
      }
    }
    s.mdsc /= double(members.size());
    if (ncount > 0) s.mnsd = nsum / double(ncount);
    dsc_sum += s.mdsc;
    if (s.mnsd) {
      nsd_sum += *s.mnsd;
      ++nsd_groups;
    }
    rep.groups.push_back(s);
  }
  rep.mdsc = dsc_sum / double(rep.groups.size());
  if (nsd_groups > 0) rep.mnsd = nsd_sum / double(nsd_groups);
  return rep;
}

void write_eval_csv(std::ostream& os, const EvalReport& report) {
  const auto flags = os.flags();
  os << std::fixed << std::setprecision(2);
  os << "class,group,dsc,nsd\n";
  for (const auto& r : report.rows) {
    os << r.class_name << ',' << r.group << ',' << r.dsc << ',';
    if (r.nsd) os << *r.nsd;
    os << '\n';
  }
  os << "mDSC,all," << report.mdsc << ",\n";
  os << "mNSD,all,,";
  if (report.mnsd) os << *report.mnsd;
  os << '\n';
  os.flags(flags);
}

}  // namespace revsam
