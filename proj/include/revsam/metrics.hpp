#pragma once

#include "revsam/volume.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace revsam {

// Empty-mask convention: both empty -> 1, exactly one empty -> 0.
double dice(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b);

template <typename DA, typename DB>
double dice(const Eigen::ArrayBase<DA>& a, const Eigen::ArrayBase<DB>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError("dice: shapes " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                     " and " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()) +
                     " differ");
  }
  const auto fa = (a != 0).template cast<std::int64_t>();
  const auto fb = (b != 0).template cast<std::int64_t>();
  const std::int64_t sa = fa.sum(), sb = fb.sum();
  if (sa + sb == 0) return 1.0;
  const std::int64_t inter = (fa * fb).sum();
  return 2.0 * double(inter) / double(sa + sb);
}

template <typename Scalar>
double dice(const Volume<Scalar>& a, const Volume<Scalar>& b) {
  if (!(a.shape() == b.shape())) {
    throw ShapeError("dice: volume shapes " + to_string(a.shape()) + " and " +
                     to_string(b.shape()) + " differ");
  }
  return dice(std::span<const std::uint8_t>(a.data()), std::span<const std::uint8_t>(b.data()));
}

/// Arithmetic mean of per-slice Dice.
double avg_dice(std::span<const Mask> preds, std::span<const Mask> truths);

/// Normalized surface Dice with tolerance `tol` in voxel units. Boundary voxels are
/// foreground voxels with a background face-neighbor; outside the array counts as
/// background, except across slices of a single-slice volume (2D inputs).
double nsd(const MaskVolume& a, const MaskVolume& b, double tol);
double nsd(const Mask& a, const Mask& b, double tol);

/// Spearman rank correlation with average ranks for ties; nullopt when either
/// input is constant (undefined).
std::optional<double> spearman(std::span<const double> x, std::span<const double> y);

/// Average (1-based) ranks; tied values share the mean of their positions.
std::vector<double> average_ranks(std::span<const double> v);

struct EvalRow {
  std::string class_name;
  std::string group;
  double dsc = 0;  // percent
  std::optional<double> nsd;  // percent
};

struct GroupSummary {
  std::string group;
  double mdsc = 0;
  std::optional<double> mnsd;
};

/// Class means per group, then the mean over groups.
struct EvalReport {
  std::vector<EvalRow> rows;
  std::vector<GroupSummary> groups;
  double mdsc = 0;
  std::optional<double> mnsd;
};

EvalReport aggregate(std::span<const EvalRow> rows);

/// CSV with header class,group,dsc,nsd and footer rows mDSC / mNSD; percentages to 2 decimals.
void write_eval_csv(std::ostream& os, const EvalReport& report);

}  // namespace revsam
