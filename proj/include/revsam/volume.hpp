#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace revsam {

/// Row-major 2D slice of scalars. Rows are the H axis, columns the W axis.
template <typename Scalar>
using SliceArray = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Image = SliceArray<float>;
using Mask = SliceArray<std::uint8_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Shape3 {
  std::size_t slices = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t voxels() const { return slices * rows * cols; }
  std::size_t slice_voxels() const { return rows * cols; }
  bool operator==(const Shape3&) const = default;
};

std::string to_string(const Shape3& s);

/// Dense stack of 2D slices stored slice-major. Axis 0 is the propagation axis.
template <typename Scalar>
class Volume {
 public:
  using SliceMap = Eigen::Map<SliceArray<Scalar>>;
  using ConstSliceMap = Eigen::Map<const SliceArray<Scalar>>;

  Volume() = default;
  explicit Volume(Shape3 shape) : shape_(shape), data_(shape.voxels(), Scalar(0)) {}
  Volume(Shape3 shape, std::vector<Scalar> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.voxels()) {
      throw ShapeError("volume payload has " + std::to_string(data_.size()) +
                       " values, shape " + to_string(shape_) + " needs " +
                       std::to_string(shape_.voxels()));
    }
  }

  /// Builds a volume by stacking equally sized slices.
  static Volume stack(const std::vector<SliceArray<Scalar>>& slices) {
    if (slices.empty()) throw ShapeError("cannot stack zero slices");
    const auto rows = static_cast<std::size_t>(slices.front().rows());
    const auto cols = static_cast<std::size_t>(slices.front().cols());
    Volume v(Shape3{slices.size(), rows, cols});
    for (std::size_t i = 0; i < slices.size(); ++i) v.set_slice(i, slices[i]);
    return v;
  }

  const Shape3& shape() const { return shape_; }
  std::size_t num_slices() const { return shape_.slices; }
  std::size_t rows() const { return shape_.rows; }
  std::size_t cols() const { return shape_.cols; }

  std::vector<Scalar>& data() { return data_; }
  const std::vector<Scalar>& data() const { return data_; }

  Scalar& at(std::size_t s, std::size_t r, std::size_t c) {
    return data_[(s * shape_.rows + r) * shape_.cols + c];
  }
  Scalar at(std::size_t s, std::size_t r, std::size_t c) const {
    return data_[(s * shape_.rows + r) * shape_.cols + c];
  }

  SliceMap slice_view(std::size_t i) {
    check_index(i);
    return SliceMap(data_.data() + i * shape_.slice_voxels(), Eigen::Index(shape_.rows),
                    Eigen::Index(shape_.cols));
  }
  ConstSliceMap slice_view(std::size_t i) const {
    check_index(i);
    return ConstSliceMap(data_.data() + i * shape_.slice_voxels(), Eigen::Index(shape_.rows),
                         Eigen::Index(shape_.cols));
  }
  SliceArray<Scalar> slice(std::size_t i) const { return slice_view(i); }

  template <typename Derived>
  void set_slice(std::size_t i, const Eigen::ArrayBase<Derived>& s) {
    if (std::size_t(s.rows()) != shape_.rows || std::size_t(s.cols()) != shape_.cols) {
      throw ShapeError("slice " + std::to_string(s.rows()) + "x" + std::to_string(s.cols()) +
                       " does not fit volume " + to_string(shape_));
    }
    slice_view(i) = s;
  }

  bool operator==(const Volume&) const = default;

 private:
  void check_index(std::size_t i) const {
    if (i >= shape_.slices) {
      throw std::out_of_range("slice " + std::to_string(i) + " out of range for " +
                              to_string(shape_));
    }
  }

  Shape3 shape_{};
  std::vector<Scalar> data_;
};

using IntensityVolume = Volume<float>;
using MaskVolume = Volume<std::uint8_t>;

/// N labeled 2D slices that define the segmentation task.
struct SupportSet {
  std::vector<Image> images;
  std::vector<Mask> masks;

  std::size_t size() const { return images.size(); }
  /// Throws ShapeError / std::invalid_argument when the set is malformed.
  void validate() const;
};

inline std::string to_string(const Shape3& s) {
  return std::to_string(s.slices) + "x" + std::to_string(s.rows) + "x" + std::to_string(s.cols);
}

template <typename Derived>
bool is_binary(const Eigen::ArrayBase<Derived>& m) {
  return ((m == 0) || (m == 1)).all();
}

}  // namespace revsam
