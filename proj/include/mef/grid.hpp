#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace mef {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles. Images are [C,H,W], convolution
/// kernels [C_out,C_in,k,k], scalars [1].
class Grid {
 public:
  Grid() = default;
  explicit Grid(Shape shape, double fill = 0.0);
  Grid(Shape shape, std::vector<double> data);

  static Grid scalar(double v) { return Grid({1}, v); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }

  // Accessors for rank-3 [C,H,W] grids.
  std::size_t channels() const { return shape_.at(0); }
  std::size_t height() const { return shape_.at(1); }
  std::size_t width() const { return shape_.at(2); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::vector<double>& vec() noexcept { return data_; }
  const std::vector<double>& vec() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t c, std::size_t y, std::size_t x) {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }
  double at(std::size_t c, std::size_t y, std::size_t x) const {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }

  // Pointer to row y of channel c.
  double* row(std::size_t c, std::size_t y) { return data_.data() + (c * shape_[1] + y) * shape_[2]; }
  const double* row(std::size_t c, std::size_t y) const {
    return data_.data() + (c * shape_[1] + y) * shape_[2];
  }

  // Same data under a new shape with equal element count.
  Grid reshaped(Shape shape) const;

  double item() const;  // value of a one-element grid
  double sum() const;
  double mean() const;
  double min() const;
  double max() const;
  bool all_finite() const;

  void fill(double v);

  friend bool operator==(const Grid& a, const Grid& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

// Requires a.shape() == b.shape(); throws InvalidArgument naming `what`.
void require_same_shape(const Grid& a, const Grid& b, const char* what);
void require_rank(const Grid& g, std::size_t rank, const char* what);

// Channel-axis helpers for [C,H,W] grids.
Grid concat_channels(std::span<const Grid> parts);
Grid slice_channels(const Grid& g, std::size_t begin, std::size_t count);

}  // namespace mef
