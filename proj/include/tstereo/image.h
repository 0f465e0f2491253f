#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

namespace tstereo {

// Row-major H x W grid. Used for grayscale images, disparity maps,
// confidence maps and masks alike.
template <typename T>
class Grid {
 public:
  Grid() = default;
  Grid(int width, int height, T fill = T{})
      : width_(width), height_(height),
        data_(static_cast<std::size_t>(checked(width, height)), fill) {}

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& at(int x, int y) { return data_[index(x, y)]; }
  const T& at(int x, int y) const { return data_[index(x, y)]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(x);
  }
  bool contains(int x, int y) const {
    return x >= 0 && y >= 0 && x < width_ && y < height_;
  }
  bool same_shape(const Grid& o) const {
    return width_ == o.width_ && height_ == o.height_;
  }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }

  bool operator==(const Grid&) const = default;

 private:
  static long checked(int w, int h) {
    if (w < 0 || h < 0) throw std::invalid_argument("negative grid size");
    return static_cast<long>(w) * h;
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<T> data_;
};

using Image = Grid<double>;
using Mask = Grid<unsigned char>;

inline constexpr double kInvalidDisparity =
    std::numeric_limits<double>::quiet_NaN();

inline bool is_valid(double v) { return std::isfinite(v); }

// H x W x D array of per-pixel values over the hypothesis axis. The
// hypothesis axis is innermost so a pixel's distribution is contiguous.
class Volume {
 public:
  Volume() = default;
  Volume(int width, int height, int depth, double fill = 0.0)
      : width_(width), height_(height), depth_(depth),
        data_(static_cast<std::size_t>(width) * height * depth, fill) {}

  int width() const { return width_; }
  int height() const { return height_; }
  int depth() const { return depth_; }

  std::span<double> pixel(int x, int y) {
    return {data_.data() + offset(x, y), static_cast<std::size_t>(depth_)};
  }
  std::span<const double> pixel(int x, int y) const {
    return {data_.data() + offset(x, y), static_cast<std::size_t>(depth_)};
  }
  std::span<const double> pixel(std::size_t i) const {
    return {data_.data() + i * depth_, static_cast<std::size_t>(depth_)};
  }
  std::span<double> pixel(std::size_t i) {
    return {data_.data() + i * depth_, static_cast<std::size_t>(depth_)};
  }
  double& at(int x, int y, int d) { return data_[offset(x, y) + d]; }
  double at(int x, int y, int d) const { return data_[offset(x, y) + d]; }

  std::span<const double> values() const { return data_; }

 private:
  std::size_t offset(int x, int y) const {
    return (static_cast<std::size_t>(y) * width_ + x) * depth_;
  }

  int width_ = 0;
  int height_ = 0;
  int depth_ = 0;
  std::vector<double> data_;
};

}  // namespace tstereo
