#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace speg {

/// NCHW extent. Every tensor in the library is rank 4; scalars are 1x1x1x1.
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double v) { return Tensor({1, 1, 1, 1}, v); }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> span() { return data_; }
  std::span<const double> span() const { return data_; }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::size_t index(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) *
               shape_.w +
           w;
  }
  double& at(int n, int c, int h, int w) { return data_[index(n, c, h, w)]; }
  double at(int n, int c, int h, int w) const {
    return data_[index(n, c, h, w)];
  }

  double item() const;
  void fill(double v);
  bool all_finite() const;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Row-major single-channel 2-D array of doubles (masks, probability maps).
struct Plane {
  int height = 0;
  int width = 0;
  std::vector<double> data;

  Plane() = default;
  Plane(int h, int w, double fill = 0.0)
      : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

  std::size_t size() const { return data.size(); }
  double& operator()(int r, int c) {
    return data[static_cast<std::size_t>(r) * width + c];
  }
  double operator()(int r, int c) const {
    return data[static_cast<std::size_t>(r) * width + c];
  }
  bool same_shape(const Plane& o) const {
    return height == o.height && width == o.width;
  }
};

/// 8-bit interleaved image, HWC layout.
struct ImageU8 {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<unsigned char> data;

  ImageU8() = default;
  ImageU8(int h, int w, int ch, unsigned char fill = 0)
      : height(h),
        width(w),
        channels(ch),
        data(static_cast<std::size_t>(h) * w * ch, fill) {}

  unsigned char& operator()(int r, int c, int ch) {
    return data[(static_cast<std::size_t>(r) * width + c) * channels + ch];
  }
  unsigned char operator()(int r, int c, int ch) const {
    return data[(static_cast<std::size_t>(r) * width + c) * channels + ch];
  }
};

}  // namespace speg
