#pragma once

#include <algorithm>
#include <concepts>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "coronagan/error.hpp"

namespace coronagan {

/// NCHW extents. Single images use n == 1.
struct Shape4 {
  int n = 1;
  int c = 1;
  int h = 1;
  int w = 1;

  [[nodiscard]] std::size_t size() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  [[nodiscard]] std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  [[nodiscard]] std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
  }
  friend bool operator==(const Shape4&, const Shape4&) = default;
};

/// Dense contiguous NCHW tensor with value semantics.
template <std::floating_point T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape4 shape, T fill = T(0)) : shape_(shape), data_(shape.size(), fill) {
    if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
      throw ShapeError("negative tensor extent " + shape.str());
    }
  }
  Tensor(int n, int c, int h, int w, T fill = T(0)) : Tensor(Shape4{n, c, h, w}, fill) {}

  [[nodiscard]] const Shape4& shape() const { return shape_; }
  [[nodiscard]] int n() const { return shape_.n; }
  [[nodiscard]] int c() const { return shape_.c; }
  [[nodiscard]] int h() const { return shape_.h; }
  [[nodiscard]] int w() const { return shape_.w; }
  [[nodiscard]] std::size_t size() const { return data_.size(); }
  [[nodiscard]] bool empty() const { return data_.empty(); }

  [[nodiscard]] T* data() { return data_.data(); }
  [[nodiscard]] const T* data() const { return data_.data(); }
  [[nodiscard]] std::span<T> values() { return data_; }
  [[nodiscard]] std::span<const T> values() const { return data_; }

  [[nodiscard]] std::size_t index(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  T& operator()(int n, int c, int h, int w) { return data_[index(n, c, h, w)]; }
  const T& operator()(int n, int c, int h, int w) const { return data_[index(n, c, h, w)]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  [[nodiscard]] T* plane(int n, int c) { return data_.data() + index(n, c, 0, 0); }
  [[nodiscard]] const T* plane(int n, int c) const { return data_.data() + index(n, c, 0, 0); }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  /// Reinterprets the extents without moving data. Element counts must agree.
  void reshape(Shape4 shape) {
    if (shape.size() != data_.size()) {
      throw ShapeError("cannot reshape " + shape_.str() + " to " + shape.str());
    }
    shape_ = shape;
  }

  template <std::floating_point U>
  [[nodiscard]] Tensor<U> cast() const {
    Tensor<U> out(shape_);
    std::transform(data_.begin(), data_.end(), out.data(),
                   [](T v) { return static_cast<U>(v); });
    return out;
  }

  Tensor& operator+=(const Tensor& other) {
    require_same(other, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
  }

  void require_same(const Tensor& other, const char* what) const {
    if (!(shape_ == other.shape_)) {
      throw ShapeError(std::string(what) + ": shape mismatch " + shape_.str() + " vs " +
                       other.shape_.str());
    }
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape4 shape_{0, 0, 0, 0};
  std::vector<T> data_;
};

/// Throws ShapeError unless `actual` equals `expected`; `what` names the call site.
inline void require_shape(const Shape4& actual, const Shape4& expected, const std::string& what) {
  if (!(actual == expected)) {
    throw ShapeError(what + ": expected " + expected.str() + ", got " + actual.str());
  }
}

}  // namespace coronagan
