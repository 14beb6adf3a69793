#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "nncomp/error.hpp"

namespace nncomp {

// Dense n-dimensional real array, row-major, 64-bit values.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<size_t> shape)
      : shape_(std::move(shape)), data_(checked_numel(shape_), 0.0) {}

  Tensor(std::vector<size_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (checked_numel(shape_) != data_.size())
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape (" + shape_string() + ")");
  }

  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_); }

  static Tensor ones_like(const Tensor& t) {
    Tensor r(t.shape_);
    std::fill(r.data_.begin(), r.data_.end(), 1.0);
    return r;
  }

  size_t ndim() const { return shape_.size(); }
  const std::vector<size_t>& shape() const { return shape_; }
  size_t dim(size_t i) const { return shape_.at(i); }
  size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](size_t i) { return data_[i]; }
  double operator[](size_t i) const { return data_[i]; }

  Tensor reshaped(std::vector<size_t> new_shape) const {
    if (checked_numel(new_shape) != data_.size())
      throw ShapeError("reshape to (" + shape_string(new_shape) +
                       ") incompatible with " + std::to_string(data_.size()) +
                       " elements");
    Tensor r = *this;
    r.shape_ = std::move(new_shape);
    return r;
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  std::string shape_string() const { return shape_string(shape_); }

  static std::string shape_string(const std::vector<size_t>& s) {
    std::string r;
    for (size_t i = 0; i < s.size(); ++i) {
      if (i) r += "x";
      r += std::to_string(s[i]);
    }
    return r;
  }

  static size_t numel_of(const std::vector<size_t>& shape) {
    size_t n = 1;
    for (size_t d : shape) n *= d;
    return shape.empty() ? 0 : n;
  }

 private:
  static size_t checked_numel(const std::vector<size_t>& shape) {
    if (shape.empty()) return 0;
    size_t n = 1;
    for (size_t d : shape) {
      if (d == 0) throw ShapeError("zero dimension in shape");
      n *= d;
    }
    return n;
  }

  std::vector<size_t> shape_;
  std::vector<double> data_;
};

// Rounds every value through 32-bit float; generators and serialization use
// this so that files round-trip bit-exactly. The barrier pins the narrowing
// conversion, which GCC's -O3 vectorizer otherwise elides in some loops.
inline double to_f32(double v) {
  float f = static_cast<float>(v);
#if defined(__GNUC__) || defined(__clang__)
  asm volatile("" : "+m"(f));
#endif
  return static_cast<double>(f);
}

inline void round_to_f32(Tensor& t) {
  for (double& v : t.values()) v = to_f32(v);
}

}  // namespace nncomp
