#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace ctdnet {

/// Dense row-major N-d array of doubles. An empty shape is a scalar with one
/// element. Extents are validated to be positive on construction.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape);
  Tensor(std::vector<int> shape, std::vector<double> values);

  static Tensor scalar(double v);
  static Tensor full(std::vector<int> shape, double v);
  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_); }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int extent(int axis) const { return shape_[static_cast<size_t>(axis)]; }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](std::int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // Unchecked multi-axis accessors for the common ranks; shape validation
  // happens at operation entry, not per element.
  double& at(int i) { return data_[static_cast<size_t>(i)]; }
  double at(int i) const { return data_[static_cast<size_t>(i)]; }
  double& at(int i, int j) { return data_[static_cast<size_t>(i) * shape_[1] + j]; }
  double at(int i, int j) const { return data_[static_cast<size_t>(i) * shape_[1] + j]; }
  double& at(int c, int h, int w) {
    return data_[(static_cast<size_t>(c) * shape_[1] + h) * shape_[2] + w];
  }
  double at(int c, int h, int w) const {
    return data_[(static_cast<size_t>(c) * shape_[1] + h) * shape_[2] + w];
  }
  double& at(int o, int c, int h, int w) {
    return data_[((static_cast<size_t>(o) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  double at(int o, int c, int h, int w) const {
    return data_[((static_cast<size_t>(o) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  bool all_finite() const;
  double item() const;

  std::string shape_str() const;  // "[3,16,16]", for diagnostics

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

std::int64_t shape_product(const std::vector<int>& shape);

}  // namespace ctdnet
