#include "ctdnet/tensor.hpp"

#include <sstream>
#include <stdexcept>

namespace ctdnet {

std::int64_t shape_product(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int e : shape) {
    if (e <= 0) {
      throw std::invalid_argument("tensor extent must be positive, got " + std::to_string(e));
    }
    n *= e;
  }
  return n;
}

Tensor::Tensor(std::vector<int> shape)
    : shape_(std::move(shape)), data_(static_cast<size_t>(shape_product(shape_)), 0.0) {}

Tensor::Tensor(std::vector<int> shape, std::vector<double> values) : shape_(std::move(shape)) {
  const std::int64_t n = shape_product(shape_);
  if (n != static_cast<std::int64_t>(values.size())) {
    std::ostringstream os;
    os << "tensor shape " << shape_str() << " wants " << n << " values, got " << values.size();
    throw std::invalid_argument(os.str());
  }
  data_ = std::move(values);
}

Tensor Tensor::scalar(double v) {
  Tensor t;
  t.data_.assign(1, v);
  return t;
}

Tensor Tensor::full(std::vector<int> shape, double v) {
  Tensor t(std::move(shape));
  for (auto& x : t.data_) x = v;
  return t;
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

double Tensor::item() const {
  if (data_.size() != 1) {
    throw std::logic_error("item() on tensor of size " + std::to_string(data_.size()));
  }
  return data_[0];
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape_.size(); ++i) {
    if (i) os << ",";
    os << shape_[i];
  }
  os << "]";
  return os.str();
}

}  // namespace ctdnet
