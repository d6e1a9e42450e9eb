#include "wmnav/tensor.hpp"

#include <cmath>
#include <sstream>

#include "wmnav/error.hpp"

namespace wmnav {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    WMNAV_REQUIRE(d > 0, "tensor dimensions must be positive, got " + shape_str(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)) {
  data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
  WMNAV_REQUIRE(shape_numel(shape_) == data_.size(),
                "tensor data length " + std::to_string(data_.size()) + " does not match shape " + shape_str(shape_));
}

float Tensor::item() const {
  WMNAV_REQUIRE(data_.size() == 1, "item() on tensor of shape " + shape_str(shape_));
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  WMNAV_REQUIRE(shape_numel(shape) == data_.size(),
                "cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  return Tensor(std::move(shape), data_);
}

void Tensor::fill(float v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  for (float v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace wmnav
