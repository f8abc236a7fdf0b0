#include "fedfusion/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace fedfusion {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

ShapeError::ShapeError(const std::string& what, Shape expected, Shape actual)
    : std::invalid_argument(what + ": expected " + shape_to_string(expected) + ", got " +
                            shape_to_string(actual)),
      expected_(std::move(expected)),
      actual_(std::move(actual)) {}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  for (std::size_t d : shape_) {
    if (d == 0) throw std::invalid_argument("tensor dimension must be positive: " + shape_to_string(shape_));
  }
  data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  for (std::size_t d : shape_) {
    if (d == 0) throw std::invalid_argument("tensor dimension must be positive: " + shape_to_string(shape_));
  }
  if (data_.size() != shape_numel(shape_)) {
    throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) +
                                " does not match shape " + shape_to_string(shape_));
  }
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size()) throw ShapeError("reshape changes element count", shape_, shape);
  return Tensor(std::move(shape), data_);
}

Tensor Tensor::slice(std::size_t index) const {
  if (rank() < 2 || index >= shape_[0]) throw std::out_of_range("tensor slice index out of range");
  Shape inner(shape_.begin() + 1, shape_.end());
  const std::size_t n = shape_numel(inner);
  std::vector<double> part(data_.begin() + static_cast<std::ptrdiff_t>(index * n),
                           data_.begin() + static_cast<std::ptrdiff_t>((index + 1) * n));
  return Tensor(std::move(inner), std::move(part));
}

void Tensor::set_slice(std::size_t index, const Tensor& value) {
  Shape inner(shape_.begin() + 1, shape_.end());
  if (value.shape() != inner) throw ShapeError("set_slice", inner, value.shape());
  if (index >= shape_[0]) throw std::out_of_range("tensor slice index out of range");
  std::copy(value.data_.begin(), value.data_.end(),
            data_.begin() + static_cast<std::ptrdiff_t>(index * value.size()));
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor stack(std::span<const Tensor> items) {
  if (items.empty()) throw std::invalid_argument("stack of zero tensors");
  Shape shape = items[0].shape();
  shape.insert(shape.begin(), items.size());
  std::vector<double> data;
  data.reserve(shape_numel(shape));
  for (const Tensor& t : items) {
    if (t.shape() != items[0].shape()) throw ShapeError("stack", items[0].shape(), t.shape());
    data.insert(data.end(), t.vec().begin(), t.vec().end());
  }
  return Tensor(std::move(shape), std::move(data));
}

Parameter::Parameter(std::string name_, Tensor value_)
    : name(std::move(name_)), value(std::move(value_)), grad(value.shape()) {}

}  // namespace fedfusion
