#include "kdoct/tensor.hpp"

#include <sstream>

namespace kdoct {

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

template <typename T>
TensorT<T> TensorT<T>::zeros(Shape shape) {
  return full(std::move(shape), T(0));
}

template <typename T>
TensorT<T> TensorT<T>::full(Shape shape, T value) {
  for (int64_t d : shape)
    if (d <= 0) fail(ErrorCategory::shape, "tensor dimension must be positive, got " + shape_str(shape));
  TensorT t;
  t.impl_ = std::make_shared<TensorStorage<T>>();
  t.impl_->values.assign(static_cast<size_t>(shape_numel(shape)), value);
  t.impl_->shape = std::move(shape);
  return t;
}

template <typename T>
TensorT<T> TensorT<T>::from(Shape shape, std::vector<T> values) {
  if (shape_numel(shape) != static_cast<int64_t>(values.size()))
    fail(ErrorCategory::shape, "tensor data length " + std::to_string(values.size()) +
                                   " does not match shape " + shape_str(shape));
  for (int64_t d : shape)
    if (d <= 0) fail(ErrorCategory::shape, "tensor dimension must be positive, got " + shape_str(shape));
  TensorT t;
  t.impl_ = std::make_shared<TensorStorage<T>>();
  t.impl_->shape = std::move(shape);
  t.impl_->values = std::move(values);
  return t;
}

template <typename T>
TensorT<T> TensorT<T>::uniform(Shape shape, T bound, RngStream& rng) {
  TensorT t = zeros(std::move(shape));
  for (T& v : t.impl_->values) v = static_cast<T>(rng.uniform(-static_cast<double>(bound), static_cast<double>(bound)));
  return t;
}

template <typename T>
T TensorT<T>::item() const {
  if (numel() != 1) fail(ErrorCategory::shape, "item() requires a scalar tensor, shape is " + shape_str(shape()));
  return impl_->values[0];
}

template <typename T>
void TensorT<T>::ensure_grad() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->values.size(), T(0));
}

template class TensorT<float>;
template class TensorT<double>;

}  // namespace kdoct
