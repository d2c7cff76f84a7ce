#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "kdoct/error.hpp"
#include "kdoct/rng.hpp"

namespace kdoct {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
struct TensorStorage {
  Shape shape;
  std::vector<T> values;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  // set when a gradient can flow through this tensor (leaf with
  // requires_grad, or output of a node on such a path)
  bool grad_path = false;
  int node = -1;  // producing node index in the owning graph; -1 for leaves
  const void* graph = nullptr;
};

// Shared-handle dense tensor. Copying a Tensor copies the handle, not the
// buffer; immutable once created except for the grad buffer.
template <typename T>
class TensorT {
 public:
  TensorT() = default;

  static TensorT zeros(Shape shape);
  static TensorT full(Shape shape, T value);
  static TensorT from(Shape shape, std::vector<T> values);
  static TensorT scalar(T value) { return from({1}, {value}); }
  // fan-in scaled uniform in [-bound, bound]
  static TensorT uniform(Shape shape, T bound, RngStream& rng);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int64_t numel() const { return static_cast<int64_t>(impl_->values.size()); }
  int64_t dim(int axis) const { return impl_->shape[static_cast<size_t>(axis)]; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }

  std::span<T> values() { return impl_->values; }
  std::span<const T> values() const { return impl_->values; }
  T item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  TensorT& set_requires_grad(bool v) {
    impl_->requires_grad = v;
    impl_->grad_path = v;
    return *this;
  }
  bool grad_path() const { return impl_->grad_path; }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<T> grad() { return impl_->grad; }
  std::span<const T> grad() const { return impl_->grad; }
  void ensure_grad();
  void zero_grad() { impl_->grad.clear(); }

  // value copy detached from any graph
  TensorT detached_copy() const { return from(impl_->shape, impl_->values); }

  std::shared_ptr<TensorStorage<T>>& storage() { return impl_; }
  const std::shared_ptr<TensorStorage<T>>& storage() const { return impl_; }
  bool same_storage(const TensorT& other) const { return impl_ == other.impl_; }

 private:
  std::shared_ptr<TensorStorage<T>> impl_;
};

using Tensor = TensorT<float>;

extern template class TensorT<float>;
extern template class TensorT<double>;

}  // namespace kdoct
