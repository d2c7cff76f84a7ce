#include "kdoct/graph.hpp"

#include <algorithm>

namespace kdoct {

template <typename T>
void accumulate_grad(TensorT<T>& t, std::span<const T> src) {
  t.ensure_grad();
  auto dst = t.grad();
  for (size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

template <typename T>
int GraphT<T>::record(const TensorT<T>& output, std::vector<TensorT<T>> inputs,
                      std::function<void()> backprop) {
  if (!recording_) return -1;
  bool any_path = false;
  for (auto& in : inputs) {
    if (!in.grad_path()) continue;
    any_path = true;
    if (in.storage()->node < 0 && in.requires_grad()) leaves_.push_back(in.storage());
  }
  if (!any_path) return -1;
  auto& st = *output.storage();
  st.grad_path = true;
  st.node = static_cast<int>(nodes_.size());
  st.graph = this;
  nodes_.push_back(Node{output.storage(), std::move(backprop)});
  return st.node;
}

template <typename T>
void GraphT<T>::backward(const TensorT<T>& loss) {
  if (!loss.defined() || loss.numel() != 1)
    fail(ErrorCategory::shape, "backward requires a scalar loss");
  auto& st = *loss.storage();
  if (st.node < 0 || st.graph != this)
    fail(ErrorCategory::internal, "backward: loss is detached from this graph");

  // zero grads exist for every requires_grad leaf the graph has seen,
  // whether or not a path reaches the loss
  for (auto& leaf : leaves_)
    if (leaf->grad.empty()) leaf->grad.assign(leaf->values.size(), T(0));

  st.grad.assign(1, T(1));
  for (size_t i = nodes_.size(); i-- > 0;) {
    auto& node = nodes_[i];
    if (node.output->grad.empty()) continue;  // no contribution to the loss
    node.backprop();
    // intermediate grads are not needed once propagated
    if (!node.output->requires_grad && static_cast<int>(i) != st.node) {
      node.output->grad.clear();
      node.output->grad.shrink_to_fit();
    }
  }
}

template class GraphT<float>;
template class GraphT<double>;

template void accumulate_grad<float>(TensorT<float>&, std::span<const float>);
template void accumulate_grad<double>(TensorT<double>&, std::span<const double>);

}  // namespace kdoct
