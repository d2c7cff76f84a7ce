#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "kdoct/tensor.hpp"

namespace kdoct {

// Reverse-mode tape. Nodes are appended in forward order, so insertion
// order is a topological order; backward walks it in exact reverse.
// One graph per forward pass; single-threaded by contract.
template <typename T>
class GraphT {
 public:
  explicit GraphT(bool recording = true) : recording_(recording) {}

  GraphT(const GraphT&) = delete;
  GraphT& operator=(const GraphT&) = delete;

  bool recording() const { return recording_; }
  size_t size() const { return nodes_.size(); }

  // Registers the output of an op. `backprop` reads output->grad and
  // accumulates into the inputs' grads. Returns the node id, or -1 when
  // nothing was recorded (not recording, or no input on a grad path).
  int record(const TensorT<T>& output, std::vector<TensorT<T>> inputs,
             std::function<void()> backprop);

  // Populates grads of every requires_grad tensor seen by this graph.
  // Repeated tensor use accumulates; leaves on no path to the loss get
  // zero-filled grads.
  void backward(const TensorT<T>& loss);

 private:
  struct Node {
    std::shared_ptr<TensorStorage<T>> output;
    std::function<void()> backprop;
  };

  bool recording_;
  std::vector<Node> nodes_;
  std::vector<std::shared_ptr<TensorStorage<T>>> leaves_;
};

using Graph = GraphT<float>;

extern template class GraphT<float>;
extern template class GraphT<double>;

// Accumulates `src` into the grad buffer of `t` (allocating it on first use).
template <typename T>
void accumulate_grad(TensorT<T>& t, std::span<const T> src);

}  // namespace kdoct
