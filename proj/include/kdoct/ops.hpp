#pragma once

#include <optional>
#include <type_traits>

#include "kdoct/graph.hpp"
#include "kdoct/rng.hpp"
#include "kdoct/tensor.hpp"

namespace kdoct {

// Differentiable primitives. Every op validates shapes, computes the forward
// result with a fixed sequential reduction order, and records an analytic
// backward closure on the graph when a gradient path exists.

template <typename T>
TensorT<T> conv2d(GraphT<T>& g, const TensorT<T>& input, const TensorT<T>& kernel,
                  const std::optional<std::type_identity_t<TensorT<T>>>& bias, int stride, int padding);

template <typename T>
TensorT<T> depthwise_conv2d(GraphT<T>& g, const TensorT<T>& input, const TensorT<T>& kernel,
                            const std::optional<std::type_identity_t<TensorT<T>>>& bias, int stride, int padding);

template <typename T>
TensorT<T> linear(GraphT<T>& g, const TensorT<T>& input, const TensorT<T>& weight,
                  const std::optional<std::type_identity_t<TensorT<T>>>& bias);

template <typename T>
TensorT<T> gelu(GraphT<T>& g, const TensorT<T>& input);

template <typename T>
TensorT<T> relu(GraphT<T>& g, const TensorT<T>& input);

template <typename T>
TensorT<T> sigmoid(GraphT<T>& g, const TensorT<T>& input);

// Normalizes over the trailing `normalized_dims` dimensions; gamma/beta
// shapes must match those dimensions exactly.
template <typename T>
TensorT<T> layer_norm(GraphT<T>& g, const TensorT<T>& input, int normalized_dims,
                      const TensorT<T>& gamma, const TensorT<T>& beta, T eps);

// ConvNeXtV2-style GRN on [N,C,H,W]: g_c = spatial L2 norm, n_c = g_c /
// (mean_c g + eps), out = gamma*(x*n) + beta + x.
template <typename T>
TensorT<T> global_response_norm(GraphT<T>& g, const TensorT<T>& input, const TensorT<T>& gamma,
                                const TensorT<T>& beta, T eps);

template <typename T>
TensorT<T> softmax_with_temperature(GraphT<T>& g, const TensorT<T>& logits, T temperature);

// [N,C,H,W] -> [N,C]
template <typename T>
TensorT<T> global_avg_pool(GraphT<T>& g, const TensorT<T>& input);

// Train mode scales survivors by 1/(1-p); eval mode is exact identity.
template <typename T>
TensorT<T> dropout(GraphT<T>& g, const TensorT<T>& input, double p, bool train, RngStream& rng);

// Drops the whole per-sample slice (dim 0) with probability p in train mode.
template <typename T>
TensorT<T> drop_path(GraphT<T>& g, const TensorT<T>& input, double p, bool train, RngStream& rng);

template <typename T>
TensorT<T> reshape(GraphT<T>& g, const TensorT<T>& input, Shape shape);

template <typename T>
TensorT<T> flatten(GraphT<T>& g, const TensorT<T>& input);  // [N,...] -> [N,rest]

template <typename T>
TensorT<T> permute(GraphT<T>& g, const TensorT<T>& input, const std::vector<int>& axes);

template <typename T>
TensorT<T> add(GraphT<T>& g, const TensorT<T>& a, const TensorT<T>& b);

template <typename T>
TensorT<T> mul(GraphT<T>& g, const TensorT<T>& a, const TensorT<T>& b);

// x[N,C,H,W] scaled per (n,c) by s[N,C]; the squeeze-excitation gate apply.
template <typename T>
TensorT<T> scale_channels(GraphT<T>& g, const TensorT<T>& x, const TensorT<T>& s);

template <typename T>
TensorT<T> add_scalar(GraphT<T>& g, const TensorT<T>& x, T c);

template <typename T>
TensorT<T> mul_scalar(GraphT<T>& g, const TensorT<T>& x, T c);

template <typename T>
TensorT<T> sum_all(GraphT<T>& g, const TensorT<T>& x);  // -> scalar

}  // namespace kdoct
