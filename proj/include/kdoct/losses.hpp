#pragma once

#include <vector>

#include "kdoct/graph.hpp"
#include "kdoct/tensor.hpp"

namespace kdoct {

struct FocalParams {
  double gamma = 2.0;
  // per-class weights; empty means 1 for every class
  std::vector<double> alpha;
};

struct DistillParams {
  double temperature = 4.0;
  double alpha = 0.7;  // weight on the softened KL term
  double beta = 0.3;   // weight on the hard-label CE term
};

// double-precision view of the combined loss, logged per step
struct KdBreakdown {
  double ce = 0.0;
  double kl = 0.0;
  double total = 0.0;
};

// Mean cross entropy over the batch from raw logits [N,K] and hard labels.
template <typename T>
TensorT<T> cross_entropy(GraphT<T>& g, const TensorT<T>& logits, const std::vector<int>& labels);

// Mean focal loss: -alpha_t * (1 - p_t)^gamma * log(p_t). gamma = 0 reduces
// to weighted cross entropy.
template <typename T>
TensorT<T> focal_loss(GraphT<T>& g, const TensorT<T>& logits, const std::vector<int>& labels,
                      const FocalParams& params);

// Combined distillation objective:
//   beta * CE(student, labels) + alpha * T^2 * KL(p_teacher^T || p_student^T)
// Teacher logits contribute values only; no gradient ever reaches them.
// The breakdown (when requested) is accumulated in double so that
// total == beta * ce + alpha * T^2 * kl holds exactly.
template <typename T>
TensorT<T> kd_combined_loss(GraphT<T>& g, const TensorT<T>& student_logits,
                            const TensorT<T>& teacher_logits, const std::vector<int>& labels,
                            const DistillParams& params, KdBreakdown* breakdown = nullptr);

}  // namespace kdoct
