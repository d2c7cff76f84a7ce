#pragma once

#include <cstdint>
#include <vector>

namespace kdoct {

// K x K integer counts; rows index the true class, columns the prediction.
struct ConfusionMatrix {
  int num_classes = 0;
  std::vector<int64_t> counts;  // row-major

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(int k)
      : num_classes(k), counts(static_cast<size_t>(k) * static_cast<size_t>(k), 0) {}

  int64_t& at(int true_class, int predicted) {
    return counts[static_cast<size_t>(true_class) * static_cast<size_t>(num_classes) +
                  static_cast<size_t>(predicted)];
  }
  int64_t at(int true_class, int predicted) const {
    return counts[static_cast<size_t>(true_class) * static_cast<size_t>(num_classes) +
                  static_cast<size_t>(predicted)];
  }
  int64_t total() const;

  // cell-wise sum; counts are order-independent, so parallel shards merge safely
  void merge(const ConfusionMatrix& other);
};

ConfusionMatrix confusion(const std::vector<int>& predictions, const std::vector<int>& labels,
                          int num_classes);

struct ClassMetrics {
  double sensitivity = 0.0;  // TP / (TP + FN)
  double specificity = 0.0;  // TN / (TN + FP)
  // a class with no ground-truth positives has no sensitivity; a class that
  // covers every sample has no specificity
  bool sensitivity_defined = false;
  bool specificity_defined = false;
};

struct MetricSummary {
  double accuracy = 0.0;
  // unweighted means over the classes whose term is defined
  double macro_sensitivity = 0.0;
  double macro_specificity = 0.0;
  std::vector<ClassMetrics> per_class;

  bool any_undefined() const;
};

MetricSummary metrics_from_confusion(const ConfusionMatrix& cm);

}  // namespace kdoct
