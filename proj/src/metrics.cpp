#include "kdoct/metrics.hpp"

#include <numeric>
#include <string>

#include "kdoct/error.hpp"

namespace kdoct {

int64_t ConfusionMatrix::total() const {
  return std::accumulate(counts.begin(), counts.end(), int64_t{0});
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.num_classes != num_classes)
    fail(ErrorCategory::shape, "cannot merge confusion matrices with " +
                                   std::to_string(num_classes) + " and " +
                                   std::to_string(other.num_classes) + " classes");
  for (size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
}

ConfusionMatrix confusion(const std::vector<int>& predictions, const std::vector<int>& labels,
                          int num_classes) {
  if (num_classes < 1) fail(ErrorCategory::shape, "confusion matrix needs at least one class");
  if (predictions.size() != labels.size())
    fail(ErrorCategory::shape, "confusion needs one prediction per label, got " +
                                   std::to_string(predictions.size()) + " predictions for " +
                                   std::to_string(labels.size()) + " labels");
  ConfusionMatrix cm(num_classes);
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes)
      fail(ErrorCategory::data, "label " + std::to_string(labels[i]) + " at position " +
                                    std::to_string(i) + " is outside [0, " +
                                    std::to_string(num_classes) + ")");
    if (predictions[i] < 0 || predictions[i] >= num_classes)
      fail(ErrorCategory::data, "prediction " + std::to_string(predictions[i]) + " at position " +
                                    std::to_string(i) + " is outside [0, " +
                                    std::to_string(num_classes) + ")");
    ++cm.at(labels[i], predictions[i]);
  }
  return cm;
}

bool MetricSummary::any_undefined() const {
  for (const ClassMetrics& c : per_class)
    if (!c.sensitivity_defined || !c.specificity_defined) return true;
  return false;
}

MetricSummary metrics_from_confusion(const ConfusionMatrix& cm) {
  if (cm.num_classes < 1) fail(ErrorCategory::shape, "empty confusion matrix");
  const int64_t n = cm.total();
  if (n < 1) fail(ErrorCategory::data, "confusion matrix holds no samples");

  MetricSummary out;
  int64_t trace = 0;
  for (int c = 0; c < cm.num_classes; ++c) trace += cm.at(c, c);
  out.accuracy = static_cast<double>(trace) / static_cast<double>(n);

  double sens_sum = 0.0, spec_sum = 0.0;
  int sens_count = 0, spec_count = 0;
  for (int c = 0; c < cm.num_classes; ++c) {
    int64_t tp = cm.at(c, c), row = 0, col = 0;
    for (int j = 0; j < cm.num_classes; ++j) {
      row += cm.at(c, j);
      col += cm.at(j, c);
    }
    const int64_t fn = row - tp;
    const int64_t fp = col - tp;
    const int64_t tn = n - tp - fn - fp;

    ClassMetrics m;
    if (tp + fn > 0) {
      m.sensitivity = static_cast<double>(tp) / static_cast<double>(tp + fn);
      m.sensitivity_defined = true;
      sens_sum += m.sensitivity;
      ++sens_count;
    }
    if (tn + fp > 0) {
      m.specificity = static_cast<double>(tn) / static_cast<double>(tn + fp);
      m.specificity_defined = true;
      spec_sum += m.specificity;
      ++spec_count;
    }
    out.per_class.push_back(m);
  }
  // at least one row is populated, so the sensitivity macro always has a term
  out.macro_sensitivity = sens_sum / static_cast<double>(sens_count);
  out.macro_specificity = spec_count > 0 ? spec_sum / static_cast<double>(spec_count) : 0.0;
  return out;
}

}  // namespace kdoct
