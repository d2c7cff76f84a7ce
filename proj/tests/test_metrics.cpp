#include <cstdint>
#include <vector>

#include "doctest.h"
#include "kdoct/error.hpp"
#include "kdoct/metrics.hpp"
#include "kdoct/rng.hpp"

using namespace kdoct;

namespace {

// independent oracle: expand the matrix back into (label, prediction) pairs
// and count the one-vs-rest outcomes by brute force
struct OracleClass {
  int64_t tp = 0, fn = 0, fp = 0, tn = 0;
};

std::vector<OracleClass> brute_force(const ConfusionMatrix& cm) {
  std::vector<std::pair<int, int>> pairs;
  for (int t = 0; t < cm.num_classes; ++t)
    for (int p = 0; p < cm.num_classes; ++p)
      for (int64_t i = 0; i < cm.at(t, p); ++i) pairs.emplace_back(t, p);

  std::vector<OracleClass> out(static_cast<size_t>(cm.num_classes));
  for (int c = 0; c < cm.num_classes; ++c) {
    for (const auto& [t, p] : pairs) {
      const bool is_pos = t == c, said_pos = p == c;
      if (is_pos && said_pos) ++out[static_cast<size_t>(c)].tp;
      if (is_pos && !said_pos) ++out[static_cast<size_t>(c)].fn;
      if (!is_pos && said_pos) ++out[static_cast<size_t>(c)].fp;
      if (!is_pos && !said_pos) ++out[static_cast<size_t>(c)].tn;
    }
  }
  return out;
}

}  // namespace

TEST_CASE("confusion accumulates hand-counted cells") {
  ConfusionMatrix cm = confusion({0, 1, 1}, {0, 1, 2}, 3);
  CHECK(cm.at(0, 0) == 1);
  CHECK(cm.at(1, 1) == 1);
  CHECK(cm.at(2, 1) == 1);
  CHECK(cm.total() == 3);

  ConfusionMatrix perfect = confusion({0, 1, 2, 2}, {0, 1, 2, 2}, 3);
  for (int t = 0; t < 3; ++t)
    for (int p = 0; p < 3; ++p)
      CHECK(perfect.at(t, p) == (t == p ? (t == 2 ? 2 : 1) : 0));

  ConfusionMatrix merged(3);
  merged.merge(cm);
  merged.merge(perfect);
  CHECK(merged.total() == 7);
  CHECK(merged.at(2, 2) == 2);
}

TEST_CASE("confusion rejects out-of-range entries and size mismatches") {
  CHECK_THROWS_AS(confusion({0, 3}, {0, 1}, 3), Error);
  CHECK_THROWS_AS(confusion({0, -1}, {0, 1}, 3), Error);
  CHECK_THROWS_AS(confusion({0, 1}, {0, 3}, 3), Error);
  CHECK_THROWS_AS(confusion({0, 1, 2}, {0, 1}, 3), Error);
  CHECK_THROWS_AS(confusion({}, {}, 0), Error);
  ConfusionMatrix a(2), b(3);
  CHECK_THROWS_AS(a.merge(b), Error);
}

TEST_CASE("perfect predictions score 1.0 everywhere") {
  MetricSummary m = metrics_from_confusion(confusion({0, 1, 2}, {0, 1, 2}, 3));
  CHECK(m.accuracy == 1.0);
  CHECK(m.macro_sensitivity == 1.0);
  CHECK(m.macro_specificity == 1.0);
  CHECK_FALSE(m.any_undefined());
}

TEST_CASE("a known 3-class matrix matches the brute-force oracle exactly") {
  ConfusionMatrix cm(3);
  const int64_t rows[3][3] = {{5, 1, 0}, {2, 6, 0}, {0, 1, 5}};
  for (int t = 0; t < 3; ++t)
    for (int p = 0; p < 3; ++p) cm.at(t, p) = rows[t][p];

  const MetricSummary m = metrics_from_confusion(cm);
  CHECK(m.accuracy == 16.0 / 20.0);

  const auto oracle = brute_force(cm);
  double sens = 0.0, spec = 0.0;
  for (int c = 0; c < 3; ++c) {
    const auto& o = oracle[static_cast<size_t>(c)];
    const double os = static_cast<double>(o.tp) / static_cast<double>(o.tp + o.fn);
    const double op = static_cast<double>(o.tn) / static_cast<double>(o.tn + o.fp);
    CHECK(m.per_class[static_cast<size_t>(c)].sensitivity == os);
    CHECK(m.per_class[static_cast<size_t>(c)].specificity == op);
    sens += os;
    spec += op;
  }
  CHECK(m.macro_sensitivity == sens / 3.0);
  CHECK(m.macro_specificity == spec / 3.0);
}

TEST_CASE("collapsed predictor on balanced labels") {
  // every prediction lands on class 0 over labels 0,1,2 repeated
  std::vector<int> labels, preds;
  for (int i = 0; i < 12; ++i) {
    labels.push_back(i % 3);
    preds.push_back(0);
  }
  const MetricSummary m = metrics_from_confusion(confusion(preds, labels, 3));
  CHECK(m.accuracy == 1.0 / 3.0);
  CHECK(m.per_class[0].specificity == 0.0);
  CHECK(m.per_class[1].specificity == 1.0);
  CHECK(m.per_class[2].specificity == 1.0);
  CHECK(m.per_class[0].sensitivity == 1.0);
  CHECK(m.per_class[1].sensitivity == 0.0);
  CHECK(m.macro_sensitivity == (1.0 + 0.0 + 0.0) / 3.0);
  CHECK(m.macro_specificity == (0.0 + 1.0 + 1.0) / 3.0);
}

TEST_CASE("degenerate classes drop out of the macros and are flagged") {
  // class 2 never appears in the ground truth
  MetricSummary m = metrics_from_confusion(confusion({0, 1, 2}, {0, 1, 1}, 3));
  CHECK_FALSE(m.per_class[2].sensitivity_defined);
  CHECK(m.per_class[2].specificity_defined);
  CHECK(m.any_undefined());
  // macro over classes 0 and 1 only: 1/1 and 1/2
  CHECK(m.macro_sensitivity == (1.0 + 0.5) / 2.0);

  // single-class ground truth: that class has no negatives
  MetricSummary s = metrics_from_confusion(confusion({0, 0}, {0, 0}, 1));
  CHECK(s.accuracy == 1.0);
  CHECK_FALSE(s.per_class[0].specificity_defined);
  CHECK(s.macro_specificity == 0.0);

  CHECK_THROWS_AS(metrics_from_confusion(ConfusionMatrix{}), Error);
  CHECK_THROWS_AS(metrics_from_confusion(ConfusionMatrix(3)), Error);
}

TEST_CASE("implementation agrees with the brute-force oracle on 1000 random matrices") {
  RngStream rng(202);
  for (int trial = 0; trial < 1000; ++trial) {
    const int k = 2 + static_cast<int>(rng.uniform_int(4));
    ConfusionMatrix cm(k);
    for (auto& cell : cm.counts) cell = static_cast<int64_t>(rng.uniform_int(7));
    if (cm.total() == 0) cm.at(0, static_cast<int>(rng.uniform_int(static_cast<uint64_t>(k)))) = 1;

    const MetricSummary m = metrics_from_confusion(cm);
    const auto oracle = brute_force(cm);
    const int64_t n = cm.total();

    int64_t trace = 0;
    double sens_sum = 0.0, spec_sum = 0.0;
    int sens_n = 0, spec_n = 0;
    for (int c = 0; c < k; ++c) {
      const auto& o = oracle[static_cast<size_t>(c)];
      trace += o.tp;
      CHECK(o.tp + o.fn + o.fp + o.tn == n);
      const auto& got = m.per_class[static_cast<size_t>(c)];
      CHECK(got.sensitivity_defined == (o.tp + o.fn > 0));
      CHECK(got.specificity_defined == (o.tn + o.fp > 0));
      if (o.tp + o.fn > 0) {
        const double os = static_cast<double>(o.tp) / static_cast<double>(o.tp + o.fn);
        CHECK(got.sensitivity == os);  // exact: same integer division
        sens_sum += os;
        ++sens_n;
      }
      if (o.tn + o.fp > 0) {
        const double op = static_cast<double>(o.tn) / static_cast<double>(o.tn + o.fp);
        CHECK(got.specificity == op);
        spec_sum += op;
        ++spec_n;
      }
    }
    CHECK(m.accuracy == static_cast<double>(trace) / static_cast<double>(n));
    CHECK(m.macro_sensitivity == sens_sum / sens_n);
    if (spec_n > 0) CHECK(m.macro_specificity == spec_sum / spec_n);
  }
}
