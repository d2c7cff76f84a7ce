#include "kdoct/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace kdoct {

namespace {

constexpr double kProbFloor = 1e-12;

template <typename T>
void check_logits_labels(const char* op, const TensorT<T>& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2)
    fail(ErrorCategory::shape,
         std::string(op) + ": logits must have rank 2, got " + shape_str(logits.shape()));
  const int64_t n = logits.dim(0), k = logits.dim(1);
  if (static_cast<int64_t>(labels.size()) != n)
    fail(ErrorCategory::shape, std::string(op) + ": got " + std::to_string(labels.size()) +
                                   " labels for batch of " + std::to_string(n));
  for (size_t i = 0; i < labels.size(); ++i)
    if (labels[i] < 0 || labels[i] >= k)
      fail(ErrorCategory::data, std::string(op) + ": label " + std::to_string(labels[i]) +
                                    " at index " + std::to_string(i) + " outside [0," +
                                    std::to_string(k) + ")");
}

// row-wise softmax in double, optionally with temperature
template <typename T>
std::vector<double> softmax_rows(const TensorT<T>& logits, double temperature) {
  const int64_t n = logits.dim(0), k = logits.dim(1);
  std::vector<double> probs(static_cast<size_t>(n * k));
  const T* x = logits.values().data();
  for (int64_t r = 0; r < n; ++r) {
    double mx = static_cast<double>(x[r * k]);
    for (int64_t j = 1; j < k; ++j) mx = std::max(mx, static_cast<double>(x[r * k + j]));
    double sum = 0.0;
    for (int64_t j = 0; j < k; ++j) {
      const double e = std::exp((static_cast<double>(x[r * k + j]) - mx) / temperature);
      probs[static_cast<size_t>(r * k + j)] = e;
      sum += e;
    }
    for (int64_t j = 0; j < k; ++j) probs[static_cast<size_t>(r * k + j)] /= sum;
  }
  return probs;
}

}  // namespace

template <typename T>
TensorT<T> cross_entropy(GraphT<T>& g, const TensorT<T>& logits, const std::vector<int>& labels) {
  check_logits_labels("cross_entropy", logits, labels);
  const int64_t n = logits.dim(0), k = logits.dim(1);
  std::vector<double> probs = softmax_rows(logits, 1.0);
  double total = 0.0;
  for (int64_t r = 0; r < n; ++r)
    total -= std::log(std::max(probs[static_cast<size_t>(r * k + labels[static_cast<size_t>(r)])],
                               kProbFloor));
  TensorT<T> out = TensorT<T>::scalar(static_cast<T>(total / static_cast<double>(n)));

  TensorT<T> x = logits, y = out;
  g.record(out, {logits}, [x, y, probs = std::move(probs), labels, n, k]() mutable {
    const T gv = y.grad()[0];
    x.ensure_grad();
    T* dx = x.grad().data();
    const T inv_n = static_cast<T>(1.0 / static_cast<double>(n));
    for (int64_t r = 0; r < n; ++r)
      for (int64_t j = 0; j < k; ++j) {
        const T p = static_cast<T>(probs[static_cast<size_t>(r * k + j)]);
        const T onehot = (j == labels[static_cast<size_t>(r)]) ? T(1) : T(0);
        dx[r * k + j] += gv * (p - onehot) * inv_n;
      }
  });
  return out;
}

template <typename T>
TensorT<T> focal_loss(GraphT<T>& g, const TensorT<T>& logits, const std::vector<int>& labels,
                      const FocalParams& params) {
  check_logits_labels("focal_loss", logits, labels);
  if (params.gamma < 0.0) fail(ErrorCategory::config, "focal_loss: gamma must be >= 0");
  const int64_t n = logits.dim(0), k = logits.dim(1);
  if (!params.alpha.empty() && static_cast<int64_t>(params.alpha.size()) != k)
    fail(ErrorCategory::config, "focal_loss: alpha must have one weight per class (" +
                                    std::to_string(k) + "), got " +
                                    std::to_string(params.alpha.size()));
  std::vector<double> probs = softmax_rows(logits, 1.0);
  const double gamma = params.gamma;
  double total = 0.0;
  for (int64_t r = 0; r < n; ++r) {
    const int t = labels[static_cast<size_t>(r)];
    const double pt = std::max(probs[static_cast<size_t>(r * k + t)], kProbFloor);
    const double at = params.alpha.empty() ? 1.0 : params.alpha[static_cast<size_t>(t)];
    total -= at * std::pow(1.0 - pt, gamma) * std::log(pt);
  }
  TensorT<T> out = TensorT<T>::scalar(static_cast<T>(total / static_cast<double>(n)));

  TensorT<T> x = logits, y = out;
  g.record(out, {logits},
           [x, y, probs = std::move(probs), labels, alpha = params.alpha, gamma, n, k]() mutable {
             const double gv = static_cast<double>(y.grad()[0]);
             x.ensure_grad();
             T* dx = x.grad().data();
             const double inv_n = 1.0 / static_cast<double>(n);
             for (int64_t r = 0; r < n; ++r) {
               const int t = labels[static_cast<size_t>(r)];
               const double pt = std::max(probs[static_cast<size_t>(r * k + t)], kProbFloor);
               const double at = alpha.empty() ? 1.0 : alpha[static_cast<size_t>(t)];
               // dL/dp_t, with (1 - p_t) clamped away from zero before the
               // gamma-1 power and the gamma term dropped entirely at gamma=0
               const double om = std::max(1.0 - pt, kProbFloor);
               const double dLdp =
                   (gamma == 0.0 ? 0.0 : at * gamma * std::pow(om, gamma - 1.0) * std::log(pt)) -
                   at * std::pow(om, gamma) / pt;
               for (int64_t j = 0; j < k; ++j) {
                 const double pj = probs[static_cast<size_t>(r * k + j)];
                 const double dpdz = pt * ((j == t ? 1.0 : 0.0) - pj);
                 dx[r * k + j] += static_cast<T>(gv * dLdp * dpdz * inv_n);
               }
             }
           });
  return out;
}

template <typename T>
TensorT<T> kd_combined_loss(GraphT<T>& g, const TensorT<T>& student_logits,
                            const TensorT<T>& teacher_logits, const std::vector<int>& labels,
                            const DistillParams& params, KdBreakdown* breakdown) {
  check_logits_labels("kd_combined_loss", student_logits, labels);
  if (teacher_logits.shape() != student_logits.shape())
    fail(ErrorCategory::shape, "kd_combined_loss: teacher logits " +
                                   shape_str(teacher_logits.shape()) + " do not match student " +
                                   shape_str(student_logits.shape()));
  if (!(params.temperature > 0.0))
    fail(ErrorCategory::config, "kd_combined_loss: temperature must be > 0");
  if (params.alpha < 0.0 || params.beta < 0.0)
    fail(ErrorCategory::config, "kd_combined_loss: alpha and beta must be >= 0");
  const int64_t n = student_logits.dim(0), k = student_logits.dim(1);
  const double temp = params.temperature;

  std::vector<double> ps1 = softmax_rows(student_logits, 1.0);   // for CE
  std::vector<double> pst = softmax_rows(student_logits, temp);  // softened student
  std::vector<double> ptt = softmax_rows(teacher_logits, temp);  // softened teacher

  double ce = 0.0, kl = 0.0;
  for (int64_t r = 0; r < n; ++r) {
    ce -= std::log(
        std::max(ps1[static_cast<size_t>(r * k + labels[static_cast<size_t>(r)])], kProbFloor));
    for (int64_t j = 0; j < k; ++j) {
      const double pt = ptt[static_cast<size_t>(r * k + j)];
      if (pt > 0.0)
        kl += pt * (std::log(pt) - std::log(std::max(pst[static_cast<size_t>(r * k + j)],
                                                     kProbFloor)));
    }
  }
  ce /= static_cast<double>(n);
  kl /= static_cast<double>(n);
  const double total = params.beta * ce + params.alpha * temp * temp * kl;
  if (breakdown) *breakdown = KdBreakdown{ce, kl, total};

  TensorT<T> out = TensorT<T>::scalar(static_cast<T>(total));

  // teacher logits are consumed as values only; they are deliberately not an
  // input of this node, so no gradient can flow back into the teacher
  TensorT<T> x = student_logits, y = out;
  g.record(out, {student_logits},
           [x, y, ps1 = std::move(ps1), pst = std::move(pst), ptt = std::move(ptt), labels,
            alpha = params.alpha, beta = params.beta, temp, n, k]() mutable {
             const double gv = static_cast<double>(y.grad()[0]);
             x.ensure_grad();
             T* dx = x.grad().data();
             const double inv_n = 1.0 / static_cast<double>(n);
             for (int64_t r = 0; r < n; ++r)
               for (int64_t j = 0; j < k; ++j) {
                 const double onehot = (j == labels[static_cast<size_t>(r)]) ? 1.0 : 0.0;
                 const double d_ce = (ps1[static_cast<size_t>(r * k + j)] - onehot) * inv_n;
                 const double d_kl = temp *
                                     (pst[static_cast<size_t>(r * k + j)] -
                                      ptt[static_cast<size_t>(r * k + j)]) *
                                     inv_n;
                 dx[r * k + j] += static_cast<T>(gv * (beta * d_ce + alpha * d_kl));
               }
           });
  return out;
}

#define KDOCT_INSTANTIATE_LOSSES(T)                                                         \
  template TensorT<T> cross_entropy<T>(GraphT<T>&, const TensorT<T>&, const std::vector<int>&); \
  template TensorT<T> focal_loss<T>(GraphT<T>&, const TensorT<T>&, const std::vector<int>&, \
                                    const FocalParams&);                                    \
  template TensorT<T> kd_combined_loss<T>(GraphT<T>&, const TensorT<T>&, const TensorT<T>&, \
                                          const std::vector<int>&, const DistillParams&,    \
                                          KdBreakdown*);

KDOCT_INSTANTIATE_LOSSES(float)
KDOCT_INSTANTIATE_LOSSES(double)

#undef KDOCT_INSTANTIATE_LOSSES

}  // namespace kdoct
