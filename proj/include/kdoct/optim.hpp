#pragma once

#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "kdoct/tensor.hpp"

namespace kdoct {

// Named parameters sharing one learning rate and weight decay. Every model
// parameter belongs to exactly one group.
template <typename T>
struct ParamGroupT {
  std::string name;
  std::vector<std::pair<std::string, TensorT<T>>> params;
  double base_lr = 1e-3;
  double weight_decay = 0.0;
};

using ParamGroup = ParamGroupT<float>;

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// AdamW with decoupled weight decay: param <- param * (1 - lr*wd) first,
// then the bias-corrected Adam delta is subtracted.
template <typename T>
class AdamWT {
 public:
  explicit AdamWT(std::vector<ParamGroupT<T>> groups, AdamWConfig cfg = {});

  // group_lrs carries one realized learning rate per group for this step.
  // Throws when any parameter is missing its gradient or holds a non-finite
  // gradient value.
  void step(std::span<const double> group_lrs);
  void zero_grad();

  int64_t step_count() const { return t_; }
  std::vector<ParamGroupT<T>>& groups() { return groups_; }
  const std::vector<ParamGroupT<T>>& groups() const { return groups_; }

 private:
  std::vector<ParamGroupT<T>> groups_;
  AdamWConfig cfg_;
  std::vector<std::vector<std::vector<T>>> m_, v_;  // [group][param][element]
  int64_t t_ = 0;
};

using AdamW = AdamWT<float>;

extern template class AdamWT<float>;
extern template class AdamWT<double>;

// Linear warmup followed by single-cycle cosine annealing, stepped per epoch.
struct LRSchedule {
  double base_lr = 1e-3;
  double min_lr = 0.0;
  int warmup_epochs = 0;
  int total_epochs = 1;
};

void validate_schedule(const LRSchedule& s);

// progress in [0,1] through the cosine phase:
//   lr = min_lr + (base_lr - min_lr) * 0.5 * (1 + cos(pi * progress))
double lr_at_progress(const LRSchedule& s, double progress);

// epoch < warmup: base_lr * (epoch+1) / warmup_epochs
// otherwise:      cosine phase with progress (epoch - warmup) / (total - warmup - 1)
double lr_at(const LRSchedule& s, int epoch);

// Realized per-group rates: each group scales the reference schedule by
// base_lr_group / base_lr_ref, so the cross-group ratio is constant across
// epochs by construction.
template <typename T>
std::vector<double> group_lrs_at(const LRSchedule& ref, const std::vector<ParamGroupT<T>>& groups,
                                 int epoch);

// Running average of parameter snapshots, accumulated in double so the state
// matches the arithmetic mean of all ingested snapshots to ~1e-16.
template <typename T>
class SwaAveragerT {
 public:
  void accumulate(const std::vector<std::pair<std::string, TensorT<T>>>& params);
  int count() const { return n_; }
  const std::vector<std::vector<double>>& means() const { return means_; }
  // writes the averaged values back into the given parameter tensors
  void apply(std::vector<std::pair<std::string, TensorT<T>>>& params) const;

 private:
  std::vector<std::string> names_;
  std::vector<Shape> shapes_;
  std::vector<std::vector<double>> means_;
  int n_ = 0;
};

using SwaAverager = SwaAveragerT<float>;

extern template class SwaAveragerT<float>;
extern template class SwaAveragerT<double>;

// epoch at which SWA snapshots begin: floor(0.75 * total_epochs)
int swa_start_epoch(int total_epochs);

// Tracks the best (val_acc, val_loss) pair; accuracy improvements win, exact
// accuracy ties are broken toward lower loss. Stop fires when the best epoch
// is more than `patience` epochs old.
struct EarlyStopState {
  int patience = 0;
  int best_epoch = -1;
  double best_acc = -std::numeric_limits<double>::infinity();
  double best_loss = std::numeric_limits<double>::infinity();

  // returns true when this epoch strictly improved on the best
  bool observe(int epoch, double val_acc, double val_loss);
  bool should_stop(int epoch) const { return best_epoch >= 0 && epoch - best_epoch > patience; }
};

}  // namespace kdoct
