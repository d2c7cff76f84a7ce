#include "kdoct/optim.hpp"

#include <cmath>

#include "kdoct/error.hpp"

namespace kdoct {

template <typename T>
AdamWT<T>::AdamWT(std::vector<ParamGroupT<T>> groups, AdamWConfig cfg)
    : groups_(std::move(groups)), cfg_(cfg) {
  if (groups_.empty()) fail(ErrorCategory::train, "adamw: no parameter groups");
  m_.resize(groups_.size());
  v_.resize(groups_.size());
  for (size_t gi = 0; gi < groups_.size(); ++gi) {
    for (auto& [name, p] : groups_[gi].params) {
      (void)name;
      m_[gi].emplace_back(static_cast<size_t>(p.numel()), T(0));
      v_[gi].emplace_back(static_cast<size_t>(p.numel()), T(0));
    }
  }
}

template <typename T>
void AdamWT<T>::step(std::span<const double> group_lrs) {
  if (group_lrs.size() != groups_.size())
    fail(ErrorCategory::train, "adamw: expected " + std::to_string(groups_.size()) +
                                   " learning rates, got " + std::to_string(group_lrs.size()));
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (size_t gi = 0; gi < groups_.size(); ++gi) {
    auto& group = groups_[gi];
    const T lr = static_cast<T>(group_lrs[gi]);
    const T decay = static_cast<T>(1.0 - group_lrs[gi] * group.weight_decay);
    for (size_t pi = 0; pi < group.params.size(); ++pi) {
      auto& [name, p] = group.params[pi];
      if (!p.has_grad())
        fail(ErrorCategory::train, "adamw: missing gradient for parameter '" + name + "'");
      auto grad = p.grad();
      auto vals = p.values();
      T* mb = m_[gi][pi].data();
      T* vb = v_[gi][pi].data();
      for (size_t i = 0; i < vals.size(); ++i) {
        const T gv = grad[i];
        if (!std::isfinite(static_cast<double>(gv)))
          fail(ErrorCategory::train, "adamw: non-finite gradient in parameter '" + name +
                                         "' at element " + std::to_string(i));
        mb[i] = static_cast<T>(cfg_.beta1) * mb[i] + static_cast<T>(1.0 - cfg_.beta1) * gv;
        vb[i] = static_cast<T>(cfg_.beta2) * vb[i] + static_cast<T>(1.0 - cfg_.beta2) * gv * gv;
        const T mhat = static_cast<T>(static_cast<double>(mb[i]) / bc1);
        const T vhat = static_cast<T>(static_cast<double>(vb[i]) / bc2);
        vals[i] *= decay;
        vals[i] -= lr * mhat / (std::sqrt(vhat) + static_cast<T>(cfg_.eps));
      }
    }
  }
}

template <typename T>
void AdamWT<T>::zero_grad() {
  for (auto& group : groups_)
    for (auto& [name, p] : group.params) {
      (void)name;
      p.zero_grad();
    }
}

template class AdamWT<float>;
template class AdamWT<double>;

void validate_schedule(const LRSchedule& s) {
  if (s.warmup_epochs < 0 || s.warmup_epochs >= s.total_epochs)
    fail(ErrorCategory::config, "lr schedule: need 0 <= warmup_epochs < total_epochs, got warmup " +
                                    std::to_string(s.warmup_epochs) + ", total " +
                                    std::to_string(s.total_epochs));
  if (s.min_lr > s.base_lr || s.min_lr < 0.0 || s.base_lr <= 0.0)
    fail(ErrorCategory::config, "lr schedule: need 0 <= min_lr <= base_lr and base_lr > 0");
}

double lr_at_progress(const LRSchedule& s, double progress) {
  return s.min_lr + (s.base_lr - s.min_lr) * 0.5 * (1.0 + std::cos(M_PI * progress));
}

double lr_at(const LRSchedule& s, int epoch) {
  validate_schedule(s);
  if (epoch < 0 || epoch >= s.total_epochs)
    fail(ErrorCategory::config, "lr schedule: epoch " + std::to_string(epoch) +
                                    " outside [0," + std::to_string(s.total_epochs) + ")");
  if (epoch < s.warmup_epochs)
    return s.base_lr * static_cast<double>(epoch + 1) / static_cast<double>(s.warmup_epochs);
  const int denom = s.total_epochs - s.warmup_epochs - 1;
  // a single post-warmup epoch is both the first and last of the cycle; land on min_lr
  const double progress =
      denom <= 0 ? 1.0
                 : static_cast<double>(epoch - s.warmup_epochs) / static_cast<double>(denom);
  return lr_at_progress(s, progress);
}

template <typename T>
std::vector<double> group_lrs_at(const LRSchedule& ref, const std::vector<ParamGroupT<T>>& groups,
                                 int epoch) {
  const double lr = lr_at(ref, epoch);
  std::vector<double> out;
  out.reserve(groups.size());
  for (const auto& g : groups) out.push_back(lr * (g.base_lr / ref.base_lr));
  return out;
}

template std::vector<double> group_lrs_at<float>(const LRSchedule&,
                                                 const std::vector<ParamGroupT<float>>&, int);
template std::vector<double> group_lrs_at<double>(const LRSchedule&,
                                                  const std::vector<ParamGroupT<double>>&, int);

template <typename T>
void SwaAveragerT<T>::accumulate(const std::vector<std::pair<std::string, TensorT<T>>>& params) {
  if (n_ == 0) {
    for (const auto& [name, p] : params) {
      names_.push_back(name);
      shapes_.push_back(p.shape());
      means_.emplace_back(static_cast<size_t>(p.numel()), 0.0);
    }
  } else if (params.size() != shapes_.size()) {
    fail(ErrorCategory::train, "swa: snapshot has " + std::to_string(params.size()) +
                                   " parameters, state has " + std::to_string(shapes_.size()));
  }
  for (size_t i = 0; i < params.size(); ++i) {
    const auto& [name, p] = params[i];
    if (p.shape() != shapes_[i] || name != names_[i])
      fail(ErrorCategory::train, "swa: snapshot drift at parameter '" + name + "'");
    auto vals = p.values();
    auto& mean = means_[i];
    const double inv = 1.0 / static_cast<double>(n_ + 1);
    for (size_t j = 0; j < mean.size(); ++j)
      mean[j] += (static_cast<double>(vals[j]) - mean[j]) * inv;
  }
  ++n_;
}

template <typename T>
void SwaAveragerT<T>::apply(std::vector<std::pair<std::string, TensorT<T>>>& params) const {
  if (n_ == 0) fail(ErrorCategory::train, "swa: no snapshots accumulated");
  if (params.size() != shapes_.size())
    fail(ErrorCategory::train, "swa: parameter count mismatch on apply");
  for (size_t i = 0; i < params.size(); ++i) {
    auto& [name, p] = params[i];
    if (p.shape() != shapes_[i] || name != names_[i])
      fail(ErrorCategory::train, "swa: parameter drift at '" + name + "' on apply");
    auto vals = p.values();
    for (size_t j = 0; j < vals.size(); ++j) vals[j] = static_cast<T>(means_[i][j]);
  }
}

template class SwaAveragerT<float>;
template class SwaAveragerT<double>;

int swa_start_epoch(int total_epochs) { return (total_epochs * 3) / 4; }

bool EarlyStopState::observe(int epoch, double val_acc, double val_loss) {
  if (!std::isfinite(val_acc) || !std::isfinite(val_loss))
    fail(ErrorCategory::train, "early stopping: non-finite validation metric at epoch " +
                                   std::to_string(epoch));
  const bool improved = val_acc > best_acc || (val_acc == best_acc && val_loss < best_loss);
  if (improved) {
    best_acc = val_acc;
    best_loss = val_loss;
    best_epoch = epoch;
  }
  return improved;
}

}  // namespace kdoct
