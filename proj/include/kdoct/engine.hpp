#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "kdoct/augment.hpp"
#include "kdoct/config.hpp"
#include "kdoct/data.hpp"
#include "kdoct/losses.hpp"
#include "kdoct/metrics.hpp"
#include "kdoct/model.hpp"
#include "kdoct/report.hpp"

namespace kdoct {

// Everything one supervised training run needs. The teacher preset uses two
// parameter groups (head at base_lr, backbone at backbone_lr), focal loss,
// and SWA; the student preset uses one group and plain cross entropy.
struct TrainRunConfig {
  std::string model_kind = "teacher";  // teacher | student
  TeacherConfig teacher;
  StudentConfig student;
  AugmentationProfile augment;
  std::string loss_kind = "focal";  // focal | ce
  FocalParams focal;
  double base_lr = 1e-4;
  double backbone_lr = -1.0;  // > 0 puts non-head parameters in their own group
  double weight_decay = 0.05;
  double min_lr = 1e-7;
  int warmup_epochs = 10;
  int batch_size = 4;
  int accumulation_steps = 4;
  int max_epochs = 150;
  int patience = 25;
  bool swa_enabled = true;
  uint64_t seed = 42;
  std::vector<ConfigEntry> echo;  // resolved-config provenance copied into the report
};

struct DistillRunConfig {
  TrainRunConfig train;  // student topology and optimizer settings
  DistillParams distill;
  std::string teacher_checkpoint;
};

// schema-resolved key/value view -> run configs (class count comes from the
// manifest at run time)
AugmentationProfile augment_profile_from(const ResolvedConfig& cfg);
TrainRunConfig teacher_run_config(const ResolvedConfig& cfg);
DistillRunConfig student_run_config(const ResolvedConfig& cfg);

// order-sensitive fingerprint of patients and record indices
uint64_t split_hash(const SplitPlan& split);

struct EvalResult {
  ConfusionMatrix cm;
  MetricSummary metrics;
};

// eval-mode predictions over the given records. Without TTA, samples run
// through val_pipeline in batches; with TTA, each sample's five variant
// logits are averaged (one forward per variant) before the argmax.
EvalResult evaluate_split(Model& model, const DatasetManifest& manifest,
                          const std::vector<int64_t>& indices, const AugmentationProfile& profile,
                          bool tta, int batch_size = 8);

struct TrainOutcome {
  RunReport report;
  std::unique_ptr<Model> primary;
  std::string primary_checkpoint;
};

// Focal/CE training with warmup+cosine schedule, gradient accumulation,
// early stopping, and optional SWA. Emits <kind>_best.ckpt (raw best epoch),
// <kind>_swa.ckpt when averaged, and <kind>.ckpt for whichever validates
// higher. Aborts with a last-good checkpoint on a non-finite loss.
TrainOutcome train_model(const TrainRunConfig& cfg, const DatasetManifest& manifest,
                         const SplitPlan& split, const std::string& out_dir);

// Student training against a frozen teacher: per micro-batch the teacher runs
// in eval mode on the student's augmented inputs and kd_combined_loss drives
// the updates. The teacher parameter hash is asserted unchanged.
TrainOutcome distill_student(const DistillRunConfig& cfg, const DatasetManifest& manifest,
                             const SplitPlan& split, const std::string& out_dir);

// Patient-disjoint k-fold protocol: trains per fold (optionally distilling a
// student per fold when `distill` is given, in which case fold metrics score
// the student), evaluates on the held-out partition, reports per-fold rows
// plus "mean ± std" summaries.
RunReport cross_validate(const TrainRunConfig& base, const DatasetManifest& manifest, int k,
                         uint64_t seed, const std::string& out_dir, bool tta,
                         const DistillRunConfig* distill = nullptr);

// replaces the training pipeline with resize+normalize only
AugmentationProfile basic_augment_profile(const AugmentationProfile& p);

// Controlled comparison over toggles from {no_heavy_aug, no_swa, no_focal,
// no_kd}: a baseline row plus one row per toggle, all on the identical split
// (hash equality asserted). no_kd trains the student without the teacher and
// needs `distill`.
RunReport run_ablation(const TrainRunConfig& base, const std::vector<std::string>& toggles,
                       const DatasetManifest& manifest, double test_fraction,
                       double val_fraction, const std::string& out_dir,
                       const DistillRunConfig* distill = nullptr);

}  // namespace kdoct
