#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kdoct/image.hpp"

namespace kdoct {

struct SampleRecord {
  std::string image_path;  // relative to the manifest's root_dir unless absolute
  int label = 0;
  std::string patient_id;
};

struct DatasetManifest {
  std::vector<std::string> class_names;
  std::vector<SampleRecord> records;
  std::string root_dir;  // directory image paths resolve against; not serialized

  int num_classes() const { return static_cast<int>(class_names.size()); }
};

// format: first line "classes:<name,name,...>", then "path,label_name,patient_id"
DatasetManifest load_manifest(const std::string& path);
void save_manifest(const DatasetManifest& manifest, const std::string& path);

std::string resolve_image_path(const DatasetManifest& manifest, int64_t record_index);

struct SplitPlan {
  std::vector<std::string> train_patients, val_patients, test_patients;
  std::vector<int64_t> train_indices, val_indices, test_indices;
};

// patients (never scans) are assigned per class: shuffle by seed, then each
// goes to the split furthest below its target fraction; a fix-up pass keeps
// every split populated for every class
SplitPlan patient_stratified_split(const DatasetManifest& manifest, double test_fraction,
                                   double val_fraction_of_remainder, uint64_t seed);

// six lines, "name:comma,separated,items" in a fixed order:
// train/val/test patients, then train/val/test record indices
void save_split(const SplitPlan& split, const std::string& path);
SplitPlan load_split(const std::string& path);

struct FoldPlan {
  std::vector<std::vector<std::string>> fold_patients;
  std::vector<std::vector<int64_t>> train_indices, val_indices;

  int k() const { return static_cast<int>(fold_patients.size()); }
};

// class-stratified patient partition; fold i validates on partition i and
// trains on the rest
FoldPlan patient_kfold(const DatasetManifest& manifest, int k, uint64_t seed);

// per fold: "foldN_patients:...", "foldN_train_indices:...",
// "foldN_val_indices:..."; listing only, cross-validation recomputes plans
void save_folds(const FoldPlan& folds, const std::string& path);

// writes PGM scans of layered-band images (class 0 plain bands, class 1 small
// bright bumps, class 2 one large bright mass, optional class 3 dark cavities)
// with per-patient style and per-scan noise, plus manifest.txt
DatasetManifest synth_generate(const std::string& out_dir,
                               const std::vector<int>& per_class_counts,
                               const std::vector<int>& patients_per_class, int image_size,
                               uint64_t seed);

// permutation of [0, count) as a pure function of (seed, epoch)
std::vector<int64_t> epoch_order(int64_t count, bool shuffle, uint64_t seed, int64_t epoch);

// chunks the (optionally shuffled) subset into batches; last one may be short
std::vector<std::vector<int64_t>> make_batches(const std::vector<int64_t>& subset, int batch_size,
                                               bool shuffle, uint64_t seed, int64_t epoch);

struct LoadedSample {
  ImageBuffer image;
  int label = 0;
  std::string patient_id;
};

LoadedSample load_sample(const DatasetManifest& manifest, int64_t record_index);

}  // namespace kdoct
