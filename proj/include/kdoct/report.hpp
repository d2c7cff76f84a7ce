#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "kdoct/config.hpp"
#include "kdoct/losses.hpp"
#include "kdoct/metrics.hpp"

namespace kdoct {

struct EpochEntry {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
};

struct FoldResult {
  int fold = 0;
  double accuracy = 0.0;
  double macro_sensitivity = 0.0;
  double macro_specificity = 0.0;
};

// Everything one run reports. Wall-clock is carried here but serialized only
// into a timing sidecar, keeping report.txt and report.json byte-stable
// across reruns of the same seed/config.
struct RunReport {
  std::string command;
  uint64_t seed = 0;
  uint64_t split_hash = 0;
  std::vector<ConfigEntry> config_echo;
  std::vector<EpochEntry> history;
  std::vector<KdBreakdown> kd_steps;  // distillation only, one entry per optimizer step

  bool has_final = false;
  bool tta_used = false;
  ConfusionMatrix final_confusion;
  MetricSummary final_metrics;

  std::vector<FoldResult> folds;
  std::vector<std::pair<std::string, std::string>> summary;  // e.g. {"accuracy", "92.60 ± 2.30"}
  std::vector<std::pair<std::string, std::string>> notes;    // ordered provenance key/values

  double wall_seconds = 0.0;

  void note(const std::string& key, const std::string& value) { notes.emplace_back(key, value); }
};

double population_std(const std::vector<double>& values);

// fractions in, Table-style percent string out: mean and population std to
// two decimals, e.g. "92.60 ± 2.30"
std::string format_percent_mean_std(const std::vector<double>& fractions);

std::string hex_u64(uint64_t value);

std::string report_text(const RunReport& report);
std::string report_json(const RunReport& report);

// write-to-temp-then-rename in the destination directory
void write_text_file_atomic(const std::string& path, const std::string& content);

// report.txt + report.json (deterministic) and run_timing.txt (wall clock)
void write_run_report(const RunReport& report, const std::string& out_dir);

}  // namespace kdoct
