#include "kdoct/report.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "kdoct/error.hpp"

namespace kdoct {

namespace {

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

std::string degenerate_flags(const MetricSummary& m) {
  std::string out;
  for (size_t c = 0; c < m.per_class.size(); ++c) {
    if (!m.per_class[c].sensitivity_defined)
      out += "class " + std::to_string(c) + ": no ground-truth positives, sensitivity excluded; ";
    if (!m.per_class[c].specificity_defined)
      out += "class " + std::to_string(c) + ": no negatives, specificity excluded; ";
  }
  if (out.empty()) return "none";
  out.resize(out.size() - 2);
  return out;
}

}  // namespace

double population_std(const std::vector<double>& values) {
  if (values.empty()) return 0.0;
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  return std::sqrt(var / static_cast<double>(values.size()));
}

std::string format_percent_mean_std(const std::vector<double>& fractions) {
  double mean = 0.0;
  for (double v : fractions) mean += v;
  if (!fractions.empty()) mean /= static_cast<double>(fractions.size());
  const double sd = population_std(fractions);
  return fmt("%.2f", mean * 100.0) + " ± " + fmt("%.2f", sd * 100.0);
}

std::string hex_u64(uint64_t value) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "0x%016llx", static_cast<unsigned long long>(value));
  return buf;
}

std::string report_text(const RunReport& r) {
  std::string out;
  out += "run: " + r.command + "\n";
  out += "seed: " + std::to_string(r.seed) + "\n";
  if (r.split_hash != 0) out += "split hash: " + hex_u64(r.split_hash) + "\n";
  out += "\nconfiguration:\n";
  for (const ConfigEntry& e : r.config_echo)
    out += "  " + e.key + " = " + e.value + "  # " + e.source + "\n";

  if (!r.history.empty()) {
    out += "\nhistory (epoch, lr, train_loss, val_loss, val_acc):\n";
    for (const EpochEntry& e : r.history) {
      out += "  " + std::to_string(e.epoch) + "  " + fmt("%.8e", e.lr) + "  " +
             fmt("%.6f", e.train_loss) + "  " + fmt("%.6f", e.val_loss) + "  " +
             fmt("%.4f", e.val_acc) + "\n";
    }
  }
  if (!r.kd_steps.empty())
    out += "\ndistillation steps logged: " + std::to_string(r.kd_steps.size()) +
           " (ce/kl/total per step in report.json)\n";

  if (r.has_final) {
    out += "\nfinal evaluation (tta ";
    out += r.tta_used ? "on" : "off";
    out += "):\n";
    out += "  accuracy: " + fmt("%.4f", r.final_metrics.accuracy) + "\n";
    out += "  macro sensitivity: " + fmt("%.4f", r.final_metrics.macro_sensitivity) + "\n";
    out += "  macro specificity: " + fmt("%.4f", r.final_metrics.macro_specificity) + "\n";
    out += "  confusion (rows true, cols predicted):\n";
    for (int t = 0; t < r.final_confusion.num_classes; ++t) {
      out += "   ";
      for (int p = 0; p < r.final_confusion.num_classes; ++p)
        out += " " + std::to_string(r.final_confusion.at(t, p));
      out += "\n";
    }
    out += "  degenerate metric flags: " + degenerate_flags(r.final_metrics) + "\n";
  }

  if (!r.folds.empty()) {
    out += "\nfolds (accuracy, macro sensitivity, macro specificity; percent):\n";
    for (const FoldResult& f : r.folds)
      out += "  fold " + std::to_string(f.fold) + ": " + fmt("%.2f", f.accuracy * 100.0) + "  " +
             fmt("%.2f", f.macro_sensitivity * 100.0) + "  " +
             fmt("%.2f", f.macro_specificity * 100.0) + "\n";
  }
  if (!r.summary.empty()) {
    out += "\nsummary (mean ± population std, percent):\n";
    for (const auto& [k, v] : r.summary) out += "  " + k + ": " + v + "\n";
  }
  if (!r.notes.empty()) {
    out += "\nnotes:\n";
    for (const auto& [k, v] : r.notes) out += "  " + k + " = " + v + "\n";
  }
  return out;
}

std::string report_json(const RunReport& r) {
  nlohmann::ordered_json j;
  j["command"] = r.command;
  j["seed"] = r.seed;
  j["split_hash"] = hex_u64(r.split_hash);
  j["config"] = nlohmann::ordered_json::array();
  for (const ConfigEntry& e : r.config_echo)
    j["config"].push_back({{"key", e.key}, {"value", e.value}, {"source", e.source}});

  j["history"] = nlohmann::ordered_json::array();
  for (const EpochEntry& e : r.history)
    j["history"].push_back({{"epoch", e.epoch},
                            {"lr", e.lr},
                            {"train_loss", e.train_loss},
                            {"val_loss", e.val_loss},
                            {"val_acc", e.val_acc}});

  if (!r.kd_steps.empty()) {
    j["kd_steps"] = nlohmann::ordered_json::array();
    for (const KdBreakdown& b : r.kd_steps)
      j["kd_steps"].push_back({{"ce", b.ce}, {"kl", b.kl}, {"total", b.total}});
  }

  if (r.has_final) {
    nlohmann::ordered_json fin;
    fin["tta"] = r.tta_used;
    fin["accuracy"] = r.final_metrics.accuracy;
    fin["macro_sensitivity"] = r.final_metrics.macro_sensitivity;
    fin["macro_specificity"] = r.final_metrics.macro_specificity;
    fin["confusion"] = nlohmann::ordered_json::array();
    for (int t = 0; t < r.final_confusion.num_classes; ++t) {
      nlohmann::ordered_json row = nlohmann::ordered_json::array();
      for (int p = 0; p < r.final_confusion.num_classes; ++p)
        row.push_back(r.final_confusion.at(t, p));
      fin["confusion"].push_back(row);
    }
    fin["degenerate_flags"] = degenerate_flags(r.final_metrics);
    j["final"] = fin;
  }

  if (!r.folds.empty()) {
    j["folds"] = nlohmann::ordered_json::array();
    for (const FoldResult& f : r.folds)
      j["folds"].push_back({{"fold", f.fold},
                            {"accuracy", f.accuracy},
                            {"macro_sensitivity", f.macro_sensitivity},
                            {"macro_specificity", f.macro_specificity}});
  }
  if (!r.summary.empty()) {
    j["summary"] = nlohmann::ordered_json::object();
    for (const auto& [k, v] : r.summary) j["summary"][k] = v;
  }
  if (!r.notes.empty()) {
    j["notes"] = nlohmann::ordered_json::object();
    for (const auto& [k, v] : r.notes) j["notes"][k] = v;
  }
  return j.dump(2) + "\n";
}

void write_text_file_atomic(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCategory::io, "cannot write " + tmp);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) fail(ErrorCategory::io, "short write to " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ErrorCategory::io, "cannot move " + tmp + " to " + path + ": " + ec.message());
}

void write_run_report(const RunReport& report, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  write_text_file_atomic(out_dir + "/report.txt", report_text(report));
  write_text_file_atomic(out_dir + "/report.json", report_json(report));
  write_text_file_atomic(out_dir + "/run_timing.txt",
                         "wall_seconds = " + fmt("%.3f", report.wall_seconds) + "\n");
}

}  // namespace kdoct
