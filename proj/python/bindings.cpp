// Python surface over the training library: dataset synthesis, splits,
// schedule math, metrics, loss values, and the config-driven run entry
// points. Heavy runs release the GIL.
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "kdoct/checkpoint.hpp"
#include "kdoct/config.hpp"
#include "kdoct/data.hpp"
#include "kdoct/engine.hpp"
#include "kdoct/error.hpp"
#include "kdoct/graph.hpp"
#include "kdoct/losses.hpp"
#include "kdoct/metrics.hpp"
#include "kdoct/model.hpp"
#include "kdoct/optim.hpp"
#include "kdoct/report.hpp"
#include "kdoct/tensor.hpp"

namespace py = pybind11;
using namespace kdoct;

namespace {

using DT = TensorT<double>;
using DG = GraphT<double>;

DT logits_tensor(const std::vector<std::vector<double>>& rows, const char* what) {
  if (rows.empty()) fail(ErrorCategory::shape, std::string(what) + " needs at least one row");
  const int64_t n = static_cast<int64_t>(rows.size());
  const int64_t k = static_cast<int64_t>(rows[0].size());
  if (k < 1) fail(ErrorCategory::shape, std::string(what) + " needs at least one class column");
  std::vector<double> flat;
  flat.reserve(static_cast<size_t>(n * k));
  for (const auto& row : rows) {
    if (static_cast<int64_t>(row.size()) != k)
      fail(ErrorCategory::shape, std::string(what) + " rows must share one length");
    flat.insert(flat.end(), row.begin(), row.end());
  }
  return DT::from({n, k}, std::move(flat));
}

std::string note_of(const RunReport& report, const std::string& key) {
  for (const auto& [k, v] : report.notes)
    if (k == key) return v;
  return "";
}

py::dict metrics_dict(const MetricSummary& ms) {
  py::dict d;
  d["accuracy"] = ms.accuracy;
  d["macro_sensitivity"] = ms.macro_sensitivity;
  d["macro_specificity"] = ms.macro_specificity;
  py::list per_class;
  for (const ClassMetrics& c : ms.per_class) {
    py::dict e;
    e["sensitivity"] = c.sensitivity;
    e["specificity"] = c.specificity;
    e["sensitivity_defined"] = c.sensitivity_defined;
    e["specificity_defined"] = c.specificity_defined;
    per_class.append(e);
  }
  d["per_class"] = per_class;
  return d;
}

py::list confusion_rows(const ConfusionMatrix& cm) {
  py::list rows;
  for (int t = 0; t < cm.num_classes; ++t) {
    py::list row;
    for (int p = 0; p < cm.num_classes; ++p) row.append(cm.at(t, p));
    rows.append(row);
  }
  return rows;
}

py::dict outcome_dict(const TrainOutcome& out) {
  const RunReport& r = out.report;
  py::dict d;
  d["epochs"] = r.history.size();
  d["primary_checkpoint"] = out.primary_checkpoint;
  d["split_hash"] = hex_u64(r.split_hash);
  const std::string primary = note_of(r, "primary");
  const std::string acc =
      note_of(r, primary == "swa" ? "swa_val_acc" : "raw_val_acc");
  if (!acc.empty()) d["val_accuracy"] = std::stod(acc);
  if (r.has_final) {
    d["test_metrics"] = metrics_dict(r.final_metrics);
    d["test_confusion"] = confusion_rows(r.final_confusion);
  }
  py::dict notes;
  for (const auto& [k, v] : r.notes) notes[py::str(k)] = v;
  d["notes"] = notes;
  return d;
}

SplitPlan obtain_split(const ResolvedConfig& rc, const DatasetManifest& manifest) {
  const std::string path = rc.get_string("data.split");
  if (!path.empty()) return load_split(path);
  return patient_stratified_split(manifest, rc.get_double("data.test_fraction"),
                                  rc.get_double("data.val_fraction"),
                                  static_cast<uint64_t>(rc.get_int("run.seed")));
}

void write_run_inputs(const ResolvedConfig& rc, const SplitPlan& split,
                      const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  write_text_file_atomic(out_dir + "/resolved.cfg", rc.echo_text());
  save_split(split, out_dir + "/split.txt");
}

py::dict py_synth_data(const std::string& out_dir, const std::vector<int>& per_class,
                       const std::vector<int>& patients_per_class, int image_size,
                       uint64_t seed) {
  DatasetManifest m;
  {
    py::gil_scoped_release release;
    m = synth_generate(out_dir, per_class, patients_per_class, image_size, seed);
  }
  std::set<std::string> patients;
  for (const SampleRecord& r : m.records) patients.insert(r.patient_id);
  py::dict d;
  d["manifest"] = out_dir + "/manifest.txt";
  d["classes"] = m.class_names;
  d["scans"] = m.records.size();
  d["patients"] = patients.size();
  return d;
}

py::dict py_manifest_summary(const std::string& path) {
  const DatasetManifest m = load_manifest(path);
  std::set<std::string> patients;
  std::vector<size_t> per_class(m.class_names.size(), 0);
  for (const SampleRecord& r : m.records) {
    patients.insert(r.patient_id);
    ++per_class[static_cast<size_t>(r.label)];
  }
  py::dict d;
  d["classes"] = m.class_names;
  d["scans"] = m.records.size();
  d["patients"] = patients.size();
  d["scans_per_class"] = per_class;
  return d;
}

py::dict py_make_split(const std::string& manifest_path, double test_fraction,
                       double val_fraction, uint64_t seed, const std::string& out) {
  const DatasetManifest m = load_manifest(manifest_path);
  const SplitPlan s = patient_stratified_split(m, test_fraction, val_fraction, seed);
  if (!out.empty()) save_split(s, out);
  py::dict d;
  d["train_patients"] = s.train_patients;
  d["val_patients"] = s.val_patients;
  d["test_patients"] = s.test_patients;
  d["train_scans"] = s.train_indices.size();
  d["val_scans"] = s.val_indices.size();
  d["test_scans"] = s.test_indices.size();
  d["split_hash"] = hex_u64(split_hash(s));
  return d;
}

py::list py_make_folds(const std::string& manifest_path, int k, uint64_t seed,
                       const std::string& out) {
  const DatasetManifest m = load_manifest(manifest_path);
  const FoldPlan folds = patient_kfold(m, k, seed);
  if (!out.empty()) save_folds(folds, out);
  py::list rows;
  for (int i = 0; i < folds.k(); ++i) {
    const auto f = static_cast<size_t>(i);
    py::dict d;
    d["fold"] = i;
    d["patients"] = folds.fold_patients[f];
    d["train_scans"] = folds.train_indices[f].size();
    d["val_scans"] = folds.val_indices[f].size();
    rows.append(d);
  }
  return rows;
}

double py_lr_at(double base_lr, double min_lr, int warmup_epochs, int total_epochs, int epoch) {
  return lr_at(LRSchedule{base_lr, min_lr, warmup_epochs, total_epochs}, epoch);
}

std::vector<double> py_lr_curve(double base_lr, double min_lr, int warmup_epochs,
                                int total_epochs) {
  const LRSchedule s{base_lr, min_lr, warmup_epochs, total_epochs};
  std::vector<double> out(static_cast<size_t>(total_epochs));
  for (int e = 0; e < total_epochs; ++e) out[static_cast<size_t>(e)] = lr_at(s, e);
  return out;
}

py::dict py_classification_metrics(const std::vector<int>& predictions,
                                   const std::vector<int>& labels, int num_classes) {
  const ConfusionMatrix cm = confusion(predictions, labels, num_classes);
  py::dict d = metrics_dict(metrics_from_confusion(cm));
  d["confusion"] = confusion_rows(cm);
  return d;
}

double py_cross_entropy(const std::vector<std::vector<double>>& logits,
                        const std::vector<int>& labels) {
  DG g(false);
  return cross_entropy(g, logits_tensor(logits, "logits"), labels).item();
}

double py_focal_loss(const std::vector<std::vector<double>>& logits,
                     const std::vector<int>& labels, double gamma,
                     const std::vector<double>& alpha) {
  DG g(false);
  FocalParams params;
  params.gamma = gamma;
  params.alpha = alpha;
  return focal_loss(g, logits_tensor(logits, "logits"), labels, params).item();
}

py::dict py_kd_breakdown(const std::vector<std::vector<double>>& student_logits,
                         const std::vector<std::vector<double>>& teacher_logits,
                         const std::vector<int>& labels, double temperature, double alpha,
                         double beta) {
  DG g(false);
  KdBreakdown b;
  kd_combined_loss(g, logits_tensor(student_logits, "student logits"),
                   logits_tensor(teacher_logits, "teacher logits"), labels,
                   DistillParams{temperature, alpha, beta}, &b);
  py::dict d;
  d["ce"] = b.ce;
  d["kl"] = b.kl;
  d["total"] = b.total;
  return d;
}

py::dict py_train_teacher(const std::string& config, const std::string& out_dir,
                          const std::vector<std::string>& overrides) {
  const ResolvedConfig rc = resolve_config(teacher_train_schema(), config, overrides);
  const TrainRunConfig cfg = teacher_run_config(rc);
  const DatasetManifest m = load_manifest(rc.get_string("data.manifest"));
  const SplitPlan split = obtain_split(rc, m);
  write_run_inputs(rc, split, out_dir);
  TrainOutcome out;
  {
    py::gil_scoped_release release;
    out = train_model(cfg, m, split, out_dir);
  }
  return outcome_dict(out);
}

py::dict py_distill_student(const std::string& config, const std::string& out_dir,
                            const std::vector<std::string>& overrides) {
  const ResolvedConfig rc = resolve_config(student_distill_schema(), config, overrides);
  const DistillRunConfig cfg = student_run_config(rc);
  const DatasetManifest m = load_manifest(rc.get_string("data.manifest"));
  const SplitPlan split = obtain_split(rc, m);
  write_run_inputs(rc, split, out_dir);
  TrainOutcome out;
  {
    py::gil_scoped_release release;
    out = distill_student(cfg, m, split, out_dir);
  }
  return outcome_dict(out);
}

py::dict py_evaluate_checkpoint(const std::string& manifest_path, const std::string& checkpoint,
                                bool tta, int crop_size, int batch_size) {
  const DatasetManifest m = load_manifest(manifest_path);
  std::unique_ptr<Model> model = load_checkpoint(checkpoint);
  model->mode = Mode::eval;
  std::vector<int64_t> indices(m.records.size());
  for (size_t i = 0; i < indices.size(); ++i) indices[i] = static_cast<int64_t>(i);
  AugmentationProfile profile;
  profile.crop_size = crop_size;
  profile.resize_large = std::max(profile.resize_large, crop_size);
  EvalResult ev;
  {
    py::gil_scoped_release release;
    ev = evaluate_split(*model, m, indices, profile, tta, batch_size);
  }
  py::dict d = metrics_dict(ev.metrics);
  d["confusion"] = confusion_rows(ev.cm);
  d["samples"] = indices.size();
  d["model_kind"] = model->kind;
  d["model_hash"] = hex_u64(parameter_hash(*model));
  return d;
}

}  // namespace

PYBIND11_MODULE(_kdoct, m) {
  m.doc() = "teacher-student distillation trainer for compact retinal-scan classifiers";

  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      const std::string msg = std::string(category_name(e.category())) + ": " + e.what();
      PyErr_SetString(PyExc_ValueError, msg.c_str());
    }
  });

  m.def("synth_data", &py_synth_data, py::arg("out_dir"), py::arg("per_class"),
        py::arg("patients_per_class"), py::arg("image_size") = 32, py::arg("seed") = 42,
        "Generate a synthetic layered-scan dataset and its manifest.");
  m.def("manifest_summary", &py_manifest_summary, py::arg("manifest"),
        "Class names and per-class scan counts for a manifest file.");
  m.def("make_split", &py_make_split, py::arg("manifest"), py::arg("test_fraction") = 0.2,
        py::arg("val_fraction") = 0.2, py::arg("seed") = 42, py::arg("out") = "",
        "Patient-disjoint stratified train/val/test split; writes `out` when given.");
  m.def("make_folds", &py_make_folds, py::arg("manifest"), py::arg("k") = 5,
        py::arg("seed") = 42, py::arg("out") = "",
        "Patient-disjoint k-fold partition; writes `out` when given.");
  m.def("lr_at", &py_lr_at, py::arg("base_lr"), py::arg("min_lr"), py::arg("warmup_epochs"),
        py::arg("total_epochs"), py::arg("epoch"),
        "Warmup+cosine learning rate at one epoch.");
  m.def("lr_curve", &py_lr_curve, py::arg("base_lr"), py::arg("min_lr"),
        py::arg("warmup_epochs"), py::arg("total_epochs"),
        "Per-epoch learning rates for a full schedule.");
  m.def("classification_metrics", &py_classification_metrics, py::arg("predictions"),
        py::arg("labels"), py::arg("num_classes"),
        "Accuracy, per-class sensitivity/specificity, macros, and the confusion matrix.");
  m.def("cross_entropy", &py_cross_entropy, py::arg("logits"), py::arg("labels"),
        "Mean cross entropy of logit rows against hard labels.");
  m.def("focal_loss", &py_focal_loss, py::arg("logits"), py::arg("labels"),
        py::arg("gamma") = 2.0, py::arg("alpha") = std::vector<double>{},
        "Mean focal loss; empty alpha weights every class at 1.");
  m.def("kd_breakdown", &py_kd_breakdown, py::arg("student_logits"), py::arg("teacher_logits"),
        py::arg("labels"), py::arg("temperature") = 4.0, py::arg("alpha") = 0.7,
        py::arg("beta") = 0.3,
        "Hard-label CE, softened KL, and the combined distillation total.");
  m.def("train_teacher", &py_train_teacher, py::arg("config"), py::arg("out_dir"),
        py::arg("overrides") = std::vector<std::string>{},
        "Train the teacher from a config file plus key=value overrides.");
  m.def("distill_student", &py_distill_student, py::arg("config"), py::arg("out_dir"),
        py::arg("overrides") = std::vector<std::string>{},
        "Distill the student against a frozen teacher checkpoint.");
  m.def("evaluate_checkpoint", &py_evaluate_checkpoint, py::arg("manifest"),
        py::arg("checkpoint"), py::arg("tta") = false, py::arg("crop_size") = 32,
        py::arg("batch_size") = 8,
        "Evaluate a checkpoint over every record in a manifest.");
}
