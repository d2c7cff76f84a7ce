#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "kdoct/checkpoint.hpp"
#include "kdoct/engine.hpp"
#include "kdoct/error.hpp"
#include "kdoct/optim.hpp"

using namespace kdoct;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

AugmentationProfile tiny_profile() {
  AugmentationProfile p;
  p.resize_large = 18;
  p.crop_size = 16;
  p.randaugment_n = 1;
  p.randaugment_m = 3;
  p.rotation_deg = 5.0;
  p.shear_deg = 3.0;
  p.scale_lo = 0.95;
  p.scale_hi = 1.05;
  p.brightness_jitter = 0.1;
  p.contrast_jitter = 0.1;
  p.saturation_jitter = 0.1;
  p.hue_jitter = 0.02;
  p.p_hflip = 0.5;
  p.p_vflip = 0.2;
  p.p_blur = 0.1;
  p.p_posterize = 0.1;
  p.p_erase = 0.1;
  p.blur_sigma = 0.5;
  return p;
}

TrainRunConfig tiny_teacher_cfg() {
  TrainRunConfig c;
  c.model_kind = "teacher";
  c.teacher.stage_depths = {1, 1, 0, 0};
  c.teacher.stage_widths = {4, 8, 8, 8};
  c.teacher.expansion_ratio = 2;
  c.teacher.stem_kernel = 2;
  c.teacher.stem_stride = 2;
  c.teacher.drop_path_max = 0.0;
  c.teacher.head_dropout = 0.0;
  c.augment = tiny_profile();
  c.loss_kind = "focal";
  c.base_lr = 3e-3;
  c.backbone_lr = 1e-3;
  c.weight_decay = 0.01;
  c.min_lr = 1e-5;
  c.warmup_epochs = 1;
  c.batch_size = 6;
  c.accumulation_steps = 2;
  c.max_epochs = 3;
  c.patience = 5;
  c.swa_enabled = true;
  c.seed = 11;
  return c;
}

DistillRunConfig tiny_student_cfg(const std::string& teacher_ckpt) {
  DistillRunConfig d;
  d.train.model_kind = "student";
  d.train.student.block_counts = {1, 1};
  d.train.student.widths = {6, 8};
  d.train.student.expansion_ratio = 2;
  d.train.student.se_ratio = 0.25;
  d.train.student.se_enabled = true;
  d.train.augment = tiny_profile();
  d.train.loss_kind = "ce";
  d.train.base_lr = 3e-3;
  d.train.backbone_lr = -1.0;
  d.train.weight_decay = 0.01;
  d.train.min_lr = 1e-5;
  d.train.warmup_epochs = 1;
  d.train.batch_size = 6;
  d.train.accumulation_steps = 1;
  d.train.max_epochs = 2;
  d.train.patience = 5;
  d.train.swa_enabled = false;
  d.train.seed = 12;
  d.teacher_checkpoint = teacher_ckpt;
  return d;
}

const DatasetManifest& tiny_data() {
  static DatasetManifest m = [] {
    std::filesystem::remove_all("engine_data");
    return synth_generate("engine_data", {12, 12, 12}, {4, 4, 4}, 16, 7);
  }();
  return m;
}

SplitPlan tiny_split() { return patient_stratified_split(tiny_data(), 0.25, 0.25, 3); }

}  // namespace

TEST_CASE("split files round-trip and reject malformed input") {
  SplitPlan split = tiny_split();
  save_split(split, "roundtrip.split");
  SplitPlan back = load_split("roundtrip.split");
  CHECK(back.train_patients == split.train_patients);
  CHECK(back.val_patients == split.val_patients);
  CHECK(back.test_patients == split.test_patients);
  CHECK(back.train_indices == split.train_indices);
  CHECK(back.val_indices == split.val_indices);
  CHECK(back.test_indices == split.test_indices);
  CHECK(split_hash(back) == split_hash(split));
  std::remove("roundtrip.split");

  std::ofstream bad("bad.split");
  bad << "train_patients:a\nwrong:b\n";
  bad.close();
  CHECK_THROWS_AS(load_split("bad.split"), Error);
  std::remove("bad.split");
  CHECK_THROWS_AS(load_split("missing.split"), Error);
}

TEST_CASE("split hashes fingerprint membership") {
  CHECK(split_hash(tiny_split()) == split_hash(tiny_split()));
  SplitPlan other = patient_stratified_split(tiny_data(), 0.25, 0.25, 4);
  CHECK(split_hash(other) != split_hash(tiny_split()));
}

TEST_CASE("summary statistics format like the published tables") {
  CHECK(population_std({1.0, 1.0, 1.0}) == 0.0);
  CHECK(format_percent_mean_std({0.5, 0.5, 0.5}) == "50.00 ± 0.00");
  // mean 0.926, deviations +-0.023
  CHECK(format_percent_mean_std({0.903, 0.949}) == "92.60 ± 2.30");
}

TEST_CASE("run config mapping carries the preset values into the engine types") {
  ResolvedConfig rc = resolve_config(teacher_train_schema(), "", {"data.manifest=m"});
  TrainRunConfig tc = teacher_run_config(rc);
  CHECK(tc.model_kind == "teacher");
  CHECK(tc.base_lr == 1e-4);
  CHECK(tc.backbone_lr == 2e-5);
  CHECK(tc.weight_decay == 0.05);
  CHECK(tc.warmup_epochs == 10);
  CHECK(tc.min_lr == 1e-7);
  CHECK(tc.max_epochs == 150);
  CHECK(tc.patience == 25);
  CHECK(tc.batch_size == 4);
  CHECK(tc.accumulation_steps == 4);
  CHECK(tc.swa_enabled);
  CHECK(tc.loss_kind == "focal");
  CHECK(tc.teacher.stage_depths == std::vector<int>{2, 2, 4, 2});
  CHECK(tc.augment.randaugment_m == 9);
  CHECK(tc.augment.rotation_deg == 20.0);

  ResolvedConfig rs = resolve_config(student_distill_schema(), "",
                                     {"data.manifest=m", "distill.teacher_checkpoint=t.ckpt"});
  DistillRunConfig ds = student_run_config(rs);
  CHECK(ds.train.model_kind == "student");
  CHECK(ds.train.base_lr == 1e-3);
  CHECK(ds.train.backbone_lr < 0.0);
  CHECK(ds.train.weight_decay == 0.01);
  CHECK(ds.train.warmup_epochs == 5);
  CHECK(ds.train.min_lr == 1e-6);
  CHECK(ds.train.max_epochs == 100);
  CHECK(ds.train.patience == 20);
  CHECK(ds.train.batch_size == 8);
  CHECK(ds.train.accumulation_steps == 2);
  CHECK(ds.train.loss_kind == "ce");
  CHECK_FALSE(ds.train.swa_enabled);
  CHECK(ds.train.augment.randaugment_m == 7);
  CHECK(ds.train.augment.p_blur == 0.0);
  CHECK(ds.distill.temperature == 4.0);
  CHECK(ds.distill.alpha == 0.7);
  CHECK(ds.distill.beta == 0.3);
  CHECK(ds.teacher_checkpoint == "t.ckpt");
}

TEST_CASE("a teacher run emits history, checkpoints, and a faithful report") {
  std::filesystem::remove_all("engine_run");
  const TrainRunConfig cfg = tiny_teacher_cfg();
  const SplitPlan split = tiny_split();
  TrainOutcome out = train_model(cfg, tiny_data(), split, "engine_run");

  REQUIRE(out.report.history.size() == 3);
  const LRSchedule sched{cfg.base_lr, cfg.min_lr, cfg.warmup_epochs, cfg.max_epochs};
  for (const EpochEntry& e : out.report.history) {
    CHECK(e.lr == lr_at(sched, e.epoch));  // reported trace must equal the schedule
    CHECK(std::isfinite(e.train_loss));
    CHECK(e.val_acc >= 0.0);
    CHECK(e.val_acc <= 1.0);
  }

  CHECK(std::filesystem::exists("engine_run/teacher_best.ckpt"));
  CHECK(std::filesystem::exists("engine_run/teacher.ckpt"));
  CHECK(std::filesystem::exists("engine_run/report.txt"));
  CHECK(std::filesystem::exists("engine_run/report.json"));
  CHECK(std::filesystem::exists("engine_run/run_timing.txt"));

  // swa_start_epoch(3) = 2, so exactly one snapshot lands in the average
  CHECK(std::filesystem::exists("engine_run/teacher_swa.ckpt"));

  REQUIRE(out.report.has_final);
  CHECK(out.report.final_confusion.total() ==
        static_cast<int64_t>(split.test_indices.size()));

  std::string primary_hash;
  for (const auto& [k, v] : out.report.notes)
    if (k == "primary_hash") primary_hash = v;
  CHECK(primary_hash == hex_u64(parameter_hash(*out.primary)));
  auto reloaded = load_checkpoint(out.primary_checkpoint);
  CHECK(hex_u64(parameter_hash(*reloaded)) == primary_hash);

  // report.json is valid json with the history mirrored
  const auto j = nlohmann::json::parse(slurp("engine_run/report.json"));
  CHECK(j["command"] == "train-teacher");
  CHECK(j["history"].size() == 3);
  CHECK(j["history"][1]["lr"].get<double>() == lr_at(sched, 1));
  std::filesystem::remove_all("engine_run");
}

TEST_CASE("identical seed and config reproduce byte-identical reports and checkpoints") {
  std::filesystem::remove_all("engine_rep_a");
  std::filesystem::remove_all("engine_rep_b");
  const TrainRunConfig cfg = tiny_teacher_cfg();
  const SplitPlan split = tiny_split();
  train_model(cfg, tiny_data(), split, "engine_rep_a");
  train_model(cfg, tiny_data(), split, "engine_rep_b");
  for (const char* name :
       {"report.txt", "report.json", "teacher_best.ckpt", "teacher_swa.ckpt", "teacher.ckpt"}) {
    CAPTURE(name);
    CHECK(slurp(std::string("engine_rep_a/") + name) == slurp(std::string("engine_rep_b/") + name));
  }
  std::filesystem::remove_all("engine_rep_a");
  std::filesystem::remove_all("engine_rep_b");
}

TEST_CASE("gradient accumulation reproduces the large-batch update") {
  std::filesystem::remove_all("engine_acc_a");
  std::filesystem::remove_all("engine_acc_b");
  TrainRunConfig macro = tiny_teacher_cfg();
  macro.loss_kind = "ce";
  macro.swa_enabled = false;
  macro.max_epochs = 1;
  macro.warmup_epochs = 0;
  macro.batch_size = 12;
  macro.accumulation_steps = 1;

  TrainRunConfig micro = macro;
  micro.batch_size = 6;
  micro.accumulation_steps = 2;

  const SplitPlan split = tiny_split();
  train_model(macro, tiny_data(), split, "engine_acc_a");
  train_model(micro, tiny_data(), split, "engine_acc_b");

  auto a = load_checkpoint("engine_acc_a/teacher_best.ckpt");
  auto b = load_checkpoint("engine_acc_b/teacher_best.ckpt");
  REQUIRE(a->params.size() == b->params.size());
  for (size_t i = 0; i < a->params.size(); ++i) {
    auto va = a->params[i].second.values(), vb = b->params[i].second.values();
    for (size_t j = 0; j < va.size(); ++j) {
      CAPTURE(a->params[i].first);
      CHECK(std::abs(va[j] - vb[j]) <= 1e-6);
    }
  }
  std::filesystem::remove_all("engine_acc_a");
  std::filesystem::remove_all("engine_acc_b");
}

TEST_CASE("distillation freezes the teacher and logs an exact loss decomposition") {
  std::filesystem::remove_all("engine_kd");
  TrainRunConfig tcfg = tiny_teacher_cfg();
  tcfg.max_epochs = 2;
  const SplitPlan split = tiny_split();
  TrainOutcome teacher = train_model(tcfg, tiny_data(), split, "engine_kd");

  const DistillRunConfig dcfg = tiny_student_cfg(teacher.primary_checkpoint);
  TrainOutcome student = distill_student(dcfg, tiny_data(), split, "engine_kd");

  std::string before, after;
  for (const auto& [k, v] : student.report.notes) {
    if (k == "teacher_hash_before") before = v;
    if (k == "teacher_hash_after") after = v;
  }
  REQUIRE_FALSE(before.empty());
  CHECK(before == after);
  auto teacher_reloaded = load_checkpoint(teacher.primary_checkpoint);
  CHECK(hex_u64(parameter_hash(*teacher_reloaded)) == before);

  CHECK(student.report.history.size() == 2);
  REQUIRE_FALSE(student.report.kd_steps.empty());
  for (const KdBreakdown& s : student.report.kd_steps) {
    CHECK(s.total == 0.3 * s.ce + 0.7 * 4.0 * 4.0 * s.kl);  // exact identity of logged doubles
    CHECK(s.kl >= 0.0);
  }
  CHECK(std::filesystem::exists("engine_kd/student.ckpt"));
  std::filesystem::remove_all("engine_kd");
}

TEST_CASE("distillation rejects a teacher with a different class count") {
  std::filesystem::remove_all("engine_kd4");
  std::filesystem::remove_all("engine_data4");
  TrainRunConfig tcfg = tiny_teacher_cfg();
  tcfg.max_epochs = 1;
  tcfg.warmup_epochs = 0;
  tcfg.swa_enabled = false;
  const SplitPlan split3 = tiny_split();
  TrainOutcome teacher = train_model(tcfg, tiny_data(), split3, "engine_kd4");

  DatasetManifest four = synth_generate("engine_data4", {6, 6, 6, 6}, {3, 3, 3, 3}, 16, 9);
  SplitPlan split4 = patient_stratified_split(four, 0.34, 0.34, 1);
  const DistillRunConfig dcfg = tiny_student_cfg(teacher.primary_checkpoint);
  std::string msg;
  try {
    distill_student(dcfg, four, split4, "engine_kd4");
  } catch (const Error& e) {
    msg = e.what();
  }
  CHECK(msg.find("classes") != std::string::npos);
  std::filesystem::remove_all("engine_kd4");
  std::filesystem::remove_all("engine_data4");
}

TEST_CASE("evaluation is batch-size invariant and TTA collapses for constant logits") {
  auto model = [] {
    TeacherConfig c;
    c.stage_depths = {1, 1, 0, 0};
    c.stage_widths = {4, 8, 8, 8};
    c.expansion_ratio = 2;
    c.stem_kernel = 2;
    c.stem_stride = 2;
    c.num_classes = 3;
    return build_teacher(c, 33);
  }();
  model->mode = Mode::eval;
  const std::vector<int64_t> all = [&] {
    std::vector<int64_t> idx(tiny_data().records.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int64_t>(i);
    return idx;
  }();

  EvalResult one = evaluate_split(*model, tiny_data(), all, tiny_profile(), false, 1);
  EvalResult eight = evaluate_split(*model, tiny_data(), all, tiny_profile(), false, 8);
  CHECK(one.cm.counts == eight.cm.counts);
  CHECK(one.metrics.accuracy == eight.metrics.accuracy);

  // zero parameters force identical logits for every view, so TTA cannot
  // change any prediction
  StudentConfig sc;
  sc.block_counts = {1, 1};
  sc.widths = {6, 8};
  sc.expansion_ratio = 2;
  sc.num_classes = 3;
  auto constant = build_student(sc, 1);
  for (auto& [name, t] : constant->params)
    std::fill(t.values().begin(), t.values().end(), 0.0f);
  constant->mode = Mode::eval;
  EvalResult single = evaluate_split(*constant, tiny_data(), all, tiny_profile(), false, 8);
  EvalResult tta = evaluate_split(*constant, tiny_data(), all, tiny_profile(), true, 8);
  CHECK(single.cm.counts == tta.cm.counts);
  CHECK(single.metrics.accuracy == tta.metrics.accuracy);

  EvalResult tta2 = evaluate_split(*constant, tiny_data(), all, tiny_profile(), true, 8);
  CHECK(tta.cm.counts == tta2.cm.counts);

  CHECK_THROWS_AS(evaluate_split(*model, tiny_data(), {}, tiny_profile(), false, 8), Error);
}

TEST_CASE("a non-finite loss aborts and leaves a last-good checkpoint behind") {
  std::filesystem::remove_all("engine_abort");
  TrainRunConfig cfg = tiny_teacher_cfg();
  cfg.loss_kind = "ce";
  cfg.swa_enabled = false;
  cfg.base_lr = 1e25;
  cfg.backbone_lr = 1e25;
  cfg.warmup_epochs = 0;
  cfg.max_epochs = 4;
  CHECK_THROWS_AS(train_model(cfg, tiny_data(), tiny_split(), "engine_abort"), Error);
  CHECK(std::filesystem::exists("engine_abort/teacher_last_good.ckpt"));
  auto last_good = load_checkpoint("engine_abort/teacher_last_good.ckpt");
  for (const auto& [name, t] : last_good->params)
    for (float v : t.values()) CHECK(std::isfinite(v));
  std::filesystem::remove_all("engine_abort");
}

TEST_CASE("cross-validation reports one row per fold plus mean/std summaries") {
  std::filesystem::remove_all("engine_cv");
  TrainRunConfig cfg = tiny_teacher_cfg();
  cfg.max_epochs = 2;
  cfg.swa_enabled = false;
  RunReport cv = cross_validate(cfg, tiny_data(), 3, 5, "engine_cv", false);
  REQUIRE(cv.folds.size() == 3);
  for (int i = 0; i < 3; ++i) {
    CHECK(cv.folds[static_cast<size_t>(i)].fold == i);
    CHECK(std::filesystem::exists("engine_cv/fold" + std::to_string(i) + "/report.json"));
  }
  REQUIRE(cv.summary.size() == 3);
  CHECK(cv.summary[0].first == "accuracy");
  CHECK(cv.summary[0].second.find(" ± ") != std::string::npos);
  CHECK(std::filesystem::exists("engine_cv/report.json"));
  std::filesystem::remove_all("engine_cv");
}

TEST_CASE("ablation rows train on the identical split and tabulate side by side") {
  std::filesystem::remove_all("engine_ablate");
  TrainRunConfig cfg = tiny_teacher_cfg();
  cfg.max_epochs = 1;
  cfg.warmup_epochs = 0;
  RunReport ab = run_ablation(cfg, {"no_heavy_aug", "no_swa", "no_focal"}, tiny_data(), 0.25,
                              0.25, "engine_ablate");
  REQUIRE(ab.summary.size() == 4);
  CHECK(ab.summary[0].first == "baseline");
  CHECK(ab.summary[1].first == "no_heavy_aug");

  std::vector<std::string> hashes;
  for (const auto& [k, v] : ab.notes)
    if (k.size() > 11 && k.substr(k.size() - 11) == ".split_hash") hashes.push_back(v);
  REQUIRE(hashes.size() == 4);
  for (const std::string& h : hashes) CHECK(h == hashes[0]);

  CHECK_THROWS_AS(run_ablation(cfg, {"no_dropout"}, tiny_data(), 0.25, 0.25, "engine_ablate"),
                  Error);
  CHECK_THROWS_AS(run_ablation(cfg, {"no_kd"}, tiny_data(), 0.25, 0.25, "engine_ablate"), Error);
  std::filesystem::remove_all("engine_ablate");
}
