#include "kdoct/engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>

#include "kdoct/checkpoint.hpp"
#include "kdoct/error.hpp"
#include "kdoct/ops.hpp"
#include "kdoct/optim.hpp"
#include "kdoct/rng.hpp"

namespace kdoct {

namespace {

// distinguishes the forward-pass rng stream from the per-sample augmentation
// streams that hash the same (seed, epoch, index) tuple
constexpr uint64_t kForwardStreamTag = 0x464f525741524453ULL;

std::string fmt6(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

// notes name checkpoints relative to the report so a run directory can be
// moved or diffed against a rerun without path noise
std::string file_name(const std::string& path) {
  return std::filesystem::path(path).filename().string();
}

int model_num_classes(const Model& model) {
  if (model.kind == "teacher") return parse_teacher_config(model.config_text).num_classes;
  return parse_student_config(model.config_text).num_classes;
}

std::vector<std::vector<float>> snapshot_params(const Model& model) {
  std::vector<std::vector<float>> out;
  out.reserve(model.params.size());
  for (const auto& [name, t] : model.params) {
    auto v = t.values();
    out.emplace_back(v.begin(), v.end());
  }
  return out;
}

void restore_params(Model& model, const std::vector<std::vector<float>>& snap) {
  for (size_t i = 0; i < model.params.size(); ++i) {
    auto v = model.params[i].second.values();
    std::copy(snap[i].begin(), snap[i].end(), v.begin());
  }
}

// in-memory copies of every record an index list touches
std::vector<LoadedSample> load_records(const DatasetManifest& manifest,
                                       const std::vector<const std::vector<int64_t>*>& lists) {
  std::vector<LoadedSample> cache(manifest.records.size());
  std::vector<bool> loaded(manifest.records.size(), false);
  for (const auto* list : lists) {
    for (int64_t idx : *list) {
      if (idx < 0 || idx >= static_cast<int64_t>(manifest.records.size()))
        fail(ErrorCategory::data, "record index " + std::to_string(idx) + " is outside [0, " +
                                      std::to_string(manifest.records.size()) + ")");
      const auto u = static_cast<size_t>(idx);
      if (!loaded[u]) {
        cache[u] = load_sample(manifest, idx);
        loaded[u] = true;
      }
    }
  }
  return cache;
}

Tensor stack_batch(const std::vector<Tensor>& samples) {
  const Shape& s = samples.front().shape();
  Tensor batch = Tensor::zeros({static_cast<int64_t>(samples.size()), s[0], s[1], s[2]});
  auto out = batch.values();
  const size_t per = static_cast<size_t>(s[0] * s[1] * s[2]);
  for (size_t b = 0; b < samples.size(); ++b) {
    auto v = samples[b].values();
    std::copy(v.begin(), v.end(), out.begin() + static_cast<ptrdiff_t>(b * per));
  }
  return batch;
}

int argmax_row(std::span<const float> logits, int64_t row, int64_t k) {
  int best = 0;
  for (int64_t j = 1; j < k; ++j)
    if (logits[static_cast<size_t>(row * k + j)] > logits[static_cast<size_t>(row * k + best)])
      best = static_cast<int>(j);
  return best;
}

// mean cross entropy of raw logits against labels, accumulated in double;
// logging only, no gradients
double ce_of_logits(std::span<const float> logits, const std::vector<int>& labels, int64_t k) {
  double sum = 0.0;
  for (size_t r = 0; r < labels.size(); ++r) {
    const size_t base = r * static_cast<size_t>(k);
    double mx = logits[base];
    for (int64_t j = 1; j < k; ++j) mx = std::max(mx, static_cast<double>(logits[base + static_cast<size_t>(j)]));
    double lse = 0.0;
    for (int64_t j = 0; j < k; ++j) lse += std::exp(static_cast<double>(logits[base + static_cast<size_t>(j)]) - mx);
    sum += mx + std::log(lse) - static_cast<double>(logits[base + static_cast<size_t>(labels[r])]);
  }
  return sum / static_cast<double>(labels.size());
}

struct ValEval {
  EvalResult result;
  double mean_ce = 0.0;
};

ValEval eval_indices(Model& model, const DatasetManifest& manifest,
                     const std::vector<LoadedSample>& cache, const std::vector<int64_t>& indices,
                     const AugmentationProfile& profile, bool tta, int batch_size) {
  if (indices.empty()) fail(ErrorCategory::data, "evaluation needs at least one record");
  const Mode saved = model.mode;
  model.mode = Mode::eval;
  RngStream rng(0);  // eval forward draws nothing

  std::vector<int> preds, labels;
  double ce_sum = 0.0;
  if (!tta) {
    for (const auto& batch : make_batches(indices, batch_size, false, 0, 0)) {
      std::vector<Tensor> views;
      std::vector<int> batch_labels;
      for (int64_t idx : batch) {
        const LoadedSample& s = cache[static_cast<size_t>(idx)];
        views.push_back(val_pipeline(s.image, profile));
        batch_labels.push_back(s.label);
      }
      Graph g(false);
      Tensor logits = model.forward(g, stack_batch(views), rng);
      const int64_t k = logits.dim(1);
      auto lv = logits.values();
      for (size_t r = 0; r < batch.size(); ++r)
        preds.push_back(argmax_row(lv, static_cast<int64_t>(r), k));
      ce_sum += ce_of_logits(lv, batch_labels, k) * static_cast<double>(batch.size());
      labels.insert(labels.end(), batch_labels.begin(), batch_labels.end());
    }
  } else {
    for (int64_t idx : indices) {
      const LoadedSample& s = cache[static_cast<size_t>(idx)];
      std::vector<double> mean_logits;
      int64_t k = 0;
      for (const Tensor& view : tta_variants(s.image, profile)) {
        Graph g(false);
        Tensor one = stack_batch({view});
        Tensor logits = model.forward(g, one, rng);
        k = logits.dim(1);
        auto lv = logits.values();
        if (mean_logits.empty()) mean_logits.assign(static_cast<size_t>(k), 0.0);
        for (int64_t j = 0; j < k; ++j) mean_logits[static_cast<size_t>(j)] += lv[static_cast<size_t>(j)];
      }
      int best = 0;
      for (int64_t j = 1; j < k; ++j)
        if (mean_logits[static_cast<size_t>(j)] > mean_logits[static_cast<size_t>(best)])
          best = static_cast<int>(j);
      preds.push_back(best);
      labels.push_back(s.label);
      // CE over the averaged logits (divide by 5 first)
      std::vector<float> avg(static_cast<size_t>(k));
      for (int64_t j = 0; j < k; ++j)
        avg[static_cast<size_t>(j)] = static_cast<float>(mean_logits[static_cast<size_t>(j)] / 5.0);
      ce_sum += ce_of_logits(avg, {s.label}, k);
    }
  }
  model.mode = saved;

  ValEval out;
  out.result.cm = confusion(preds, labels, manifest.num_classes());
  out.result.metrics = metrics_from_confusion(out.result.cm);
  out.mean_ce = ce_sum / static_cast<double>(indices.size());
  return out;
}

std::unique_ptr<Model> build_run_model(const TrainRunConfig& cfg, int num_classes) {
  if (cfg.model_kind == "teacher") {
    TeacherConfig t = cfg.teacher;
    t.num_classes = num_classes;
    return build_teacher(t, cfg.seed);
  }
  if (cfg.model_kind == "student") {
    StudentConfig s = cfg.student;
    s.num_classes = num_classes;
    return build_student(s, cfg.seed);
  }
  fail(ErrorCategory::config, "unknown model kind '" + cfg.model_kind + "'");
}

std::vector<ParamGroup> build_groups(Model& model, const TrainRunConfig& cfg) {
  if (cfg.backbone_lr > 0.0) {
    ParamGroup head{"head", {}, cfg.base_lr, cfg.weight_decay};
    ParamGroup backbone{"backbone", {}, cfg.backbone_lr, cfg.weight_decay};
    for (const auto& p : model.params)
      (p.first.rfind("head.", 0) == 0 ? head : backbone).params.push_back(p);
    if (head.params.empty() || backbone.params.empty())
      fail(ErrorCategory::config, "differential learning rates need both head and backbone parameters");
    return {head, backbone};
  }
  return {ParamGroup{"all", model.params, cfg.base_lr, cfg.weight_decay}};
}

void check_run_config(const TrainRunConfig& cfg) {
  if (cfg.loss_kind != "focal" && cfg.loss_kind != "ce")
    fail(ErrorCategory::config, "loss kind must be focal or ce, got '" + cfg.loss_kind + "'");
  if (cfg.batch_size < 1) fail(ErrorCategory::config, "batch_size must be >= 1");
  if (cfg.accumulation_steps < 1) fail(ErrorCategory::config, "accumulation_steps must be >= 1");
  if (cfg.max_epochs < 1) fail(ErrorCategory::config, "max_epochs must be >= 1");
  if (cfg.patience < 0) fail(ErrorCategory::config, "patience must be >= 0");
  validate_profile(cfg.augment);
}

// one supervised run; when `teacher` is set the loss is kd_combined_loss
// against its eval-mode logits on the same augmented inputs
TrainOutcome run_training(const TrainRunConfig& cfg, const DatasetManifest& manifest,
                          const SplitPlan& split, const std::string& out_dir, Model* teacher,
                          const DistillParams* distill) {
  const auto start = std::chrono::steady_clock::now();
  check_run_config(cfg);
  if (split.train_indices.empty() || split.val_indices.empty())
    fail(ErrorCategory::data, "empty split: training needs both train and val records");

  std::filesystem::create_directories(out_dir);
  const std::string stem = out_dir + "/" + cfg.model_kind;

  auto model = build_run_model(cfg, manifest.num_classes());
  if (teacher && model_num_classes(*teacher) != manifest.num_classes())
    fail(ErrorCategory::config,
         "teacher predicts " + std::to_string(model_num_classes(*teacher)) +
             " classes but the dataset has " + std::to_string(manifest.num_classes()));

  const LRSchedule schedule{cfg.base_lr, cfg.min_lr, cfg.warmup_epochs, cfg.max_epochs};
  validate_schedule(schedule);

  model->set_requires_grad(true);
  model->mode = Mode::train;
  AdamW opt(build_groups(*model, cfg));

  const std::vector<LoadedSample> cache =
      load_records(manifest, {&split.train_indices, &split.val_indices, &split.test_indices});

  EarlyStopState early;
  early.patience = cfg.patience;
  SwaAverager swa;
  const int swa_begin = swa_start_epoch(cfg.max_epochs);

  std::vector<std::vector<float>> init_snapshot = snapshot_params(*model);
  std::vector<std::vector<float>> best_snapshot;

  RunReport report;
  report.command = teacher ? "distill-student" : ("train-" + cfg.model_kind);
  report.seed = cfg.seed;
  report.split_hash = split_hash(split);
  report.config_echo = cfg.echo;

  auto abort_non_finite = [&](int epoch, int micro) {
    const std::string path = stem + "_last_good.ckpt";
    restore_params(*model, best_snapshot.empty() ? init_snapshot : best_snapshot);
    save_checkpoint(*model, path);
    fail(ErrorCategory::train, "non-finite training loss at epoch " + std::to_string(epoch) +
                                   " micro-batch " + std::to_string(micro) +
                                   "; last-good checkpoint: " + path);
  };

  int last_epoch = -1;
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    last_epoch = epoch;
    const std::vector<double> lrs = group_lrs_at(schedule, opt.groups(), epoch);
    const auto batches = make_batches(split.train_indices, cfg.batch_size, true, cfg.seed, epoch);

    model->mode = Mode::train;
    double loss_sum = 0.0;
    int64_t seen = 0;
    int micro_index = 0;
    for (size_t group_start = 0; group_start < batches.size();
         group_start += static_cast<size_t>(cfg.accumulation_steps)) {
      const size_t group_end =
          std::min(batches.size(), group_start + static_cast<size_t>(cfg.accumulation_steps));
      int64_t group_total = 0;
      for (size_t b = group_start; b < group_end; ++b)
        group_total += static_cast<int64_t>(batches[b].size());

      opt.zero_grad();
      for (size_t b = group_start; b < group_end; ++b, ++micro_index) {
        std::vector<Tensor> views;
        std::vector<int> labels;
        for (int64_t idx : batches[b]) {
          const LoadedSample& s = cache[static_cast<size_t>(idx)];
          views.push_back(train_pipeline(s.image, cfg.augment, sample_seed(cfg.seed, epoch, idx)));
          labels.push_back(s.label);
        }
        Tensor input = stack_batch(views);
        Graph g;
        RngStream fwd_rng(hash_combine(cfg.seed, kForwardStreamTag, static_cast<uint64_t>(epoch),
                                       static_cast<uint64_t>(micro_index)));
        Tensor logits = model->forward(g, input, fwd_rng);

        Tensor loss;
        if (teacher) {
          Graph tg(false);
          RngStream trng(0);
          const Mode tmode = teacher->mode;
          teacher->mode = Mode::eval;
          Tensor teacher_logits = teacher->forward(tg, input, trng);
          teacher->mode = tmode;
          KdBreakdown b_log;
          loss = kd_combined_loss(g, logits, teacher_logits, labels, *distill, &b_log);
          report.kd_steps.push_back(b_log);
        } else if (cfg.loss_kind == "focal") {
          loss = focal_loss(g, logits, labels, cfg.focal);
        } else {
          loss = cross_entropy(g, logits, labels);
        }

        const double loss_value = static_cast<double>(loss.item());
        if (!std::isfinite(loss_value)) abort_non_finite(epoch, micro_index);
        loss_sum += loss_value * static_cast<double>(labels.size());
        seen += static_cast<int64_t>(labels.size());

        // weighting by the micro share makes accumulation match one large
        // mean-reduced batch exactly
        const float weight =
            static_cast<float>(static_cast<double>(labels.size()) / static_cast<double>(group_total));
        Tensor scaled = mul_scalar(g, loss, weight);
        g.backward(scaled);
      }
      try {
        opt.step(lrs);
      } catch (const Error&) {
        // non-finite gradients surface here; leave a usable checkpoint behind
        restore_params(*model, best_snapshot.empty() ? init_snapshot : best_snapshot);
        save_checkpoint(*model, stem + "_last_good.ckpt");
        throw;
      }
    }

    const ValEval val =
        eval_indices(*model, manifest, cache, split.val_indices, cfg.augment, false, 8);
    const double val_acc = val.result.metrics.accuracy;
    if (early.observe(epoch, val_acc, val.mean_ce)) best_snapshot = snapshot_params(*model);
    if (cfg.swa_enabled && epoch >= swa_begin) swa.accumulate(model->params);

    report.history.push_back({epoch, lr_at(schedule, epoch), loss_sum / static_cast<double>(seen),
                              val.mean_ce, val_acc});
    if (early.should_stop(epoch)) break;
  }

  // raw best weights in place, SWA average (if any) in a clone
  if (!best_snapshot.empty()) restore_params(*model, best_snapshot);
  model->mode = Mode::eval;
  const std::string best_path = stem + "_best.ckpt";
  save_checkpoint(*model, best_path);

  const ValEval raw_val =
      eval_indices(*model, manifest, cache, split.val_indices, cfg.augment, false, 8);
  report.note("raw_best_epoch", std::to_string(early.best_epoch));
  report.note("stopped_after_epoch", std::to_string(last_epoch));
  report.note("raw_best_checkpoint", file_name(best_path));
  report.note("raw_val_acc", fmt6(raw_val.result.metrics.accuracy));

  std::unique_ptr<Model> primary;
  std::string primary_source = "raw";
  if (cfg.swa_enabled && swa.count() > 0) {
    auto averaged = build_from_config_text(model->config_text, 0);
    swa.apply(averaged->params);
    averaged->mode = Mode::eval;
    const std::string swa_path = stem + "_swa.ckpt";
    save_checkpoint(*averaged, swa_path);
    const ValEval swa_val =
        eval_indices(*averaged, manifest, cache, split.val_indices, cfg.augment, false, 8);
    report.note("swa_checkpoint", file_name(swa_path));
    report.note("swa_snapshots", std::to_string(swa.count()));
    report.note("swa_val_acc", fmt6(swa_val.result.metrics.accuracy));
    if (swa_val.result.metrics.accuracy > raw_val.result.metrics.accuracy) {
      primary = std::move(averaged);
      primary_source = "swa";
    }
  } else if (cfg.swa_enabled) {
    report.note("swa_snapshots", "0");
  }
  if (!primary) primary = std::move(model);

  const std::string primary_path = stem + ".ckpt";
  save_checkpoint(*primary, primary_path);
  report.note("primary", primary_source);
  report.note("primary_checkpoint", file_name(primary_path));
  report.note("primary_hash", hex_u64(parameter_hash(*primary)));

  if (!split.test_indices.empty()) {
    const ValEval test =
        eval_indices(*primary, manifest, cache, split.test_indices, cfg.augment, false, 8);
    report.has_final = true;
    report.tta_used = false;
    report.final_confusion = test.result.cm;
    report.final_metrics = test.result.metrics;
  }

  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_run_report(report, out_dir);
  return TrainOutcome{std::move(report), std::move(primary), primary_path};
}

}  // namespace

AugmentationProfile augment_profile_from(const ResolvedConfig& cfg) {
  AugmentationProfile p;
  p.resize_large = static_cast<int>(cfg.get_int("augment.resize_large"));
  p.crop_size = static_cast<int>(cfg.get_int("augment.crop_size"));
  p.randaugment_n = static_cast<int>(cfg.get_int("augment.randaugment_n"));
  p.randaugment_m = static_cast<int>(cfg.get_int("augment.randaugment_m"));
  p.rotation_deg = cfg.get_double("augment.rotation_deg");
  p.shear_deg = cfg.get_double("augment.shear_deg");
  p.scale_lo = cfg.get_double("augment.scale_lo");
  p.scale_hi = cfg.get_double("augment.scale_hi");
  p.brightness_jitter = cfg.get_double("augment.brightness_jitter");
  p.contrast_jitter = cfg.get_double("augment.contrast_jitter");
  p.saturation_jitter = cfg.get_double("augment.saturation_jitter");
  p.hue_jitter = cfg.get_double("augment.hue_jitter");
  p.p_hflip = cfg.get_double("augment.p_hflip");
  p.p_vflip = cfg.get_double("augment.p_vflip");
  p.p_blur = cfg.get_double("augment.p_blur");
  p.p_posterize = cfg.get_double("augment.p_posterize");
  p.p_erase = cfg.get_double("augment.p_erase");
  p.erase_scale_lo = cfg.get_double("augment.erase_scale_lo");
  p.erase_scale_hi = cfg.get_double("augment.erase_scale_hi");
  p.posterize_bits = static_cast<int>(cfg.get_int("augment.posterize_bits"));
  p.blur_kernel = static_cast<int>(cfg.get_int("augment.blur_kernel"));
  p.blur_sigma = cfg.get_double("augment.blur_sigma");
  return p;
}

TrainRunConfig teacher_run_config(const ResolvedConfig& cfg) {
  TrainRunConfig c;
  c.model_kind = "teacher";
  c.teacher.stage_depths = cfg.get_int_list("model.stage_depths");
  c.teacher.stage_widths = cfg.get_int_list("model.stage_widths");
  c.teacher.expansion_ratio = static_cast<int>(cfg.get_int("model.expansion_ratio"));
  c.teacher.stem_kernel = static_cast<int>(cfg.get_int("model.stem_kernel"));
  c.teacher.stem_stride = static_cast<int>(cfg.get_int("model.stem_stride"));
  c.teacher.drop_path_max = cfg.get_double("model.drop_path_max");
  c.teacher.head_dropout = cfg.get_double("model.head_dropout");
  c.augment = augment_profile_from(cfg);
  c.loss_kind = cfg.get_string("loss.kind");
  c.focal.gamma = cfg.get_double("loss.focal_gamma");
  c.focal.alpha = cfg.get_double_list("loss.focal_alpha");
  c.base_lr = cfg.get_double("optim.base_lr");
  c.backbone_lr = cfg.get_double("optim.backbone_lr");
  c.weight_decay = cfg.get_double("optim.weight_decay");
  c.min_lr = cfg.get_double("schedule.min_lr");
  c.warmup_epochs = static_cast<int>(cfg.get_int("schedule.warmup_epochs"));
  c.batch_size = static_cast<int>(cfg.get_int("run.batch_size"));
  c.accumulation_steps = static_cast<int>(cfg.get_int("run.accumulation_steps"));
  c.max_epochs = static_cast<int>(cfg.get_int("run.max_epochs"));
  c.patience = static_cast<int>(cfg.get_int("run.patience"));
  c.swa_enabled = cfg.get_bool("swa.enabled");
  c.seed = static_cast<uint64_t>(cfg.get_int("run.seed"));
  c.echo = cfg.entries;
  return c;
}

DistillRunConfig student_run_config(const ResolvedConfig& cfg) {
  DistillRunConfig d;
  d.train.model_kind = "student";
  d.train.student.block_counts = cfg.get_int_list("model.block_counts");
  d.train.student.widths = cfg.get_int_list("model.widths");
  d.train.student.expansion_ratio = static_cast<int>(cfg.get_int("model.expansion_ratio"));
  d.train.student.se_ratio = cfg.get_double("model.se_ratio");
  d.train.student.se_enabled = cfg.get_bool("model.se_enabled");
  d.train.augment = augment_profile_from(cfg);
  d.train.loss_kind = "ce";
  d.train.focal = FocalParams{};
  d.train.base_lr = cfg.get_double("optim.base_lr");
  d.train.backbone_lr = -1.0;
  d.train.weight_decay = cfg.get_double("optim.weight_decay");
  d.train.min_lr = cfg.get_double("schedule.min_lr");
  d.train.warmup_epochs = static_cast<int>(cfg.get_int("schedule.warmup_epochs"));
  d.train.batch_size = static_cast<int>(cfg.get_int("run.batch_size"));
  d.train.accumulation_steps = static_cast<int>(cfg.get_int("run.accumulation_steps"));
  d.train.max_epochs = static_cast<int>(cfg.get_int("run.max_epochs"));
  d.train.patience = static_cast<int>(cfg.get_int("run.patience"));
  d.train.swa_enabled = false;
  d.train.seed = static_cast<uint64_t>(cfg.get_int("run.seed"));
  d.train.echo = cfg.entries;
  d.distill.temperature = cfg.get_double("distill.temperature");
  d.distill.alpha = cfg.get_double("distill.alpha");
  d.distill.beta = cfg.get_double("distill.beta");
  d.teacher_checkpoint = cfg.get_string("distill.teacher_checkpoint");
  return d;
}

uint64_t split_hash(const SplitPlan& split) {
  std::string buf;
  auto add_names = [&](const char* tag, const std::vector<std::string>& names) {
    buf += tag;
    for (const std::string& n : names) {
      buf += n;
      buf += ',';
    }
  };
  auto add_indices = [&](const char* tag, const std::vector<int64_t>& idx) {
    buf += tag;
    for (int64_t i : idx) {
      buf += std::to_string(i);
      buf += ',';
    }
  };
  add_names("|train_p:", split.train_patients);
  add_names("|val_p:", split.val_patients);
  add_names("|test_p:", split.test_patients);
  add_indices("|train_i:", split.train_indices);
  add_indices("|val_i:", split.val_indices);
  add_indices("|test_i:", split.test_indices);
  return fnv1a64(buf);
}

EvalResult evaluate_split(Model& model, const DatasetManifest& manifest,
                          const std::vector<int64_t>& indices, const AugmentationProfile& profile,
                          bool tta, int batch_size) {
  validate_profile(profile);
  if (batch_size < 1) fail(ErrorCategory::config, "batch_size must be >= 1");
  const std::vector<LoadedSample> cache = load_records(manifest, {&indices});
  return eval_indices(model, manifest, cache, indices, profile, tta, batch_size).result;
}

TrainOutcome train_model(const TrainRunConfig& cfg, const DatasetManifest& manifest,
                         const SplitPlan& split, const std::string& out_dir) {
  return run_training(cfg, manifest, split, out_dir, nullptr, nullptr);
}

TrainOutcome distill_student(const DistillRunConfig& cfg, const DatasetManifest& manifest,
                             const SplitPlan& split, const std::string& out_dir) {
  std::unique_ptr<Model> teacher = load_checkpoint(cfg.teacher_checkpoint);
  teacher->set_requires_grad(false);
  teacher->mode = Mode::eval;
  const uint64_t hash_before = parameter_hash(*teacher);

  TrainRunConfig train_cfg = cfg.train;
  train_cfg.model_kind = "student";
  TrainOutcome out = run_training(train_cfg, manifest, split, out_dir, teacher.get(), &cfg.distill);

  const uint64_t hash_after = parameter_hash(*teacher);
  out.report.note("teacher_checkpoint", cfg.teacher_checkpoint);
  out.report.note("teacher_hash_before", hex_u64(hash_before));
  out.report.note("teacher_hash_after", hex_u64(hash_after));
  if (hash_before != hash_after)
    fail(ErrorCategory::internal, "distillation mutated the frozen teacher parameters");
  // the notes changed after the loop wrote its report, so rewrite
  write_run_report(out.report, out_dir);
  return out;
}

RunReport cross_validate(const TrainRunConfig& base, const DatasetManifest& manifest, int k,
                         uint64_t seed, const std::string& out_dir, bool tta,
                         const DistillRunConfig* distill) {
  const auto start = std::chrono::steady_clock::now();
  const FoldPlan folds = patient_kfold(manifest, k, seed);

  RunReport report;
  report.command = "cross-validate";
  report.seed = seed;
  report.config_echo = base.echo;
  report.note("k", std::to_string(k));
  report.note("scored_model", distill ? "student" : base.model_kind);
  report.note("tta", tta ? "on" : "off");

  std::vector<double> accs, sens, specs;
  auto finalize = [&]() {
    if (!accs.empty()) {
      report.summary.emplace_back("accuracy", format_percent_mean_std(accs));
      report.summary.emplace_back("macro_sensitivity", format_percent_mean_std(sens));
      report.summary.emplace_back("macro_specificity", format_percent_mean_std(specs));
    }
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    write_run_report(report, out_dir);
  };

  for (int i = 0; i < folds.k(); ++i) {
    const auto f = static_cast<size_t>(i);
    SplitPlan fold_split;
    fold_split.val_patients = folds.fold_patients[f];
    for (int j = 0; j < folds.k(); ++j)
      if (j != i)
        fold_split.train_patients.insert(fold_split.train_patients.end(),
                                         folds.fold_patients[static_cast<size_t>(j)].begin(),
                                         folds.fold_patients[static_cast<size_t>(j)].end());
    fold_split.train_indices = folds.train_indices[f];
    fold_split.val_indices = folds.val_indices[f];

    const std::string fold_dir = out_dir + "/fold" + std::to_string(i);
    try {
      TrainOutcome trained = train_model(base, manifest, fold_split, fold_dir);
      Model* scored = trained.primary.get();
      TrainOutcome distilled;
      if (distill) {
        DistillRunConfig d = *distill;
        d.teacher_checkpoint = trained.primary_checkpoint;
        distilled = distill_student(d, manifest, fold_split, fold_dir);
        scored = distilled.primary.get();
      }
      const AugmentationProfile& profile = distill ? distill->train.augment : base.augment;
      const EvalResult ev = evaluate_split(*scored, manifest, folds.val_indices[f], profile, tta);
      report.folds.push_back({i, ev.metrics.accuracy, ev.metrics.macro_sensitivity,
                              ev.metrics.macro_specificity});
      report.note("fold" + std::to_string(i) + ".split_hash", hex_u64(split_hash(fold_split)));
      accs.push_back(ev.metrics.accuracy);
      sens.push_back(ev.metrics.macro_sensitivity);
      specs.push_back(ev.metrics.macro_specificity);
    } catch (const Error& e) {
      // preserve the partial report before propagating the fold failure
      report.note("failed_fold", std::to_string(i));
      report.note("failure", e.what());
      finalize();
      throw;
    }
  }
  finalize();
  return report;
}

namespace {

// keeps a row's echoed config consistent with the toggle that was applied
void patch_echo(std::vector<ConfigEntry>& echo, const std::string& key, const std::string& value) {
  for (ConfigEntry& e : echo)
    if (e.key == key) {
      e.value = value;
      e.source = "ablation";
      return;
    }
}

void patch_echo_basic_augment(std::vector<ConfigEntry>& echo) {
  for (const char* key : {"augment.randaugment_n", "augment.randaugment_m"})
    patch_echo(echo, key, "0");
  for (const char* key :
       {"augment.rotation_deg", "augment.shear_deg", "augment.brightness_jitter",
        "augment.contrast_jitter", "augment.saturation_jitter", "augment.hue_jitter",
        "augment.p_hflip", "augment.p_vflip", "augment.p_blur", "augment.p_posterize",
        "augment.p_erase"})
    patch_echo(echo, key, "0.0");
  patch_echo(echo, "augment.scale_lo", "1.0");
  patch_echo(echo, "augment.scale_hi", "1.0");
}

}  // namespace

AugmentationProfile basic_augment_profile(const AugmentationProfile& p) {
  AugmentationProfile basic = p;
  basic.randaugment_n = 0;
  basic.randaugment_m = 0;
  basic.rotation_deg = 0.0;
  basic.shear_deg = 0.0;
  basic.scale_lo = 1.0;
  basic.scale_hi = 1.0;
  basic.brightness_jitter = 0.0;
  basic.contrast_jitter = 0.0;
  basic.saturation_jitter = 0.0;
  basic.hue_jitter = 0.0;
  basic.p_hflip = 0.0;
  basic.p_vflip = 0.0;
  basic.p_blur = 0.0;
  basic.p_posterize = 0.0;
  basic.p_erase = 0.0;
  return basic;
}

RunReport run_ablation(const TrainRunConfig& base, const std::vector<std::string>& toggles,
                       const DatasetManifest& manifest, double test_fraction,
                       double val_fraction, const std::string& out_dir,
                       const DistillRunConfig* distill) {
  const auto start = std::chrono::steady_clock::now();
  static const std::set<std::string> kKnown = {"no_heavy_aug", "no_swa", "no_focal", "no_kd"};
  for (const std::string& t : toggles) {
    if (!kKnown.count(t))
      fail(ErrorCategory::config, "unknown ablation toggle '" + t +
                                      "' (expected no_heavy_aug, no_swa, no_focal, no_kd)");
    if (t == "no_kd" && !distill)
      fail(ErrorCategory::config, "ablation toggle no_kd needs a student configuration");
  }

  RunReport report;
  report.command = "ablate";
  report.seed = base.seed;
  report.config_echo = base.echo;

  std::vector<std::string> rows = {"baseline"};
  rows.insert(rows.end(), toggles.begin(), toggles.end());

  uint64_t reference_hash = 0;
  for (const std::string& row : rows) {
    // every row re-derives the split from the same inputs; equality of the
    // hashes is the controlled-comparison contract
    const SplitPlan split =
        patient_stratified_split(manifest, test_fraction, val_fraction, base.seed);
    const uint64_t h = split_hash(split);
    if (reference_hash == 0) {
      reference_hash = h;
      report.split_hash = h;
    } else if (h != reference_hash) {
      fail(ErrorCategory::internal, "ablation row '" + row + "' derived a different split");
    }

    TrainOutcome outcome;
    const std::string row_dir = out_dir + "/" + row;
    if (row == "no_kd") {
      TrainRunConfig cfg = distill->train;
      cfg.model_kind = "student";
      cfg.loss_kind = "ce";
      // alpha 0 / beta 1 makes the soft term vanish, which is what this row runs
      patch_echo(cfg.echo, "distill.alpha", "0.0");
      patch_echo(cfg.echo, "distill.beta", "1.0");
      outcome = train_model(cfg, manifest, split, row_dir);
    } else {
      TrainRunConfig cfg = base;
      if (row == "no_heavy_aug") {
        cfg.augment = basic_augment_profile(cfg.augment);
        patch_echo_basic_augment(cfg.echo);
      }
      if (row == "no_swa") {
        cfg.swa_enabled = false;
        patch_echo(cfg.echo, "swa.enabled", "false");
      }
      if (row == "no_focal") {
        cfg.loss_kind = "ce";
        patch_echo(cfg.echo, "loss.kind", "ce");
      }
      outcome = train_model(cfg, manifest, split, row_dir);
    }

    const MetricSummary& m = outcome.report.final_metrics;
    report.note(row + ".split_hash", hex_u64(h));
    report.note(row + ".accuracy", fmt6(m.accuracy));
    report.note(row + ".macro_sensitivity", fmt6(m.macro_sensitivity));
    report.note(row + ".macro_specificity", fmt6(m.macro_specificity));
    char line[160];
    std::snprintf(line, sizeof(line), "accuracy %.2f  sensitivity %.2f  specificity %.2f",
                  m.accuracy * 100.0, m.macro_sensitivity * 100.0, m.macro_specificity * 100.0);
    report.summary.emplace_back(row, line);
  }

  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_run_report(report, out_dir);
  return report;
}

}  // namespace kdoct
