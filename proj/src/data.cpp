#include "kdoct/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <type_traits>

#include "kdoct/error.hpp"
#include "kdoct/rng.hpp"

namespace kdoct {

namespace {

std::vector<std::string> split_fields(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, sep)) out.push_back(field);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

void check_field(const std::string& value, const char* name) {
  if (value.find(',') != std::string::npos)
    fail(ErrorCategory::format, std::string("manifest: ") + name + " contains a comma: " + value);
}

// patients grouped per class in sorted id order, so plans depend only on the
// manifest's contents and the seed, not on record ordering
std::vector<std::vector<std::string>> patients_by_class(const DatasetManifest& manifest) {
  std::map<std::string, int> patient_class;
  for (const SampleRecord& r : manifest.records) {
    auto [it, inserted] = patient_class.emplace(r.patient_id, r.label);
    if (!inserted && it->second != r.label)
      fail(ErrorCategory::data, "split: patient " + r.patient_id +
                                    " appears under more than one class");
  }
  std::vector<std::vector<std::string>> out(static_cast<size_t>(manifest.num_classes()));
  for (const auto& [patient, label] : patient_class)
    out[static_cast<size_t>(label)].push_back(patient);
  return out;
}

void shuffle_patients(std::vector<std::string>& patients, uint64_t seed, int label) {
  RngStream rng(hash_combine(seed, static_cast<uint64_t>(label)));
  for (size_t i = patients.size(); i > 1; --i)
    std::swap(patients[i - 1], patients[static_cast<size_t>(rng.uniform_int(i))]);
}

std::vector<int64_t> indices_for(const DatasetManifest& manifest,
                                 const std::set<std::string>& patients) {
  std::vector<int64_t> out;
  for (size_t i = 0; i < manifest.records.size(); ++i)
    if (patients.count(manifest.records[i].patient_id))
      out.push_back(static_cast<int64_t>(i));
  return out;
}

}  // namespace

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCategory::io, "manifest: cannot open " + path);
  DatasetManifest manifest;
  manifest.root_dir = std::filesystem::path(path).parent_path().string();
  if (manifest.root_dir.empty()) manifest.root_dir = ".";

  std::string line;
  if (!std::getline(in, line) || line.rfind("classes:", 0) != 0)
    fail(ErrorCategory::format, "manifest: first line must be 'classes:<names>' in " + path);
  manifest.class_names = split_fields(line.substr(8), ',');
  if (manifest.class_names.empty() ||
      std::any_of(manifest.class_names.begin(), manifest.class_names.end(),
                  [](const std::string& n) { return n.empty(); }))
    fail(ErrorCategory::format, "manifest: empty class name in " + path);

  std::map<std::string, int> class_index;
  for (size_t i = 0; i < manifest.class_names.size(); ++i)
    if (!class_index.emplace(manifest.class_names[i], static_cast<int>(i)).second)
      fail(ErrorCategory::format, "manifest: duplicate class name " + manifest.class_names[i]);

  std::set<std::string> seen_paths;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields = split_fields(line, ',');
    if (fields.size() != 3 || fields[0].empty() || fields[2].empty())
      fail(ErrorCategory::format,
           "manifest: malformed row at line " + std::to_string(line_no) + " in " + path);
    auto cls = class_index.find(fields[1]);
    if (cls == class_index.end())
      fail(ErrorCategory::format, "manifest: unknown class name '" + fields[1] + "' at line " +
                                      std::to_string(line_no));
    if (!seen_paths.insert(fields[0]).second)
      fail(ErrorCategory::format, "manifest: duplicate path " + fields[0]);
    manifest.records.push_back({fields[0], cls->second, fields[2]});
  }
  if (manifest.records.empty()) fail(ErrorCategory::format, "manifest: no records in " + path);
  return manifest;
}

void save_manifest(const DatasetManifest& manifest, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCategory::io, "manifest: cannot write " + path);
  for (const std::string& name : manifest.class_names) check_field(name, "class name");
  out << "classes:";
  for (size_t i = 0; i < manifest.class_names.size(); ++i)
    out << (i ? "," : "") << manifest.class_names[i];
  out << "\n";
  for (const SampleRecord& r : manifest.records) {
    if (r.label < 0 || r.label >= manifest.num_classes())
      fail(ErrorCategory::data, "manifest: label out of range for " + r.image_path);
    check_field(r.image_path, "path");
    check_field(r.patient_id, "patient id");
    out << r.image_path << "," << manifest.class_names[static_cast<size_t>(r.label)] << ","
        << r.patient_id << "\n";
  }
  if (!out) fail(ErrorCategory::io, "manifest: write failed for " + path);
}

std::string resolve_image_path(const DatasetManifest& manifest, int64_t record_index) {
  if (record_index < 0 || record_index >= static_cast<int64_t>(manifest.records.size()))
    fail(ErrorCategory::data, "manifest: record index " + std::to_string(record_index) +
                                  " out of range");
  const std::string& p = manifest.records[static_cast<size_t>(record_index)].image_path;
  std::filesystem::path fp(p);
  if (fp.is_absolute() || manifest.root_dir.empty()) return p;
  return (std::filesystem::path(manifest.root_dir) / fp).string();
}

SplitPlan patient_stratified_split(const DatasetManifest& manifest, double test_fraction,
                                   double val_fraction_of_remainder, uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0) ||
      !(val_fraction_of_remainder > 0.0 && val_fraction_of_remainder < 1.0))
    fail(ErrorCategory::config, "split: fractions must lie in (0,1)");
  const double frac_test = test_fraction;
  const double frac_val = (1.0 - test_fraction) * val_fraction_of_remainder;
  const double frac_train = 1.0 - frac_test - frac_val;
  const double targets[3] = {frac_train, frac_val, frac_test};

  std::set<std::string> by_split[3];
  const auto grouped = patients_by_class(manifest);
  for (int label = 0; label < manifest.num_classes(); ++label) {
    std::vector<std::string> patients = grouped[static_cast<size_t>(label)];
    if (patients.size() < 3)
      fail(ErrorCategory::data, "split: class " +
                                    manifest.class_names[static_cast<size_t>(label)] + " has " +
                                    std::to_string(patients.size()) +
                                    " patients, need at least 3 to populate train/val/test");
    shuffle_patients(patients, seed, label);

    // largest-deficit-first: after k assignments split s should hold about
    // targets[s]*k patients
    std::vector<std::string> assigned[3];
    for (size_t i = 0; i < patients.size(); ++i) {
      int best = 0;
      double best_deficit = -1e300;
      for (int s = 0; s < 3; ++s) {
        const double deficit =
            targets[s] * static_cast<double>(i + 1) - static_cast<double>(assigned[s].size());
        if (deficit > best_deficit) {
          best_deficit = deficit;
          best = s;
        }
      }
      assigned[best].push_back(patients[i]);
    }
    // a split can come out empty for tiny classes; donate from the most
    // overfull split that can spare a patient
    for (int s = 0; s < 3; ++s) {
      if (!assigned[s].empty()) continue;
      int donor = -1;
      double worst = -1e300;
      const double n = static_cast<double>(patients.size());
      for (int d = 0; d < 3; ++d) {
        if (assigned[d].size() < 2) continue;
        const double excess = static_cast<double>(assigned[d].size()) - targets[d] * n;
        if (excess > worst) {
          worst = excess;
          donor = d;
        }
      }
      if (donor < 0)
        fail(ErrorCategory::data, "split: cannot populate all three splits for class " +
                                      manifest.class_names[static_cast<size_t>(label)]);
      assigned[s].push_back(assigned[donor].back());
      assigned[donor].pop_back();
    }
    for (int s = 0; s < 3; ++s) by_split[s].insert(assigned[s].begin(), assigned[s].end());
  }

  SplitPlan plan;
  plan.train_patients.assign(by_split[0].begin(), by_split[0].end());
  plan.val_patients.assign(by_split[1].begin(), by_split[1].end());
  plan.test_patients.assign(by_split[2].begin(), by_split[2].end());
  plan.train_indices = indices_for(manifest, by_split[0]);
  plan.val_indices = indices_for(manifest, by_split[1]);
  plan.test_indices = indices_for(manifest, by_split[2]);
  return plan;
}

namespace {

template <typename T>
std::string join_items(const std::vector<T>& items) {
  std::string out;
  for (size_t i = 0; i < items.size(); ++i) {
    if (i) out += ',';
    if constexpr (std::is_same_v<T, std::string>)
      out += items[i];
    else
      out += std::to_string(items[i]);
  }
  return out;
}

std::string expect_line(std::istream& in, const std::string& name, const std::string& path) {
  std::string line;
  if (!std::getline(in, line))
    fail(ErrorCategory::format, "split file " + path + " is missing the '" + name + "' line");
  const std::string prefix = name + ":";
  if (line.rfind(prefix, 0) != 0)
    fail(ErrorCategory::format,
         "split file " + path + ": expected '" + prefix + "...', got '" + line + "'");
  return line.substr(prefix.size());
}

std::vector<int64_t> parse_index_list(const std::string& text, const std::string& path) {
  std::vector<int64_t> out;
  for (const std::string& item : split_fields(text, ',')) {
    if (item.empty()) continue;
    try {
      out.push_back(std::stoll(item));
    } catch (const std::exception&) {
      fail(ErrorCategory::format, "split file " + path + ": bad index '" + item + "'");
    }
  }
  return out;
}

std::vector<std::string> parse_name_list(const std::string& text) {
  std::vector<std::string> out;
  for (const std::string& item : split_fields(text, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

}  // namespace

void save_split(const SplitPlan& split, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCategory::io, "cannot write split file " + path);
  out << "train_patients:" << join_items(split.train_patients) << "\n"
      << "val_patients:" << join_items(split.val_patients) << "\n"
      << "test_patients:" << join_items(split.test_patients) << "\n"
      << "train_indices:" << join_items(split.train_indices) << "\n"
      << "val_indices:" << join_items(split.val_indices) << "\n"
      << "test_indices:" << join_items(split.test_indices) << "\n";
  if (!out) fail(ErrorCategory::io, "short write to split file " + path);
}

SplitPlan load_split(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCategory::io, "cannot open split file " + path);
  SplitPlan split;
  split.train_patients = parse_name_list(expect_line(in, "train_patients", path));
  split.val_patients = parse_name_list(expect_line(in, "val_patients", path));
  split.test_patients = parse_name_list(expect_line(in, "test_patients", path));
  split.train_indices = parse_index_list(expect_line(in, "train_indices", path), path);
  split.val_indices = parse_index_list(expect_line(in, "val_indices", path), path);
  split.test_indices = parse_index_list(expect_line(in, "test_indices", path), path);
  return split;
}

void save_folds(const FoldPlan& folds, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCategory::io, "cannot write fold file " + path);
  for (int i = 0; i < folds.k(); ++i) {
    const auto f = static_cast<size_t>(i);
    out << "fold" << i << "_patients:" << join_items(folds.fold_patients[f]) << "\n"
        << "fold" << i << "_train_indices:" << join_items(folds.train_indices[f]) << "\n"
        << "fold" << i << "_val_indices:" << join_items(folds.val_indices[f]) << "\n";
  }
  if (!out) fail(ErrorCategory::io, "short write to fold file " + path);
}

FoldPlan patient_kfold(const DatasetManifest& manifest, int k, uint64_t seed) {
  if (k < 2) fail(ErrorCategory::config, "kfold: k must be at least 2, got " + std::to_string(k));
  std::vector<std::set<std::string>> folds(static_cast<size_t>(k));
  const auto grouped = patients_by_class(manifest);
  for (int label = 0; label < manifest.num_classes(); ++label) {
    std::vector<std::string> patients = grouped[static_cast<size_t>(label)];
    if (static_cast<int>(patients.size()) < k)
      fail(ErrorCategory::data, "kfold: class " +
                                    manifest.class_names[static_cast<size_t>(label)] + " has " +
                                    std::to_string(patients.size()) + " patients, need >= " +
                                    std::to_string(k));
    shuffle_patients(patients, seed, label);
    for (size_t i = 0; i < patients.size(); ++i)
      folds[i % static_cast<size_t>(k)].insert(patients[i]);
  }

  FoldPlan plan;
  plan.fold_patients.resize(static_cast<size_t>(k));
  plan.train_indices.resize(static_cast<size_t>(k));
  plan.val_indices.resize(static_cast<size_t>(k));
  for (int f = 0; f < k; ++f) {
    const auto& val_set = folds[static_cast<size_t>(f)];
    plan.fold_patients[static_cast<size_t>(f)].assign(val_set.begin(), val_set.end());
    for (size_t i = 0; i < manifest.records.size(); ++i) {
      const bool in_fold = val_set.count(manifest.records[i].patient_id) > 0;
      auto& dst = in_fold ? plan.val_indices[static_cast<size_t>(f)]
                          : plan.train_indices[static_cast<size_t>(f)];
      dst.push_back(static_cast<int64_t>(i));
    }
  }
  return plan;
}

namespace {

// per-patient rendering style; scans of one patient share it
struct PatientStyle {
  double base;        // background brightness
  double band_count;  // layered bands across the height
  double band_phase;
  double band_amp;
  double tilt;  // vertical drift of the bands across the width
};

PatientStyle draw_style(RngStream& rng) {
  PatientStyle s;
  s.base = rng.uniform(70.0, 90.0);
  s.band_count = rng.uniform(3.5, 6.5);
  s.band_phase = rng.uniform(0.0, 1.0);
  s.band_amp = rng.uniform(25.0, 40.0);
  s.tilt = rng.uniform(-0.15, 0.15);
  return s;
}

void add_blob(std::vector<double>& canvas, int size, double cx, double cy, double rx, double ry,
              double amp) {
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double dx = (x - cx) / rx, dy = (y - cy) / ry;
      const double d2 = dx * dx + dy * dy;
      if (d2 < 9.0) canvas[static_cast<size_t>(y * size + x)] += amp * std::exp(-0.5 * d2);
    }
}

ImageBuffer render_scan(int cls, int size, const PatientStyle& style, RngStream& rng) {
  std::vector<double> canvas(static_cast<size_t>(size) * size);
  const double jitter = rng.uniform(-0.05, 0.05);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double ny = static_cast<double>(y) / size + style.tilt * (static_cast<double>(x) / size - 0.5);
      const double wave =
          std::sin(2.0 * M_PI * (ny * style.band_count + style.band_phase + jitter));
      canvas[static_cast<size_t>(y * size + x)] = style.base + style.band_amp * wave;
    }

  if (cls == 1) {
    // drusen: a few small bright bumps along one band
    const int bumps = 3 + static_cast<int>(rng.uniform_int(3));
    const double band_y = rng.uniform(0.3, 0.7) * size;
    for (int i = 0; i < bumps; ++i) {
      const double cx = rng.uniform(0.1, 0.9) * size;
      const double cy = band_y + rng.uniform(-0.05, 0.05) * size;
      const double r = rng.uniform(0.03, 0.06) * size;
      add_blob(canvas, size, cx, cy, r, r, rng.uniform(50.0, 80.0));
    }
  } else if (cls == 2) {
    // cnv: one large irregular bright mass built from overlapping blobs
    const double cx = rng.uniform(0.3, 0.7) * size;
    const double cy = rng.uniform(0.35, 0.65) * size;
    const int lobes = 3 + static_cast<int>(rng.uniform_int(3));
    for (int i = 0; i < lobes; ++i)
      add_blob(canvas, size, cx + rng.uniform(-0.08, 0.08) * size,
               cy + rng.uniform(-0.08, 0.08) * size, rng.uniform(0.10, 0.16) * size,
               rng.uniform(0.07, 0.12) * size, rng.uniform(55.0, 75.0));
  } else if (cls == 3) {
    // optional 4th class: dark round fluid cavities
    const int holes = 2 + static_cast<int>(rng.uniform_int(2));
    for (int i = 0; i < holes; ++i)
      add_blob(canvas, size, rng.uniform(0.2, 0.8) * size, rng.uniform(0.3, 0.7) * size,
               rng.uniform(0.06, 0.10) * size, rng.uniform(0.06, 0.10) * size,
               -rng.uniform(45.0, 65.0));
  }

  ImageBuffer img = make_image(size, size, 1);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double noise = rng.uniform(-6.0, 6.0);
      const double v = canvas[static_cast<size_t>(y * size + x)] + noise;
      img.at(x, y, 0) = static_cast<uint8_t>(std::clamp(std::lround(v), 0L, 255L));
    }
  return img;
}

}  // namespace

DatasetManifest synth_generate(const std::string& out_dir,
                               const std::vector<int>& per_class_counts,
                               const std::vector<int>& patients_per_class, int image_size,
                               uint64_t seed) {
  if (per_class_counts.size() != patients_per_class.size() ||
      (per_class_counts.size() != 3 && per_class_counts.size() != 4))
    fail(ErrorCategory::config, "synth: expected 3 or 4 per-class counts");
  if (image_size < 8)
    fail(ErrorCategory::config, "synth: image size must be at least 8, got " +
                                    std::to_string(image_size));
  for (size_t c = 0; c < per_class_counts.size(); ++c)
    if (patients_per_class[c] < 1 || per_class_counts[c] < patients_per_class[c])
      fail(ErrorCategory::config, "synth: class " + std::to_string(c) +
                                      " needs counts >= patients >= 1");

  std::error_code ec;
  std::filesystem::create_directories(std::filesystem::path(out_dir) / "images", ec);
  if (ec) fail(ErrorCategory::io, "synth: cannot create " + out_dir + ": " + ec.message());

  DatasetManifest manifest;
  manifest.root_dir = out_dir;
  manifest.class_names = {"normal", "drusen", "cnv"};
  if (per_class_counts.size() == 4) manifest.class_names.push_back("dme");

  for (size_t c = 0; c < per_class_counts.size(); ++c) {
    const std::string& cls_name = manifest.class_names[c];
    const int patients = patients_per_class[c];
    std::vector<PatientStyle> styles(static_cast<size_t>(patients));
    for (int p = 0; p < patients; ++p) {
      RngStream style_rng(hash_combine(seed, static_cast<uint64_t>(c), static_cast<uint64_t>(p)));
      styles[static_cast<size_t>(p)] = draw_style(style_rng);
    }
    for (int i = 0; i < per_class_counts[c]; ++i) {
      const int p = i % patients;
      RngStream scan_rng(hash_combine(seed, static_cast<uint64_t>(c), static_cast<uint64_t>(p),
                                      static_cast<uint64_t>(i)));
      ImageBuffer img = render_scan(static_cast<int>(c), image_size,
                                    styles[static_cast<size_t>(p)], scan_rng);
      char name[64];
      std::snprintf(name, sizeof(name), "images/%s_p%03d_s%04d.pgm", cls_name.c_str(), p, i);
      save_pgm(img, (std::filesystem::path(out_dir) / name).string());
      char patient[48];
      std::snprintf(patient, sizeof(patient), "%s_p%03d", cls_name.c_str(), p);
      manifest.records.push_back({name, static_cast<int>(c), patient});
    }
  }
  save_manifest(manifest, (std::filesystem::path(out_dir) / "manifest.txt").string());
  return manifest;
}

std::vector<int64_t> epoch_order(int64_t count, bool shuffle, uint64_t seed, int64_t epoch) {
  if (count < 0) fail(ErrorCategory::internal, "epoch_order: negative count");
  std::vector<int64_t> order(static_cast<size_t>(count));
  for (int64_t i = 0; i < count; ++i) order[static_cast<size_t>(i)] = i;
  if (shuffle) {
    RngStream rng(hash_combine(seed, static_cast<uint64_t>(epoch)));
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<size_t>(rng.uniform_int(i))]);
  }
  return order;
}

std::vector<std::vector<int64_t>> make_batches(const std::vector<int64_t>& subset, int batch_size,
                                               bool shuffle, uint64_t seed, int64_t epoch) {
  if (batch_size < 1)
    fail(ErrorCategory::config, "batch: size must be >= 1, got " + std::to_string(batch_size));
  const std::vector<int64_t> order =
      epoch_order(static_cast<int64_t>(subset.size()), shuffle, seed, epoch);
  std::vector<std::vector<int64_t>> batches;
  for (size_t start = 0; start < subset.size(); start += static_cast<size_t>(batch_size)) {
    const size_t stop = std::min(subset.size(), start + static_cast<size_t>(batch_size));
    std::vector<int64_t> batch;
    batch.reserve(stop - start);
    for (size_t i = start; i < stop; ++i)
      batch.push_back(subset[static_cast<size_t>(order[i])]);
    batches.push_back(std::move(batch));
  }
  return batches;
}

LoadedSample load_sample(const DatasetManifest& manifest, int64_t record_index) {
  const std::string path = resolve_image_path(manifest, record_index);
  const SampleRecord& r = manifest.records[static_cast<size_t>(record_index)];
  return {load_pgm(path), r.label, r.patient_id};
}

}  // namespace kdoct
