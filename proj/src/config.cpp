#include "kdoct/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include "kdoct/error.hpp"

namespace kdoct {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

int64_t parse_int_value(const std::string& key, const std::string& text) {
  int64_t out = 0;
  const char* begin = text.data();
  const char* end = begin + text.size();
  auto [ptr, ec] = std::from_chars(begin, end, out);
  if (ec != std::errc{} || ptr != end)
    fail(ErrorCategory::config,
         "config key '" + key + "' expects an integer, got '" + text + "'");
  return out;
}

double parse_double_value(const std::string& key, const std::string& text) {
  if (text.empty())
    fail(ErrorCategory::config, "config key '" + key + "' expects a number, got ''");
  char* end = nullptr;
  const double out = std::strtod(text.c_str(), &end);
  if (end != text.c_str() + text.size())
    fail(ErrorCategory::config, "config key '" + key + "' expects a number, got '" + text + "'");
  return out;
}

bool parse_bool_value(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  fail(ErrorCategory::config,
       "config key '" + key + "' expects true or false, got '" + text + "'");
}

std::vector<std::string> split_commas(const std::string& text) {
  std::vector<std::string> out;
  if (trim(text).empty()) return out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

// type check without keeping the parsed value; resolution validates eagerly
// so a bad file fails before any work starts
void check_value(const ConfigEntry& e, const std::string& value) {
  if (e.type == "int") {
    parse_int_value(e.key, value);
  } else if (e.type == "double") {
    parse_double_value(e.key, value);
  } else if (e.type == "bool") {
    parse_bool_value(e.key, value);
  } else if (e.type == "int_list") {
    for (const std::string& item : split_commas(value)) parse_int_value(e.key, item);
  } else if (e.type == "double_list") {
    for (const std::string& item : split_commas(value)) parse_double_value(e.key, item);
  }
}

}  // namespace

void ConfigSchema::add(const std::string& key, const std::string& type,
                       const std::string& default_value) {
  keys.push_back({key, type, default_value, "default", false});
}

void ConfigSchema::require(const std::string& key, const std::string& type) {
  keys.push_back({key, type, "", "default", true});
}

bool ResolvedConfig::has(const std::string& key) const {
  for (const ConfigEntry& e : entries)
    if (e.key == key) return true;
  return false;
}

const ConfigEntry& ResolvedConfig::entry(const std::string& key) const {
  for (const ConfigEntry& e : entries)
    if (e.key == key) return e;
  fail(ErrorCategory::internal, "config key '" + key + "' is not in this command's schema");
}

int64_t ResolvedConfig::get_int(const std::string& key) const {
  return parse_int_value(key, entry(key).value);
}

double ResolvedConfig::get_double(const std::string& key) const {
  return parse_double_value(key, entry(key).value);
}

bool ResolvedConfig::get_bool(const std::string& key) const {
  return parse_bool_value(key, entry(key).value);
}

std::string ResolvedConfig::get_string(const std::string& key) const { return entry(key).value; }

std::vector<int> ResolvedConfig::get_int_list(const std::string& key) const {
  std::vector<int> out;
  for (const std::string& item : split_commas(entry(key).value))
    out.push_back(static_cast<int>(parse_int_value(key, item)));
  return out;
}

std::vector<double> ResolvedConfig::get_double_list(const std::string& key) const {
  std::vector<double> out;
  for (const std::string& item : split_commas(entry(key).value))
    out.push_back(parse_double_value(key, item));
  return out;
}

std::string ResolvedConfig::echo_text() const {
  std::string out = "# resolved run configuration (value  # source)\n";
  for (const ConfigEntry& e : entries) {
    out += e.key;
    out += " = ";
    out += e.value;
    out += "  # ";
    out += e.source;
    out += "\n";
  }
  return out;
}

std::vector<std::pair<std::string, std::string>> parse_config_lines(const std::string& text,
                                                                    const std::string& origin) {
  std::vector<std::pair<std::string, std::string>> out;
  std::stringstream ss(text);
  std::string line;
  int line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      fail(ErrorCategory::config,
           origin + " line " + std::to_string(line_no) + ": expected 'key = value', got '" +
               line + "'");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty())
      fail(ErrorCategory::config, origin + " line " + std::to_string(line_no) + ": empty key");
    out.emplace_back(key, trim(line.substr(eq + 1)));
  }
  return out;
}

ResolvedConfig resolve_config(const ConfigSchema& schema, const std::string& config_path,
                              const std::vector<std::string>& overrides) {
  ResolvedConfig resolved;
  resolved.entries = schema.keys;
  std::map<std::string, size_t> index;
  for (size_t i = 0; i < resolved.entries.size(); ++i) index[resolved.entries[i].key] = i;

  auto apply = [&](const std::string& key, const std::string& value, const std::string& source,
                   const std::string& origin) {
    auto it = index.find(key);
    if (it == index.end())
      fail(ErrorCategory::config, "unknown config key '" + key + "' in " + origin);
    ConfigEntry& e = resolved.entries[it->second];
    check_value(e, value);
    e.value = value;
    e.source = source;
  };

  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) fail(ErrorCategory::io, "cannot open config file " + config_path);
    std::stringstream buf;
    buf << in.rdbuf();
    for (const auto& [key, value] : parse_config_lines(buf.str(), config_path))
      apply(key, value, "file", config_path);
  }

  for (const std::string& item : overrides)
    for (const auto& [key, value] : parse_config_lines(item, "override '" + item + "'"))
      apply(key, value, "override", "override '" + item + "'");

  for (const ConfigEntry& e : resolved.entries)
    if (e.required && e.source == "default")
      fail(ErrorCategory::config, "missing required config key '" + e.key + "'");
  return resolved;
}

namespace {

void add_data_keys(ConfigSchema& s) {
  s.require("data.manifest", "string");
  s.add("data.split", "string", "");  // path to a saved split; empty derives one
  s.add("data.test_fraction", "double", "0.2");
  s.add("data.val_fraction", "double", "0.2");
}

void add_run_keys(ConfigSchema& s, const char* batch, const char* accum, const char* epochs,
                  const char* patience) {
  s.add("run.seed", "int", "42");
  s.add("run.batch_size", "int", batch);
  s.add("run.accumulation_steps", "int", accum);
  s.add("run.max_epochs", "int", epochs);
  s.add("run.patience", "int", patience);
}

void add_augment_keys(ConfigSchema& s, const char* m, const char* rotation, const char* shear,
                      const char* p_blur, const char* p_posterize) {
  s.add("augment.resize_large", "int", "40");
  s.add("augment.crop_size", "int", "32");
  s.add("augment.randaugment_n", "int", "2");
  s.add("augment.randaugment_m", "int", m);
  s.add("augment.rotation_deg", "double", rotation);
  s.add("augment.shear_deg", "double", shear);
  s.add("augment.scale_lo", "double", "0.9");
  s.add("augment.scale_hi", "double", "1.1");
  s.add("augment.brightness_jitter", "double", "0.2");
  s.add("augment.contrast_jitter", "double", "0.2");
  s.add("augment.saturation_jitter", "double", "0.2");
  s.add("augment.hue_jitter", "double", "0.05");
  s.add("augment.p_hflip", "double", "0.5");
  s.add("augment.p_vflip", "double", "0.5");
  s.add("augment.p_blur", "double", p_blur);
  s.add("augment.p_posterize", "double", p_posterize);
  s.add("augment.p_erase", "double", "0.25");
  s.add("augment.erase_scale_lo", "double", "0.02");
  s.add("augment.erase_scale_hi", "double", "0.1");
  s.add("augment.posterize_bits", "int", "4");
  s.add("augment.blur_kernel", "int", "3");
  s.add("augment.blur_sigma", "double", "0.8");
}

}  // namespace

ConfigSchema teacher_train_schema() {
  ConfigSchema s;
  add_data_keys(s);
  add_run_keys(s, "4", "4", "150", "25");
  s.add("optim.base_lr", "double", "1e-4");
  s.add("optim.backbone_lr", "double", "2e-5");
  s.add("optim.weight_decay", "double", "0.05");
  s.add("schedule.warmup_epochs", "int", "10");
  s.add("schedule.min_lr", "double", "1e-7");
  s.add("loss.kind", "string", "focal");
  s.add("loss.focal_gamma", "double", "2.0");
  s.add("loss.focal_alpha", "double_list", "");
  s.add("swa.enabled", "bool", "true");
  s.add("model.stage_depths", "int_list", "2,2,4,2");
  s.add("model.stage_widths", "int_list", "16,32,64,128");
  s.add("model.expansion_ratio", "int", "4");
  s.add("model.stem_kernel", "int", "4");
  s.add("model.stem_stride", "int", "4");
  s.add("model.drop_path_max", "double", "0.1");
  s.add("model.head_dropout", "double", "0.1");
  add_augment_keys(s, "9", "20", "10", "0.2", "0.2");
  return s;
}

ConfigSchema student_distill_schema() {
  ConfigSchema s;
  add_data_keys(s);
  add_run_keys(s, "8", "2", "100", "20");
  s.add("optim.base_lr", "double", "1e-3");
  s.add("optim.weight_decay", "double", "0.01");
  s.add("schedule.warmup_epochs", "int", "5");
  s.add("schedule.min_lr", "double", "1e-6");
  s.add("model.block_counts", "int_list", "1,2,2");
  s.add("model.widths", "int_list", "16,24,40");
  s.add("model.expansion_ratio", "int", "4");
  s.add("model.se_ratio", "double", "0.25");
  s.add("model.se_enabled", "bool", "true");
  s.require("distill.teacher_checkpoint", "string");
  s.add("distill.temperature", "double", "4.0");
  s.add("distill.alpha", "double", "0.7");
  s.add("distill.beta", "double", "0.3");
  add_augment_keys(s, "7", "15", "10", "0.0", "0.0");
  return s;
}

ConfigSchema evaluate_schema() {
  ConfigSchema s;
  add_data_keys(s);
  s.require("eval.checkpoint", "string");
  s.add("eval.partition", "string", "test");  // train | val | test | all
  s.add("run.seed", "int", "42");
  s.add("run.batch_size", "int", "8");
  add_augment_keys(s, "9", "20", "10", "0.2", "0.2");
  return s;
}

}  // namespace kdoct
