#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace kdoct {

// One flat `section.key = value` setting. `source` records where the final
// value came from: "default", "file", or "override".
struct ConfigEntry {
  std::string key;
  std::string type;  // int | double | bool | string | int_list | double_list
  std::string value;
  std::string source = "default";
  bool required = false;
};

// Known keys for one command, in echo order. Defaults double as the shipped
// preset values; required keys have no default and must come from the file or
// an override.
struct ConfigSchema {
  std::vector<ConfigEntry> keys;

  void add(const std::string& key, const std::string& type, const std::string& default_value);
  void require(const std::string& key, const std::string& type);
};

// Schema-validated settings with provenance, ready for typed access.
struct ResolvedConfig {
  std::vector<ConfigEntry> entries;

  bool has(const std::string& key) const;
  const ConfigEntry& entry(const std::string& key) const;
  int64_t get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::string get_string(const std::string& key) const;
  std::vector<int> get_int_list(const std::string& key) const;
  std::vector<double> get_double_list(const std::string& key) const;

  // re-parseable echo: one `key = value` line per entry plus a provenance
  // comment, in schema order
  std::string echo_text() const;
};

// raw file contents as ordered key/value pairs; values keep internal spaces
std::vector<std::pair<std::string, std::string>> parse_config_lines(const std::string& text,
                                                                    const std::string& origin);

// layering: schema defaults, then the file (optional, empty path skips it),
// then `key=value` overrides. Unknown keys, type mismatches, and missing
// required keys are errors naming the key.
ResolvedConfig resolve_config(const ConfigSchema& schema, const std::string& config_path,
                              const std::vector<std::string>& overrides);

// schemas for the command surface
ConfigSchema teacher_train_schema();
ConfigSchema student_distill_schema();
ConfigSchema evaluate_schema();

}  // namespace kdoct
