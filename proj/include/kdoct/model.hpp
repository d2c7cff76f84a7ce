#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "kdoct/graph.hpp"
#include "kdoct/rng.hpp"
#include "kdoct/tensor.hpp"

namespace kdoct {

struct TeacherConfig {
  std::vector<int> stage_depths = {2, 2, 4, 2};
  std::vector<int> stage_widths = {16, 32, 64, 128};
  int stem_kernel = 4;
  int stem_stride = 4;
  int expansion_ratio = 4;
  double drop_path_max = 0.1;
  double head_dropout = 0.1;
  int num_classes = 3;
};

struct StudentConfig {
  std::vector<int> block_counts = {1, 2, 2};
  std::vector<int> widths = {16, 24, 40};
  int expansion_ratio = 4;
  double se_ratio = 0.25;
  bool se_enabled = true;  // off builds plain inverted bottlenecks
  int num_classes = 3;
};

enum class Mode { train, eval };

struct Model {
  std::string kind;         // "teacher" or "student"
  std::string config_text;  // flat key=value lines, enough to rebuild
  Mode mode = Mode::train;
  std::vector<std::pair<std::string, Tensor>> params;  // build order, unique names

  virtual ~Model() = default;

  // train mode draws dropout/drop-path decisions from rng; eval ignores it
  virtual Tensor forward(Graph& g, const Tensor& input, RngStream& rng) const = 0;

  Tensor param(const std::string& name) const;
  void set_requires_grad(bool v);
};

std::unique_ptr<Model> build_teacher(const TeacherConfig& config, uint64_t seed);
std::unique_ptr<Model> build_student(const StudentConfig& config, uint64_t seed);
std::unique_ptr<Model> build_from_config_text(const std::string& text, uint64_t seed);

std::string teacher_config_text(const TeacherConfig& config);
std::string student_config_text(const StudentConfig& config);
TeacherConfig parse_teacher_config(const std::string& text);
StudentConfig parse_student_config(const std::string& text);

int64_t count_parameters(const std::vector<std::pair<std::string, Tensor>>& params);
inline int64_t count_parameters(const Model& model) { return count_parameters(model.params); }

// progressive schedule: 0 at the first block rising linearly to max at the last
std::vector<double> drop_path_rates(const std::vector<int>& stage_depths, double max_rate);

uint64_t fnv1a64(std::string_view bytes);
// digest over names, shapes, and exact value bits; order sensitive
uint64_t parameter_hash(const Model& model);

}  // namespace kdoct
