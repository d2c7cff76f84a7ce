#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "kdoct/model.hpp"
#include "kdoct/tensor.hpp"

namespace kdoct {

inline constexpr uint32_t kCheckpointVersion = 1;

struct CheckpointData {
  uint32_t version = 0;
  std::string config_text;
  std::vector<std::pair<std::string, Tensor>> tensors;
};

// layout: "KDOC" magic, u32 LE version, u64 LE config length + UTF-8 config,
// then tensor records {u32 name length, name, u32 rank, i64 LE dims, f32 LE
// row-major payload} until end of file
void save_checkpoint(const Model& model, const std::string& path);
CheckpointData read_checkpoint(const std::string& path);

// copies values into an existing model; every stored tensor must match an
// existing parameter by name and shape
void load_checkpoint_into(Model& model, const std::string& path);

// rebuilds the model from the stored config text, then loads the weights
std::unique_ptr<Model> load_checkpoint(const std::string& path);

}  // namespace kdoct
