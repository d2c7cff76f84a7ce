#include "kdoct/checkpoint.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include "kdoct/error.hpp"

namespace kdoct {

namespace {

constexpr char kMagic[4] = {'K', 'D', 'O', 'C'};

// serialized integers are little-endian regardless of host order
template <typename T>
void write_le(std::ofstream& out, T value) {
  unsigned char buf[sizeof(T)];
  for (size_t i = 0; i < sizeof(T); ++i)
    buf[i] = static_cast<unsigned char>((static_cast<uint64_t>(value) >> (8 * i)) & 0xFF);
  out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
bool read_le(std::ifstream& in, T& value) {
  unsigned char buf[sizeof(T)];
  in.read(reinterpret_cast<char*>(buf), sizeof(T));
  if (in.gcount() != static_cast<std::streamsize>(sizeof(T))) return false;
  uint64_t v = 0;
  for (size_t i = 0; i < sizeof(T); ++i) v |= static_cast<uint64_t>(buf[i]) << (8 * i);
  value = static_cast<T>(v);
  return true;
}

void write_f32_le(std::ofstream& out, float value) {
  uint32_t bits;
  std::memcpy(&bits, &value, 4);
  write_le(out, bits);
}

bool read_f32_le(std::ifstream& in, float& value) {
  uint32_t bits;
  if (!read_le(in, bits)) return false;
  std::memcpy(&value, &bits, 4);
  return true;
}

[[noreturn]] void truncated(const std::string& path) {
  fail(ErrorCategory::format, "checkpoint: truncated file " + path);
}

}  // namespace

void save_checkpoint(const Model& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCategory::io, "checkpoint: cannot write " + path);
  out.write(kMagic, 4);
  write_le(out, kCheckpointVersion);
  write_le(out, static_cast<uint64_t>(model.config_text.size()));
  out.write(model.config_text.data(), static_cast<std::streamsize>(model.config_text.size()));
  for (const auto& [name, t] : model.params) {
    write_le(out, static_cast<uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_le(out, static_cast<uint32_t>(t.rank()));
    for (int64_t d : t.shape()) write_le(out, d);
    for (float v : t.values()) write_f32_le(out, v);
  }
  if (!out) fail(ErrorCategory::io, "checkpoint: write failed for " + path);
}

CheckpointData read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCategory::io, "checkpoint: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, kMagic, 4) != 0)
    fail(ErrorCategory::format, "checkpoint: bad magic in " + path);

  CheckpointData data;
  if (!read_le(in, data.version)) truncated(path);
  if (data.version != kCheckpointVersion)
    fail(ErrorCategory::format, "checkpoint: unsupported version " +
                                    std::to_string(data.version) + " in " + path);
  uint64_t config_len = 0;
  if (!read_le(in, config_len)) truncated(path);
  if (config_len > (1ULL << 20))
    fail(ErrorCategory::format, "checkpoint: config block too large in " + path);
  data.config_text.resize(config_len);
  in.read(data.config_text.data(), static_cast<std::streamsize>(config_len));
  if (in.gcount() != static_cast<std::streamsize>(config_len)) truncated(path);

  while (true) {
    unsigned char lenbuf[4];
    in.read(reinterpret_cast<char*>(lenbuf), 4);
    if (in.gcount() == 0) break;  // clean end of records
    if (in.gcount() != 4) truncated(path);
    uint32_t name_len = 0;
    for (size_t i = 0; i < 4; ++i) name_len |= static_cast<uint32_t>(lenbuf[i]) << (8 * i);
    if (name_len == 0 || name_len > 4096)
      fail(ErrorCategory::format, "checkpoint: bad tensor name length in " + path);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (in.gcount() != static_cast<std::streamsize>(name_len)) truncated(path);
    uint32_t rank = 0;
    if (!read_le(in, rank)) truncated(path);
    if (rank > 8) fail(ErrorCategory::format, "checkpoint: bad tensor rank in " + path);
    Shape shape(rank);
    int64_t numel = 1;
    for (uint32_t i = 0; i < rank; ++i) {
      if (!read_le(in, shape[i])) truncated(path);
      if (shape[i] <= 0 || numel > (1LL << 32))
        fail(ErrorCategory::format, "checkpoint: bad tensor shape in " + path);
      numel *= shape[i];
    }
    std::vector<float> values(static_cast<size_t>(numel));
    for (float& v : values)
      if (!read_f32_le(in, v)) truncated(path);
    data.tensors.emplace_back(std::move(name), Tensor::from(std::move(shape), std::move(values)));
  }
  return data;
}

void load_checkpoint_into(Model& model, const std::string& path) {
  const CheckpointData data = read_checkpoint(path);
  for (const auto& [name, stored] : data.tensors) {
    Tensor* target = nullptr;
    for (auto& [n, t] : model.params)
      if (n == name) {
        target = &t;
        break;
      }
    if (!target)
      fail(ErrorCategory::format, "checkpoint: tensor " + name + " has no matching parameter");
    if (target->shape() != stored.shape())
      fail(ErrorCategory::shape, "checkpoint: tensor " + name + " has shape " +
                                     shape_str(stored.shape()) + ", model expects " +
                                     shape_str(target->shape()));
    std::copy(stored.values().begin(), stored.values().end(), target->values().begin());
  }
  if (data.tensors.size() != model.params.size())
    fail(ErrorCategory::format, "checkpoint: " + path + " stores " +
                                    std::to_string(data.tensors.size()) + " tensors, model has " +
                                    std::to_string(model.params.size()));
}

std::unique_ptr<Model> load_checkpoint(const std::string& path) {
  const CheckpointData data = read_checkpoint(path);
  std::unique_ptr<Model> model = build_from_config_text(data.config_text, 0);
  load_checkpoint_into(*model, path);
  return model;
}

}  // namespace kdoct
