#include "kdoct/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "kdoct/error.hpp"
#include "kdoct/ops.hpp"

namespace kdoct {

namespace {

// every tensor's init stream is keyed by its name, so adding or removing
// sibling layers never changes the weights a named layer starts with
RngStream init_stream(uint64_t seed, const std::string& name) {
  return RngStream(hash_combine(seed, fnv1a64(name)));
}

Tensor init_uniform(uint64_t seed, const std::string& name, Shape shape, int64_t fan_in) {
  RngStream rng = init_stream(seed, name);
  return Tensor::uniform(std::move(shape), static_cast<float>(1.0 / std::sqrt(fan_in)), rng);
}

struct ParamBuilder {
  uint64_t seed;
  std::vector<std::pair<std::string, Tensor>>* params;

  Tensor uniform(const std::string& name, Shape shape, int64_t fan_in) {
    Tensor t = init_uniform(seed, name, std::move(shape), fan_in);
    params->emplace_back(name, t);
    return t;
  }
  Tensor constant(const std::string& name, Shape shape, float value) {
    Tensor t = Tensor::full(std::move(shape), value);
    params->emplace_back(name, t);
    return t;
  }
};

// channel layer norm on NCHW activations via a round trip through NHWC
Tensor channel_norm(Graph& g, const Tensor& x, const Tensor& gamma, const Tensor& beta) {
  Tensor h = permute(g, x, {0, 2, 3, 1});
  h = layer_norm(g, h, 1, gamma, beta, 1e-6f);
  return permute(g, h, {0, 3, 1, 2});
}

struct TeacherBlock {
  Tensor dw_w, dw_b, ln_g, ln_b, exp_w, exp_b, grn_g, grn_b, red_w, red_b;
  double drop_rate = 0.0;
};

struct TeacherDown {
  Tensor ln_g, ln_b, conv_w, conv_b;
};

struct TeacherNet final : Model {
  TeacherConfig config;
  Tensor stem_w, stem_b, stem_ln_g, stem_ln_b;
  std::vector<std::vector<TeacherBlock>> stages;
  std::vector<TeacherDown> downs;
  Tensor head_w, head_b;

  Tensor forward(Graph& g, const Tensor& input, RngStream& rng) const override {
    const bool train = mode == Mode::train;
    Tensor h = conv2d(g, input, stem_w, stem_b, config.stem_stride, 0);
    h = channel_norm(g, h, stem_ln_g, stem_ln_b);
    for (size_t s = 0; s < stages.size(); ++s) {
      if (s > 0) {
        const TeacherDown& d = downs[s - 1];
        h = channel_norm(g, h, d.ln_g, d.ln_b);
        h = conv2d(g, h, d.conv_w, d.conv_b, 2, 0);
      }
      for (const TeacherBlock& blk : stages[s]) {
        Tensor y = depthwise_conv2d(g, h, blk.dw_w, blk.dw_b, 1, 3);
        y = permute(g, y, {0, 2, 3, 1});
        y = layer_norm(g, y, 1, blk.ln_g, blk.ln_b, 1e-6f);
        y = linear(g, y, blk.exp_w, blk.exp_b);
        y = gelu(g, y);
        y = permute(g, y, {0, 3, 1, 2});
        y = global_response_norm(g, y, blk.grn_g, blk.grn_b, 1e-6f);
        y = permute(g, y, {0, 2, 3, 1});
        y = linear(g, y, blk.red_w, blk.red_b);
        y = permute(g, y, {0, 3, 1, 2});
        y = drop_path(g, y, blk.drop_rate, train, rng);
        h = add(g, h, y);
      }
    }
    h = global_avg_pool(g, h);
    h = dropout(g, h, config.head_dropout, train, rng);
    return linear(g, h, head_w, head_b);
  }
};

struct StudentBlock {
  Tensor exp_w, exp_b, dw_w, dw_b, se_r_w, se_r_b, se_e_w, se_e_b, proj_w, proj_b;
  int stride = 1;
  bool residual = false;
  bool has_se = false;
};

struct StudentNet final : Model {
  StudentConfig config;
  Tensor stem_w, stem_b;
  std::vector<StudentBlock> blocks;
  Tensor head_w, head_b;

  Tensor forward(Graph& g, const Tensor& input, RngStream&) const override {
    Tensor h = conv2d(g, input, stem_w, stem_b, 2, 1);
    h = relu(g, h);
    for (const StudentBlock& blk : blocks) {
      Tensor y = conv2d(g, h, blk.exp_w, blk.exp_b, 1, 0);
      y = relu(g, y);
      y = depthwise_conv2d(g, y, blk.dw_w, blk.dw_b, blk.stride, 1);
      y = relu(g, y);
      if (blk.has_se) {
        Tensor z = global_avg_pool(g, y);
        z = linear(g, z, blk.se_r_w, blk.se_r_b);
        z = relu(g, z);
        z = linear(g, z, blk.se_e_w, blk.se_e_b);
        z = sigmoid(g, z);
        y = scale_channels(g, y, z);
      }
      y = conv2d(g, y, blk.proj_w, blk.proj_b, 1, 0);
      h = blk.residual ? add(g, h, y) : y;
    }
    h = global_avg_pool(g, h);
    return linear(g, h, head_w, head_b);
  }
};

void check_teacher_config(const TeacherConfig& c) {
  if (c.stage_depths.size() != 4 || c.stage_widths.size() != 4)
    fail(ErrorCategory::config, "teacher: expected 4 stage depths and 4 stage widths");
  int total_blocks = 0;
  for (int d : c.stage_depths) {
    if (d < 0) fail(ErrorCategory::config, "teacher: stage depths must be >= 0");
    total_blocks += d;
  }
  if (total_blocks < 1) fail(ErrorCategory::config, "teacher: need at least one block");
  for (size_t i = 0; i < 4; ++i) {
    if (c.stage_widths[i] < 1) fail(ErrorCategory::config, "teacher: stage widths must be >= 1");
    if (i > 0 && c.stage_widths[i] < c.stage_widths[i - 1])
      fail(ErrorCategory::config, "teacher: stage widths must be nondecreasing");
  }
  if (c.stem_kernel < 1 || c.stem_stride < 1)
    fail(ErrorCategory::config, "teacher: stem kernel and stride must be >= 1");
  if (c.expansion_ratio < 1) fail(ErrorCategory::config, "teacher: expansion ratio must be >= 1");
  if (!(c.drop_path_max >= 0.0 && c.drop_path_max < 1.0))
    fail(ErrorCategory::config, "teacher: drop_path_max must lie in [0,1)");
  if (!(c.head_dropout >= 0.0 && c.head_dropout < 1.0))
    fail(ErrorCategory::config, "teacher: head_dropout must lie in [0,1)");
  if (c.num_classes < 2) fail(ErrorCategory::config, "teacher: need at least 2 classes");
}

void check_student_config(const StudentConfig& c) {
  if (c.block_counts.empty() || c.block_counts.size() != c.widths.size())
    fail(ErrorCategory::config, "student: block counts and widths must pair up");
  for (int n : c.block_counts)
    if (n < 1) fail(ErrorCategory::config, "student: block counts must be >= 1");
  for (int w : c.widths)
    if (w < 1) fail(ErrorCategory::config, "student: widths must be >= 1");
  if (c.expansion_ratio < 1) fail(ErrorCategory::config, "student: expansion ratio must be >= 1");
  if (!(c.se_ratio > 0.0 && c.se_ratio <= 1.0))
    fail(ErrorCategory::config, "student: se_ratio must lie in (0,1]");
  if (c.num_classes < 2) fail(ErrorCategory::config, "student: need at least 2 classes");
}

}  // namespace

Tensor Model::param(const std::string& name) const {
  for (const auto& [n, t] : params)
    if (n == name) return t;
  fail(ErrorCategory::internal, "model: no parameter named " + name);
}

void Model::set_requires_grad(bool v) {
  for (auto& [n, t] : params) t.set_requires_grad(v);
}

std::vector<double> drop_path_rates(const std::vector<int>& stage_depths, double max_rate) {
  int total = 0;
  for (int d : stage_depths) total += d;
  std::vector<double> rates(static_cast<size_t>(total));
  for (int i = 0; i < total; ++i)
    rates[static_cast<size_t>(i)] =
        total > 1 ? max_rate * static_cast<double>(i) / static_cast<double>(total - 1) : max_rate;
  return rates;
}

std::unique_ptr<Model> build_teacher(const TeacherConfig& config, uint64_t seed) {
  check_teacher_config(config);
  auto net = std::make_unique<TeacherNet>();
  net->kind = "teacher";
  net->config = config;
  net->config_text = teacher_config_text(config);
  ParamBuilder pb{seed, &net->params};

  const int w0 = config.stage_widths[0];
  const int k = config.stem_kernel;
  net->stem_w = pb.uniform("stem.conv.weight", {w0, 3, k, k}, static_cast<int64_t>(3) * k * k);
  net->stem_b = pb.constant("stem.conv.bias", {w0}, 0.0f);
  net->stem_ln_g = pb.constant("stem.norm.gamma", {w0}, 1.0f);
  net->stem_ln_b = pb.constant("stem.norm.beta", {w0}, 0.0f);

  const std::vector<double> rates = drop_path_rates(config.stage_depths, config.drop_path_max);
  size_t rate_idx = 0;
  net->stages.resize(4);
  for (int s = 0; s < 4; ++s) {
    const int c = config.stage_widths[static_cast<size_t>(s)];
    if (s > 0) {
      const int prev = config.stage_widths[static_cast<size_t>(s - 1)];
      char prefix[32];
      std::snprintf(prefix, sizeof(prefix), "down%d.", s - 1);
      TeacherDown d;
      d.ln_g = pb.constant(std::string(prefix) + "norm.gamma", {prev}, 1.0f);
      d.ln_b = pb.constant(std::string(prefix) + "norm.beta", {prev}, 0.0f);
      d.conv_w = pb.uniform(std::string(prefix) + "conv.weight", {c, prev, 2, 2},
                            static_cast<int64_t>(prev) * 4);
      d.conv_b = pb.constant(std::string(prefix) + "conv.bias", {c}, 0.0f);
      net->downs.push_back(d);
    }
    const int e = c * config.expansion_ratio;
    for (int b = 0; b < config.stage_depths[static_cast<size_t>(s)]; ++b) {
      char prefix[48];
      std::snprintf(prefix, sizeof(prefix), "stage%d.block%d.", s, b);
      const std::string p(prefix);
      TeacherBlock blk;
      blk.dw_w = pb.uniform(p + "dwconv.weight", {c, 1, 7, 7}, 49);
      blk.dw_b = pb.constant(p + "dwconv.bias", {c}, 0.0f);
      blk.ln_g = pb.constant(p + "norm.gamma", {c}, 1.0f);
      blk.ln_b = pb.constant(p + "norm.beta", {c}, 0.0f);
      blk.exp_w = pb.uniform(p + "expand.weight", {e, c}, c);
      blk.exp_b = pb.constant(p + "expand.bias", {e}, 0.0f);
      blk.grn_g = pb.constant(p + "grn.gamma", {e}, 0.0f);
      blk.grn_b = pb.constant(p + "grn.beta", {e}, 0.0f);
      blk.red_w = pb.uniform(p + "reduce.weight", {c, e}, e);
      blk.red_b = pb.constant(p + "reduce.bias", {c}, 0.0f);
      blk.drop_rate = rates[rate_idx++];
      net->stages[static_cast<size_t>(s)].push_back(blk);
    }
  }
  const int w3 = config.stage_widths[3];
  net->head_w = pb.uniform("head.fc.weight", {config.num_classes, w3}, w3);
  net->head_b = pb.constant("head.fc.bias", {config.num_classes}, 0.0f);
  return net;
}

std::unique_ptr<Model> build_student(const StudentConfig& config, uint64_t seed) {
  check_student_config(config);
  auto net = std::make_unique<StudentNet>();
  net->kind = "student";
  net->config = config;
  net->config_text = student_config_text(config);
  ParamBuilder pb{seed, &net->params};

  const int w0 = config.widths[0];
  net->stem_w = pb.uniform("stem.conv.weight", {w0, 3, 3, 3}, 27);
  net->stem_b = pb.constant("stem.conv.bias", {w0}, 0.0f);

  int in_c = w0;
  for (size_t s = 0; s < config.block_counts.size(); ++s) {
    const int out_c = config.widths[s];
    for (int b = 0; b < config.block_counts[s]; ++b) {
      char prefix[48];
      std::snprintf(prefix, sizeof(prefix), "stage%zu.block%d.", s, b);
      const std::string p(prefix);
      StudentBlock blk;
      blk.stride = (s > 0 && b == 0) ? 2 : 1;
      blk.residual = (in_c == out_c && blk.stride == 1);
      blk.has_se = config.se_enabled;
      const int e = in_c * config.expansion_ratio;
      blk.exp_w = pb.uniform(p + "expand.weight", {e, in_c, 1, 1}, in_c);
      blk.exp_b = pb.constant(p + "expand.bias", {e}, 0.0f);
      blk.dw_w = pb.uniform(p + "dwconv.weight", {e, 1, 3, 3}, 9);
      blk.dw_b = pb.constant(p + "dwconv.bias", {e}, 0.0f);
      if (blk.has_se) {
        const int r = std::max<int>(1, static_cast<int>(std::lround(config.se_ratio * e)));
        blk.se_r_w = pb.uniform(p + "se_reduce.weight", {r, e}, e);
        blk.se_r_b = pb.constant(p + "se_reduce.bias", {r}, 0.0f);
        blk.se_e_w = pb.uniform(p + "se_expand.weight", {e, r}, r);
        blk.se_e_b = pb.constant(p + "se_expand.bias", {e}, 0.0f);
      }
      blk.proj_w = pb.uniform(p + "project.weight", {out_c, e, 1, 1}, e);
      blk.proj_b = pb.constant(p + "project.bias", {out_c}, 0.0f);
      net->blocks.push_back(blk);
      in_c = out_c;
    }
  }
  net->head_w = pb.uniform("head.fc.weight", {config.num_classes, in_c}, in_c);
  net->head_b = pb.constant("head.fc.bias", {config.num_classes}, 0.0f);
  return net;
}

namespace {

std::string join_ints(const std::vector<int>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

std::vector<int> parse_ints(const std::string& s) {
  std::vector<int> out;
  std::istringstream in(s);
  std::string tok;
  while (std::getline(in, tok, ',')) out.push_back(std::stoi(tok));
  return out;
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::map<std::string, std::string> parse_kv(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const size_t eq = line.find(" = ");
    if (eq == std::string::npos)
      fail(ErrorCategory::format, "model config: malformed line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return kv;
}

const std::string& kv_get(const std::map<std::string, std::string>& kv, const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end()) fail(ErrorCategory::format, "model config: missing key " + key);
  return it->second;
}

}  // namespace

std::string teacher_config_text(const TeacherConfig& c) {
  std::string out;
  out += "kind = teacher\n";
  out += "stage_depths = " + join_ints(c.stage_depths) + "\n";
  out += "stage_widths = " + join_ints(c.stage_widths) + "\n";
  out += "stem_kernel = " + std::to_string(c.stem_kernel) + "\n";
  out += "stem_stride = " + std::to_string(c.stem_stride) + "\n";
  out += "expansion_ratio = " + std::to_string(c.expansion_ratio) + "\n";
  out += "drop_path_max = " + fmt_double(c.drop_path_max) + "\n";
  out += "head_dropout = " + fmt_double(c.head_dropout) + "\n";
  out += "num_classes = " + std::to_string(c.num_classes) + "\n";
  return out;
}

std::string student_config_text(const StudentConfig& c) {
  std::string out;
  out += "kind = student\n";
  out += "block_counts = " + join_ints(c.block_counts) + "\n";
  out += "widths = " + join_ints(c.widths) + "\n";
  out += "expansion_ratio = " + std::to_string(c.expansion_ratio) + "\n";
  out += "se_ratio = " + fmt_double(c.se_ratio) + "\n";
  out += "se_enabled = " + std::string(c.se_enabled ? "true" : "false") + "\n";
  out += "num_classes = " + std::to_string(c.num_classes) + "\n";
  return out;
}

TeacherConfig parse_teacher_config(const std::string& text) {
  const auto kv = parse_kv(text);
  if (kv_get(kv, "kind") != "teacher")
    fail(ErrorCategory::format, "model config: expected kind teacher, got " + kv_get(kv, "kind"));
  TeacherConfig c;
  c.stage_depths = parse_ints(kv_get(kv, "stage_depths"));
  c.stage_widths = parse_ints(kv_get(kv, "stage_widths"));
  c.stem_kernel = std::stoi(kv_get(kv, "stem_kernel"));
  c.stem_stride = std::stoi(kv_get(kv, "stem_stride"));
  c.expansion_ratio = std::stoi(kv_get(kv, "expansion_ratio"));
  c.drop_path_max = std::stod(kv_get(kv, "drop_path_max"));
  c.head_dropout = std::stod(kv_get(kv, "head_dropout"));
  c.num_classes = std::stoi(kv_get(kv, "num_classes"));
  return c;
}

StudentConfig parse_student_config(const std::string& text) {
  const auto kv = parse_kv(text);
  if (kv_get(kv, "kind") != "student")
    fail(ErrorCategory::format, "model config: expected kind student, got " + kv_get(kv, "kind"));
  StudentConfig c;
  c.block_counts = parse_ints(kv_get(kv, "block_counts"));
  c.widths = parse_ints(kv_get(kv, "widths"));
  c.expansion_ratio = std::stoi(kv_get(kv, "expansion_ratio"));
  c.se_ratio = std::stod(kv_get(kv, "se_ratio"));
  c.se_enabled = kv_get(kv, "se_enabled") == "true";
  c.num_classes = std::stoi(kv_get(kv, "num_classes"));
  return c;
}

std::unique_ptr<Model> build_from_config_text(const std::string& text, uint64_t seed) {
  const auto kv = parse_kv(text);
  const std::string& kind = kv_get(kv, "kind");
  if (kind == "teacher") return build_teacher(parse_teacher_config(text), seed);
  if (kind == "student") return build_student(parse_student_config(text), seed);
  fail(ErrorCategory::format, "model config: unknown kind " + kind);
}

int64_t count_parameters(const std::vector<std::pair<std::string, Tensor>>& params) {
  int64_t total = 0;
  for (const auto& [name, t] : params) total += t.numel();
  return total;
}

uint64_t fnv1a64(std::string_view bytes) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

uint64_t parameter_hash(const Model& model) {
  uint64_t h = 0xcbf29ce484222325ULL;
  auto mix_bytes = [&h](const void* data, size_t n) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& [name, t] : model.params) {
    mix_bytes(name.data(), name.size());
    for (int64_t d : t.shape()) mix_bytes(&d, sizeof(d));
    auto vals = t.values();
    mix_bytes(vals.data(), vals.size() * sizeof(float));
  }
  return h;
}

}  // namespace kdoct
