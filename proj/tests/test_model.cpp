#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "doctest.h"
#include "kdoct/checkpoint.hpp"
#include "kdoct/losses.hpp"
#include "kdoct/model.hpp"
#include "kdoct/ops.hpp"
#include "support.hpp"

using namespace kdoct;
using kdoct::test::DGraph;
using kdoct::test::DTensor;
using kdoct::test::close;

namespace {

Tensor random_input(Shape shape, uint64_t seed) {
  RngStream rng(seed);
  Tensor t = Tensor::zeros(std::move(shape));
  for (float& v : t.values()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return t;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  auto va = a.values(), vb = b.values();
  for (size_t i = 0; i < va.size(); ++i)
    if (va[i] != vb[i]) return false;
  return true;
}

TeacherConfig tiny_teacher_config() {
  TeacherConfig c;
  c.stage_depths = {1, 1, 1, 1};
  c.stage_widths = {8, 16, 32, 64};
  c.expansion_ratio = 4;
  c.num_classes = 3;
  return c;
}

}  // namespace

TEST_CASE("parameter counting sums tensor sizes") {
  CHECK(count_parameters({}) == 0);
  std::vector<std::pair<std::string, Tensor>> lin = {
      {"weight", Tensor::zeros({3, 4})}, {"bias", Tensor::zeros({3})}};
  CHECK(count_parameters(lin) == 15);
}

TEST_CASE("teacher parameter count matches the closed-form topology sum") {
  auto model = build_teacher(tiny_teacher_config(), 1);

  // per piece: conv weights Cout*Cin*k*k + bias, layer norm 2C, expansion
  // C->4C and reduction 4C->C linears, GRN 2*4C
  auto block = [](int64_t c) {
    const int64_t dw = c * 49 + c;
    const int64_t ln = 2 * c;
    const int64_t expand = 4 * c * c + 4 * c;
    const int64_t grn = 8 * c;
    const int64_t reduce = 4 * c * c + c;
    return dw + ln + expand + grn + reduce;
  };
  auto down = [](int64_t cin, int64_t cout) { return 2 * cin + cout * cin * 4 + cout; };
  const int64_t stem = 8 * 3 * 4 * 4 + 8 + 2 * 8;
  const int64_t head = 3 * 64 + 3;
  const int64_t expected = stem + block(8) + down(8, 16) + block(16) + down(16, 32) + block(32) +
                           down(32, 64) + block(64) + head;
  CHECK(expected == 62899);
  CHECK(count_parameters(*model) == expected);
}

TEST_CASE("teacher forward emits logits of the documented shape") {
  auto model = build_teacher(tiny_teacher_config(), 3);
  model->mode = Mode::eval;
  Graph g;
  RngStream rng(0);
  Tensor logits = model->forward(g, random_input({2, 3, 32, 32}, 9), rng);
  CHECK(logits.shape() == Shape{2, 3});
  for (float v : logits.values()) CHECK(std::isfinite(v));
}

TEST_CASE("eval-mode teacher forward is deterministic and unaffected by train passes") {
  auto model = build_teacher(TeacherConfig{}, 11);
  Tensor x = random_input({2, 3, 32, 32}, 1);

  model->mode = Mode::eval;
  RngStream r1(5);
  Graph g1;
  Tensor a = model->forward(g1, x, r1);

  // a train pass in between must not disturb eval outputs
  model->mode = Mode::train;
  RngStream r2(6);
  Graph g2;
  Tensor t = model->forward(g2, x, r2);
  CHECK_FALSE(bit_equal(a, t));  // head dropout makes train forward differ

  model->mode = Mode::eval;
  RngStream r3(7);
  Graph g3;
  Tensor b = model->forward(g3, x, r3);
  CHECK(bit_equal(a, b));
}

TEST_CASE("drop path schedule rises linearly to the configured maximum") {
  const std::vector<double> rates = drop_path_rates({2, 2, 4, 2}, 0.1);
  REQUIRE(rates.size() == 10);
  CHECK(rates.front() == 0.0);
  CHECK(rates.back() == 0.1);
  for (size_t i = 1; i < rates.size(); ++i) CHECK(rates[i] >= rates[i - 1]);
  for (double r : rates) CHECK(r >= 0.0);
  CHECK(drop_path_rates({1, 0, 0, 0}, 0.3) == std::vector<double>{0.3});
}

TEST_CASE("teacher rejects invalid configs and impossible spatial sizes") {
  TeacherConfig bad = tiny_teacher_config();
  bad.stage_widths = {8, 16, 8, 64};
  CHECK_THROWS_AS(build_teacher(bad, 0), Error);
  bad = tiny_teacher_config();
  bad.stage_depths = {0, 0, 0, 0};
  CHECK_THROWS_AS(build_teacher(bad, 0), Error);
  bad = tiny_teacher_config();
  bad.drop_path_max = 1.0;
  CHECK_THROWS_AS(build_teacher(bad, 0), Error);

  auto model = build_teacher(TeacherConfig{}, 0);
  model->mode = Mode::eval;
  Graph g;
  RngStream rng(0);
  // 4x4 input dies in the first downsample after the stride-4 stem
  CHECK_THROWS_AS(model->forward(g, random_input({1, 3, 4, 4}, 0), rng), Error);

  CHECK_THROWS_AS(model->param("no.such.tensor"), Error);
}

TEST_CASE("gradients of every teacher parameter survive a finite-difference check") {
  TeacherConfig c;
  c.stage_depths = {1, 1, 0, 0};
  c.stage_widths = {4, 8, 8, 8};
  c.stem_kernel = 2;
  c.stem_stride = 2;
  c.expansion_ratio = 2;
  c.drop_path_max = 0.0;
  c.head_dropout = 0.0;
  c.num_classes = 2;
  auto model = build_teacher(c, 17);
  model->mode = Mode::eval;

  // double-precision twin of the same topology and the same weights
  std::map<std::string, DTensor> dp;
  std::vector<DTensor> all;
  for (const auto& [name, t] : model->params) {
    std::vector<double> vals(t.values().begin(), t.values().end());
    DTensor d = DTensor::from(t.shape(), std::move(vals));
    dp.emplace(name, d);
    all.push_back(d);
  }

  DTensor x = DTensor::zeros({1, 3, 16, 16});
  {
    RngStream rng(4);
    for (double& v : x.values()) v = rng.uniform(-1.0, 1.0);
  }

  auto P = [&dp](const std::string& n) { return dp.at(n); };
  auto cnorm = [&](DGraph& g, DTensor h, const std::string& p) {
    h = permute(g, h, {0, 2, 3, 1});
    h = layer_norm(g, h, 1, P(p + "norm.gamma"), P(p + "norm.beta"), 1e-6);
    return permute(g, h, {0, 3, 1, 2});
  };
  auto block = [&](DGraph& g, DTensor h, const std::string& p) {
    DTensor y = depthwise_conv2d(g, h, P(p + "dwconv.weight"), P(p + "dwconv.bias"), 1, 3);
    y = permute(g, y, {0, 2, 3, 1});
    y = layer_norm(g, y, 1, P(p + "norm.gamma"), P(p + "norm.beta"), 1e-6);
    y = linear(g, y, P(p + "expand.weight"), P(p + "expand.bias"));
    y = gelu(g, y);
    y = permute(g, y, {0, 3, 1, 2});
    y = global_response_norm(g, y, P(p + "grn.gamma"), P(p + "grn.beta"), 1e-6);
    y = permute(g, y, {0, 2, 3, 1});
    y = linear(g, y, P(p + "reduce.weight"), P(p + "reduce.bias"));
    y = permute(g, y, {0, 3, 1, 2});
    return add(g, h, y);
  };
  auto down = [&](DGraph& g, DTensor h, const std::string& p) {
    h = cnorm(g, h, p);
    return conv2d(g, h, P(p + "conv.weight"), P(p + "conv.bias"), 2, 0);
  };
  auto forward = [&](DGraph& g) {
    DTensor h = conv2d(g, x, P("stem.conv.weight"), P("stem.conv.bias"), 2, 0);
    h = cnorm(g, h, "stem.");
    h = block(g, h, "stage0.block0.");
    h = down(g, h, "down0.");
    h = block(g, h, "stage1.block0.");
    h = down(g, h, "down1.");
    h = down(g, h, "down2.");
    h = global_avg_pool(g, h);
    h = linear(g, h, P("head.fc.weight"), P("head.fc.bias"));
    return cross_entropy(g, h, {1});
  };

  // the twin agrees with the model's own float forward, so the finite
  // difference pass below exercises the real topology
  {
    Tensor xf = Tensor::zeros({1, 3, 16, 16});
    auto xv = x.values();
    auto fv = xf.values();
    for (size_t i = 0; i < fv.size(); ++i) fv[i] = static_cast<float>(xv[i]);
    Graph gf;
    RngStream rng(0);
    Tensor float_logits = model->forward(gf, xf, rng);

    DGraph gd;
    DTensor h = conv2d(gd, x, P("stem.conv.weight"), P("stem.conv.bias"), 2, 0);
    h = cnorm(gd, h, "stem.");
    h = block(gd, h, "stage0.block0.");
    h = down(gd, h, "down0.");
    h = block(gd, h, "stage1.block0.");
    h = down(gd, h, "down1.");
    h = down(gd, h, "down2.");
    h = global_avg_pool(gd, h);
    h = linear(gd, h, P("head.fc.weight"), P("head.fc.bias"));
    REQUIRE(h.shape() == Shape{1, 2});
    for (int i = 0; i < 2; ++i)
      CHECK(close(h.values()[static_cast<size_t>(i)], float_logits.values()[static_cast<size_t>(i)], 1e-4));
  }

  // smaller probe step: the loss curvature through gelu and the norms makes
  // the O(step^2) truncation error visible at the default 1e-3
  kdoct::test::gradcheck(all, forward, 1e-4);
}

TEST_CASE("student forward and parameter budget") {
  auto student = build_student(StudentConfig{}, 2);
  auto teacher = build_teacher(TeacherConfig{}, 2);
  CHECK(count_parameters(*student) < count_parameters(*teacher));

  student->mode = Mode::eval;
  Graph g;
  RngStream rng(0);
  Tensor logits = student->forward(g, random_input({4, 3, 32, 32}, 3), rng);
  CHECK(logits.shape() == Shape{4, 3});
  for (float v : logits.values()) CHECK(std::isfinite(v));

  Graph g2;
  Tensor again = student->forward(g2, random_input({4, 3, 32, 32}, 3), rng);
  CHECK(bit_equal(logits, again));
}

TEST_CASE("student squeeze-excitation with a saturated gate matches the gate-free net") {
  StudentConfig cfg;
  cfg.block_counts = {1, 2};
  cfg.widths = {8, 12};
  cfg.expansion_ratio = 2;
  cfg.se_ratio = 1.0;
  cfg.num_classes = 3;

  StudentConfig plain = cfg;
  plain.se_enabled = false;

  auto gated = build_student(cfg, 5);
  auto free = build_student(plain, 5);
  CHECK(count_parameters(*gated) > count_parameters(*free));

  // per-name init keeps the shared layers identical, so forcing every gate
  // to sigmoid(100) = 1 must reproduce the plain inverted bottleneck
  for (auto& [name, t] : gated->params) {
    if (name.find("se_expand.weight") != std::string::npos)
      std::fill(t.values().begin(), t.values().end(), 0.0f);
    if (name.find("se_expand.bias") != std::string::npos)
      std::fill(t.values().begin(), t.values().end(), 100.0f);
  }

  gated->mode = Mode::eval;
  free->mode = Mode::eval;
  Tensor x = random_input({2, 3, 32, 32}, 8);
  Graph g1, g2;
  RngStream rng(0);
  Tensor a = gated->forward(g1, x, rng);
  Tensor b = free->forward(g2, x, rng);
  REQUIRE(a.shape() == b.shape());
  for (size_t i = 0; i < a.values().size(); ++i)
    CHECK(close(a.values()[i], b.values()[i], 1e-6));
}

TEST_CASE("student rejects invalid configs") {
  StudentConfig bad;
  bad.block_counts = {1, 2};
  CHECK_THROWS_AS(build_student(bad, 0), Error);
  bad = StudentConfig{};
  bad.se_ratio = 0.0;
  CHECK_THROWS_AS(build_student(bad, 0), Error);
  bad = StudentConfig{};
  bad.num_classes = 1;
  CHECK_THROWS_AS(build_student(bad, 0), Error);
}

TEST_CASE("config text round-trips both model kinds") {
  TeacherConfig tc;
  tc.stage_depths = {1, 2, 3, 1};
  tc.drop_path_max = 0.05;
  TeacherConfig tc2 = parse_teacher_config(teacher_config_text(tc));
  CHECK(tc2.stage_depths == tc.stage_depths);
  CHECK(tc2.stage_widths == tc.stage_widths);
  CHECK(tc2.drop_path_max == tc.drop_path_max);
  CHECK(tc2.num_classes == tc.num_classes);

  StudentConfig sc;
  sc.se_ratio = 0.125;
  sc.se_enabled = false;
  StudentConfig sc2 = parse_student_config(student_config_text(sc));
  CHECK(sc2.block_counts == sc.block_counts);
  CHECK(sc2.se_ratio == sc.se_ratio);
  CHECK(sc2.se_enabled == sc.se_enabled);

  auto rebuilt = build_from_config_text(student_config_text(sc), 1);
  CHECK(rebuilt->kind == "student");
  CHECK_THROWS_AS(build_from_config_text("kind = pupil\n", 1), Error);
}

TEST_CASE("checkpoints restore every parameter bit-exactly") {
  TeacherConfig c = tiny_teacher_config();
  auto model = build_teacher(c, 21);
  const std::string path = "teacher_ckpt.bin";
  save_checkpoint(*model, path);

  CheckpointData raw = read_checkpoint(path);
  CHECK(raw.version == kCheckpointVersion);
  CHECK(raw.config_text == model->config_text);
  CHECK(raw.tensors.size() == model->params.size());

  auto restored = load_checkpoint(path);
  CHECK(restored->kind == "teacher");
  REQUIRE(restored->params.size() == model->params.size());
  for (size_t i = 0; i < model->params.size(); ++i) {
    CHECK(restored->params[i].first == model->params[i].first);
    CHECK(bit_equal(restored->params[i].second, model->params[i].second));
  }
  CHECK(parameter_hash(*restored) == parameter_hash(*model));
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint failure modes are structured errors") {
  auto teacher = build_teacher(tiny_teacher_config(), 1);
  const std::string path = "bad_ckpt.bin";
  save_checkpoint(*teacher, path);

  // teacher weights cannot land in a student: first record mismatches
  auto student = build_student(StudentConfig{}, 1);
  std::string msg;
  try {
    load_checkpoint_into(*student, path);
  } catch (const Error& e) {
    msg = e.what();
  }
  CHECK(msg.find("stem.conv.weight") != std::string::npos);

  // a teacher with fewer blocks lacks names the checkpoint carries
  TeacherConfig shallow = tiny_teacher_config();
  shallow.stage_depths = {1, 1, 1, 1};
  auto other = build_teacher(shallow, 2);
  TeacherConfig deeper = tiny_teacher_config();
  deeper.stage_depths = {2, 1, 1, 1};
  auto big = build_teacher(deeper, 2);
  save_checkpoint(*big, "big_ckpt.bin");
  CHECK_THROWS_AS(load_checkpoint_into(*other, "big_ckpt.bin"), Error);
  std::filesystem::remove("big_ckpt.bin");

  // corrupted magic
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.put('X');
  }
  CHECK_THROWS_AS(read_checkpoint(path), Error);

  // truncation mid-record
  save_checkpoint(*teacher, path);
  const auto full = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, full / 2);
  CHECK_THROWS_AS(read_checkpoint(path), Error);
  std::filesystem::remove(path);

  CHECK_THROWS_AS(read_checkpoint("missing_ckpt.bin"), Error);
}

TEST_CASE("parameter hashes fingerprint values, names, and seeds") {
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);

  auto a = build_teacher(tiny_teacher_config(), 1);
  auto b = build_teacher(tiny_teacher_config(), 1);
  auto c = build_teacher(tiny_teacher_config(), 2);
  CHECK(parameter_hash(*a) == parameter_hash(*b));
  CHECK(parameter_hash(*a) != parameter_hash(*c));

  b->params[0].second.values()[0] += 1.0f;
  CHECK(parameter_hash(*a) != parameter_hash(*b));
}
