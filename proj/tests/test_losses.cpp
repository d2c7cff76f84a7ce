#include <cmath>
#include <vector>

#include "doctest.h"
#include "kdoct/losses.hpp"
#include "kdoct/ops.hpp"
#include "support.hpp"

using namespace kdoct;
using kdoct::test::DGraph;
using kdoct::test::DTensor;
using kdoct::test::close;
using kdoct::test::gradcheck;

namespace {

DTensor rand_logits(Shape shape, uint64_t seed, double lo = -2.0, double hi = 2.0) {
  RngStream rng(seed);
  std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
  for (auto& e : v) e = rng.uniform(lo, hi);
  return DTensor::from(std::move(shape), std::move(v));
}

}  // namespace

TEST_CASE("cross_entropy frozen values") {
  DGraph g(false);
  // all-zero logits: every class equally likely, loss = ln K
  DTensor zeros = DTensor::zeros({4, 3});
  CHECK(close(cross_entropy(g, zeros, {0, 1, 2, 0}).item(), std::log(3.0), 1e-12));
  // single row (1,0,-1), label 0: loss = logsumexp - 1
  DTensor x = DTensor::from({1, 3}, {1.0, 0.0, -1.0});
  CHECK(close(cross_entropy(g, x, {0}).item(), 0.4076059644443806, 1e-12));
  // batch mean: two identical rows, different labels
  DTensor x2 = DTensor::from({2, 3}, {1.0, 0.0, -1.0, 1.0, 0.0, -1.0});
  const double l0 = 0.4076059644443806;
  const double l2 = l0 + 2.0;  // label 2 logit is lower by exactly 2
  CHECK(close(cross_entropy(g, x2, {0, 2}).item(), 0.5 * (l0 + l2), 1e-12));
}

TEST_CASE("cross_entropy validates labels and shapes") {
  DGraph g(false);
  DTensor x = DTensor::zeros({2, 3});
  CHECK_THROWS_AS(cross_entropy(g, x, {0}), Error);
  CHECK_THROWS_AS(cross_entropy(g, x, {0, 3}), Error);
  CHECK_THROWS_AS(cross_entropy(g, x, {0, -1}), Error);
  CHECK_THROWS_AS(cross_entropy(g, DTensor::zeros({6}), {0}), Error);
}

TEST_CASE("gradcheck: cross_entropy") {
  DTensor x = rand_logits({4, 5}, 101);
  std::vector<int> labels{0, 4, 2, 2};
  gradcheck({x}, [&](DGraph& g) { return cross_entropy(g, x, labels); });
}

TEST_CASE("focal loss frozen value at p = 1/2") {
  DGraph g(false);
  // two equal logits: p_t = 0.5, loss = (1/2)^2 * ln 2
  DTensor x = DTensor::zeros({1, 2});
  FocalParams fp;
  fp.gamma = 2.0;
  CHECK(close(focal_loss(g, x, {0}, fp).item(), 0.25 * std::log(2.0), 1e-12));
}

TEST_CASE("focal loss with gamma 0 reduces to cross entropy") {
  DGraph g(false);
  DTensor x = rand_logits({5, 4}, 102);
  std::vector<int> labels{1, 3, 0, 2, 2};
  FocalParams fp;
  fp.gamma = 0.0;
  CHECK(close(focal_loss(g, x, labels, fp).item(), cross_entropy(g, x, labels).item(), 1e-12));
  // and the gradients agree too
  DTensor xa = x.detached_copy(), xb = x.detached_copy();
  xa.set_requires_grad(true);
  xb.set_requires_grad(true);
  DGraph ga, gb;
  ga.backward(focal_loss(ga, xa, labels, fp));
  gb.backward(cross_entropy(gb, xb, labels));
  for (int64_t i = 0; i < xa.numel(); ++i) CHECK(close(xa.grad()[i], xb.grad()[i], 1e-12));
}

TEST_CASE("focal loss class weights scale per-sample terms") {
  DGraph g(false);
  DTensor x = DTensor::zeros({2, 2});
  FocalParams fp;
  fp.gamma = 0.0;
  fp.alpha = {0.25, 0.75};
  // p_t = 0.5 for both rows; weighted CE = mean(alpha_t * ln 2)
  const double want = 0.5 * (0.25 + 0.75) * std::log(2.0);
  CHECK(close(focal_loss(g, x, {0, 1}, fp).item(), want, 1e-12));
  FocalParams bad;
  bad.alpha = {1.0};
  CHECK_THROWS_AS(focal_loss(g, x, {0, 1}, bad), Error);
  FocalParams neg;
  neg.gamma = -1.0;
  CHECK_THROWS_AS(focal_loss(g, x, {0, 1}, neg), Error);
}

TEST_CASE("focal loss down-weights easy examples") {
  DGraph g(false);
  // confident correct row vs uncertain row: focal shrinks the easy one harder
  DTensor easy = DTensor::from({1, 2}, {6.0, 0.0});
  DTensor hard = DTensor::from({1, 2}, {0.5, 0.0});
  FocalParams fp;
  fp.gamma = 2.0;
  const double easy_ce = cross_entropy(g, easy, {0}).item();
  const double easy_fl = focal_loss(g, easy, {0}, fp).item();
  const double hard_ce = cross_entropy(g, hard, {0}).item();
  const double hard_fl = focal_loss(g, hard, {0}, fp).item();
  CHECK(easy_fl / easy_ce < 1e-4);      // (1-p)^2 is tiny when p ~ 1
  CHECK(hard_fl / hard_ce > 0.1);       // uncertain examples keep most weight
}

TEST_CASE("gradcheck: focal loss across gamma values") {
  DTensor x = rand_logits({3, 4}, 103);
  std::vector<int> labels{0, 3, 1};
  for (double gamma : {0.0, 0.5, 2.0}) {
    FocalParams fp;
    fp.gamma = gamma;
    fp.alpha = {0.4, 0.3, 0.2, 0.1};
    gradcheck({x}, [&, fp](DGraph& g) { return focal_loss(g, x, labels, fp); });
  }
}

TEST_CASE("kd loss breakdown identity holds exactly in double") {
  DGraph g(false);
  DTensor student = rand_logits({6, 4}, 104);
  DTensor teacher = rand_logits({6, 4}, 105);
  std::vector<int> labels{0, 1, 2, 3, 0, 1};
  DistillParams dp;  // T = 4, alpha = 0.7, beta = 0.3
  KdBreakdown bd;
  DTensor total = kd_combined_loss(g, student, teacher, labels, dp, &bd);
  CHECK(bd.total == dp.beta * bd.ce + dp.alpha * dp.temperature * dp.temperature * bd.kl);
  CHECK(bd.total == 0.3 * bd.ce + 0.7 * 16.0 * bd.kl);
  CHECK(close(total.item(), bd.total, 1e-12));
  CHECK(bd.kl > 0.0);
  // ce part matches the standalone loss
  CHECK(close(bd.ce, cross_entropy(g, student, labels).item(), 1e-12));
}

TEST_CASE("kd loss collapses to weighted ce when teacher equals student") {
  DGraph g(false);
  DTensor student = rand_logits({4, 3}, 106);
  DTensor teacher = student.detached_copy();
  std::vector<int> labels{0, 1, 2, 0};
  DistillParams dp;
  KdBreakdown bd;
  kd_combined_loss(g, student, teacher, labels, dp, &bd);
  CHECK(close(bd.kl, 0.0, 1e-15));
  CHECK(close(bd.total, dp.beta * bd.ce, 1e-15));
}

TEST_CASE("kd loss propagates no gradient into the teacher") {
  DTensor student = rand_logits({3, 3}, 107);
  DTensor teacher = rand_logits({3, 3}, 108);
  student.set_requires_grad(true);
  teacher.set_requires_grad(true);
  DGraph g;
  DTensor total = kd_combined_loss(g, student, teacher, {0, 1, 2}, DistillParams{});
  g.backward(total);
  REQUIRE(student.has_grad());
  CHECK_FALSE(teacher.has_grad());
  double norm = 0.0;
  for (double v : student.grad()) norm += v * v;
  CHECK(norm > 0.0);
}

TEST_CASE("kd loss temperature softens the student gradient") {
  // at high T the KL gradient scales like alpha * T * (p_s - p_t); check the
  // closed form against the implementation on a tiny case
  DTensor student = DTensor::from({1, 2}, {1.0, -1.0});
  DTensor teacher = DTensor::from({1, 2}, {-0.5, 0.5});
  student.set_requires_grad(true);
  DistillParams dp;
  dp.temperature = 4.0;
  dp.alpha = 1.0;
  dp.beta = 0.0;
  DGraph g;
  g.backward(kd_combined_loss(g, student, teacher, {0}, dp));
  const double ps = 1.0 / (1.0 + std::exp(-2.0 / 4.0));   // softened student p_0
  const double pt = 1.0 / (1.0 + std::exp(1.0 / 4.0));    // softened teacher p_0
  CHECK(close(student.grad()[0], dp.alpha * dp.temperature * (ps - pt), 1e-12));
  CHECK(close(student.grad()[1], -dp.alpha * dp.temperature * (ps - pt), 1e-12));
}

TEST_CASE("gradcheck: kd combined loss") {
  DTensor student = rand_logits({3, 4}, 109);
  DTensor teacher = rand_logits({3, 4}, 110);
  std::vector<int> labels{2, 0, 3};
  DistillParams dp;
  gradcheck({student},
            [&](DGraph& g) { return kd_combined_loss(g, student, teacher, labels, dp); });
}

TEST_CASE("kd loss validates inputs") {
  DGraph g(false);
  DTensor student = DTensor::zeros({2, 3});
  DTensor teacher = DTensor::zeros({2, 4});
  CHECK_THROWS_AS(kd_combined_loss(g, student, teacher, {0, 1}, DistillParams{}), Error);
  DistillParams bad_t;
  bad_t.temperature = 0.0;
  CHECK_THROWS_AS(kd_combined_loss(g, student, student.detached_copy(), {0, 1}, bad_t), Error);
  DistillParams bad_w;
  bad_w.alpha = -0.1;
  CHECK_THROWS_AS(kd_combined_loss(g, student, student.detached_copy(), {0, 1}, bad_w), Error);
}
