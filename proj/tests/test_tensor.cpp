#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "deskmt/tensor.hpp"

using namespace deskmt;
using T = TensorPtr<double>;

namespace {

T randn(std::vector<long> shape, std::mt19937_64& rng, double std = 1.0) {
  auto t = tensor<double>(std::move(shape));
  std::normal_distribution<double> d(0.0, std);
  for (auto& x : t->data) x = d(rng);
  return t;
}

// Max relative gradient error of loss = sum(w .* op(x)) w.r.t. x, where w is
// a fixed random weighting that breaks symmetry.
double op_grad_err(const std::function<T(Tape<double>*, const T&)>& op, const T& x,
                   double eps = 1e-6) {
  std::mt19937_64 wrng(12345);
  T w;  // built lazily to match op output shape
  auto loss_val = [&](const T& xx) {
    auto y = op(nullptr, xx);
    if (!w) w = randn(y->shape, wrng);
    double s = 0;
    for (size_t i = 0; i < y->data.size(); ++i) s += y->data[i] * w->data[i];
    return s;
  };
  loss_val(x);  // ensure w exists
  return grad_check<double>(
      loss_val,
      [&](const T& xx) {
        xx->requires_grad = true;
        xx->zero_grad();
        Tape<double> tape;
        auto y = op(&tape, xx);
        auto loss = ops::sum(&tape, ops::mul(&tape, y, w));
        tape.backward(loss);
      },
      x, eps);
}

}  // namespace

TEST_CASE("softmax basics") {
  auto x = tensor<double>({2}, {0.0, 0.0});
  auto y = ops::softmax<double>(nullptr, x);
  CHECK(y->data[0] == Catch::Approx(0.5));
  CHECK(y->data[1] == Catch::Approx(0.5));

  std::mt19937_64 rng(1);
  auto a = randn({4, 9}, rng, 3.0);
  auto sa = ops::softmax<double>(nullptr, a);
  for (int r = 0; r < 4; ++r) {
    double s = 0;
    for (int c = 0; c < 9; ++c) s += sa->data[r * 9 + c];
    CHECK(s == Catch::Approx(1.0).epsilon(1e-6));
  }
  // invariance under adding a constant to all logits
  auto b = tensor<double>(a->shape, a->data);
  for (auto& v : b->data) v += 100.0;
  auto sb = ops::softmax<double>(nullptr, b);
  for (size_t i = 0; i < sa->data.size(); ++i)
    CHECK(sa->data[i] == Catch::Approx(sb->data[i]).margin(1e-5));
}

TEST_CASE("layer_norm statistics") {
  // constant vector normalizes to zeros (unit gain)
  auto x = tensor<double>({1, 8}, std::vector<double>(8, 3.7));
  auto gain = tensor<double>({8}, std::vector<double>(8, 1.0));
  auto y = ops::layer_norm<double>(nullptr, x, gain, 1e-6);
  for (double v : y->data) CHECK(v == Catch::Approx(0.0).margin(1e-6));

  std::mt19937_64 rng(2);
  auto a = randn({5, 16}, rng);
  auto ya = ops::layer_norm<double>(nullptr, a, tensor<double>({16}, std::vector<double>(16, 1.0)),
                                    1e-6);
  for (int r = 0; r < 5; ++r) {
    double mean = 0, var = 0;
    for (int c = 0; c < 16; ++c) mean += ya->data[r * 16 + c];
    mean /= 16;
    for (int c = 0; c < 16; ++c) {
      double d = ya->data[r * 16 + c] - mean;
      var += d * d;
    }
    var /= 16;
    CHECK(std::abs(mean) < 1e-6);
    CHECK(var == Catch::Approx(1.0).margin(1e-4));
  }
}

TEST_CASE("matmul against a naive triple-loop oracle") {
  std::mt19937_64 rng(3);
  auto a = randn({2, 3}, rng);
  auto b = randn({3, 4}, rng);
  auto c = ops::matmul<double>(nullptr, a, b);
  REQUIRE(c->shape == std::vector<long>{2, 4});
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 4; ++j) {
      double s = 0;
      for (int k = 0; k < 3; ++k) s += a->data[i * 3 + k] * b->data[k * 4 + j];
      CHECK(c->data[i * 4 + j] == Catch::Approx(s).epsilon(1e-12));
    }
  CHECK_THROWS_AS(ops::matmul<double>(nullptr, a, a), Error);
}

TEST_CASE("matmul variants agree") {
  std::mt19937_64 rng(4);
  auto a = randn({5, 3}, rng);
  auto b = randn({3, 4}, rng);
  auto bt = ops::transpose_last2<double>(nullptr, b);
  auto c1 = ops::matmul<double>(nullptr, a, b);
  auto c2 = ops::matmul_nt<double>(nullptr, a, bt);
  for (size_t i = 0; i < c1->data.size(); ++i)
    CHECK(c1->data[i] == Catch::Approx(c2->data[i]).epsilon(1e-12));

  auto ba = randn({2, 5, 3}, rng);
  auto bb = randn({2, 3, 4}, rng);
  auto c3 = ops::bmm<double>(nullptr, ba, bb);
  auto c4 = ops::bmm_nt<double>(nullptr, ba, ops::transpose_last2<double>(nullptr, bb));
  for (size_t i = 0; i < c3->data.size(); ++i)
    CHECK(c3->data[i] == Catch::Approx(c4->data[i]).epsilon(1e-12));
}

TEST_CASE("backward: trivial analytic cases") {
  auto x = tensor<double>({2}, {1.0, 2.0}, true);
  {
    Tape<double> tape;
    auto loss = ops::sum(&tape, x);
    x->zero_grad();
    tape.backward(loss);
    CHECK(x->grad == std::vector<double>{1.0, 1.0});
  }
  {
    Tape<double> tape;
    auto loss = ops::sum(&tape, ops::mul(&tape, x, x));
    x->zero_grad();
    tape.backward(loss);
    CHECK(x->grad[0] == Catch::Approx(2.0));
    CHECK(x->grad[1] == Catch::Approx(4.0));
  }
}

TEST_CASE("tape misuse") {
  auto x = tensor<double>({3}, {1, 2, 3}, true);
  Tape<double> tape;
  auto y = ops::mul(&tape, x, x);
  CHECK_THROWS_AS(tape.backward(y), Error);  // non-scalar loss
  auto loss = ops::sum(&tape, y);
  tape.backward(loss);
  CHECK_THROWS_AS(tape.backward(loss), Error);  // consumed tape
}

TEST_CASE("gradient checks per primitive") {
  std::mt19937_64 rng(5);
  auto fresh = [&](std::vector<long> shape) { return randn(shape, rng); };

  SECTION("scale/exp/tanh") {
    CHECK(op_grad_err([](auto* t, const T& x) { return ops::scale(t, x, 2.5); }, fresh({3, 4})) < 1e-7);
    CHECK(op_grad_err([](auto* t, const T& x) { return ops::exp(t, x); }, fresh({3, 4})) < 1e-7);
    CHECK(op_grad_err([](auto* t, const T& x) { return ops::tanh(t, x); }, fresh({3, 4})) < 1e-7);
  }
  SECTION("relu away from the kink") {
    auto x = fresh({4, 4});
    for (auto& v : x->data)
      if (std::abs(v) < 0.1) v += 0.5;
    CHECK(op_grad_err([](auto* t, const T& xx) { return ops::relu(t, xx); }, x) < 1e-7);
  }
  SECTION("add and add_cycle, both operands") {
    auto other = fresh({3, 4});
    CHECK(op_grad_err([&](auto* t, const T& x) { return ops::add(t, x, other); }, fresh({3, 4})) < 1e-7);
    auto big = fresh({2, 3, 4});
    CHECK(op_grad_err([&](auto* t, const T& x) { return ops::add_cycle(t, big, x); }, fresh({3, 4})) < 1e-7);
    auto small = fresh({3, 4});
    CHECK(op_grad_err([&](auto* t, const T& x) { return ops::add_cycle(t, x, small); }, fresh({2, 3, 4})) < 1e-7);
  }
  SECTION("softmax and layer_norm") {
    CHECK(op_grad_err([](auto* t, const T& x) { return ops::softmax(t, x); }, fresh({3, 7})) < 1e-6);
    auto gain = fresh({8});
    CHECK(op_grad_err([&](auto* t, const T& x) { return ops::layer_norm(t, x, gain, 1e-6); },
                      fresh({4, 8})) < 1e-6);
    auto inp = fresh({4, 8});
    CHECK(op_grad_err([&](auto* t, const T& g) { return ops::layer_norm(t, inp, g, 1e-6); },
                      fresh({8})) < 1e-6);
  }
  SECTION("matmul family, both operands") {
    auto b = fresh({4, 5});
    CHECK(op_grad_err([&](auto* t, const T& x) { return ops::matmul(t, x, b); }, fresh({3, 4})) < 1e-7);
    auto a = fresh({3, 4});
    CHECK(op_grad_err([&](auto* t, const T& x) { return ops::matmul(t, a, x); }, fresh({4, 5})) < 1e-7);
    auto bn = fresh({5, 4});
    CHECK(op_grad_err([&](auto* t, const T& x) { return ops::matmul_nt(t, x, bn); }, fresh({3, 4})) < 1e-7);
    CHECK(op_grad_err([&](auto* t, const T& x) { return ops::matmul_nt(t, a, x); }, fresh({5, 4})) < 1e-7);
    auto bb = fresh({2, 4, 5});
    CHECK(op_grad_err([&](auto* t, const T& x) { return ops::bmm(t, x, bb); }, fresh({2, 3, 4})) < 1e-7);
    auto ba = fresh({2, 3, 4});
    CHECK(op_grad_err([&](auto* t, const T& x) { return ops::bmm(t, ba, x); }, fresh({2, 4, 5})) < 1e-7);
    auto bnt = fresh({2, 5, 4});
    CHECK(op_grad_err([&](auto* t, const T& x) { return ops::bmm_nt(t, x, bnt); }, fresh({2, 3, 4})) < 1e-7);
    CHECK(op_grad_err([&](auto* t, const T& x) { return ops::bmm_nt(t, ba, x); }, fresh({2, 5, 4})) < 1e-7);
  }
  SECTION("shape ops") {
    CHECK(op_grad_err([](auto* t, const T& x) { return ops::reshape(t, x, {4, 3}); }, fresh({3, 4})) < 1e-7);
    CHECK(op_grad_err([](auto* t, const T& x) { return ops::transpose_last2(t, x); }, fresh({2, 3, 4})) < 1e-7);
    auto other = fresh({3, 2});
    CHECK(op_grad_err([&](auto* t, const T& x) { return ops::concat(t, x, other, 1); }, fresh({3, 4})) < 1e-7);
    CHECK(op_grad_err([&](auto* t, const T& x) { return ops::concat(t, other, x, 0); }, fresh({5, 2})) < 1e-7);
    CHECK(op_grad_err([](auto* t, const T& x) { return ops::slice(t, x, 1, 1, 2); }, fresh({3, 5})) < 1e-7);
  }
  SECTION("embedding and gather_bias") {
    std::vector<int> ids = {0, 2, 2, 1};
    CHECK(op_grad_err([&](auto* t, const T& x) { return ops::embedding(t, x, ids); }, fresh({4, 6})) < 1e-7);
    std::vector<int> bix = {0, 1, 1, 2, 0, 2};
    CHECK(op_grad_err([&](auto* t, const T& x) { return ops::gather_bias(t, x, bix, 2, 3); },
                      fresh({3, 4})) < 1e-7);
  }
}

TEST_CASE("cross entropy values and gradient") {
  // uniform logits -> ln(V)
  auto logits = tensor<double>({2, 10}, std::vector<double>(20, 0.3));
  std::vector<int> targets = {4, 7};
  auto loss = ops::cross_entropy<double>(nullptr, logits, targets, -1);
  CHECK(loss->data[0] == Catch::Approx(std::log(10.0)).epsilon(1e-12));

  // one-hot-correct extreme logits -> ~0
  auto sharp = tensor<double>({1, 5});
  sharp->data = {0, 0, 50, 0, 0};
  auto l2 = ops::cross_entropy<double>(nullptr, sharp, {2}, -1);
  CHECK(l2->data[0] == Catch::Approx(0.0).margin(1e-9));

  // finite-difference check at tightened eps
  std::mt19937_64 rng(6);
  auto x = randn({4, 7}, rng);
  std::vector<int> tg = {1, 0, 6, 3};
  auto err = grad_check<double>(
      [&](const T& xx) { return ops::cross_entropy<double>(nullptr, xx, tg, 0)->data[0]; },
      [&](const T& xx) {
        xx->requires_grad = true;
        xx->zero_grad();
        Tape<double> tape;
        auto l = ops::cross_entropy(&tape, xx, tg, 0);
        tape.backward(l);
      },
      x, 1e-6);
  CHECK(err < 1e-6);

  // ignored positions receive zero gradient
  auto y = randn({3, 5}, rng);
  y->requires_grad = true;
  y->zero_grad();
  Tape<double> tape;
  std::vector<int> tg2 = {2, 0, 4};  // position 1 ignored (ignore_index 0)
  auto l3 = ops::cross_entropy(&tape, y, tg2, 0);
  tape.backward(l3);
  for (int c = 0; c < 5; ++c) CHECK(y->grad[5 + c] == 0.0);
  CHECK_THROWS_AS(ops::cross_entropy<double>(nullptr, y, {0, 0, 0}, 0), Error);
}

TEST_CASE("grad_check on sum is exact") {
  std::mt19937_64 rng(7);
  auto x = randn({4, 4}, rng);
  auto err = grad_check<double>(
      [](const T& xx) { return ops::sum<double>(nullptr, xx)->data[0]; },
      [](const T& xx) {
        xx->requires_grad = true;
        xx->zero_grad();
        Tape<double> tape;
        auto l = ops::sum(&tape, xx);
        tape.backward(l);
      },
      x, 1e-5);
  CHECK(err < 1e-10);
}

TEST_CASE("shape errors carry both shapes") {
  auto a = tensor<double>({2, 3});
  auto b = tensor<double>({3, 3});
  try {
    ops::add<double>(nullptr, a, b);
    FAIL("expected shape error");
  } catch (const Error& e) {
    std::string msg = e.what();
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[3,3]") != std::string::npos);
  }
}
