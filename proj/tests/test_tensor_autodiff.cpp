// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "newsret/autodiff.hpp"
#include "newsret/error.hpp"
#include "newsret/optim.hpp"
#include "support/oracles.hpp"

using namespace newsret;
using Catch::Matchers::WithinAbs;

namespace {

constexpr double kGradTolerance = 1e-4;

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::kUsage;
}

// Contracts a kernel output against fixed random weights so every output
// element contributes a distinct amount to the scalar.
struct Projector {
  std::vector<Tensor> weights;
  std::mt19937_64 rng{99};
  std::size_t next = 0;

  Var operator()(Var out) {
    if (next == weights.size()) {
      Tensor w(out.value().shape());
      std::normal_distribution<double> n(0.0, 1.0);
      for (double& v : w.data()) v = n(rng);
      weights.push_back(std::move(w));
    }
    return ops::sum(ops::mul(out, out.tape().constant(weights[next++])));
  }
  void reset() { next = 0; }
};

double check(std::vector<Parameter*> params, const std::function<Var(Tape&)>& body) {
  Projector proj;
  auto loss = [&](Tape& t) {
    proj.reset();
    return proj(body(t));
  };
  const auto r = oracle::check_gradients(params, loss);
  INFO(r.worst);
  CHECK(r.checked > 0);
  return r.max_rel_error;
}

}  // namespace

TEST_CASE("tensor shape and data stay consistent", "[tensor]") {
  Tensor t({2, 3}, 1.5);
  CHECK(t.numel() == 6);
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  CHECK(code_of([] { Tensor({2, 2}, std::vector<double>{1, 2, 3}); }) == ErrorCode::kDimension);
  CHECK(code_of([] { Tensor({0, 2}); }) == ErrorCode::kDimension);
  CHECK(Tensor::scalar(4.0).item() == 4.0);
}

TEST_CASE("matmul with the identity returns the input", "[kernel]") {
  Tape tape;
  Var a = tape.constant(Tensor::matrix(2, 2, {1, 2, 3, 4}));
  Var id = tape.constant(Tensor::matrix(2, 2, {1, 0, 0, 1}));
  const Tensor& out = ops::matmul(a, id).value();
  CHECK(out.data()[0] == 1);
  CHECK(out.data()[1] == 2);
  CHECK(out.data()[2] == 3);
  CHECK(out.data()[3] == 4);
}

TEST_CASE("kernels reject mismatched shapes", "[kernel]") {
  Tape tape;
  Var a = tape.constant(Tensor({2, 3}));
  Var b = tape.constant(Tensor({2, 3}));
  Var c = tape.constant(Tensor({3, 2}));
  CHECK(code_of([&] { ops::matmul(a, b); }) == ErrorCode::kDimension);
  CHECK(code_of([&] { ops::add(a, c); }) == ErrorCode::kDimension);
  CHECK(code_of([&] { ops::mul(a, c); }) == ErrorCode::kDimension);
  CHECK(code_of([&] { ops::add_bias(a, tape.constant(Tensor({1, 2}))); }) == ErrorCode::kDimension);
  CHECK(code_of([&] { ops::slice_rows(a, 1, 2); }) == ErrorCode::kDimension);
}

TEST_CASE("non-finite inputs raise a numeric error when validation is on", "[kernel]") {
  const bool saved = numeric_checks();
  set_numeric_checks(true);
  Tape tape;
  Var bad = tape.constant(Tensor::matrix(1, 2, {1.0, std::numeric_limits<double>::quiet_NaN()}));
  CHECK(code_of([&] { ops::gelu(bad); }) == ErrorCode::kNumeric);
  Var inf = tape.constant(Tensor::matrix(1, 2, {1.0, std::numeric_limits<double>::infinity()}));
  CHECK(code_of([&] { ops::softmax_rows(inf); }) == ErrorCode::kNumeric);
  set_numeric_checks(saved);
}

TEST_CASE("softmax of a zero row is uniform", "[kernel]") {
  Tape tape;
  const Tensor& p = ops::softmax_rows(tape.constant(Tensor({1, 3}, 0.0))).value();
  for (double v : p.data()) CHECK_THAT(v, WithinAbs(1.0 / 3.0, 1e-15));
}

TEST_CASE("softmax rows sum to one and ignore row shifts", "[kernel][property]") {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n(0.0, 5.0);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x({4, 9});
    for (double& v : x.data()) v = n(rng);
    Tensor shifted = x;
    for (std::size_t r = 0; r < 4; ++r) {
      const double c = n(rng) * 10.0;
      for (double& v : shifted.row(r)) v += c;
    }
    Tape tape;
    const Tensor& p = ops::softmax_rows(tape.constant(x)).value();
    const Tensor& q = ops::softmax_rows(tape.constant(shifted)).value();
    for (std::size_t r = 0; r < 4; ++r) {
      const auto row = p.row(r);
      CHECK_THAT(std::accumulate(row.begin(), row.end(), 0.0), WithinAbs(1.0, 1e-12));
      for (std::size_t c = 0; c < 9; ++c) CHECK_THAT(p.at(r, c), WithinAbs(q.at(r, c), 1e-12));
    }
  }
}

TEST_CASE("masked softmax gives disallowed entries zero probability", "[kernel]") {
  Tape tape;
  const std::vector<std::uint8_t> allowed = {1, 0, 1, 0, 0, 1};
  const Tensor& p = ops::softmax_rows(tape.constant(Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6})), allowed).value();
  CHECK(p.at(0, 1) == 0.0);
  CHECK(p.at(1, 0) == 0.0);
  CHECK(p.at(1, 1) == 0.0);
  CHECK_THAT(p.at(1, 2), WithinAbs(1.0, 1e-15));
  const std::vector<std::uint8_t> empty_row = {1, 1, 1, 0, 0, 0};
  CHECK(code_of([&] { ops::softmax_rows(tape.constant(Tensor({2, 3})), empty_row); }) == ErrorCode::kContract);
}

TEST_CASE("layer norm of [1,2,3] matches the hand computation", "[kernel]") {
  // mean 2, population variance 2/3, so (x - mean) / sigma = [-sqrt(1.5), 0, sqrt(1.5)].
  const double s = std::sqrt(1.5);
  Tape tape;
  Var gain = tape.constant(Tensor({1, 3}, 1.0));
  Var offset = tape.constant(Tensor({1, 3}, 0.0));
  const Tensor& y = ops::layer_norm_rows(tape.constant(Tensor::matrix(1, 3, {1, 2, 3})), gain, offset, 0.0).value();
  CHECK_THAT(y.at(0, 0), WithinAbs(-s, 1e-12));
  CHECK_THAT(y.at(0, 1), WithinAbs(0.0, 1e-12));
  CHECK_THAT(y.at(0, 2), WithinAbs(s, 1e-12));
  const double mean = (y.at(0, 0) + y.at(0, 1) + y.at(0, 2)) / 3.0;
  const double var = (y.at(0, 0) * y.at(0, 0) + y.at(0, 1) * y.at(0, 1) + y.at(0, 2) * y.at(0, 2)) / 3.0 - mean * mean;
  CHECK(std::abs(mean) < 1e-9);
  CHECK_THAT(var, WithinAbs(1.0, 1e-9));

  // With the model's epsilon the denominator is sqrt(var + eps).
  const Tensor& z = ops::layer_norm_rows(tape.constant(Tensor::matrix(1, 3, {1, 2, 3})), gain, offset, 1e-5).value();
  CHECK_THAT(z.at(0, 2), WithinAbs(1.0 / std::sqrt(2.0 / 3.0 + 1e-5), 1e-12));
}

TEST_CASE("layer norm rows are standardized", "[kernel][property]") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n(3.0, 4.0);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x({3, 16});
    for (double& v : x.data()) v = n(rng);
    Tape tape;
    const Tensor& y = ops::layer_norm_rows(tape.constant(x), tape.constant(Tensor({1, 16}, 1.0)),
                                           tape.constant(Tensor({1, 16}, 0.0)), 0.0)
                          .value();
    for (std::size_t r = 0; r < 3; ++r) {
      double m = 0.0, v = 0.0;
      for (double e : y.row(r)) m += e;
      m /= 16.0;
      for (double e : y.row(r)) v += (e - m) * (e - m);
      v /= 16.0;
      CHECK(std::abs(m) < 1e-9);
      CHECK_THAT(v, WithinAbs(1.0, 1e-6));
    }
  }
}

TEST_CASE("gelu uses the tanh approximation", "[kernel]") {
  Tape tape;
  const Tensor& y = ops::gelu(tape.constant(Tensor::matrix(1, 3, {-1.0, 0.0, 2.0}))).value();
  auto ref = [](double x) {
    return 0.5 * x * (1.0 + std::tanh(std::sqrt(2.0 / 3.141592653589793) * (x + 0.044715 * x * x * x)));
  };
  CHECK_THAT(y.at(0, 0), WithinAbs(ref(-1.0), 1e-15));
  CHECK(y.at(0, 1) == 0.0);
  CHECK_THAT(y.at(0, 2), WithinAbs(ref(2.0), 1e-15));
}

TEST_CASE("every kernel passes central finite differences", "[kernel][gradient]") {
  std::mt19937_64 rng(2024);
  Parameter a = oracle::random_param("a", 3, 4, rng);
  Parameter b = oracle::random_param("b", 4, 5, rng);
  Parameter c = oracle::random_param("c", 3, 4, rng);
  Parameter d = oracle::random_param("d", 5, 4, rng);
  Parameter bias = oracle::random_param("bias", 1, 4, rng);
  Parameter gain = oracle::random_param("gain", 1, 4, rng);
  Parameter table = oracle::random_param("table", 6, 4, rng);

  SECTION("matmul") { CHECK(check({&a, &b}, [&](Tape& t) { return ops::matmul(t.leaf(a), t.leaf(b)); }) < kGradTolerance); }
  SECTION("matmul_nt") {
    CHECK(check({&a, &d}, [&](Tape& t) { return ops::matmul_nt(t.leaf(a), t.leaf(d)); }) < kGradTolerance);
  }
  SECTION("add") { CHECK(check({&a, &c}, [&](Tape& t) { return ops::add(t.leaf(a), t.leaf(c)); }) < kGradTolerance); }
  SECTION("sub") { CHECK(check({&a, &c}, [&](Tape& t) { return ops::sub(t.leaf(a), t.leaf(c)); }) < kGradTolerance); }
  SECTION("mul") { CHECK(check({&a, &c}, [&](Tape& t) { return ops::mul(t.leaf(a), t.leaf(c)); }) < kGradTolerance); }
  SECTION("mul with a shared operand") {
    CHECK(check({&a}, [&](Tape& t) { return ops::mul(t.leaf(a), t.leaf(a)); }) < kGradTolerance);
  }
  SECTION("scale") { CHECK(check({&a}, [&](Tape& t) { return ops::scale(t.leaf(a), -2.5); }) < kGradTolerance); }
  SECTION("add_bias") {
    CHECK(check({&a, &bias}, [&](Tape& t) { return ops::add_bias(t.leaf(a), t.leaf(bias)); }) < kGradTolerance);
  }
  SECTION("softmax_rows") { CHECK(check({&a}, [&](Tape& t) { return ops::softmax_rows(t.leaf(a)); }) < kGradTolerance); }
  SECTION("masked softmax_rows") {
    const std::vector<std::uint8_t> causal = {1, 0, 0, 0, 1, 1, 0, 0, 1, 1, 1, 0};
    CHECK(check({&a}, [&](Tape& t) { return ops::softmax_rows(t.leaf(a), causal); }) < kGradTolerance);
  }
  SECTION("layer_norm_rows") {
    CHECK(check({&a, &gain, &bias},
                [&](Tape& t) { return ops::layer_norm_rows(t.leaf(a), t.leaf(gain), t.leaf(bias), 1e-5); }) <
          kGradTolerance);
  }
  SECTION("gelu") { CHECK(check({&a}, [&](Tape& t) { return ops::gelu(t.leaf(a)); }) < kGradTolerance); }
  SECTION("embedding") {
    const std::vector<std::int32_t> ids = {4, 0, 4, 2};
    CHECK(check({&table}, [&](Tape& t) { return ops::embedding(t.leaf(table), ids); }) < kGradTolerance);
  }
  SECTION("sum") { CHECK(check({&a}, [&](Tape& t) { return ops::sum(t.leaf(a)); }) < kGradTolerance); }
  SECTION("mean") { CHECK(check({&a}, [&](Tape& t) { return ops::mean(t.leaf(a)); }) < kGradTolerance); }
  SECTION("mean_rows") { CHECK(check({&a}, [&](Tape& t) { return ops::mean_rows(t.leaf(a)); }) < kGradTolerance); }
  SECTION("slice_rows") {
    CHECK(check({&a}, [&](Tape& t) { return ops::slice_rows(t.leaf(a), 1, 2); }) < kGradTolerance);
  }
  SECTION("slice_cols") {
    CHECK(check({&a}, [&](Tape& t) { return ops::slice_cols(t.leaf(a), 1, 3); }) < kGradTolerance);
  }
  SECTION("gather_rows") {
    const std::vector<std::size_t> rows = {2, 0, 2};
    CHECK(check({&a}, [&](Tape& t) { return ops::gather_rows(t.leaf(a), rows); }) < kGradTolerance);
  }
  SECTION("concat_rows") {
    CHECK(check({&a, &c}, [&](Tape& t) {
            const std::vector<Var> parts = {t.leaf(a), t.leaf(c)};
            return ops::concat_rows(parts);
          }) < kGradTolerance);
  }
  SECTION("concat_cols") {
    CHECK(check({&a, &c}, [&](Tape& t) {
            const std::vector<Var> parts = {t.leaf(c), t.leaf(a)};
            return ops::concat_cols(parts);
          }) < kGradTolerance);
  }
  SECTION("cross_entropy_rows") {
    const std::vector<std::int32_t> targets = {3, 0, 1};
    const auto r = oracle::check_gradients(
        {&a}, [&](Tape& t) { return ops::cross_entropy_rows(t.leaf(a), targets); });
    INFO(r.worst);
    CHECK(r.max_rel_error < kGradTolerance);
  }
}

TEST_CASE("softmax cross-entropy gradient is probabilities minus one-hot", "[gradient]") {
  Parameter logits{"logits", Tensor::matrix(1, 4, {0.3, -1.2, 2.0, 0.1}), true};
  Tape tape;
  const std::vector<std::int32_t> target = {2};
  const auto grads = tape.backward(ops::cross_entropy_rows(tape.leaf(logits), target));
  double z = 0.0;
  for (double v : logits.value.data()) z += std::exp(v);
  for (std::size_t j = 0; j < 4; ++j) {
    const double p = std::exp(logits.value.data()[j]) / z;
    CHECK_THAT(grads.at(&logits).data()[j], WithinAbs(p - (j == 2 ? 1.0 : 0.0), 1e-12));
  }
}

TEST_CASE("gradient of sum(W x) replicates x per row", "[gradient]") {
  std::mt19937_64 rng(5);
  Parameter w = oracle::random_param("w", 3, 4, rng);
  const Tensor x = Tensor::matrix(4, 1, {0.5, -1.0, 2.0, 0.25});
  Tape tape;
  const auto grads = tape.backward(ops::sum(ops::matmul(tape.leaf(w), tape.constant(x))));
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < 4; ++c) CHECK(grads.at(&w).at(r, c) == x.at(c, 0));
  }
  const auto fd = oracle::check_gradients(
      {&w}, [&](Tape& t) { return ops::sum(ops::matmul(t.leaf(w), t.constant(x))); });
  CHECK(fd.max_rel_error < kGradTolerance);
}

TEST_CASE("backward contracts", "[tape]") {
  std::mt19937_64 rng(3);
  Parameter used = oracle::random_param("used", 2, 2, rng);
  Parameter unused = oracle::random_param("unused", 2, 2, rng);
  Parameter frozen = oracle::random_param("frozen", 2, 2, rng);
  frozen.trainable = false;
  Tape tape;
  Var u = tape.leaf(used);
  tape.leaf(unused);
  Var f = tape.leaf(frozen);
  Var loss = ops::sum(ops::mul(u, f));
  const auto grads = tape.backward(loss);
  for (double v : grads.at(&unused).data()) CHECK(v == 0.0);
  for (double v : grads.at(&frozen).data()) CHECK(v == 0.0);
  CHECK(grads.at(&used).data()[0] == frozen.value.data()[0]);
  CHECK(tape.backward_visits() == tape.size());

  Tape other;
  CHECK(code_of([&] { other.backward(other.leaf(used)); }) == ErrorCode::kContract);
}

TEST_CASE("adam leaves parameters alone under zero gradient", "[optim]") {
  Parameter p{"p", Tensor::matrix(1, 2, {1.0, -2.0}), true};
  OptimizerState state;
  std::vector<Parameter*> params = {&p};
  GradientMap g;
  g[&p] = Tensor::matrix(1, 2, {0.5, 0.5});
  adam_step(params, g, state, 1e-3);
  const Tensor after_one = p.value;
  const double m_before = state.moments.at("p").first.data()[0];
  g[&p] = Tensor({1, 2}, 0.0);
  for (int i = 0; i < 5; ++i) adam_step(params, g, state, 1e-3);
  // A zero gradient still moves the parameter through the decaying first
  // moment; with a fresh state it must not move at all.
  CHECK(std::abs(state.moments.at("p").first.data()[0]) < std::abs(m_before));
  Parameter q{"q", Tensor::matrix(1, 2, {1.0, -2.0}), true};
  OptimizerState fresh;
  std::vector<Parameter*> qs = {&q};
  GradientMap zero;
  zero[&q] = Tensor({1, 2}, 0.0);
  for (int i = 0; i < 10; ++i) adam_step(qs, zero, fresh, 1e-3);
  CHECK(q.value.data()[0] == 1.0);
  CHECK(q.value.data()[1] == -2.0);
  CHECK(fresh.step == 10);
  CHECK(after_one.data()[0] != 1.0);
}

TEST_CASE("adam under a constant gradient steps by lr against its sign", "[optim]") {
  Parameter p{"p", Tensor::matrix(1, 2, {0.0, 0.0}), true};
  OptimizerState state;
  std::vector<Parameter*> params = {&p};
  GradientMap g;
  g[&p] = Tensor::matrix(1, 2, {3.0, -0.25});
  const double lr = 0.01;
  for (int step = 1; step <= 200; ++step) {
    const double before0 = p.value.data()[0];
    const double before1 = p.value.data()[1];
    adam_step(params, g, state, lr);
    // Bias correction makes m_hat = g and v_hat = g^2, so each step is lr * g / (|g| + eps).
    CHECK_THAT(before0 - p.value.data()[0], WithinAbs(lr * 3.0 / (3.0 + 1e-8), 1e-12));
    CHECK(p.value.data()[1] > before1);
  }
  CHECK_THAT(p.value.data()[0], WithinAbs(-2.0, 1e-6));
  CHECK(state.step == 200);
}

TEST_CASE("adam rejects shape mismatches and non-positive rates", "[optim]") {
  Parameter p{"p", Tensor({2, 2}), true};
  std::vector<Parameter*> params = {&p};
  OptimizerState state;
  GradientMap g;
  g[&p] = Tensor({1, 4});
  CHECK(code_of([&] { adam_step(params, g, state, 1e-3); }) == ErrorCode::kDimension);
  g[&p] = Tensor({2, 2});
  CHECK(code_of([&] { adam_step(params, g, state, 0.0); }) == ErrorCode::kConfig);
}

TEST_CASE("learning-rate schedule", "[optim]") {
  CHECK(lr_at_step(0, 100, 200, 1e-5) == 0.0);
  CHECK(lr_at_step(100, 100, 200, 1e-5) == 1e-5);
  CHECK_THAT(lr_at_step(150, 100, 200, 1e-5), WithinAbs(5e-6, 1e-18));
  CHECK(lr_at_step(200, 100, 200, 1e-5) == 0.0);
  CHECK(lr_at_step(500, 100, 200, 1e-5) == 0.0);
  CHECK(code_of([] { lr_at_step(0, 100, 100, 1e-5); }) == ErrorCode::kConfig);

  // Both one-sided linear pieces meet at the warmup step.
  const std::uint64_t warmup = 40, total = 130;
  const double peak = 3e-3;
  const double left_slope = lr_at_step(warmup - 1, warmup, total, peak) - lr_at_step(warmup - 2, warmup, total, peak);
  const double right_slope = lr_at_step(warmup + 2, warmup, total, peak) - lr_at_step(warmup + 1, warmup, total, peak);
  const double from_left = lr_at_step(warmup - 1, warmup, total, peak) + left_slope;
  const double from_right = lr_at_step(warmup + 1, warmup, total, peak) - right_slope;
  CHECK_THAT(from_left, WithinAbs(peak, 1e-15));
  CHECK_THAT(from_right, WithinAbs(peak, 1e-15));
}
