#include <doctest.h>

#include <cmath>

#include "cag/errors.hpp"
#include "oracles.hpp"

using namespace cag;
using cag::test::gradient_error;

namespace {

std::vector<double> vals(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

}  // namespace

TEST_CASE("matmul: identity cases") {
  const auto a = Tensor::matrix({{1, 2}, {3, 4}});
  const auto id = Tensor::matrix({{1, 0}, {0, 1}});
  CHECK(vals(matmul(a, id)) == std::vector<double>{1, 2, 3, 4});
  const auto col = Tensor::matrix({{2}, {3}});
  const auto out = matmul(id, col);
  CHECK(out.shape() == Shape{2, 1});
  CHECK(vals(out) == std::vector<double>{2, 3});
}

TEST_CASE("matmul: random 3x4 by 4x2 equals a triple loop exactly") {
  CounterRng rng(7, 1);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = test::random_tensor(rng, {3, 4});
    const auto b = test::random_tensor(rng, {4, 2});
    const auto c = matmul(a, b);
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t j = 0; j < 2; ++j) {
        double acc = 0.0;
        for (std::size_t k = 0; k < 4; ++k) acc += a.at(i, k) * b.at(k, j);
        CHECK(c.at(i, j) == acc);
      }
    }
  }
}

TEST_CASE("matmul: shape mismatch names both shapes") {
  const auto a = Tensor::zeros({2, 3});
  const auto b = Tensor::zeros({2, 3});
  try {
    matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string what = e.what();
    CHECK(what.find("[2 x 3]") != std::string::npos);
  }
}

TEST_CASE("broadcasting is limited to scalars") {
  CHECK_THROWS_AS(add(Tensor::zeros({2, 3}), Tensor::zeros({3})), DimensionError);
  CHECK_THROWS_AS(mul(Tensor::zeros({2}), Tensor::zeros({3})), DimensionError);
  const auto r = mul(Tensor::vector({1, 2, 3}), Tensor::scalar(2.0));
  CHECK(vals(r) == std::vector<double>{2, 4, 6});
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1, 2, 3}), DimensionError);
}

TEST_CASE("relu: values and subgradient") {
  CHECK(vals(relu(Tensor::vector({-1, 0, 2}))) == std::vector<double>{0, 0, 2});
  CHECK(vals(relu(Tensor::vector({-3, -0.5}))) == std::vector<double>{0, 0});
  auto x = Tensor::vector({-1, 2}, true);
  Tape tape;
  tape.backward(sum(relu(x)));
  CHECK(vals(Tensor::vector({x.grad()[0], x.grad()[1]})) == std::vector<double>{0, 1});
}

TEST_CASE("relu: gradient at exactly zero is zero") {
  auto x = Tensor::vector({0.0}, true);
  Tape tape;
  tape.backward(sum(relu(x)));
  CHECK(x.grad()[0] == 0.0);
}

TEST_CASE("softmax: symmetry, stability and extended-precision oracle") {
  const auto half = softmax(Tensor::matrix({{0, 0}}));
  CHECK(half.at(0, 0) == 0.5);
  CHECK(half.at(0, 1) == 0.5);

  const auto big = softmax(Tensor::matrix({{1000, 0}}));
  CHECK(std::isfinite(big.at(0, 0)));
  CHECK(big.at(0, 0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(big.at(0, 1) >= 0.0);
  CHECK(big.at(0, 1) < 1e-300);

  const auto p = softmax(Tensor::matrix({{1, 2, 3}}));
  const auto ref = test::naive_softmax({{1.0L, 2.0L, 3.0L}});
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(std::fabs(p.at(0, c) - static_cast<double>(ref[0][c])) <= 1e-12);
  }
}

TEST_CASE("softmax: rows are in (0,1) and sum to one") {
  CounterRng rng(11, 2);
  for (int trial = 0; trial < 100; ++trial) {
    const auto p = softmax(test::random_tensor(rng, {5, 6}, -8.0, 8.0));
    for (std::size_t i = 0; i < 5; ++i) {
      double s = 0.0;
      for (std::size_t c = 0; c < 6; ++c) {
        CHECK(p.at(i, c) > 0.0);
        CHECK(p.at(i, c) < 1.0);
        s += p.at(i, c);
      }
      CHECK(std::fabs(s - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("l2_norm: values, zero vector and oracle") {
  CHECK(l2_norm(Tensor::vector({3, 4})).item() == 5.0);
  auto z = Tensor::vector({0, 0, 0}, true);
  Tape tape;
  const auto n = l2_norm(z);
  CHECK(n.item() == 0.0);
  tape.backward(n);
  for (double g : z.grad()) CHECK(g == 0.0);

  CounterRng rng(3, 3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto v = test::random_tensor(rng, {8}, -5.0, 5.0);
    long double s = 0.0L;
    for (double x : v.values()) s += static_cast<long double>(x) * x;
    CHECK(std::fabs(l2_norm(v).item() - static_cast<double>(std::sqrt(s))) <= 1e-12);
  }
}

TEST_CASE("backward: simple closed forms") {
  auto x = Tensor::vector({1, 2, 3, 4, 5}, true);
  {
    Tape tape;
    tape.backward(sum(x));
    for (double g : x.grad()) CHECK(g == 1.0);
  }
  auto y = Tensor::vector({1, 2}, true);
  Tape tape;
  tape.backward(sum(mul(y, y)));
  CHECK(y.grad()[0] == 2.0);
  CHECK(y.grad()[1] == 4.0);
}

TEST_CASE("backward: contract errors") {
  auto x = Tensor::vector({1, 2}, true);
  Tape tape;
  CHECK_THROWS_AS(tape.backward(mul(x, x)), ContractError);
  const auto loss = sum(x);
  tape.backward(loss);
  CHECK_THROWS_AS(tape.backward(loss), ContractError);
  tape.reset();
  const auto again = sum(scale(x, 3.0));
  tape.backward(again);
  CHECK(x.grad()[0] == 3.0);
}

TEST_CASE("backward: leaf gradients are overwritten, not accumulated") {
  auto x = Tensor::vector({1, 2}, true);
  for (int i = 0; i < 3; ++i) {
    Tape tape;
    tape.backward(sum(x));
  }
  CHECK(x.grad()[0] == 1.0);
}

TEST_CASE("no-grad scope records nothing") {
  auto x = Tensor::vector({1, 2}, true);
  Tape tape;
  {
    NoGradScope no_grad;
    const auto y = mul(x, x);
    CHECK_FALSE(y.requires_grad());
  }
  CHECK(tape.node_count() == 0);
}

TEST_CASE("masked_nll: clamp and mask") {
  const auto p = Tensor::matrix({{0.5, 0.5}, {0.0, 1.0}});
  const std::vector<std::int32_t> labels{0, 0};
  CHECK(masked_nll(p, labels, std::vector<std::uint8_t>{1, 0}).item() ==
        doctest::Approx(0.6931471805599453).epsilon(1e-15));
  const double clamped = masked_nll(p, labels, std::vector<std::uint8_t>{0, 1}).item();
  CHECK(clamped == doctest::Approx(-std::log(kLogFloor)));
  CHECK(masked_nll(p, labels, std::vector<std::uint8_t>{0, 0}).item() == 0.0);
  CHECK_THROWS_AS(masked_nll(p, std::vector<std::int32_t>{2, 0}, std::vector<std::uint8_t>{1, 1}),
                  ContractError);
}

TEST_CASE("determinism: identical inputs give bit-identical outputs") {
  CounterRng rng(5, 5);
  const auto a = test::random_tensor(rng, {6, 7});
  const auto b = test::random_tensor(rng, {7, 3});
  const auto r1 = softmax(matmul(a, b));
  const auto r2 = softmax(matmul(a, b));
  CHECK(vals(r1) == vals(r2));
}

TEST_CASE("finite differences: every differentiable op on 100 seeded instances") {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    CounterRng rng(seed, 0x4644);
    auto a = test::random_tensor(rng, {3, 4});
    auto b = test::random_tensor(rng, {4, 2});
    auto w = test::random_tensor(rng, {3, 2});
    auto v = test::random_tensor(rng, {2});
    auto kinky = test::random_away_from_zero(rng, {3, 4});
    auto s = test::random_tensor(rng, {});
    auto n = test::random_away_from_zero(rng, {5});

    // A fixed random weighting makes every output element matter.
    auto weighted = [&w](const Tensor& t) { return sum(mul(t, w)); };

    worst = std::max(worst, gradient_error({a, b}, [&] { return weighted(matmul(a, b)); }));
    worst = std::max(worst, gradient_error({w, v}, [&] { return weighted(add_row_vector(w, v)); }));
    worst = std::max(worst, gradient_error({a, kinky}, [&] { return sum(mul(add(a, kinky), sub(kinky, a))); }));
    worst = std::max(worst, gradient_error({a, s}, [&] { return sum(mul(a, s)); }));
    worst = std::max(worst, gradient_error({a}, [&] { return sum(mul(scale(a, -1.7), a)); }));
    worst = std::max(worst, gradient_error({kinky}, [&] { return sum(mul(relu(kinky), kinky)); }));
    worst = std::max(worst, gradient_error({kinky}, [&] { return sum(mul(leaky_relu(kinky, 0.2), kinky)); }));
    worst = std::max(worst, gradient_error({a}, [&] { return sum(mul(softplus(scale(a, 4.0)), a)); }));
    worst = std::max(worst, gradient_error({w}, [&] { return weighted(softmax(scale(w, 3.0))); }));
    worst = std::max(worst, gradient_error({n}, [&] { return l2_norm(n); }));

    auto logits = test::random_tensor(rng, {4, 3}, -2.0, 2.0);
    std::vector<std::int32_t> labels(4);
    std::vector<std::uint8_t> mask(4);
    for (std::size_t j = 0; j < 4; ++j) {
      labels[j] = static_cast<std::int32_t>(rng.below(3));
      mask[j] = rng.uniform() < 0.7;
    }
    mask[0] = 1;
    worst = std::max(worst, gradient_error({logits}, [&] {
      return masked_nll(softmax(logits), labels, mask);
    }));
  }
  MESSAGE("worst relative error " << worst);
  CHECK(worst <= 1e-4);
}
