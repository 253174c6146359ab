#include <cmath>
#include <random>

#include "doctest.h"
#include "uit/gradcheck.hpp"
#include "uit/tensor.hpp"

using namespace uit;

TEST_CASE("matmul by identity returns the other operand") {
  Tensor eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor m({3, 3}, {1, -2, 3, 4, 5, -6, 7, 8, 9.5f});
  CHECK(matmul(eye, m) == m);
}

TEST_CASE("matmul hand-computed product") {
  Tensor a({2, 2}, {1, 2, 3, 4});
  Tensor b({2, 1}, {5, 6});
  const Tensor c = matmul(a, b);
  CHECK(c.shape() == Shape{2, 1});
  CHECK(c[0] == 17.0f);
  CHECK(c[1] == 39.0f);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tensor a({2, 3});
  Tensor b({4, 2});
  try {
    matmul(a, b);
    FAIL("expected an error");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[4,2]") != std::string::npos);
  }
}

TEST_CASE("softmax closed forms") {
  const Tensor u = softmax_rows(Tensor({1, 4}, {2, 2, 2, 2}));
  for (float v : u.data()) CHECK(v == doctest::Approx(0.25));
  const Tensor y = softmax_rows(Tensor({1, 2}, {0.0f, float(std::log(3.0))}));
  CHECK(y[0] == doctest::Approx(0.25).epsilon(1e-6));
  CHECK(y[1] == doctest::Approx(0.75).epsilon(1e-6));
}

TEST_CASE("softmax rows sum to one and ignore a per-row shift") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-30.0, 30.0);
  Tensor64 x({5, 7});
  for (auto& v : x.values()) v = u(rng);
  Tensor64 shifted = x;
  for (std::size_t r = 0; r < 5; ++r) {
    for (auto& v : shifted.row(r)) v += 100.0 * double(r);
  }
  const auto y = softmax_rows(x);
  const auto ys = softmax_rows(shifted);
  for (std::size_t r = 0; r < 5; ++r) {
    double s = 0.0;
    for (double v : y.row(r)) s += v;
    CHECK(std::abs(s - 1.0) < 1e-6);
  }
  for (std::size_t i = 0; i < y.size(); ++i) CHECK(std::abs(y[i] - ys[i]) < 1e-12);
}

TEST_CASE("layer_norm of a constant row is zero") {
  Tensor x({1, 6}, 4.5f);
  const Tensor y = layer_norm(x, Tensor({6}, 1.0f), Tensor({6}, 0.0f));
  for (float v : y.data()) CHECK(v == 0.0f);
}

TEST_CASE("layer_norm output mean equals a constant beta") {
  Tensor x({2, 5}, {1, 7, -3, 2, 9, 0.5f, 0.25f, -8, 4, 1});
  const Tensor y = layer_norm(x, Tensor({5}, 2.5f), Tensor({5}, 0.75f));
  for (std::size_t r = 0; r < 2; ++r) {
    double s = 0.0;
    for (float v : y.row(r)) s += v;
    CHECK(s / 5.0 == doctest::Approx(0.75).epsilon(1e-5));
  }
}

TEST_CASE("activation spot values") {
  const Tensor r = relu(Tensor({2}, {-2.0f, 3.0f}));
  CHECK(r[0] == 0.0f);
  CHECK(r[1] == 3.0f);
  CHECK(gelu(Tensor({1}, 0.0f))[0] == 0.0f);
  // x * Phi(x) at x = 1 with Phi from the error function.
  const double expected = 0.5 * (1.0 + std::erf(1.0 / std::sqrt(2.0)));
  CHECK(gelu(Tensor64({1}, 1.0))[0] == doctest::Approx(expected).epsilon(1e-12));
  CHECK(parse_activation("gelu") == Activation::kGeLU);
  CHECK_THROWS(parse_activation("tanh"));
}

TEST_CASE("bce_with_logits closed forms and stability") {
  CHECK(bce_with_logits(Tensor({1, 1}, 0.0f), Tensor({1, 1}, 0.5f)) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-6));
  const float big = bce_with_logits(Tensor({1, 1}, 50.0f), Tensor({1, 1}, 1.0f));
  CHECK(std::isfinite(big));
  CHECK(big < 1e-6f);
  const float neg = bce_with_logits(Tensor({1, 1}, -50.0f), Tensor({1, 1}, 0.0f));
  CHECK(neg < 1e-6f);
  CHECK_THROWS_AS(bce_with_logits(Tensor({1, 1}, 0.0f), Tensor({1, 1}, 1.5f)),
                  std::invalid_argument);
}

TEST_CASE("bce gradient is (sigmoid - y) / n") {
  Tensor64 z({1, 2}, {0.3, -1.2});
  Tensor64 y({1, 2}, {1.0, 0.25});
  const auto g = bce_with_logits_backward(z, y);
  for (std::size_t i = 0; i < 2; ++i) {
    const double s = 1.0 / (1.0 + std::exp(-z[i]));
    CHECK(g[i] == doctest::Approx((s - y[i]) / 2.0).epsilon(1e-12));
  }
}

TEST_CASE("every kernel backward matches central differences on 20 seeds") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    for (auto check : {check_matmul, check_softmax, check_layer_norm, check_relu, check_gelu,
                       check_bce}) {
      const auto r = check(seed);
      INFO(r.name << " seed " << seed << " err " << r.max_rel_error);
      CHECK(r.max_rel_error < kOpTolerance);
    }
  }
}

TEST_CASE("numeric gradient of a quadratic") {
  Tensor64 x({3}, {1.0, -2.0, 0.5});
  auto f = [&] { return x[0] * x[0] + 3.0 * x[1] + x[2] * x[2] * x[2]; };
  const auto g = numeric_gradient(f, x);
  CHECK(g[0] == doctest::Approx(2.0).epsilon(1e-8));
  CHECK(g[1] == doctest::Approx(3.0).epsilon(1e-8));
  CHECK(g[2] == doctest::Approx(0.75).epsilon(1e-6));
  CHECK(x[0] == 1.0);  // restored
}

TEST_CASE("non-finite values are reported") {
  Tensor t({2}, {1.0f, NAN});
  CHECK_FALSE(all_finite(t));
  CHECK_THROWS_WITH_AS(require_finite(t, "probe"), doctest::Contains("probe"), std::runtime_error);
}
