#include <cmath>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "uit/metrics.hpp"

using namespace uit;

namespace {

const LabelSpace& labels() {
  static const LabelSpace ls({"speech", "dog", "car"}, {"yes", "no", "up"}, 0);
  return ls;
}

}  // namespace

TEST_CASE("average precision spot values") {
  std::vector<float> s = {0.9f, 0.8f, 0.2f, 0.1f};
  CHECK(*average_precision(s, std::vector<float>{1, 1, 0, 0}) == 1.0);
  CHECK(*average_precision(s, std::vector<float>{0, 1, 0, 0}) == 0.5);
  CHECK_FALSE(average_precision(s, std::vector<float>{0, 0, 0, 0}).has_value());
}

TEST_CASE("ties keep input order") {
  std::vector<float> s = {0.5f, 0.5f, 0.5f};
  CHECK(*average_precision(s, std::vector<float>{0, 0, 1}) == doctest::Approx(1.0 / 3.0));
  CHECK(*average_precision(s, std::vector<float>{1, 0, 0}) == 1.0);
}

TEST_CASE("average precision equals the brute-force oracle") {
  Rng rng(2024);
  std::uniform_int_distribution<int> size(1, 20);
  std::uniform_int_distribution<int> level(0, 5);  // coarse scores force ties
  std::bernoulli_distribution pos(0.4);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t m = size(rng);
    std::vector<float> s(m), t(m);
    for (std::size_t i = 0; i < m; ++i) {
      s[i] = float(level(rng)) / 5.0f;
      t[i] = pos(rng) ? 1.0f : 0.0f;
    }
    const auto got = average_precision(s, t);
    const auto want = oracle::average_precision(s, t);
    REQUIRE(got.has_value() == want.has_value());
    if (got) CHECK(*got == *want);
  }
}

TEST_CASE("average precision is invariant to monotone score transforms") {
  Rng rng(3);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  std::vector<float> s(15), t(15), e(15);
  for (std::size_t i = 0; i < 15; ++i) {
    s[i] = u(rng);
    t[i] = i % 3 == 0 ? 1.0f : 0.0f;
    e[i] = std::exp(3.0f * s[i]) - 7.0f;
  }
  CHECK(*average_precision(s, t) == *average_precision(e, t));
}

TEST_CASE("mean AP skips classes without positives") {
  // Class 0 has AP 1, class 1 AP 0.5, class 2 no positives.
  Tensor scores({4, 3}, {0.9f, 0.1f, 0.3f, 0.8f, 0.9f, 0.2f, 0.2f, 0.8f, 0.1f, 0.1f, 0.2f, 0.4f});
  Tensor truths({4, 3}, {1, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 0});
  CHECK(mean_ap(scores, truths) == doctest::Approx(0.75));
  // Swapping class columns leaves the mean unchanged.
  Tensor s2(scores.shape()), t2(truths.shape());
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t c = 0; c < 3; ++c) {
      s2(r, c) = scores(r, 2 - c);
      t2(r, c) = truths(r, 2 - c);
    }
  }
  CHECK(mean_ap(s2, t2) == doctest::Approx(0.75));
  CHECK_THROWS(mean_ap(scores, Tensor({4, 3})));
}

TEST_CASE("keyword decision threshold") {
  const auto& ls = labels();
  std::vector<float> p(6, 0.1f);
  CHECK_FALSE(kws_decide(p, ls, 0.2).has_value());
  p[4] = 0.2f;
  CHECK(kws_decide(p, ls, 0.2) == std::optional<std::size_t>(4));
  p[3] = 0.9f;
  p[0] = 0.8f;  // speech alongside the keyword
  CHECK(kws_decide(p, ls) == std::optional<std::size_t>(3));
  p[5] = 0.9f;
  CHECK(kws_decide(p, ls) == std::optional<std::size_t>(3));  // tie goes to the lower index
}

TEST_CASE("keyword decision ignores event scores") {
  const auto& ls = labels();
  std::vector<float> p = {0.1f, 0.05f, 0.3f, 0.6f, 0.1f, 0.1f};
  const auto d = kws_decide(p, ls);
  p[0] = 0.99f;
  p[1] = 0.0f;
  p[2] = 0.7f;
  CHECK(kws_decide(p, ls) == d);
}

TEST_CASE("keyword truth and accuracy") {
  const auto& ls = labels();
  CHECK(kws_truth(std::vector<float>{1, 0, 0, 0, 0, 0}, ls) == std::nullopt);
  CHECK(kws_truth(std::vector<float>{0, 0, 0, 0, 1, 0}, ls) == std::optional<std::size_t>(4));
  std::vector<KwsDecision> truth = {3, std::nullopt, 5, 4};
  CHECK(kws_accuracy(truth, truth) == 1.0);
  std::vector<KwsDecision> half = {3, 4, 5, std::nullopt};
  CHECK(kws_accuracy(half, truth) == 0.5);
  CHECK_THROWS(kws_accuracy(std::vector<KwsDecision>{}, std::vector<KwsDecision>{}));
  CHECK_THROWS(kws_accuracy(half, std::span<const KwsDecision>(truth).first(2)));
}
