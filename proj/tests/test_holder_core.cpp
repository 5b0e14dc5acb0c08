#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>
#include <random>

#include "holderpo/errors.hpp"
#include "holderpo/holder_core.hpp"

using namespace holderpo;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

// Direct power-sum evaluation, fine for the moderate ratios used here.
double naive_mean(const std::vector<double>& r, double p) {
  double s = 0;
  if (p == 0) {
    for (double x : r) s += std::log(x);
    return std::exp(s / r.size());
  }
  for (double x : r) s += std::pow(x, p);
  return std::pow(s / r.size(), 1.0 / p);
}

std::vector<double> naive_weights(const std::vector<double>& r, double p) {
  std::vector<double> w;
  double s = 0;
  for (double x : r) s += std::pow(x, p);
  for (double x : r) w.push_back(std::pow(x, p) / s);
  return w;
}

std::vector<double> random_ratios(std::mt19937_64& gen, std::size_t n) {
  std::uniform_real_distribution<double> logd(-2.0, 2.0);
  std::vector<double> r(n);
  for (auto& x : r) x = std::exp(logd(gen));
  return r;
}

}  // namespace

TEST_CASE("holder_mean reference values") {
  const RatioSequence r({2.0, 8.0});
  CHECK_THAT(holder_mean(RatioSequence({1, 1, 1, 1}), HolderOrder(3)), WithinRel(1.0, 1e-15));
  CHECK_THAT(holder_mean(r, HolderOrder(1)), WithinRel(5.0, 1e-12));
  CHECK_THAT(holder_mean(r, HolderOrder(0)), WithinRel(4.0, 1e-12));
  CHECK_THAT(holder_mean(r, HolderOrder(-1)), WithinRel(3.2, 1e-12));
  CHECK_THAT(holder_mean(r, HolderOrder(2)), WithinRel(std::sqrt(34.0), 1e-12));
  CHECK_THAT(holder_mean(r, HolderOrder(2)), WithinAbs(5.8309519, 1e-7));
}

TEST_CASE("holder_mean rejects bad input") {
  CHECK_THROWS_AS(RatioSequence(std::vector<double>{}), DomainError);
  CHECK_THROWS_AS(RatioSequence({1.0, 0.0}), DomainError);
  CHECK_THROWS_AS(RatioSequence({1.0, -2.0}), DomainError);
  CHECK_THROWS_AS(RatioSequence({1.0, INFINITY}), DomainError);
  CHECK_THROWS_AS(RatioSequence({NAN}), DomainError);
}

TEST_CASE("holder_mean_masked") {
  const LogRatioSequence masked({std::log(2.0), std::log(8.0), 99.0}, {1, 1, 0});
  CHECK_THAT(holder_mean_masked(masked, HolderOrder(1)), WithinRel(5.0, 1e-12));
  for (double p : {-3.0, 0.0, 2.5}) {
    CHECK(holder_mean_masked(LogRatioSequence({0.0, 0.0}, {1, 1}), HolderOrder(p)) == 1.0);
  }
  CHECK_THAT(holder_mean_masked(LogRatioSequence({std::log(2.0), std::log(8.0)}, {1, 1}),
                                HolderOrder(-1)),
             WithinRel(3.2, 1e-12));
  CHECK_THROWS_AS(holder_mean_masked(LogRatioSequence({0.1, 0.2}, {0, 0}), HolderOrder(1)),
                  DomainError);
}

TEST_CASE("gradient_weights reference values") {
  const RatioSequence r({2.0, 8.0});
  const auto w0 = gradient_weights(r, HolderOrder(0));
  CHECK(w0[0] == 0.5);
  CHECK(w0[1] == 0.5);
  const auto w1 = gradient_weights(r, HolderOrder(1));
  CHECK_THAT(w1[0], WithinAbs(0.2, 1e-14));
  CHECK_THAT(w1[1], WithinAbs(0.8, 1e-14));
  const auto wm = gradient_weights(r, HolderOrder(-1));
  CHECK_THAT(wm[0], WithinAbs(0.8, 1e-14));
  CHECK_THAT(wm[1], WithinAbs(0.2, 1e-14));
}

TEST_CASE("weighted_log_mean") {
  const RatioSequence r({2.0, 8.0});
  CHECK_THAT(weighted_log_mean(r, HolderOrder(0)), WithinRel(std::log(4.0), 1e-14));
  CHECK_THAT(weighted_log_mean(r, HolderOrder(1)),
             WithinRel(0.2 * std::log(2.0) + 0.8 * std::log(8.0), 1e-13));
  CHECK_THAT(weighted_log_mean(r, HolderOrder(1)), WithinAbs(1.8022, 1e-4));
  for (double p : {-4.0, 0.0, 7.0}) {
    CHECK_THAT(weighted_log_mean(RatioSequence({1.7, 1.7, 1.7}), HolderOrder(p)),
               WithinRel(std::log(1.7), 1e-14));
  }
}

TEST_CASE("weight_p_derivative reference values") {
  const RatioSequence r({2.0, 8.0});
  const double expect = 0.5 * (std::log(2.0) - std::log(4.0));
  CHECK_THAT(weight_p_derivative(r, HolderOrder(0), 0), WithinRel(expect, 1e-12));
  CHECK_THAT(weight_p_derivative(r, HolderOrder(0), 1), WithinRel(-expect, 1e-12));
  CHECK_THAT(weight_p_derivative(r, HolderOrder(0), 0), WithinAbs(-0.3466, 1e-4));
  for (double p : {-2.0, 0.0, 3.0}) {
    CHECK(weight_p_derivative(RatioSequence({1.3, 1.3}), HolderOrder(p), 1) == 0.0);
  }
  CHECK_THROWS_AS(weight_p_derivative(r, HolderOrder(1), 2), DomainError);
}

TEST_CASE("mu_p_derivative reference values") {
  CHECK_THAT(mu_p_derivative(RatioSequence({3, 3, 3}), HolderOrder(1.5)), WithinAbs(0.0, 1e-15));
  // Uniform weights, deviations +-ln 2 around ln 4.
  const double d0 = std::log(2.0) - std::log(4.0), d1 = std::log(8.0) - std::log(4.0);
  const double var = (d0 * d0 + d1 * d1) / 2;
  CHECK_THAT(mu_p_derivative(RatioSequence({2, 8}), HolderOrder(0)), WithinRel(var, 1e-12));
  CHECK_THAT(mu_p_derivative(RatioSequence({2, 8}), HolderOrder(0)), WithinAbs(0.4805, 1e-4));
}

TEST_CASE("shannon_entropy and hhi") {
  CHECK_THAT(shannon_entropy(WeightDistribution({0.5, 0.5})), WithinRel(std::log(2.0), 1e-15));
  CHECK(shannon_entropy(WeightDistribution({0.0, 1.0, 0.0})) == 0.0);
  CHECK_THAT(shannon_entropy(WeightDistribution(std::vector<double>(10, 0.1))),
             WithinRel(std::log(10.0), 1e-12));
  CHECK_THAT(hhi(WeightDistribution(std::vector<double>(7, 1.0 / 7))), WithinRel(1.0 / 7, 1e-12));
  CHECK(hhi(WeightDistribution({0.0, 1.0})) == 1.0);
  CHECK_THAT(hhi(WeightDistribution({0.2, 0.8})), WithinRel(0.68, 1e-12));
}

TEST_CASE("entropy_p_derivative") {
  std::mt19937_64 gen(11);
  const RatioSequence random(random_ratios(gen, 9));
  CHECK(entropy_p_derivative(random, HolderOrder(0)) == 0.0);

  const RatioSequence r({2.0, 8.0});
  const double l0 = std::log(2.0), l1 = std::log(8.0);
  const double mu = 0.2 * l0 + 0.8 * l1;
  const double var = 0.2 * (l0 - mu) * (l0 - mu) + 0.8 * (l1 - mu) * (l1 - mu);
  CHECK_THAT(entropy_p_derivative(r, HolderOrder(1)), WithinRel(-var, 1e-12));
  CHECK(entropy_p_derivative(r, HolderOrder(1)) < 0);
}

TEST_CASE("limit_weights") {
  auto w = limit_weights(RatioSequence({2, 8}), LimitDirection::kPositive);
  CHECK(w[0] == 0.0);
  CHECK(w[1] == 1.0);
  w = limit_weights(RatioSequence({3, 3, 1}), LimitDirection::kPositive);
  CHECK(w[0] == 0.5);
  CHECK(w[1] == 0.5);
  CHECK(w[2] == 0.0);
  w = limit_weights(RatioSequence({2, 8}), LimitDirection::kNegative);
  CHECK(w[0] == 1.0);
  CHECK(w[1] == 0.0);
}

TEST_CASE("log-space evaluation survives large orders") {
  const RatioSequence r = RatioSequence::from_logs({-30.0, 5.0, 40.0});
  const double m = holder_mean(r, HolderOrder(40));
  CHECK(std::isfinite(m));
  CHECK_THAT(std::log(m), WithinAbs(40.0 - std::log(3.0) / 40.0, 1e-9));
  const auto w = gradient_weights(r, HolderOrder(-40));
  CHECK_THAT(w[0], WithinAbs(1.0, 1e-12));
}

TEST_CASE("random instances agree with naive evaluation") {
  std::mt19937_64 gen(2024);
  std::uniform_int_distribution<std::size_t> nd(2, 64);
  for (int trial = 0; trial < 200; ++trial) {
    const auto raw = random_ratios(gen, nd(gen));
    const RatioSequence r(raw);
    for (double p : {-5.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0, 5.0}) {
      CHECK_THAT(holder_mean(r, HolderOrder(p)), WithinRel(naive_mean(raw, p), 1e-11));
      if (p != 0.0) {
        const auto w = gradient_weights(r, HolderOrder(p));
        const auto nw = naive_weights(raw, p);
        for (std::size_t i = 0; i < raw.size(); ++i) CHECK_THAT(w[i], WithinAbs(nw[i], 1e-12));
      }
    }
  }
}

TEST_CASE("property: normalization and derivative sums") {
  std::mt19937_64 gen(7);
  for (int trial = 0; trial < 100; ++trial) {
    const RatioSequence r(random_ratios(gen, 2 + trial % 40));
    for (double p : {-5.0, -1e-7, 0.0, 1e-7, 3.0}) {
      const auto w = gradient_weights(r, HolderOrder(p));
      double s = 0, ds = 0;
      for (std::size_t t = 0; t < r.size(); ++t) {
        s += w[t];
        ds += weight_p_derivative(r, HolderOrder(p), t);
      }
      CHECK_THAT(s, WithinAbs(1.0, 1e-10));
      CHECK_THAT(ds, WithinAbs(0.0, 1e-10));
      CHECK(mu_p_derivative(r, HolderOrder(p)) > 0.0);
    }
  }
}

TEST_CASE("property: strict monotonicity in p and geometric limit") {
  std::mt19937_64 gen(99);
  const std::vector<double> grid = {-40, -5, -2, -1, -0.5, 0, 0.5, 1, 2, 5, 40};
  for (int trial = 0; trial < 100; ++trial) {
    const auto raw = random_ratios(gen, 2 + trial % 30);
    const RatioSequence r(raw);
    double prev = -INFINITY;
    for (double p : grid) {
      const double m = holder_mean(r, HolderOrder(p));
      CHECK(m > prev);
      prev = m;
    }
    const double geo = naive_mean(raw, 0.0);
    for (double p : {-1e-7, 1e-7}) {
      CHECK(std::abs(holder_mean(r, HolderOrder(p, 1e-9)) - geo) / geo <= 1e-5);
    }
  }
}

TEST_CASE("property: entropy peaks at zero and falls in |p|") {
  std::mt19937_64 gen(5);
  for (int trial = 0; trial < 100; ++trial) {
    const RatioSequence r(random_ratios(gen, 2 + trial % 50));
    const double h0 = shannon_entropy(gradient_weights(r, HolderOrder(0)));
    CHECK_THAT(h0, WithinRel(std::log(static_cast<double>(r.size())), 1e-12));
    CHECK_THAT(hhi(gradient_weights(r, HolderOrder(0))), WithinRel(1.0 / r.size(), 1e-12));
    double prev_pos = h0, prev_neg = h0;
    for (double a : {0.5, 1.0, 2.0, 3.0, 5.0}) {
      const double hp = shannon_entropy(gradient_weights(r, HolderOrder(a)));
      const double hn = shannon_entropy(gradient_weights(r, HolderOrder(-a)));
      CHECK(hp < prev_pos);
      CHECK(hn < prev_neg);
      prev_pos = hp;
      prev_neg = hn;
    }
  }
}

TEST_CASE("property: weights concentrate at extreme orders") {
  std::mt19937_64 gen(17);
  for (int trial = 0; trial < 100; ++trial) {
    auto raw = random_ratios(gen, 3 + trial % 20);
    // Force a clear argmax/argmin gap.
    raw[0] = *std::max_element(raw.begin(), raw.end()) * std::exp(0.5);
    raw[1] = *std::min_element(raw.begin(), raw.end()) * std::exp(-0.5);
    const RatioSequence r(raw);
    CHECK(gradient_weights(r, HolderOrder(40))[0] >= 0.999);
    CHECK(gradient_weights(r, HolderOrder(-40))[1] >= 0.999);
    CHECK(limit_weights(r, LimitDirection::kPositive)[0] == 1.0);
    CHECK(limit_weights(r, LimitDirection::kNegative)[1] == 1.0);
  }
}
