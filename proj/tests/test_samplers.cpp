#include "ttsem/samplers.hpp"

#include <doctest.h>

#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

using namespace ttsem;

TEST_CASE("logsumexp examples") {
  const std::vector<double> zero = {0.0};
  CHECK(logsumexp(zero) == 0.0);
  const std::vector<double> aa = {-3.5, -3.5};
  CHECK(logsumexp(aa) == doctest::Approx(-3.5 + std::log(2.0)).epsilon(1e-15));
  const std::vector<double> big = {1000.0, 1000.0};
  CHECK(logsumexp(big) == doctest::Approx(1000.0 + std::log(2.0)).epsilon(1e-15));
  const std::vector<double> small = {-1000.0, -1001.0};
  CHECK(std::isfinite(logsumexp(small)));
}

TEST_CASE("logsumexp shift invariance") {
  const std::vector<double> v = {0.3, -2.0, 5.5, 1.25};
  for (double c : {-700.0, -3.0, 0.5, 42.0, 900.0}) {
    std::vector<double> w = v;
    for (double& x : w) x += c;
    CHECK(std::abs(logsumexp(w) - (logsumexp(v) + c)) < 1e-12 * std::max(1.0, std::abs(c)));
  }
}

namespace {

// Binomial 4-sigma check for each category.
void check_frequencies(const std::vector<double>& w, int N, std::uint64_t seed) {
  auto rng = rng::root(seed);
  std::vector<int> counts(w.size(), 0);
  for (int i = 0; i < N; ++i) ++counts[categorical_sample(w, rng)];
  for (std::size_t m = 0; m < w.size(); ++m) {
    const double sd = std::sqrt(w[m] * (1 - w[m]) / N);
    CHECK(std::abs(double(counts[m]) / N - w[m]) <= 4 * sd + 1e-15);
  }
}

}  // namespace

TEST_CASE("categorical sampling") {
  auto rng = rng::root(1);
  const std::vector<double> degenerate = {1.0, 0.0};
  for (int i = 0; i < 10000; ++i) CHECK(categorical_sample(degenerate, rng) == 0);
  check_frequencies({0.5, 0.5}, 1000000, 2);
  check_frequencies({0.2, 0.3, 0.5}, 1000000, 3);
  const std::vector<double> bad = {0.5, 0.6};
  CHECK_THROWS_AS(categorical_sample(bad, rng), ConfigError);
  const std::vector<double> negative = {1.5, -0.5};
  CHECK_THROWS_AS(categorical_sample(negative, rng), ConfigError);
}

TEST_CASE("MH with a flat target accepts every proposal") {
  auto rng = rng::root(4);
  MhConfig cfg{200, 0, {1.0, 2.0}};
  auto r = mh_chain([](std::span<const double>) { return 3.0; }, cfg, {0.0, 0.0}, rng);
  CHECK(r.accepted == 200);
}

TEST_CASE("MH with a vanishing proposal stays at the initial point") {
  auto rng = rng::root(4);
  MhConfig cfg{100, 0, {1e-300}};
  auto r = mh_chain([](std::span<const double> z) { return -0.5 * z[0] * z[0]; }, cfg, {0.75}, rng);
  CHECK(r.state[0] == 0.75);
}

TEST_CASE("MH error handling") {
  auto rng = rng::root(4);
  MhConfig cfg{10, 0, {1.0}};
  CHECK_THROWS_AS(mh_chain([](std::span<const double>) { return std::nan(""); }, cfg, {0.0}, rng), NumericalError);
  auto nan_after_start = [](std::span<const double> z) { return z[0] == 0.0 ? 0.0 : std::nan(""); };
  CHECK_THROWS_AS(mh_chain(nan_after_start, cfg, {0.0}, rng), NumericalError);
  const double ninf = -std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(mh_chain([&](std::span<const double>) { return ninf; }, cfg, {0.0}, rng), NumericalError);
  // -inf proposals are rejected, not errors
  auto boxed = [&](std::span<const double> z) { return std::abs(z[0]) < 0.5 ? 0.0 : ninf; };
  auto r = mh_chain(boxed, MhConfig{2000, 0, {1.0}}, {0.0}, rng);
  CHECK(std::abs(r.state[0]) < 0.5);
  MhConfig zero_scale{10, 0, {0.0}};
  CHECK_THROWS_AS(mh_chain(boxed, zero_scale, {0.0}, rng), ConfigError);
  MhConfig wrong_dim{10, 0, {1.0, 1.0}};
  CHECK_THROWS_AS(mh_chain(boxed, wrong_dim, {0.0}, rng), ConfigError);
}

TEST_CASE("MH decisions ignore an additive constant in the log-target") {
  auto target = [](std::span<const double> z) { return -0.5 * (z[0] * z[0] + 4 * z[1] * z[1]); };
  for (double shift : {-1e4, 123.0, 1e4}) {
    auto r1 = rng::root(8), r2 = rng::root(8);
    MhConfig cfg{500, 0, {1.0, 0.5}};
    std::vector<std::vector<double>> a, b;
    auto res1 = mh_chain(target, cfg, {0.1, 0.2}, r1, [&](std::span<const double> s) { a.emplace_back(s.begin(), s.end()); });
    auto shifted = [&](std::span<const double> z) { return target(z) + shift; };
    auto res2 = mh_chain(shifted, cfg, {0.1, 0.2}, r2, [&](std::span<const double> s) { b.emplace_back(s.begin(), s.end()); });
    CHECK(res1.accepted == res2.accepted);
    CHECK(a == b);
  }
}

TEST_CASE("MH is stable on extreme log-target values") {
  auto rng = rng::root(12);
  auto huge = [](std::span<const double> z) { return 1e300 - 0.5 * z[0] * z[0]; };
  auto r = mh_chain(huge, MhConfig{1000, 0, {1.0}}, {0.0}, rng);
  CHECK(std::isfinite(r.state[0]));
  auto steep = [](std::span<const double> z) { return -1e200 * z[0] * z[0]; };
  auto r2 = mh_chain(steep, MhConfig{1000, 0, {1.0}}, {0.0}, rng);
  CHECK(r2.state[0] == 0.0);
}

TEST_CASE("MH visitor sees states after burn-in") {
  auto rng = rng::root(2);
  int visits = 0;
  mh_chain([](std::span<const double>) { return 0.0; }, MhConfig{50, 20, {1.0}}, {0.0}, rng,
           [&](std::span<const double>) { ++visits; });
  CHECK(visits == 30);
}

TEST_CASE("MH standard normal moments with scale 2.4") {
  auto rng = rng::root(21);
  double s = 0, s2 = 0;
  long count = 0;
  mh_chain([](std::span<const double> z) { return -0.5 * z[0] * z[0]; }, MhConfig{1001000, 1000, {2.4}}, {0.0}, rng,
           [&](std::span<const double> z) {
             s += z[0];
             s2 += z[0] * z[0];
             ++count;
           });
  const double mean = s / count;
  CHECK(count == 1000000);
  CHECK(std::abs(mean) < 0.02);
  CHECK(std::abs(s2 / count - mean * mean - 1.0) < 0.05);
}
