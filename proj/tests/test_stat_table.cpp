#include "ttsem/stat_table.hpp"

#include "test_util.hpp"

#include <doctest.h>

#include <random>

using namespace ttsem;

TEST_CASE("table mean tracks brute-force recomputation under random replacements") {
  std::mt19937_64 gen(11);
  std::normal_distribution<double> nd(0.0, 10.0);
  for (int trial = 0; trial < 20; ++trial) {
    const int k = 1 + trial % 5, n = 1 + 7 * trial;
    Eigen::MatrixXd e(k, n);
    for (int c = 0; c < n; ++c)
      for (int r = 0; r < k; ++r) e(r, c) = nd(gen);
    PerSampleStatTable table(e, 0);
    std::uniform_int_distribution<int> ui(0, n - 1);
    for (int step = 1; step <= 5000; ++step) {
      StatVec s(k);
      for (int r = 0; r < k; ++r) s[r] = nd(gen);
      const auto i = static_cast<std::size_t>(ui(gen));
      table.replace(i, s, step);
      CHECK(table.refresh_iter(i) == step);
      if (step % 97 == 0) {
        StatVec brute = StatVec::Zero(k);
        for (int c = 0; c < n; ++c) brute += table.entries().col(c);
        brute /= n;
        CHECK(testutil::rel_err(table.mean(), brute) < 1e-10);
      }
    }
    for (std::size_t i = 0; i < table.size(); ++i) CHECK(table.refresh_iter(i) <= 5000);
  }
}

TEST_CASE("column mean") {
  Eigen::MatrixXd e(2, 3);
  e << 1, 2, 3, 4, 5, 6;
  CHECK(column_mean(e) == Eigen::Vector2d(2, 5));
}
