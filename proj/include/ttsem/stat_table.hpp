#ifndef TTSEM_STAT_TABLE_HPP
#define TTSEM_STAT_TABLE_HPP

#include "ttsem/core.hpp"

#include <cstdint>
#include <vector>

namespace ttsem {

/// One stored statistic per sample (column i = sample i at its last refresh)
/// together with their incrementally maintained arithmetic mean.
class PerSampleStatTable {
 public:
  PerSampleStatTable() = default;

  /// Takes a k x n matrix of per-sample statistics, all refreshed at `iter`.
  explicit PerSampleStatTable(Eigen::MatrixXd entries, std::int64_t iter = 0);

  std::size_t size() const { return static_cast<std::size_t>(entries_.cols()); }
  std::size_t dim() const { return static_cast<std::size_t>(entries_.rows()); }

  const Eigen::MatrixXd& entries() const { return entries_; }
  auto entry(std::size_t i) const { return entries_.col(static_cast<Eigen::Index>(i)); }
  const StatVec& mean() const { return mean_; }
  std::int64_t refresh_iter(std::size_t i) const { return refresh_iter_[i]; }

  /// Replaces entry i and updates the mean by (s_new - old) / n.
  void replace(std::size_t i, const StatVec& s_new, std::int64_t iter);

  /// Arithmetic mean of the entries recomputed from scratch, in index order.
  StatVec recomputed_mean() const;

 private:
  Eigen::MatrixXd entries_;
  StatVec mean_;
  std::vector<std::int64_t> refresh_iter_;
};

/// Mean of the columns of a k x n matrix, summed in column order.
StatVec column_mean(const Eigen::MatrixXd& entries);

}  // namespace ttsem

#endif  // TTSEM_STAT_TABLE_HPP
