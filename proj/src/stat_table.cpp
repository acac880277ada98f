#include "ttsem/stat_table.hpp"

#include <cassert>

namespace ttsem {

StatVec column_mean(const Eigen::MatrixXd& entries) {
  StatVec sum = StatVec::Zero(entries.rows());
  for (Eigen::Index i = 0; i < entries.cols(); ++i) sum += entries.col(i);
  if (entries.cols() > 0) sum /= static_cast<double>(entries.cols());
  return sum;
}

PerSampleStatTable::PerSampleStatTable(Eigen::MatrixXd entries, std::int64_t iter)
    : entries_(std::move(entries)),
      mean_(column_mean(entries_)),
      refresh_iter_(static_cast<std::size_t>(entries_.cols()), iter) {}

void PerSampleStatTable::replace(std::size_t i, const StatVec& s_new, std::int64_t iter) {
  assert(i < size());
  assert(s_new.size() == entries_.rows());
  auto col = entries_.col(static_cast<Eigen::Index>(i));
  mean_ += (s_new - col) / static_cast<double>(size());
  col = s_new;
  refresh_iter_[i] = iter;
}

StatVec PerSampleStatTable::recomputed_mean() const { return column_mean(entries_); }

}  // namespace ttsem
