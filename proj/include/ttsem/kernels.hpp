#ifndef TTSEM_KERNELS_HPP
#define TTSEM_KERNELS_HPP

// Data-parallel passes over the samples. Every kernel has a serial reference
// in `serial::` and an OpenMP version in `omp::`; the dispatchers pick one by
// Exec. Per-sample work only depends on the sample's own RNG stream and chain
// state, and results are combined in index order, so both versions return
// bit-identical statistics regardless of the thread count.

#include "ttsem/core.hpp"
#include "ttsem/model.hpp"
#include "ttsem/rng.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace ttsem {

/// Closed-form E[S | y_i; theta]; ConfigError when the model has none.
StatVec exact_step(const Model& model, std::size_t i, const ParamVec& theta);

/// (1/M) sum_m S(z_m, y_i) over the given draws.
StatVec average_stats(const Model& model, std::size_t i, const std::vector<Latent>& draws);

/// MC-step for one sample: M posterior draws under theta, averaged statistic.
/// Throws SamplingError on non-finite statistics.
StatVec mc_step(const Model& model, std::size_t i, const ParamVec& theta, int M, rng::Stream& rng, Latent& warm);

namespace kernels {

/// Which posterior streams a full pass uses: the initialization streams, or
/// the streams of engine iteration `iter`.
struct PassStreams {
  rng::Stream root;
  std::int64_t iter = -1;  // -1 selects the initialization streams

  rng::Stream for_sample(std::size_t i) const {
    return iter < 0 ? rng::init_stream(root, i) : rng::posterior_stream(root, iter, i);
  }
};

namespace serial {
Eigen::MatrixXd mc_pass(const Model& model, const ParamVec& theta, int M, const PassStreams& streams,
                        std::span<Latent> warm);
Eigen::MatrixXd exact_pass(const Model& model, const ParamVec& theta);
}  // namespace serial

namespace omp {
Eigen::MatrixXd mc_pass(const Model& model, const ParamVec& theta, int M, const PassStreams& streams,
                        std::span<Latent> warm);
Eigen::MatrixXd exact_pass(const Model& model, const ParamVec& theta);
}  // namespace omp

/// Per-sample MC statistics for all samples (column i = sample i).
Eigen::MatrixXd mc_pass(const Model& model, const ParamVec& theta, int M, const PassStreams& streams,
                        std::span<Latent> warm, Exec exec);

/// Per-sample exact conditional expectations (column i = sample i).
Eigen::MatrixXd exact_pass(const Model& model, const ParamVec& theta, Exec exec);

/// Block size of the deterministic parallel sum.
inline constexpr std::size_t kSumBlock = 2048;

/// sum_{i<n} term(i). The serial path is a plain left-to-right loop; the
/// parallel path sums fixed blocks of kSumBlock terms and then the block sums
/// in order, so it is independent of the thread count.
template <class Term>
double reduce_sum(std::size_t n, Term&& term, Exec exec) {
  if (exec == Exec::serial || n <= kSumBlock) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += term(i);
    return s;
  }
  const std::size_t blocks = (n + kSumBlock - 1) / kSumBlock;
  std::vector<double> partial(blocks, 0.0);
#pragma omp parallel for schedule(static)
  for (std::size_t b = 0; b < blocks; ++b) {
    const std::size_t end = std::min(n, (b + 1) * kSumBlock);
    double s = 0.0;
    for (std::size_t i = b * kSumBlock; i < end; ++i) s += term(i);
    partial[b] = s;
  }
  double s = 0.0;
  for (double p : partial) s += p;
  return s;
}

}  // namespace kernels
}  // namespace ttsem

#endif  // TTSEM_KERNELS_HPP
