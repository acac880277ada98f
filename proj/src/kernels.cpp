#include "ttsem/kernels.hpp"

#include <exception>
#include <limits>
#include <mutex>

namespace ttsem {

StatVec average_stats(const Model& model, std::size_t i, const std::vector<Latent>& draws) {
  StatVec acc = StatVec::Zero(static_cast<Eigen::Index>(model.stat_dim()));
  for (const auto& z : draws) acc += model.suff_stat(i, z);
  if (!draws.empty()) acc /= static_cast<double>(draws.size());
  return acc;
}

StatVec mc_step(const Model& model, std::size_t i, const ParamVec& theta, int M, rng::Stream& rng, Latent& warm) {
  auto draws = model.sample_posterior(i, theta, M, rng, warm);
  if (draws.empty()) throw SamplingError("posterior sampler returned no draws", i);
  StatVec s = average_stats(model, i, draws);
  if (!all_finite(s)) throw SamplingError("non-finite sufficient statistic", i);
  return s;
}

StatVec exact_step(const Model& model, std::size_t i, const ParamVec& theta) {
  auto s = model.exact_expectation(i, theta);
  if (!s) throw ConfigError(model.name() + " has no closed-form conditional expectation");
  if (!all_finite(*s)) throw SamplingError("non-finite conditional expectation", i);
  return std::move(*s);
}

namespace kernels {

namespace {

Eigen::MatrixXd make_entries(const Model& model) {
  return Eigen::MatrixXd(static_cast<Eigen::Index>(model.stat_dim()), static_cast<Eigen::Index>(model.num_samples()));
}

// Runs body(i) for all i in parallel and rethrows the failure with the
// smallest sample index, so error reports do not depend on scheduling.
template <class Body>
void parallel_for_each_sample(std::size_t n, Body&& body) {
  std::exception_ptr first_error;
  std::size_t first_index = std::numeric_limits<std::size_t>::max();
  std::mutex guard;
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < n; ++i) {
    try {
      body(i);
    } catch (...) {
      std::lock_guard lock(guard);
      if (i < first_index) {
        first_index = i;
        first_error = std::current_exception();
      }
    }
  }
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace

namespace serial {

Eigen::MatrixXd mc_pass(const Model& model, const ParamVec& theta, int M, const PassStreams& streams,
                        std::span<Latent> warm) {
  auto entries = make_entries(model);
  for (std::size_t i = 0; i < model.num_samples(); ++i) {
    auto rng = streams.for_sample(i);
    entries.col(static_cast<Eigen::Index>(i)) = mc_step(model, i, theta, M, rng, warm[i]);
  }
  return entries;
}

Eigen::MatrixXd exact_pass(const Model& model, const ParamVec& theta) {
  auto entries = make_entries(model);
  for (std::size_t i = 0; i < model.num_samples(); ++i)
    entries.col(static_cast<Eigen::Index>(i)) = exact_step(model, i, theta);
  return entries;
}

}  // namespace serial

namespace omp {

Eigen::MatrixXd mc_pass(const Model& model, const ParamVec& theta, int M, const PassStreams& streams,
                        std::span<Latent> warm) {
  auto entries = make_entries(model);
  parallel_for_each_sample(model.num_samples(), [&](std::size_t i) {
    auto rng = streams.for_sample(i);
    entries.col(static_cast<Eigen::Index>(i)) = mc_step(model, i, theta, M, rng, warm[i]);
  });
  return entries;
}

Eigen::MatrixXd exact_pass(const Model& model, const ParamVec& theta) {
  auto entries = make_entries(model);
  parallel_for_each_sample(model.num_samples(), [&](std::size_t i) {
    entries.col(static_cast<Eigen::Index>(i)) = exact_step(model, i, theta);
  });
  return entries;
}

}  // namespace omp

Eigen::MatrixXd mc_pass(const Model& model, const ParamVec& theta, int M, const PassStreams& streams,
                        std::span<Latent> warm, Exec exec) {
  return exec == Exec::serial ? serial::mc_pass(model, theta, M, streams, warm)
                              : omp::mc_pass(model, theta, M, streams, warm);
}

Eigen::MatrixXd exact_pass(const Model& model, const ParamVec& theta, Exec exec) {
  return exec == Exec::serial ? serial::exact_pass(model, theta) : omp::exact_pass(model, theta);
}

}  // namespace kernels
}  // namespace ttsem
