#ifndef TTSEM_CORE_HPP
#define TTSEM_CORE_HPP

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace ttsem {

/// Sufficient-statistic vector. Each model documents its own index layout.
using StatVec = Eigen::VectorXd;

/// Flat model parameter vector. Each model documents its own index layout.
using ParamVec = Eigen::VectorXd;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid run configuration or model/config mismatch; raised before any work.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Non-finite densities, statistics or parameters during a run.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Posterior sampling failed for sample `index`, at engine iteration `iter`
/// when known.
class SamplingError : public Error {
 public:
  SamplingError(std::string reason, std::size_t index, std::optional<std::int64_t> iter = std::nullopt);

  const std::string& reason() const { return reason_; }
  std::size_t index() const { return index_; }
  std::optional<std::int64_t> iter() const { return iter_; }

 private:
  std::string reason_;
  std::size_t index_;
  std::optional<std::int64_t> iter_;
};

bool all_finite(const Eigen::Ref<const Eigen::VectorXd>& v);

enum class ScheduleKind { constant, polynomial, warmup_polynomial };

/// Stepsize sequence gamma_k (or rho_k) indexed from k = 0.
///
/// constant:           c
/// polynomial:         c / (k + 1)^a
/// warmup_polynomial:  1 for k < warmup_iters, then c / (k - warmup_iters + 1)^a
class StepSchedule {
 public:
  static StepSchedule constant(double c = 1.0);
  static StepSchedule polynomial(double a, double c = 1.0);
  static StepSchedule warmup_polynomial(double a, std::int64_t warmup_iters, double c = 1.0);

  /// Parses "const:<c>", "poly:<a>[:c=<c>][:warmup=<w>]". `w` is an iteration
  /// count, or "<x>ep" meaning x epochs of `epoch_iters` iterations.
  static StepSchedule parse(std::string_view text, std::int64_t epoch_iters);

  double eval(std::int64_t k) const;

  ScheduleKind kind() const { return kind_; }
  double value() const { return c_; }
  double exponent() const { return a_; }
  std::int64_t warmup_iters() const { return warmup_; }
  bool is_identically_one() const { return kind_ == ScheduleKind::constant && c_ == 1.0; }

  std::string describe() const;

 private:
  StepSchedule(ScheduleKind kind, double c, double a, std::int64_t warmup);

  ScheduleKind kind_;
  double c_;
  double a_;
  std::int64_t warmup_;
};

inline double schedule_eval(const StepSchedule& sched, std::int64_t k) { return sched.eval(k); }

enum class Variant { EM, iEM, MCEM, SAEM, iSAEM, vrTTEM, fiTTEM };

std::string_view to_string(Variant v);
Variant parse_variant(std::string_view name);

/// Full-batch variants draw no indices and process every sample each iteration.
bool is_batch(Variant v);

enum class EStep { monte_carlo, exact };

/// How data-parallel passes over the samples execute. Results are identical.
enum class Exec { serial, parallel };

struct RunConfig {
  Variant variant = Variant::SAEM;
  StepSchedule gamma = StepSchedule::constant(1.0);
  double rho = 1.0;
  EStep estep = EStep::monte_carlo;
  int mc_samples = 1;
  std::int64_t epoch_len = 1;  // vrTTEM only
  std::int64_t total_iters = 1;
  std::uint64_t seed = 0;
  bool randomized_termination = false;
  Exec exec = Exec::parallel;

  /// Variant defaults for a dataset of n samples: gamma 1/(k+1)^0.5 with a
  /// one-epoch warmup for stochastic variants, rho = n^{-2/3} and m = n for
  /// vrTTEM/fiTTEM, exact E-step for EM/iEM.
  static RunConfig defaults_for(Variant v, std::size_t n);

  /// Throws ConfigError when the parameters contradict the variant.
  void validate() const;
};

/// Iterations that make up one epoch: n for incremental variants, 1 for batch.
std::int64_t epoch_iterations(Variant v, std::size_t n);

}  // namespace ttsem

#endif  // TTSEM_CORE_HPP
