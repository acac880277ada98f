#ifndef TTSEM_SAMPLERS_HPP
#define TTSEM_SAMPLERS_HPP

#include "ttsem/core.hpp"
#include "ttsem/rng.hpp"

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

namespace ttsem {

/// log sum_i exp(v_i) with max-shift. Requires a non-empty input.
double logsumexp(std::span<const double> values);

/// Inverse-CDF draw on a single uniform. Weights must be non-negative and
/// sum to 1 within 1e-9 (ConfigError otherwise).
std::size_t categorical_sample(std::span<const double> weights, rng::Stream& rng);

struct MhConfig {
  int steps = 1;                       // M transitions
  int burn_in = 0;                     // transitions before the visitor sees states
  std::vector<double> proposal_scales; // per-coordinate random-walk scales

  void validate(std::size_t dim) const;
};

struct MhResult {
  std::vector<double> state;
  double log_target = 0.0;
  int accepted = 0;
};

/// Symmetric random-walk Metropolis-Hastings. Proposes z' = z + scale * N(0, I)
/// and accepts when log(u) < log_target(z') - log_target(z); the proposal
/// density cancels and is never evaluated, and no exponential of a log-density
/// is taken. A proposal with log_target == -inf is rejected. NaN from
/// log_target, or a non-finite value at the initial point, throws
/// NumericalError. `visit(state)` is called after each transition past burn-in.
template <class LogTarget, class Visitor>
MhResult mh_chain(LogTarget&& log_target, const MhConfig& config, std::vector<double> init, rng::Stream& rng,
                  Visitor&& visit) {
  config.validate(init.size());
  MhResult out;
  out.state = std::move(init);
  out.log_target = log_target(std::span<const double>(out.state));
  if (!std::isfinite(out.log_target)) throw NumericalError("MH chain: log-target is not finite at the initial point");

  std::vector<double> proposal(out.state.size());
  for (int step = 0; step < config.steps; ++step) {
    for (std::size_t d = 0; d < proposal.size(); ++d)
      proposal[d] = out.state[d] + config.proposal_scales[d] * rng.normal();
    const double log_u = std::log(rng.uniform_pos());
    const double lp = log_target(std::span<const double>(proposal));
    if (std::isnan(lp)) throw NumericalError("MH chain: log-target returned NaN");
    if (log_u < lp - out.log_target) {
      out.state.swap(proposal);
      out.log_target = lp;
      ++out.accepted;
    }
    if (step >= config.burn_in) visit(std::span<const double>(out.state));
  }
  return out;
}

template <class LogTarget>
MhResult mh_chain(LogTarget&& log_target, const MhConfig& config, std::vector<double> init, rng::Stream& rng) {
  return mh_chain(std::forward<LogTarget>(log_target), config, std::move(init), rng, [](std::span<const double>) {});
}

}  // namespace ttsem

#endif  // TTSEM_SAMPLERS_HPP
