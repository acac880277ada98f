#include "ttsem/samplers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ttsem {

double logsumexp(std::span<const double> values) {
  if (values.empty()) throw ConfigError("logsumexp of an empty sequence");
  if (values.size() == 1) return values[0];
  const double m = *std::max_element(values.begin(), values.end());
  if (!std::isfinite(m)) return m;
  double acc = 0.0;
  for (double v : values) acc += std::exp(v - m);
  return m + std::log(acc);
}

std::size_t categorical_sample(std::span<const double> weights, rng::Stream& rng) {
  if (weights.empty()) throw ConfigError("categorical weights are empty");
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw ConfigError("categorical weights must be non-negative");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("categorical weights must sum to 1");

  const double u = rng.uniform();
  double cum = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t m = 0; m < weights.size(); ++m) {
    if (weights[m] > 0.0) last_positive = m;
    cum += weights[m];
    if (u < cum) return m;
  }
  return last_positive;
}

void MhConfig::validate(std::size_t dim) const {
  if (steps < 0 || burn_in < 0) throw ConfigError("MH chain length and burn-in must be non-negative");
  if (proposal_scales.size() != dim) throw ConfigError("MH proposal scales do not match the state dimension");
  for (double s : proposal_scales)
    if (!(s > 0.0) || !std::isfinite(s)) throw ConfigError("MH proposal scales must be finite and positive");
}

}  // namespace ttsem
