#ifndef TTSEM_MODEL_HPP
#define TTSEM_MODEL_HPP

#include "ttsem/core.hpp"
#include "ttsem/rng.hpp"

#include <optional>
#include <string>
#include <vector>

namespace ttsem {

/// A latent draw for one sample. Models define the encoding (a component
/// label for the mixture model, a log-parameter vector for the PK model).
using Latent = std::vector<double>;

/// Latent-variable model in the curved exponential family, bound to a dataset.
///
/// Models carry no per-run mutable state: samplers that keep persistent
/// chains receive the chain state through the `warm` argument, which the
/// engine owns (one entry per sample and run).
class Model {
 public:
  virtual ~Model() = default;

  virtual std::string name() const = 0;
  virtual std::size_t num_samples() const = 0;
  virtual std::size_t stat_dim() const = 0;
  virtual std::vector<std::string> param_names() const = 0;
  std::size_t param_dim() const { return param_names().size(); }

  /// Chain state for sample i before any sampling under `theta`.
  virtual Latent initial_latent(std::size_t i, const ParamVec& theta) const;

  /// M draws from p(z_i | y_i; theta). Persistent-chain samplers start from
  /// and update `warm`.
  virtual std::vector<Latent> sample_posterior(std::size_t i, const ParamVec& theta, int M, rng::Stream& rng,
                                               Latent& warm) const = 0;

  /// S(z, y_i); length stat_dim().
  virtual StatVec suff_stat(std::size_t i, const Latent& z) const = 0;

  virtual bool has_exact_expectation() const { return false; }
  /// E[S(z_i, y_i) | y_i; theta] when available in closed form.
  virtual std::optional<StatVec> exact_expectation(std::size_t i, const ParamVec& theta) const;

  /// The M-step map s -> theta-bar(s). Deterministic.
  virtual ParamVec m_step(const StatVec& s) const = 0;

  /// Penalized negative log-likelihood per sample, when tractable.
  virtual std::optional<double> penalized_nll(const ParamVec& theta, Exec exec = Exec::parallel) const;
};

}  // namespace ttsem

#endif  // TTSEM_MODEL_HPP
