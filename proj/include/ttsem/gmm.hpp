#ifndef TTSEM_GMM_HPP
#define TTSEM_GMM_HPP

// Penalized mixture of M unit-variance Gaussians.
//
// Parameter layout (flat, length 2M-1): [w_1 .. w_{M-1} | mu_1 .. mu_M],
// with w_M = 1 - sum w_m implied.
// Statistic layout (flat, length 2M-1): [s1 (M-1) | s2 (M-1) | s3], where
// s1_m = 1{z = m}, s2_m = 1{z = m} y and s3 = y.
// Component labels are 0-based in code.

#include "ttsem/core.hpp"
#include "ttsem/model.hpp"
#include "ttsem/rng.hpp"

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace ttsem::gmm {

struct Params {
  Eigen::VectorXd weights;  // all M weights
  Eigen::VectorXd means;

  std::size_t components() const { return static_cast<std::size_t>(means.size()); }

  static Params from_flat(const ParamVec& flat);
  ParamVec to_flat() const;

  /// Interior of the simplex and finite means; throws ConfigError otherwise.
  void validate() const;
};

/// Ridge delta on the means and Dirichlet-type weight penalty epsilon.
struct Regularizer {
  double delta = 1e-3;
  double epsilon = 1e-3;

  void validate() const;
};

inline std::size_t stat_dim(std::size_t components) { return 2 * components - 1; }

/// Posterior component probabilities softmax_m(log w_m - (y - mu_m)^2 / 2).
Eigen::VectorXd posterior_weights(double y, const Params& theta);

/// Statistic of observation y with latent label z (0-based).
StatVec suff_stat(double y, std::size_t label, std::size_t components);

StatVec exact_expectation(double y, const Params& theta);

/// Regularized M-step. Accepts delta = epsilon = 0 as a limiting case; throws
/// NumericalError when the result is not finite.
Params m_step(const StatVec& s, std::size_t components, const Regularizer& reg);

/// The regularizer value delta/2 sum mu^2 - epsilon sum_{m=1}^M log w_m.
double penalty(const Params& theta, const Regularizer& reg);

/// -(1/n) sum_i log sum_m w_m N(y_i; mu_m, 1) + penalty.
double penalized_nll(std::span<const double> data, const Params& theta, const Regularizer& reg,
                     Exec exec = Exec::parallel);

namespace serial {
double penalized_nll(std::span<const double> data, const Params& theta, const Regularizer& reg);
}  // namespace serial

std::vector<double> simulate(std::size_t n, const Params& theta, rng::Stream& rng);

/// Uniform weights and means at the data's (m - 1/2)/M quantiles.
Params initial_params(std::span<const double> data, std::size_t components);

/// The two-component truth of the synthetic experiment: mu = (0.5, -0.5), w = (0.5, 0.5).
Params default_truth();

std::vector<double> read_observations(std::istream& in);
void write_observations(std::ostream& out, std::span<const double> data);

class Model final : public ttsem::Model {
 public:
  Model(std::vector<double> data, std::size_t components, Regularizer reg = {});

  std::string name() const override { return "gmm"; }
  std::size_t num_samples() const override { return data_.size(); }
  std::size_t stat_dim() const override { return gmm::stat_dim(components_); }
  std::vector<std::string> param_names() const override;

  std::vector<Latent> sample_posterior(std::size_t i, const ParamVec& theta, int M, rng::Stream& rng,
                                       Latent& warm) const override;
  StatVec suff_stat(std::size_t i, const Latent& z) const override;
  bool has_exact_expectation() const override { return true; }
  std::optional<StatVec> exact_expectation(std::size_t i, const ParamVec& theta) const override;
  ParamVec m_step(const StatVec& s) const override;
  std::optional<double> penalized_nll(const ParamVec& theta, Exec exec = Exec::parallel) const override;

  std::span<const double> data() const { return data_; }
  std::size_t components() const { return components_; }
  const Regularizer& regularizer() const { return reg_; }

 private:
  std::vector<double> data_;
  std::size_t components_;
  Regularizer reg_;
};

struct EmFit {
  Params params;
  std::int64_t iterations = 0;
  bool converged = false;
};

/// Batch EM until the largest parameter movement drops below `tol`.
EmFit fit_em(const Model& model, const Params& start, double tol = 1e-14, std::int64_t max_iters = 200000,
             Exec exec = Exec::parallel);

}  // namespace ttsem::gmm

#endif  // TTSEM_GMM_HPP
