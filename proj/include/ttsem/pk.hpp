#ifndef TTSEM_PK_HPP
#define TTSEM_PK_HPP

// One-compartment oral-absorption PK model with lag time and lognormal
// individual parameters z = (T_lag, ka, V, k). Latents are sampled in log
// space, phi = log z.
//
// Parameter layout (flat, length 15):
//   [log_pop (4) | omega2 upper triangle, row-major (10) | sigma2]
// Statistic layout (flat, length 15):
//   [phi (4) | upper triangle of phi phi^T, row-major (10) | mean squared residual]

#include "ttsem/core.hpp"
#include "ttsem/model.hpp"
#include "ttsem/rng.hpp"

#include <atomic>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace ttsem::pk {

inline constexpr std::size_t kLatentDim = 4;
inline constexpr std::size_t kTriDim = 10;
inline constexpr std::size_t kStatDim = 15;

using Vec4 = Eigen::Vector4d;
using Mat4 = Eigen::Matrix4d;

enum class OmegaMode { diagonal, full };

struct Params {
  Vec4 log_pop = Vec4::Zero();
  Mat4 omega2 = Mat4::Identity();
  double sigma2 = 1.0;

  static Params from_flat(const ParamVec& flat);
  ParamVec to_flat() const;

  /// Symmetric positive definite omega2 and sigma2 > 0; ConfigError otherwise.
  void validate() const;
};

struct Individual {
  double dose = 0.0;
  std::vector<double> times;
  std::vector<double> obs;

  void validate() const;
};

/// Dose 100 and ten sampling times spanning absorption and elimination.
struct Design {
  double dose = 100.0;
  std::vector<double> times = {0.5, 1, 2, 3, 5, 8, 12, 16, 20, 24};
};

/// Upper-triangle packing shared by the statistic and parameter layouts.
void pack_upper(const Mat4& m, Eigen::Ref<Eigen::VectorXd> out);
Mat4 unpack_upper(const Eigen::Ref<const Eigen::VectorXd>& packed);

/// Concentration at time t for positive z = (T_lag, ka, V, k):
/// 0 for t <= T_lag, else D ka / (V (ka - k)) (e^{-k d} - e^{-ka d}) with
/// d = t - T_lag, switching to D ka d e^{-k d} / V when |ka - k| < 1e-8 max(ka, k).
double structural(double t, const Vec4& z, double dose);

/// The two branches of `structural`, exposed for continuity checks.
double structural_general(double t, const Vec4& z, double dose);
double structural_limit(double t, const Vec4& z, double dose);

/// Log complete-data density of phi = log z for one individual, up to an
/// additive constant: -sum_j (y_j - f(t_j))^2 / (2 sigma2)
///                    - (phi - log_pop)^T omega2^{-1} (phi - log_pop) / 2.
/// Returns -inf when the structural model is not finite at exp(phi).
double log_posterior(const Individual& indiv, const Vec4& phi, const Params& theta);

/// log_posterior with omega2 factorized once for repeated evaluation.
class PosteriorDensity {
 public:
  explicit PosteriorDensity(const Params& theta);
  double operator()(const Individual& indiv, const Vec4& phi) const;

 private:
  Vec4 log_pop_;
  Eigen::LLT<Mat4> omega_llt_;
  double sigma2_;
};

StatVec suff_stat(const Individual& indiv, const Vec4& phi);

struct MStepResult {
  Params params;
  int floored_eigenvalues = 0;  // eigenvalues raised to the 1e-8 floor
  bool floored_sigma2 = false;
};

/// log_pop = s1, omega2 = mat(s2) - s1 s1^T (diagonal part only in diagonal
/// mode, eigenvalues floored at 1e-8), sigma2 = max(s3, 1e-10).
MStepResult m_step(const StatVec& s, OmegaMode mode = OmegaMode::full);

std::vector<Individual> simulate(std::size_t n, const Params& truth, const Design& design, rng::Stream& rng);

/// T_lag = 1, ka = 1, V = 8, k = 0.1, omega = (0.4, 0.5, 0.2, 0.3), sigma2 = 0.5.
Params default_truth();

/// Naive per-individual estimates: terminal log-slope for k, an onset time
/// for T_lag, ka from the time of the peak, V from the peak height.
/// Returns log-scale (T_lag, ka, V, k).
Vec4 naive_log_estimate(const Individual& indiv);

/// Medians of the naive log-estimates raised by 20% on the natural scale,
/// omega2 = 0.1 I, sigma2 = 1.
Params initial_params(std::span<const Individual> cohort);

/// CSV with header id,dose,time,obs; one row per observation.
std::vector<Individual> read_cohort(std::istream& in);
void write_cohort(std::ostream& out, std::span<const Individual> cohort);

struct ModelOptions {
  OmegaMode omega_mode = OmegaMode::diagonal;
  double proposal_factor = 0.4;  // MH scale per coordinate, times sqrt(omega2_dd)
};

class Model final : public ttsem::Model {
 public:
  explicit Model(std::vector<Individual> cohort, ModelOptions options = {});

  std::string name() const override { return "pk"; }
  std::size_t num_samples() const override { return cohort_.size(); }
  std::size_t stat_dim() const override { return kStatDim; }
  std::vector<std::string> param_names() const override;

  /// Chains start at the population mean log_pop.
  Latent initial_latent(std::size_t i, const ParamVec& theta) const override;
  /// M random-walk MH transitions from `warm`; returns the final state as the
  /// single draw and stores it back into `warm`.
  std::vector<Latent> sample_posterior(std::size_t i, const ParamVec& theta, int M, rng::Stream& rng,
                                       Latent& warm) const override;
  StatVec suff_stat(std::size_t i, const Latent& z) const override;
  ParamVec m_step(const StatVec& s) const override;

  std::span<const Individual> cohort() const { return cohort_; }
  const ModelOptions& options() const { return options_; }
  /// Number of M-steps that had to floor an eigenvalue or sigma2.
  long floor_events() const { return floor_events_.load(); }

 private:
  std::vector<Individual> cohort_;
  ModelOptions options_;
  mutable std::atomic<long> floor_events_{0};
};

}  // namespace ttsem::pk

#endif  // TTSEM_PK_HPP
