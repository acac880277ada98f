#ifndef TTSEM_BENCH_HPP
#define TTSEM_BENCH_HPP

// Experiment harness: trajectory serialization, metrics on an epoch grid and
// replicated Monte Carlo studies.

#include "ttsem/core.hpp"
#include "ttsem/engine.hpp"
#include "ttsem/gmm.hpp"
#include "ttsem/pk.hpp"

#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace ttsem::bench {

enum class ModelKind { gmm, pk };

ModelKind parse_model_kind(std::string_view name);
std::string_view to_string(ModelKind kind);

/// min over component permutations of sum_m (mu_m - mu*_{pi(m)})^2.
double metric_precision_gmm(const gmm::Params& theta, const gmm::Params& theta_star);

struct CsvOptions {
  std::size_t max_rows = 10000;
  bool include_timing = false;
  Exec exec = Exec::parallel;
};

/// Record indices written to CSV: an even subsample of at most `max_rows`
/// rows that always keeps the first and last records and every record where
/// the integer part of the epoch counter advances.
std::vector<std::size_t> select_rows(const Trajectory& traj, std::size_t max_rows);

/// Columns: iter,epoch,<params>,delta_s_sq[,nll][,wall_ns]. The nll column is
/// present when the model provides a penalized NLL.
std::string trajectory_csv(const Trajectory& traj, const Model& model, const CsvOptions& options = {});

struct AlgorithmSpec {
  Variant variant = Variant::SAEM;
  std::optional<std::string> gamma;  // StepSchedule::parse syntax
  std::optional<double> rho;
  std::optional<std::int64_t> epoch_len;
  std::optional<EStep> estep;

  std::string label() const { return std::string(to_string(variant)); }
};

/// RunConfig of `algo` for n samples with variant defaults, the given overrides
/// and an iteration budget of `epochs` passes.
RunConfig resolve_config(const AlgorithmSpec& algo, std::size_t n, int mc_samples, double epochs, std::uint64_t seed);

struct ExperimentSpec {
  ModelKind model = ModelKind::gmm;
  std::size_t n = 10000;
  std::size_t replicates = 10;
  std::vector<AlgorithmSpec> algorithms;
  double epochs = 7.0;
  int resolution = 4;  // grid points per epoch
  int mc_samples = 10;
  std::uint64_t seed = 1;
  int jobs = 1;

  // mixture settings
  gmm::Params gmm_truth = gmm::default_truth();
  gmm::Regularizer gmm_reg;
  double gmm_reference_tol = 1e-14;

  // PK settings
  pk::Params pk_truth = pk::default_truth();
  pk::Design pk_design;
  pk::ModelOptions pk_options;

  /// Desk-scale defaults of the two studies.
  static ExperimentSpec gmm_default();
  static ExperimentSpec pk_default();

  void validate() const;
};

/// Grid epochs (j + 1) / resolution for j < ceil(epochs) * resolution.
std::vector<double> epoch_grid(double epochs, int resolution);

/// One metric of one run sampled on the epoch grid.
using MetricSeries = std::vector<double>;

struct RunMetrics {
  std::map<std::string, MetricSeries> series;  // metric name -> grid values
  std::int64_t iterations = 0;
};

struct ReplicateResult {
  std::size_t index = 0;
  std::string dataset_hash;
  std::string theta0_hash;
  ParamVec reference;              // theta* used by the metrics
  std::vector<RunMetrics> runs;    // one per algorithm, spec order
};

struct Quantiles {
  double mean = 0.0, median = 0.0, q25 = 0.0, q75 = 0.0;
};

Quantiles summarize(std::vector<double> values);

struct ExperimentResult {
  ExperimentSpec spec;
  std::vector<double> grid;
  std::vector<std::string> metrics;
  std::string primary_metric;
  std::vector<ReplicateResult> replicates;

  /// Final-grid-point values of `metric` for algorithm `a`, one per replicate.
  std::vector<double> final_values(std::size_t a, const std::string& metric) const;
  /// Values of `metric` for algorithm `a` at grid point g, one per replicate.
  std::vector<double> values_at(std::size_t a, const std::string& metric, std::size_t g) const;
};

/// Simulates, fits and scores every replicate. Replicates run concurrently up
/// to spec.jobs; the result is independent of the job count.
ExperimentResult run_experiment(const ExperimentSpec& spec);

/// algorithm,metric,epoch,mean,median,q25,q75
std::string metrics_csv(const ExperimentResult& result);

/// Final-epoch summaries per algorithm, pairwise win counts on the primary
/// metric and per-replicate dataset fingerprints.
std::string summary_json(const ExperimentResult& result);

}  // namespace ttsem::bench

#endif  // TTSEM_BENCH_HPP
