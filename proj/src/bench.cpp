#include "ttsem/bench.hpp"

#include "ttsem/csv.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <numeric>
#include <sstream>

namespace ttsem::bench {

ModelKind parse_model_kind(std::string_view name) {
  if (name == "gmm") return ModelKind::gmm;
  if (name == "pk") return ModelKind::pk;
  throw ConfigError("unknown model '" + std::string(name) + "' (expected gmm or pk)");
}

std::string_view to_string(ModelKind kind) { return kind == ModelKind::gmm ? "gmm" : "pk"; }

double metric_precision_gmm(const gmm::Params& theta, const gmm::Params& theta_star) {
  if (theta.components() != theta_star.components()) throw ConfigError("precision needs equal component counts");
  std::vector<std::size_t> perm(theta.components());
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double d = 0.0;
    for (std::size_t m = 0; m < perm.size(); ++m) {
      const double r = theta.means[static_cast<Eigen::Index>(m)] - theta_star.means[static_cast<Eigen::Index>(perm[m])];
      d += r * r;
    }
    best = std::min(best, d);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

std::vector<std::size_t> select_rows(const Trajectory& traj, std::size_t max_rows) {
  const std::size_t total = traj.records.size();
  std::vector<std::size_t> rows;
  if (total == 0) return rows;
  auto boundary = [&](std::size_t r) {
    return r > 0 && std::floor(traj.records[r].epoch + 1e-9) > std::floor(traj.records[r - 1].epoch + 1e-9);
  };
  std::size_t boundaries = 0;
  for (std::size_t r = 1; r < total; ++r) boundaries += boundary(r);
  const std::size_t budget = max_rows > boundaries + 2 ? max_rows - boundaries - 2 : 1;
  const std::size_t stride = std::max<std::size_t>(1, (total + budget - 1) / budget);
  for (std::size_t r = 0; r < total; ++r)
    if (r % stride == 0 || r + 1 == total || boundary(r)) rows.push_back(r);
  return rows;
}

std::string trajectory_csv(const Trajectory& traj, const Model& model, const CsvOptions& options) {
  std::ostringstream os;
  const bool with_nll = !traj.records.empty() && model.penalized_nll(traj.records.front().theta, options.exec).has_value();
  std::vector<std::string> header = {"iter", "epoch"};
  header.insert(header.end(), traj.param_names.begin(), traj.param_names.end());
  header.push_back("delta_s_sq");
  if (with_nll) header.push_back("nll");
  if (options.include_timing) header.push_back("wall_ns");
  csv::write_row(os, header);
  for (std::size_t r : select_rows(traj, options.max_rows)) {
    const auto& rec = traj.records[r];
    std::vector<std::string> row = {std::to_string(rec.iter), csv::format_double(rec.epoch)};
    for (Eigen::Index p = 0; p < rec.theta.size(); ++p) row.push_back(csv::format_double(rec.theta[p]));
    row.push_back(csv::format_double(rec.delta_s_sq));
    if (with_nll) row.push_back(csv::format_double(*model.penalized_nll(rec.theta, options.exec)));
    if (options.include_timing) row.push_back(std::to_string(rec.wall_ns));
    csv::write_row(os, row);
  }
  return os.str();
}

RunConfig resolve_config(const AlgorithmSpec& algo, std::size_t n, int mc_samples, double epochs, std::uint64_t seed) {
  RunConfig cfg = RunConfig::defaults_for(algo.variant, n);
  if (algo.gamma) cfg.gamma = StepSchedule::parse(*algo.gamma, epoch_iterations(algo.variant, n));
  if (algo.rho) cfg.rho = *algo.rho;
  if (algo.epoch_len) cfg.epoch_len = *algo.epoch_len;
  if (algo.estep) cfg.estep = *algo.estep;
  cfg.mc_samples = mc_samples;
  cfg.seed = seed;
  cfg.total_iters = iterations_for_budget(cfg, n, epochs);
  cfg.validate();
  return cfg;
}

ExperimentSpec ExperimentSpec::gmm_default() {
  ExperimentSpec s;
  s.model = ModelKind::gmm;
  s.n = 10000;
  s.replicates = 10;
  s.epochs = 7.0;
  s.mc_samples = 10;
  for (auto v : {Variant::EM, Variant::iEM, Variant::SAEM, Variant::iSAEM, Variant::vrTTEM, Variant::fiTTEM})
    s.algorithms.push_back({v});
  return s;
}

ExperimentSpec ExperimentSpec::pk_default() {
  ExperimentSpec s;
  s.model = ModelKind::pk;
  s.n = 500;
  s.replicates = 10;
  s.epochs = 5.0;
  s.mc_samples = 50;
  for (auto v : {Variant::SAEM, Variant::iSAEM, Variant::vrTTEM, Variant::fiTTEM}) s.algorithms.push_back({v});
  return s;
}

void ExperimentSpec::validate() const {
  if (n == 0) throw ConfigError("experiment needs n >= 1");
  if (replicates == 0) throw ConfigError("experiment needs at least one replicate");
  if (algorithms.empty()) throw ConfigError("experiment needs at least one algorithm");
  if (!(epochs > 0.0)) throw ConfigError("experiment needs a positive epoch budget");
  if (resolution < 1) throw ConfigError("grid resolution must be at least 1");
  if (mc_samples < 1) throw ConfigError("mc_samples must be at least 1");
  if (jobs < 1) throw ConfigError("jobs must be at least 1");
  if (model == ModelKind::gmm) {
    gmm_truth.validate();
    gmm_reg.validate();
  } else {
    pk_truth.validate();
    for (const auto& a : algorithms)
      if (a.variant == Variant::EM || a.variant == Variant::iEM || (a.estep && *a.estep == EStep::exact))
        throw ConfigError(a.label() + " needs an exact E-step, which the PK model does not have");
  }
}

std::vector<double> epoch_grid(double epochs, int resolution) {
  const auto points = static_cast<std::size_t>(std::ceil(epochs - 1e-9)) * static_cast<std::size_t>(resolution);
  std::vector<double> grid(points);
  for (std::size_t j = 0; j < points; ++j) grid[j] = static_cast<double>(j + 1) / resolution;
  return grid;
}

Quantiles summarize(std::vector<double> values) {
  Quantiles q;
  if (values.empty()) return q;
  std::sort(values.begin(), values.end());
  auto quantile = [&](double p) {
    const double h = p * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
  };
  q.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  q.median = quantile(0.5);
  q.q25 = quantile(0.25);
  q.q75 = quantile(0.75);
  return q;
}

std::vector<double> ExperimentResult::values_at(std::size_t a, const std::string& metric, std::size_t g) const {
  std::vector<double> out;
  for (const auto& rep : replicates) out.push_back(rep.runs.at(a).series.at(metric).at(g));
  return out;
}

std::vector<double> ExperimentResult::final_values(std::size_t a, const std::string& metric) const {
  return values_at(a, metric, grid.size() - 1);
}

namespace {

// Index of the last record whose epoch counter does not exceed e.
std::vector<std::size_t> grid_records(const Trajectory& traj, const std::vector<double>& grid) {
  std::vector<std::size_t> idx;
  std::size_t r = 0;
  for (double e : grid) {
    while (r + 1 < traj.records.size() && traj.records[r + 1].epoch <= e + 1e-9) ++r;
    idx.push_back(r);
  }
  return idx;
}

std::string params_fingerprint(const ParamVec& theta) {
  std::string text;
  for (Eigen::Index p = 0; p < theta.size(); ++p) text += csv::format_double(theta[p]) + ",";
  return csv::hex64(csv::fnv1a64(text));
}

ReplicateResult run_gmm_replicate(const ExperimentSpec& spec, const std::vector<double>& grid, std::size_t r) {
  const auto rep_root = rng::root(spec.seed).child(rng::Tag::replicate).child(r);
  auto sim = rep_root.child(rng::Tag::simulate);
  auto data = gmm::simulate(spec.n, spec.gmm_truth, sim);
  const std::size_t M = spec.gmm_truth.components();

  ReplicateResult out;
  out.index = r;
  {
    std::ostringstream os;
    gmm::write_observations(os, data);
    out.dataset_hash = csv::hex64(csv::fnv1a64(os.str()));
  }
  const gmm::Model model(std::move(data), M, spec.gmm_reg);
  const gmm::Params start = gmm::initial_params(model.data(), M);
  const ParamVec theta0 = start.to_flat();
  out.theta0_hash = params_fingerprint(theta0);
  // ML reference: batch EM to double precision. Serial inside a replicate.
  const auto reference = gmm::fit_em(model, start, spec.gmm_reference_tol, 200000, Exec::serial);
  out.reference = reference.params.to_flat();
  const std::uint64_t run_seed = rep_root.child(rng::Tag::init)();

  for (const auto& algo : spec.algorithms) {
    RunConfig cfg = resolve_config(algo, spec.n, spec.mc_samples, spec.epochs, run_seed);
    cfg.exec = Exec::serial;
    const Trajectory traj = run(model, cfg, theta0);
    RunMetrics m;
    m.iterations = cfg.total_iters;
    auto& precision = m.series["precision"];
    auto& nll = m.series["nll"];
    auto& gap = m.series["delta_s_sq"];
    for (std::size_t rec : grid_records(traj, grid)) {
      const auto& record = traj.records[rec];
      precision.push_back(metric_precision_gmm(gmm::Params::from_flat(record.theta), reference.params));
      nll.push_back(*model.penalized_nll(record.theta, Exec::serial));
      gap.push_back(record.delta_s_sq);
    }
    out.runs.push_back(std::move(m));
  }
  return out;
}

const char* const kPkErrorMetrics[4] = {"sq_err_tlag", "sq_err_ka", "sq_err_v", "sq_err_k"};

ReplicateResult run_pk_replicate(const ExperimentSpec& spec, const std::vector<double>& grid, std::size_t r) {
  const auto rep_root = rng::root(spec.seed).child(rng::Tag::replicate).child(r);
  auto sim = rep_root.child(rng::Tag::simulate);
  auto cohort = pk::simulate(spec.n, spec.pk_truth, spec.pk_design, sim);

  ReplicateResult out;
  out.index = r;
  {
    std::ostringstream os;
    pk::write_cohort(os, cohort);
    out.dataset_hash = csv::hex64(csv::fnv1a64(os.str()));
  }
  const pk::Model model(std::move(cohort), spec.pk_options);
  const ParamVec theta0 = pk::initial_params(model.cohort()).to_flat();
  out.theta0_hash = params_fingerprint(theta0);
  out.reference = spec.pk_truth.to_flat();
  const pk::Vec4 truth = spec.pk_truth.log_pop.array().exp();
  const std::uint64_t run_seed = rep_root.child(rng::Tag::init)();

  for (const auto& algo : spec.algorithms) {
    RunConfig cfg = resolve_config(algo, spec.n, spec.mc_samples, spec.epochs, run_seed);
    cfg.exec = Exec::serial;
    const Trajectory traj = run(model, cfg, theta0);
    RunMetrics m;
    m.iterations = cfg.total_iters;
    for (std::size_t rec : grid_records(traj, grid)) {
      const auto& record = traj.records[rec];
      const pk::Vec4 est = record.theta.head<4>().array().exp();
      for (int d = 0; d < 4; ++d) {
        const double e = est[d] - truth[d];
        m.series[kPkErrorMetrics[d]].push_back(e * e);
      }
      m.series["delta_s_sq"].push_back(record.delta_s_sq);
    }
    out.runs.push_back(std::move(m));
  }
  return out;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentSpec& spec) {
  spec.validate();
  ExperimentResult result;
  result.spec = spec;
  result.grid = epoch_grid(spec.epochs, spec.resolution);
  if (spec.model == ModelKind::gmm) {
    result.metrics = {"precision", "nll", "delta_s_sq"};
    result.primary_metric = "precision";
  } else {
    result.metrics = {"sq_err_tlag", "sq_err_ka", "sq_err_v", "sq_err_k", "delta_s_sq"};
    result.primary_metric = "sq_err_ka";
  }
  result.replicates.resize(spec.replicates);

  std::exception_ptr first_error;
  std::size_t first_index = std::numeric_limits<std::size_t>::max();
  std::mutex guard;
  const auto count = static_cast<long>(spec.replicates);
#pragma omp parallel for schedule(dynamic, 1) num_threads(spec.jobs)
  for (long r = 0; r < count; ++r) {
    const auto idx = static_cast<std::size_t>(r);
    try {
      result.replicates[idx] = spec.model == ModelKind::gmm ? run_gmm_replicate(spec, result.grid, idx)
                                                            : run_pk_replicate(spec, result.grid, idx);
    } catch (...) {
      std::lock_guard lock(guard);
      if (idx < first_index) {
        first_index = idx;
        first_error = std::current_exception();
      }
    }
  }
  if (first_error) std::rethrow_exception(first_error);
  return result;
}

std::string metrics_csv(const ExperimentResult& result) {
  std::ostringstream os;
  csv::write_row(os, {"algorithm", "metric", "epoch", "mean", "median", "q25", "q75"});
  for (std::size_t a = 0; a < result.spec.algorithms.size(); ++a) {
    for (const auto& metric : result.metrics) {
      for (std::size_t g = 0; g < result.grid.size(); ++g) {
        const Quantiles q = summarize(result.values_at(a, metric, g));
        csv::write_row(os, {result.spec.algorithms[a].label(), metric, csv::format_double(result.grid[g]),
                            csv::format_double(q.mean), csv::format_double(q.median), csv::format_double(q.q25),
                            csv::format_double(q.q75)});
      }
    }
  }
  return os.str();
}

std::string summary_json(const ExperimentResult& result) {
  using nlohmann::ordered_json;
  const auto& spec = result.spec;
  ordered_json j;
  j["model"] = std::string(to_string(spec.model));
  j["n"] = spec.n;
  j["replicates"] = spec.replicates;
  j["epochs"] = spec.epochs;
  j["mc_samples"] = spec.mc_samples;
  j["seed"] = spec.seed;
  j["primary_metric"] = result.primary_metric;

  ordered_json algos = ordered_json::array();
  for (std::size_t a = 0; a < spec.algorithms.size(); ++a) {
    ordered_json entry;
    entry["name"] = spec.algorithms[a].label();
    const RunConfig cfg = resolve_config(spec.algorithms[a], spec.n, spec.mc_samples, spec.epochs, 0);
    entry["gamma"] = cfg.gamma.describe();
    entry["rho"] = cfg.rho;
    entry["iterations"] = cfg.total_iters;
    ordered_json finals;
    for (const auto& metric : result.metrics) {
      const Quantiles q = summarize(result.final_values(a, metric));
      finals[metric] = {{"mean", q.mean}, {"median", q.median}, {"q25", q.q25}, {"q75", q.q75}};
    }
    entry["final"] = finals;
    entry["final_primary_per_replicate"] = result.final_values(a, result.primary_metric);
    algos.push_back(entry);
  }
  j["algorithms"] = algos;

  ordered_json wins;
  for (std::size_t a = 0; a < spec.algorithms.size(); ++a) {
    const auto va = result.final_values(a, result.primary_metric);
    ordered_json row;
    for (std::size_t b = 0; b < spec.algorithms.size(); ++b) {
      if (a == b) continue;
      const auto vb = result.final_values(b, result.primary_metric);
      int count = 0;
      for (std::size_t r = 0; r < va.size(); ++r) count += va[r] < vb[r];
      row[spec.algorithms[b].label()] = count;
    }
    wins[spec.algorithms[a].label()] = row;
  }
  j["wins"] = wins;

  ordered_json reps = ordered_json::array();
  for (const auto& rep : result.replicates)
    reps.push_back({{"index", rep.index}, {"dataset_hash", rep.dataset_hash}, {"theta0_hash", rep.theta0_hash}});
  j["replicate_data"] = reps;
  return j.dump(2) + "\n";
}

}  // namespace ttsem::bench
