#include "ttsem/cli.hpp"

#include "ttsem/bench.hpp"
#include "ttsem/csv.hpp"
#include "ttsem/engine.hpp"
#include "ttsem/gmm.hpp"
#include "ttsem/pk.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

namespace ttsem {

namespace {

struct Options {
  std::string model = "gmm";
  std::string data;
  std::string out;
  std::string config;
  std::string truth;
  std::vector<std::string> algos;
  std::string gamma;
  std::string rho = "auto";
  int mc_samples = 0;
  std::int64_t epoch_len = 0;
  std::int64_t iters = 0;
  double epochs = 0.0;
  std::size_t replicates = 10;
  std::size_t n = 0;
  std::uint64_t seed = 1;
  int jobs = 1;
  std::size_t components = 2;
  double delta = 1e-3;
  double epsilon = 1e-3;
  std::string omega_mode = "diagonal";
  bool exact_estep = false;
  bool randomized_termination = false;
  bool timing = false;
  int resolution = 4;
  std::size_t max_rows = 10000;

  std::set<std::string> given;  // options set on the command line or in --config

  bool has(const std::string& name) const { return given.count(name) > 0; }
};

void add_options(CLI::App& app, Options& o, std::map<std::string, CLI::Option*>& opts) {
  opts["model"] = app.add_option("--model", o.model, "gmm or pk");
  opts["data"] = app.add_option("--data", o.data, "dataset file");
  opts["out"] = app.add_option("--out", o.out, "output file (simulate, run) or directory (replicate)");
  opts["config"] = app.add_option("--config", o.config, "JSON file whose keys override flags");
  opts["truth"] = app.add_option("--truth", o.truth, "JSON file with the simulation parameters");
  opts["algo"] = app.add_option("--algo", o.algos, "algorithm(s): EM, iEM, MCEM, SAEM, iSAEM, vrTTEM, fiTTEM")
                     ->delimiter(',');
  opts["gamma"] = app.add_option("--gamma", o.gamma, "SA stepsize, e.g. poly:0.5:warmup=1ep or const:1");
  opts["rho"] = app.add_option("--rho", o.rho, "Inc-step stepsize in (0, 1] or auto");
  opts["mc-samples"] = app.add_option("--mc-samples", o.mc_samples, "MC draws (MH steps for pk) per E-step");
  opts["epoch-len"] = app.add_option("--epoch-len", o.epoch_len, "vrTTEM anchor refresh period m");
  opts["epochs"] = app.add_option("--epochs", o.epochs, "budget in passes over the data");
  opts["iters"] = app.add_option("--iters", o.iters, "number of iterations (overrides --epochs)");
  opts["replicates"] = app.add_option("--replicates", o.replicates, "number of replicates");
  opts["n"] = app.add_option("--n", o.n, "number of samples to simulate");
  opts["seed"] = app.add_option("--seed", o.seed, "root seed");
  opts["jobs"] = app.add_option("--jobs", o.jobs, "concurrent replicates");
  opts["components"] = app.add_option("--components", o.components, "mixture components");
  opts["delta"] = app.add_option("--delta", o.delta, "ridge penalty on mixture means");
  opts["epsilon"] = app.add_option("--epsilon", o.epsilon, "penalty on mixture log-weights");
  opts["omega-mode"] = app.add_option("--omega-mode", o.omega_mode, "diagonal or full");
  opts["resolution"] = app.add_option("--resolution", o.resolution, "metric grid points per epoch");
  opts["max-rows"] = app.add_option("--max-rows", o.max_rows, "row cap of the trajectory CSV");
  opts["exact-estep"] = app.add_flag("--exact-estep", o.exact_estep, "closed-form E-step for MC variants");
  opts["randomized-termination"] =
      app.add_flag("--randomized-termination", o.randomized_termination, "draw the terminal iteration");
  opts["timing"] = app.add_flag("--timing", o.timing, "add a wall_ns column");
}

template <class T>
void set_from(const nlohmann::json& j, const char* key, T& field, Options& o) {
  if (!j.contains(key)) return;
  try {
    field = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
  o.given.insert(key);
}

void apply_config(Options& o) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(csv::read_file(o.config));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file '" + o.config + "': " + e.what());
  }
  if (!j.is_object()) throw ConfigError("config file '" + o.config + "' must hold a JSON object");
  static const std::set<std::string> known = {
      "model", "data", "out", "truth", "algo", "gamma", "rho", "mc-samples", "epoch-len", "epochs", "iters",
      "replicates", "n", "seed", "jobs", "components", "delta", "epsilon", "omega-mode", "resolution",
      "max-rows", "exact-estep", "randomized-termination", "timing"};
  for (const auto& item : j.items())
    if (!known.count(item.key())) throw ConfigError("config file: unknown key '" + item.key() + "'");
  set_from(j, "model", o.model, o);
  set_from(j, "data", o.data, o);
  set_from(j, "out", o.out, o);
  set_from(j, "truth", o.truth, o);
  if (j.contains("algo")) {
    if (j["algo"].is_string())
      o.algos = {j["algo"].get<std::string>()};
    else
      set_from(j, "algo", o.algos, o);
    o.given.insert("algo");
  }
  set_from(j, "gamma", o.gamma, o);
  if (j.contains("rho")) {
    o.rho = j["rho"].is_number() ? csv::format_double(j["rho"].get<double>()) : j["rho"].get<std::string>();
    o.given.insert("rho");
  }
  set_from(j, "mc-samples", o.mc_samples, o);
  set_from(j, "epoch-len", o.epoch_len, o);
  set_from(j, "epochs", o.epochs, o);
  set_from(j, "iters", o.iters, o);
  set_from(j, "replicates", o.replicates, o);
  set_from(j, "n", o.n, o);
  set_from(j, "seed", o.seed, o);
  set_from(j, "jobs", o.jobs, o);
  set_from(j, "components", o.components, o);
  set_from(j, "delta", o.delta, o);
  set_from(j, "epsilon", o.epsilon, o);
  set_from(j, "omega-mode", o.omega_mode, o);
  set_from(j, "resolution", o.resolution, o);
  set_from(j, "max-rows", o.max_rows, o);
  set_from(j, "exact-estep", o.exact_estep, o);
  set_from(j, "randomized-termination", o.randomized_termination, o);
  set_from(j, "timing", o.timing, o);
}

bench::ModelKind model_kind(const Options& o) { return bench::parse_model_kind(o.model); }

std::size_t default_n(bench::ModelKind kind) { return kind == bench::ModelKind::gmm ? 10000 : 500; }
double default_epochs(bench::ModelKind kind) { return kind == bench::ModelKind::gmm ? 7.0 : 5.0; }
int default_mc(bench::ModelKind kind) { return kind == bench::ModelKind::gmm ? 10 : 50; }

std::vector<double> json_reals(const nlohmann::json& j, const char* key, std::size_t expect = 0) {
  if (!j.contains(key)) throw ConfigError(std::string("truth file is missing '") + key + "'");
  std::vector<double> v;
  try {
    v = j.at(key).get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("truth key '") + key + "': " + e.what());
  }
  if (expect && v.size() != expect)
    throw ConfigError(std::string("truth key '") + key + "' needs " + std::to_string(expect) + " values");
  return v;
}

nlohmann::json load_truth_json(const std::string& path) {
  try {
    return nlohmann::json::parse(csv::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("truth file '" + path + "': " + e.what());
  }
}

// {"weights": [...], "means": [...]}
gmm::Params gmm_truth(const Options& o) {
  if (!o.has("truth")) return gmm::default_truth();
  const auto j = load_truth_json(o.truth);
  const auto means = json_reals(j, "means");
  const auto weights = json_reals(j, "weights", means.size());
  gmm::Params p;
  p.means = Eigen::Map<const Eigen::VectorXd>(means.data(), static_cast<Eigen::Index>(means.size()));
  p.weights = Eigen::Map<const Eigen::VectorXd>(weights.data(), static_cast<Eigen::Index>(weights.size()));
  p.validate();
  if (std::abs(p.weights.sum() - 1.0) > 1e-12) throw ConfigError("truth weights must sum to 1");
  return p;
}

// {"pop": [Tlag, ka, V, k], "omega": [4 standard deviations], "sigma2": s}
pk::Params pk_truth(const Options& o) {
  if (!o.has("truth")) return pk::default_truth();
  const auto j = load_truth_json(o.truth);
  const auto pop = json_reals(j, "pop", 4);
  const auto omega = json_reals(j, "omega", 4);
  if (!j.contains("sigma2") || !j["sigma2"].is_number()) throw ConfigError("truth file needs a numeric 'sigma2'");
  pk::Params p;
  for (int d = 0; d < 4; ++d) {
    if (!(pop[d] > 0.0)) throw ConfigError("truth 'pop' values must be positive");
    p.log_pop[d] = std::log(pop[d]);
  }
  p.omega2 = pk::Vec4(omega[0] * omega[0], omega[1] * omega[1], omega[2] * omega[2], omega[3] * omega[3]).asDiagonal();
  p.sigma2 = j["sigma2"].get<double>();
  p.validate();
  return p;
}

pk::ModelOptions pk_options(const Options& o) {
  pk::ModelOptions opt;
  if (o.omega_mode == "diagonal")
    opt.omega_mode = pk::OmegaMode::diagonal;
  else if (o.omega_mode == "full")
    opt.omega_mode = pk::OmegaMode::full;
  else
    throw ConfigError("--omega-mode must be diagonal or full");
  return opt;
}

bench::AlgorithmSpec algorithm_spec(const Options& o, const std::string& name) {
  bench::AlgorithmSpec a;
  a.variant = parse_variant(name);
  if (o.has("gamma")) a.gamma = o.gamma;
  if (o.rho != "auto") {
    try {
      a.rho = csv::parse_double(o.rho);
    } catch (const Error&) {
      throw ConfigError("--rho must be a real number or 'auto'");
    }
  }
  if (o.has("epoch-len")) a.epoch_len = o.epoch_len;
  if (o.exact_estep) a.estep = EStep::exact;
  return a;
}

int cmd_simulate(const Options& o, std::ostream& out) {
  const auto kind = model_kind(o);
  if (o.out.empty()) throw ConfigError("simulate needs --out");
  const std::size_t n = o.has("n") ? o.n : default_n(kind);
  auto rng = rng::root(o.seed).child(rng::Tag::simulate);
  std::ostringstream os;
  if (kind == bench::ModelKind::gmm) {
    gmm::write_observations(os, gmm::simulate(n, gmm_truth(o), rng));
  } else {
    pk::write_cohort(os, pk::simulate(n, pk_truth(o), pk::Design{}, rng));
  }
  const std::string text = os.str();
  csv::write_file(o.out, text);
  out << "fnv1a64=" << csv::hex64(csv::fnv1a64(text)) << "\n";
  return 0;
}

int cmd_run(const Options& o, std::ostream& out, std::ostream& err) {
  const auto kind = model_kind(o);
  if (o.data.empty()) throw ConfigError("run needs --data");
  if (o.algos.size() != 1) throw ConfigError("run needs exactly one --algo");
  const auto algo = algorithm_spec(o, o.algos.front());
  if (kind == bench::ModelKind::gmm) {
    gmm::Regularizer reg{o.delta, o.epsilon};
    reg.validate();
    if (o.components < 1) throw ConfigError("--components must be at least 1");
  } else {
    pk_options(o);
    if (algo.variant == Variant::EM || algo.variant == Variant::iEM || o.exact_estep)
      throw ConfigError("the pk model has no exact E-step; use an MC variant");
  }

  std::istringstream in(csv::read_file(o.data));
  std::unique_ptr<Model> model;
  ParamVec theta0;
  if (kind == bench::ModelKind::gmm) {
    auto data = gmm::read_observations(in);
    if (data.empty()) throw Error("dataset '" + o.data + "' holds no observations");
    theta0 = gmm::initial_params(data, o.components).to_flat();
    model = std::make_unique<gmm::Model>(std::move(data), o.components, gmm::Regularizer{o.delta, o.epsilon});
  } else {
    auto cohort = pk::read_cohort(in);
    if (cohort.empty()) throw Error("dataset '" + o.data + "' holds no individuals");
    theta0 = pk::initial_params(cohort).to_flat();
    model = std::make_unique<pk::Model>(std::move(cohort), pk_options(o));
  }

  const std::size_t n = model->num_samples();
  const int mc = o.has("mc-samples") ? o.mc_samples : default_mc(kind);
  const double epochs = o.has("epochs") ? o.epochs : default_epochs(kind);
  RunConfig cfg = bench::resolve_config(algo, n, mc, epochs, o.seed);
  if (o.has("iters")) cfg.total_iters = o.iters;
  cfg.randomized_termination = o.randomized_termination;
  cfg.validate();

  const Trajectory traj = run(*model, cfg, theta0);
  bench::CsvOptions csv_opt;
  csv_opt.max_rows = o.max_rows;
  csv_opt.include_timing = o.timing;
  const std::string table = bench::trajectory_csv(traj, *model, csv_opt);

  std::ostream& log = o.out.empty() ? err : out;
  if (o.out.empty())
    out << table;
  else
    csv::write_file(o.out, table);
  log << "terminal_iter=" << traj.records[traj.terminal_record].iter << "\n";
  for (std::size_t p = 0; p < traj.param_names.size(); ++p)
    log << traj.param_names[p] << "=" << csv::format_double(traj.terminal_theta[static_cast<Eigen::Index>(p)]) << "\n";
  if (const auto* pkm = dynamic_cast<const pk::Model*>(model.get()); pkm && pkm->floor_events() > 0)
    log << "m_step_floor_events=" << pkm->floor_events() << "\n";
  return 0;
}

int cmd_replicate(const Options& o, std::ostream& out) {
  const auto kind = model_kind(o);
  if (o.out.empty()) throw ConfigError("replicate needs --out (output directory)");
  bench::ExperimentSpec spec = kind == bench::ModelKind::gmm ? bench::ExperimentSpec::gmm_default()
                                                             : bench::ExperimentSpec::pk_default();
  if (o.has("n")) spec.n = o.n;
  if (o.has("replicates")) spec.replicates = o.replicates;
  if (o.has("epochs")) spec.epochs = o.epochs;
  if (o.has("mc-samples")) spec.mc_samples = o.mc_samples;
  spec.seed = o.seed;
  spec.jobs = o.jobs;
  spec.resolution = o.resolution;
  if (o.has("algo") || o.has("gamma") || o.rho != "auto" || o.has("epoch-len") || o.exact_estep) {
    std::vector<std::string> names = o.algos;
    if (names.empty())
      for (const auto& a : spec.algorithms) names.push_back(a.label());
    spec.algorithms.clear();
    for (const auto& name : names) spec.algorithms.push_back(algorithm_spec(o, name));
  }
  if (kind == bench::ModelKind::gmm) {
    spec.gmm_truth = gmm_truth(o);
    spec.gmm_reg = {o.delta, o.epsilon};
    if (o.has("components") && o.components != spec.gmm_truth.components())
      throw ConfigError("--components must match the number of components of the truth");
  } else {
    spec.pk_truth = pk_truth(o);
    spec.pk_options = pk_options(o);
  }
  spec.validate();

  const auto result = bench::run_experiment(spec);
  std::filesystem::create_directories(o.out);
  const auto dir = std::filesystem::path(o.out);
  csv::write_file((dir / "metrics.csv").string(), bench::metrics_csv(result));
  csv::write_file((dir / "summary.json").string(), bench::summary_json(result));
  for (const auto& rep : result.replicates)
    out << "replicate " << rep.index << " data=" << rep.dataset_hash << " theta0=" << rep.theta0_hash << "\n";
  out << "wrote " << (dir / "metrics.csv").string() << " and " << (dir / "summary.json").string() << "\n";
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Two-timescale stochastic EM fitting and benchmarks"};
  app.require_subcommand(1);
  Options o;
  std::map<std::string, CLI::Option*> sim_opts, run_opts, rep_opts;
  auto* sim = app.add_subcommand("simulate", "write a synthetic dataset");
  auto* runc = app.add_subcommand("run", "fit one dataset and write the trajectory CSV");
  auto* rep = app.add_subcommand("replicate", "replicated study: metrics CSV and summary JSON");
  add_options(*sim, o, sim_opts);
  add_options(*runc, o, run_opts);
  add_options(*rep, o, rep_opts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    const auto& opts = sim->parsed() ? sim_opts : runc->parsed() ? run_opts : rep_opts;
    for (const auto& [name, opt] : opts)
      if (opt->count() > 0) o.given.insert(name);
    if (!o.config.empty()) apply_config(o);
    if (sim->parsed()) return cmd_simulate(o, out);
    if (runc->parsed()) return cmd_run(o, out, err);
    return cmd_replicate(o, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace ttsem
