#include "ttsem/gmm.hpp"

#include "ttsem/csv.hpp"
#include "ttsem/kernels.hpp"
#include "ttsem/samplers.hpp"
#include "ttsem/stat_table.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numbers>
#include <ostream>

namespace ttsem::gmm {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;  // log(2 pi) / 2

std::size_t components_from_flat(Eigen::Index len) {
  if (len < 1 || len % 2 == 0) throw ConfigError("mixture parameter vector must have odd length 2M-1");
  return static_cast<std::size_t>((len + 1) / 2);
}

// log w_m - (y - mu_m)^2 / 2 for all m, written into `out`.
void log_joint(double y, const Eigen::VectorXd& log_w, const Eigen::VectorXd& means, std::vector<double>& out) {
  out.resize(static_cast<std::size_t>(means.size()));
  for (Eigen::Index m = 0; m < means.size(); ++m) {
    const double r = y - means[m];
    out[static_cast<std::size_t>(m)] = log_w[m] - 0.5 * r * r;
  }
}

}  // namespace

Params Params::from_flat(const ParamVec& flat) {
  const auto M = static_cast<Eigen::Index>(components_from_flat(flat.size()));
  Params p;
  p.weights.resize(M);
  p.weights.head(M - 1) = flat.head(M - 1);
  p.weights[M - 1] = 1.0 - flat.head(M - 1).sum();
  p.means = flat.tail(M);
  return p;
}

ParamVec Params::to_flat() const {
  const auto M = means.size();
  ParamVec flat(2 * M - 1);
  flat.head(M - 1) = weights.head(M - 1);
  flat.tail(M) = means;
  return flat;
}

void Params::validate() const {
  if (means.size() < 1 || weights.size() != means.size()) throw ConfigError("mixture weights and means disagree");
  for (Eigen::Index m = 0; m < weights.size(); ++m)
    if (!(weights[m] > 0.0)) throw ConfigError("mixture weights must be strictly positive");
  if (!means.allFinite()) throw ConfigError("mixture means must be finite");
}

void Regularizer::validate() const {
  if (!(delta > 0.0) || !(epsilon > 0.0)) throw ConfigError("mixture regularization needs delta > 0 and epsilon > 0");
}

Eigen::VectorXd posterior_weights(double y, const Params& theta) {
  const Eigen::VectorXd log_w = theta.weights.array().log();
  std::vector<double> lj;
  log_joint(y, log_w, theta.means, lj);
  const double lse = logsumexp(lj);
  Eigen::VectorXd w(theta.means.size());
  for (Eigen::Index m = 0; m < w.size(); ++m) w[m] = std::exp(lj[static_cast<std::size_t>(m)] - lse);
  return w;
}

StatVec suff_stat(double y, std::size_t label, std::size_t components) {
  if (label >= components) throw ConfigError("mixture label out of range");
  const auto M = static_cast<Eigen::Index>(components);
  StatVec s = StatVec::Zero(2 * M - 1);
  if (static_cast<Eigen::Index>(label) < M - 1) {
    s[static_cast<Eigen::Index>(label)] = 1.0;
    s[M - 1 + static_cast<Eigen::Index>(label)] = y;
  }
  s[2 * M - 2] = y;
  return s;
}

StatVec exact_expectation(double y, const Params& theta) {
  const auto M = theta.means.size();
  const Eigen::VectorXd w = posterior_weights(y, theta);
  StatVec s(2 * M - 1);
  s.head(M - 1) = w.head(M - 1);
  s.segment(M - 1, M - 1) = w.head(M - 1) * y;
  s[2 * M - 2] = y;
  return s;
}

Params m_step(const StatVec& s, std::size_t components, const Regularizer& reg) {
  const auto M = static_cast<Eigen::Index>(components);
  if (s.size() != 2 * M - 1) throw ConfigError("mixture statistic has the wrong length");
  const auto s1 = s.head(M - 1);
  const auto s2 = s.segment(M - 1, M - 1);
  const double s3 = s[2 * M - 2];

  Params p;
  p.weights.resize(M);
  p.means.resize(M);
  const double norm = 1.0 + reg.epsilon * static_cast<double>(M);
  for (Eigen::Index m = 0; m < M - 1; ++m) {
    p.weights[m] = (s1[m] + reg.epsilon) / norm;
    p.means[m] = s2[m] / (s1[m] + reg.delta);
  }
  p.weights[M - 1] = 1.0 - p.weights.head(M - 1).sum();
  p.means[M - 1] = (s3 - s2.sum()) / (1.0 - s1.sum() + reg.delta);
  if (!p.weights.allFinite() || !p.means.allFinite())
    throw NumericalError("mixture M-step produced non-finite parameters; statistics left the valid region");
  if ((p.weights.array() < 0.0).any())
    throw NumericalError("mixture M-step produced a negative weight; statistics left the valid region");
  return p;
}

double penalty(const Params& theta, const Regularizer& reg) {
  return 0.5 * reg.delta * theta.means.squaredNorm() - reg.epsilon * theta.weights.array().log().sum();
}

namespace {

double neg_log_mixture_density(double y, const Eigen::VectorXd& log_w, const Eigen::VectorXd& means) {
  thread_local std::vector<double> lj;
  log_joint(y, log_w, means, lj);
  return kHalfLog2Pi - logsumexp(lj);
}

}  // namespace

namespace serial {

double penalized_nll(std::span<const double> data, const Params& theta, const Regularizer& reg) {
  const Eigen::VectorXd log_w = theta.weights.array().log();
  double sum = 0.0;
  for (double y : data) sum += neg_log_mixture_density(y, log_w, theta.means);
  return sum / static_cast<double>(data.size()) + penalty(theta, reg);
}

}  // namespace serial

double penalized_nll(std::span<const double> data, const Params& theta, const Regularizer& reg, Exec exec) {
  const Eigen::VectorXd log_w = theta.weights.array().log();
  const double sum = kernels::reduce_sum(
      data.size(), [&](std::size_t i) { return neg_log_mixture_density(data[i], log_w, theta.means); }, exec);
  return sum / static_cast<double>(data.size()) + penalty(theta, reg);
}

std::vector<double> simulate(std::size_t n, const Params& theta, rng::Stream& rng) {
  std::vector<double> w(theta.weights.data(), theta.weights.data() + theta.weights.size());
  std::vector<double> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto z = categorical_sample(w, rng);
    out.push_back(theta.means[static_cast<Eigen::Index>(z)] + rng.normal());
  }
  return out;
}

Params initial_params(std::span<const double> data, std::size_t components) {
  if (data.empty()) throw ConfigError("cannot initialize a mixture from an empty dataset");
  std::vector<double> sorted(data.begin(), data.end());
  std::sort(sorted.begin(), sorted.end());
  const auto M = static_cast<Eigen::Index>(components);
  Params p;
  p.weights = Eigen::VectorXd::Constant(M, 1.0 / static_cast<double>(M));
  p.means.resize(M);
  for (Eigen::Index m = 0; m < M; ++m) {
    const double q = (static_cast<double>(m) + 0.5) / static_cast<double>(M);
    const double h = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    p.means[m] = sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
  }
  return p;
}

Params default_truth() {
  Params p;
  p.weights = Eigen::Vector2d(0.5, 0.5);
  p.means = Eigen::Vector2d(0.5, -0.5);
  return p;
}

std::vector<double> read_observations(std::istream& in) {
  std::vector<double> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    try {
      out.push_back(csv::parse_double(line));
    } catch (const Error& e) {
      throw Error("observation file line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void write_observations(std::ostream& out, std::span<const double> data) {
  for (double y : data) out << csv::format_double(y) << '\n';
}

Model::Model(std::vector<double> data, std::size_t components, Regularizer reg)
    : data_(std::move(data)), components_(components), reg_(reg) {
  if (components_ < 1) throw ConfigError("mixture needs at least one component");
  reg_.validate();
  for (double y : data_)
    if (!std::isfinite(y)) throw ConfigError("mixture observations must be finite");
}

std::vector<std::string> Model::param_names() const {
  std::vector<std::string> names;
  for (std::size_t m = 1; m < components_; ++m) names.push_back("w" + std::to_string(m));
  for (std::size_t m = 1; m <= components_; ++m) names.push_back("mu" + std::to_string(m));
  return names;
}

std::vector<Latent> Model::sample_posterior(std::size_t i, const ParamVec& theta, int M, rng::Stream& rng,
                                            Latent&) const {
  const Eigen::VectorXd w = posterior_weights(data_[i], Params::from_flat(theta));
  std::vector<Latent> draws;
  draws.reserve(static_cast<std::size_t>(M));
  for (int m = 0; m < M; ++m)
    draws.push_back({static_cast<double>(categorical_sample(std::span<const double>(w.data(), w.size()), rng))});
  return draws;
}

StatVec Model::suff_stat(std::size_t i, const Latent& z) const {
  if (z.size() != 1) throw ConfigError("mixture latent must be a single label");
  return gmm::suff_stat(data_[i], static_cast<std::size_t>(z[0]), components_);
}

std::optional<StatVec> Model::exact_expectation(std::size_t i, const ParamVec& theta) const {
  return gmm::exact_expectation(data_[i], Params::from_flat(theta));
}

ParamVec Model::m_step(const StatVec& s) const { return gmm::m_step(s, components_, reg_).to_flat(); }

std::optional<double> Model::penalized_nll(const ParamVec& theta, Exec exec) const {
  return gmm::penalized_nll(data_, Params::from_flat(theta), reg_, exec);
}

EmFit fit_em(const Model& model, const Params& start, double tol, std::int64_t max_iters, Exec exec) {
  EmFit fit;
  ParamVec theta = start.to_flat();
  for (fit.iterations = 0; fit.iterations < max_iters; ++fit.iterations) {
    ParamVec next = model.m_step(column_mean(kernels::exact_pass(model, theta, exec)));
    const double move = (next - theta).cwiseAbs().maxCoeff();
    theta = std::move(next);
    if (move < tol) {
      fit.converged = true;
      ++fit.iterations;
      break;
    }
  }
  fit.params = Params::from_flat(theta);
  return fit;
}

}  // namespace ttsem::gmm
