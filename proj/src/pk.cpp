#include "ttsem/pk.hpp"

#include "ttsem/csv.hpp"
#include "ttsem/samplers.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>

namespace ttsem::pk {

namespace {

constexpr double kEigenFloor = 1e-8;
constexpr double kSigma2Floor = 1e-10;
constexpr double kBranchTol = 1e-8;

constexpr std::array<std::pair<int, int>, kTriDim> kUpper = {{{0, 0}, {0, 1}, {0, 2}, {0, 3}, {1, 1},
                                                               {1, 2}, {1, 3}, {2, 2}, {2, 3}, {3, 3}}};

const char* const kLatentNames[kLatentDim] = {"tlag", "ka", "v", "k"};

// Symmetric square root of a PSD matrix (negative eigenvalues clipped to 0).
Mat4 psd_sqrt(const Mat4& m) {
  Eigen::SelfAdjointEigenSolver<Mat4> es(m);
  Vec4 ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

void pack_upper(const Mat4& m, Eigen::Ref<Eigen::VectorXd> out) {
  for (std::size_t t = 0; t < kTriDim; ++t) out[static_cast<Eigen::Index>(t)] = m(kUpper[t].first, kUpper[t].second);
}

Mat4 unpack_upper(const Eigen::Ref<const Eigen::VectorXd>& packed) {
  Mat4 m;
  for (std::size_t t = 0; t < kTriDim; ++t) {
    const auto [r, c] = kUpper[t];
    m(r, c) = m(c, r) = packed[static_cast<Eigen::Index>(t)];
  }
  return m;
}

Params Params::from_flat(const ParamVec& flat) {
  if (flat.size() != static_cast<Eigen::Index>(kStatDim)) throw ConfigError("PK parameter vector must have length 15");
  Params p;
  p.log_pop = flat.head<4>();
  p.omega2 = unpack_upper(flat.segment<kTriDim>(4));
  p.sigma2 = flat[14];
  return p;
}

ParamVec Params::to_flat() const {
  ParamVec flat(kStatDim);
  flat.head<4>() = log_pop;
  pack_upper(omega2, flat.segment<kTriDim>(4));
  flat[14] = sigma2;
  return flat;
}

void Params::validate() const {
  if (!log_pop.allFinite() || !omega2.allFinite()) throw ConfigError("PK parameters must be finite");
  if (!(sigma2 > 0.0)) throw ConfigError("PK residual variance must be positive");
  if (!omega2.isApprox(omega2.transpose(), 1e-12)) throw ConfigError("PK omega2 must be symmetric");
  if (Eigen::LLT<Mat4>(omega2).info() != Eigen::Success) throw ConfigError("PK omega2 must be positive definite");
}

void Individual::validate() const {
  if (!(dose > 0.0) || !std::isfinite(dose)) throw ConfigError("PK dose must be positive");
  if (times.empty() || times.size() != obs.size()) throw ConfigError("PK individual needs matching times and observations");
  for (std::size_t j = 0; j < times.size(); ++j) {
    if (!std::isfinite(times[j]) || !std::isfinite(obs[j])) throw ConfigError("PK data must be finite");
    if (j > 0 && !(times[j] > times[j - 1])) throw ConfigError("PK sampling times must be strictly increasing");
  }
}

double structural_general(double t, const Vec4& z, double dose) {
  const double lag = z[0], ka = z[1], v = z[2], k = z[3];
  const double d = t - lag;
  if (d <= 0.0) return 0.0;
  // e^{-k d} - e^{-ka d} through expm1 of a non-positive argument, so neither
  // factor can overflow and there is no cancellation near ka = k.
  const double diff = ka - k;
  const double gap = diff > 0.0 ? -std::exp(-k * d) * std::expm1(-diff * d)
                                 : std::exp(-ka * d) * std::expm1(diff * d);
  return dose * ka / (v * diff) * gap;
}

double structural_limit(double t, const Vec4& z, double dose) {
  const double lag = z[0], ka = z[1], v = z[2], k = z[3];
  const double d = t - lag;
  if (d <= 0.0) return 0.0;
  return dose * ka * d * std::exp(-k * d) / v;
}

double structural(double t, const Vec4& z, double dose) {
  if (!((z.array() > 0.0).all())) throw ConfigError("PK individual parameters must be positive");
  const double ka = z[1], k = z[3];
  if (std::abs(ka - k) < kBranchTol * std::max(ka, k)) return structural_limit(t, z, dose);
  return structural_general(t, z, dose);
}

namespace {

double data_term(const Individual& indiv, const Vec4& phi, double sigma2) {
  const Vec4 z = phi.array().exp();
  if (!z.allFinite() || !((z.array() > 0.0).all())) return -std::numeric_limits<double>::infinity();
  double rss = 0.0;
  for (std::size_t j = 0; j < indiv.times.size(); ++j) {
    const double r = indiv.obs[j] - structural(indiv.times[j], z, indiv.dose);
    rss += r * r;
  }
  if (!std::isfinite(rss)) return -std::numeric_limits<double>::infinity();
  return -rss / (2.0 * sigma2);
}

}  // namespace

PosteriorDensity::PosteriorDensity(const Params& theta)
    : log_pop_(theta.log_pop), omega_llt_(theta.omega2), sigma2_(theta.sigma2) {
  if (omega_llt_.info() != Eigen::Success) throw NumericalError("PK omega2 is not positive definite");
}

double PosteriorDensity::operator()(const Individual& indiv, const Vec4& phi) const {
  const Vec4 dev = phi - log_pop_;
  const double prior = -0.5 * dev.dot(omega_llt_.solve(dev));
  return data_term(indiv, phi, sigma2_) + prior;
}

double log_posterior(const Individual& indiv, const Vec4& phi, const Params& theta) {
  return PosteriorDensity(theta)(indiv, phi);
}

StatVec suff_stat(const Individual& indiv, const Vec4& phi) {
  StatVec s(kStatDim);
  s.head<4>() = phi;
  pack_upper(phi * phi.transpose(), s.segment<kTriDim>(4));
  const Vec4 z = phi.array().exp();
  double rss = 0.0;
  for (std::size_t j = 0; j < indiv.times.size(); ++j) {
    const double r = indiv.obs[j] - structural(indiv.times[j], z, indiv.dose);
    rss += r * r;
  }
  s[14] = rss / static_cast<double>(indiv.times.size());
  return s;
}

MStepResult m_step(const StatVec& s, OmegaMode mode) {
  if (s.size() != static_cast<Eigen::Index>(kStatDim)) throw ConfigError("PK statistic must have length 15");
  MStepResult out;
  Params& p = out.params;
  p.log_pop = s.head<4>();
  Mat4 omega = unpack_upper(s.segment<kTriDim>(4)) - p.log_pop * p.log_pop.transpose();
  if (mode == OmegaMode::diagonal) {
    const Vec4 d = omega.diagonal();
    omega = d.asDiagonal();
  }
  Eigen::SelfAdjointEigenSolver<Mat4> es(omega);
  const Vec4& ev = es.eigenvalues();
  for (int d = 0; d < 4; ++d)
    if (ev[d] < kEigenFloor) ++out.floored_eigenvalues;
  if (out.floored_eigenvalues > 0) {
    const Vec4 clamped = ev.cwiseMax(kEigenFloor);
    omega = es.eigenvectors() * clamped.asDiagonal() * es.eigenvectors().transpose();
    omega = 0.5 * (omega + omega.transpose()).eval();
  }
  p.omega2 = omega;
  p.sigma2 = s[14];
  if (!(p.sigma2 >= kSigma2Floor)) {
    p.sigma2 = kSigma2Floor;
    out.floored_sigma2 = true;
  }
  return out;
}

std::vector<Individual> simulate(std::size_t n, const Params& truth, const Design& design, rng::Stream& rng) {
  const Mat4 root = psd_sqrt(truth.omega2);
  const double sd = std::sqrt(std::max(truth.sigma2, 0.0));
  std::vector<Individual> cohort;
  cohort.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Vec4 xi;
    for (int d = 0; d < 4; ++d) xi[d] = rng.normal();
    const Vec4 z = (truth.log_pop + root * xi).array().exp();
    Individual ind;
    ind.dose = design.dose;
    ind.times = design.times;
    ind.obs.reserve(design.times.size());
    for (double t : design.times) ind.obs.push_back(structural(t, z, design.dose) + sd * rng.normal());
    cohort.push_back(std::move(ind));
  }
  return cohort;
}

Params default_truth() {
  Params p;
  p.log_pop = Vec4(std::log(1.0), std::log(1.0), std::log(8.0), std::log(0.1));
  p.omega2 = Vec4(0.4 * 0.4, 0.5 * 0.5, 0.2 * 0.2, 0.3 * 0.3).asDiagonal();
  p.sigma2 = 0.5;
  return p;
}

Vec4 naive_log_estimate(const Individual& indiv) {
  const auto& t = indiv.times;
  const auto& y = indiv.obs;
  const std::size_t J = t.size();
  const std::size_t jmax = static_cast<std::size_t>(std::max_element(y.begin(), y.end()) - y.begin());
  const double cmax = y[jmax];
  if (!(cmax > 0.0)) return Vec4(std::log(1.0), std::log(1.0), std::log(10.0), std::log(0.1));

  // Elimination rate from the log-linear slope of the last (up to) three positive points after the peak.
  double k = 0.1;
  {
    std::vector<std::pair<double, double>> pts;
    for (std::size_t j = J; j-- > jmax + 1 && pts.size() < 3;)
      if (y[j] > 0.0) pts.emplace_back(t[j], std::log(y[j]));
    if (pts.size() >= 2) {
      double mt = 0.0, ml = 0.0;
      for (auto [a, b] : pts) mt += a, ml += b;
      mt /= static_cast<double>(pts.size());
      ml /= static_cast<double>(pts.size());
      double sxy = 0.0, sxx = 0.0;
      for (auto [a, b] : pts) sxy += (a - mt) * (b - ml), sxx += (a - mt) * (a - mt);
      if (sxx > 0.0) k = std::clamp(-sxy / sxx, 1e-3, 5.0);
    }
  }

  // Onset: last time before the peak with a concentration under 20% of the peak.
  double lag = 0.5 * t[0];
  for (std::size_t j = 0; j < jmax; ++j)
    if (y[j] < 0.2 * cmax) lag = t[j];
  lag = std::max(lag, 0.05);
  const double tpeak = std::max(t[jmax] - lag, 1e-3);

  // Peak time of the structural model: log(ka/k) / (ka - k) = tpeak, decreasing in ka > k.
  double ka = 1.01 * k;
  auto peak_time = [k](double a) { return std::log(a / k) / (a - k); };
  if (peak_time(ka) > tpeak) {
    double lo = ka, hi = 1e3;
    if (peak_time(hi) > tpeak) {
      ka = hi;
    } else {
      for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        (peak_time(mid) > tpeak ? lo : hi) = mid;
      }
      ka = 0.5 * (lo + hi);
    }
  }

  const Vec4 unit_volume(lag, ka, 1.0, k);
  const double c_unit = structural(lag + tpeak, unit_volume, indiv.dose);
  const double v = std::clamp(c_unit / cmax, 0.1, 1e4);
  return Vec4(std::log(lag), std::log(ka), std::log(v), std::log(k));
}

Params initial_params(std::span<const Individual> cohort) {
  if (cohort.empty()) throw ConfigError("cannot initialize the PK model from an empty cohort");
  std::array<std::vector<double>, kLatentDim> est;
  for (const auto& ind : cohort) {
    const Vec4 e = naive_log_estimate(ind);
    for (std::size_t d = 0; d < kLatentDim; ++d) est[d].push_back(e[static_cast<Eigen::Index>(d)]);
  }
  Params p;
  for (std::size_t d = 0; d < kLatentDim; ++d) p.log_pop[static_cast<Eigen::Index>(d)] = median(est[d]) + std::log(1.2);
  p.omega2 = 0.1 * Mat4::Identity();
  p.sigma2 = 1.0;
  return p;
}

std::vector<Individual> read_cohort(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw Error("cohort file is empty");
  {
    auto header = csv::split_line(line);
    if (header.size() != 4 || header[0] != "id" || header[1] != "dose" || header[2] != "time" || header[3] != "obs")
      throw Error("cohort file must start with the header id,dose,time,obs");
  }
  std::vector<Individual> cohort;
  std::string current_id;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto f = csv::split_line(line);
    if (f.size() != 4) throw Error("cohort file line " + std::to_string(line_no) + ": expected 4 fields");
    try {
      const std::string id(f[0]);
      const double dose = csv::parse_double(f[1]);
      if (cohort.empty() || id != current_id) {
        current_id = id;
        cohort.emplace_back();
        cohort.back().dose = dose;
      } else if (dose != cohort.back().dose) {
        throw Error("dose changes within individual '" + id + "'");
      }
      cohort.back().times.push_back(csv::parse_double(f[2]));
      cohort.back().obs.push_back(csv::parse_double(f[3]));
    } catch (const Error& e) {
      throw Error("cohort file line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  for (const auto& ind : cohort) ind.validate();
  return cohort;
}

void write_cohort(std::ostream& out, std::span<const Individual> cohort) {
  out << "id,dose,time,obs\n";
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    const auto& ind = cohort[i];
    for (std::size_t j = 0; j < ind.times.size(); ++j)
      csv::write_row(out, {std::to_string(i), csv::format_double(ind.dose), csv::format_double(ind.times[j]),
                           csv::format_double(ind.obs[j])});
  }
}

Model::Model(std::vector<Individual> cohort, ModelOptions options) : cohort_(std::move(cohort)), options_(options) {
  for (const auto& ind : cohort_) ind.validate();
  if (!(options_.proposal_factor > 0.0)) throw ConfigError("MH proposal factor must be positive");
}

std::vector<std::string> Model::param_names() const {
  std::vector<std::string> names;
  for (const char* n : kLatentNames) names.push_back(std::string("log_") + n + "_pop");
  for (const auto& [r, c] : kUpper) names.push_back(std::string("omega2_") + kLatentNames[r] + "_" + kLatentNames[c]);
  names.push_back("sigma2");
  return names;
}

Latent Model::initial_latent(std::size_t, const ParamVec& theta) const {
  const Vec4 mu = theta.head<4>();
  return Latent(mu.data(), mu.data() + 4);
}

std::vector<Latent> Model::sample_posterior(std::size_t i, const ParamVec& theta, int M, rng::Stream& rng,
                                            Latent& warm) const {
  const Params p = Params::from_flat(theta);
  const PosteriorDensity density(p);
  const Individual& ind = cohort_[i];

  MhConfig cfg;
  cfg.steps = M;
  cfg.burn_in = M / 2;
  cfg.proposal_scales.resize(kLatentDim);
  for (std::size_t d = 0; d < kLatentDim; ++d)
    cfg.proposal_scales[d] = options_.proposal_factor * std::sqrt(p.omega2(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d)));

  Latent init = warm.size() == kLatentDim ? warm : initial_latent(i, theta);
  auto target = [&](std::span<const double> phi) { return density(ind, Vec4(phi[0], phi[1], phi[2], phi[3])); };
  try {
    auto result = mh_chain(target, cfg, std::move(init), rng);
    warm = result.state;
    return {std::move(result.state)};
  } catch (const NumericalError& e) {
    throw SamplingError(e.what(), i);
  }
}

StatVec Model::suff_stat(std::size_t i, const Latent& z) const {
  if (z.size() != kLatentDim) throw ConfigError("PK latent must have 4 coordinates");
  return pk::suff_stat(cohort_[i], Vec4(z[0], z[1], z[2], z[3]));
}

ParamVec Model::m_step(const StatVec& s) const {
  auto result = pk::m_step(s, options_.omega_mode);
  if (result.floored_eigenvalues > 0 || result.floored_sigma2) ++floor_events_;
  return result.params.to_flat();
}

}  // namespace ttsem::pk
