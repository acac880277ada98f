#include "ttsem/engine.hpp"

#include <cassert>
#include <chrono>
#include <cmath>

namespace ttsem {

StatVec sa_step(const StatVec& s_hat, const StatVec& stt, double gamma) {
  assert(s_hat.size() == stt.size());
  if (gamma == 1.0) return stt;
  return s_hat + gamma * (stt - s_hat);
}

StatVec inc_step(const StatVec& stt, const StatVec& proxy, double rho) {
  assert(stt.size() == proxy.size());
  if (rho == 1.0) return proxy;
  return stt + rho * (proxy - stt);
}

StatVec proxy_isaem(PerSampleStatTable& table, std::size_t i, const StatVec& s_new, std::int64_t iter) {
  assert(i < table.size());
  table.replace(i, s_new, iter);
  return table.mean();
}

StatVec proxy_vr(const StatVec& anchor_stt, const Eigen::Ref<const Eigen::VectorXd>& anchor_entry_i,
                 const StatVec& s_new) {
  assert(anchor_stt.size() == s_new.size() && anchor_entry_i.size() == s_new.size());
  return anchor_stt + (s_new - anchor_entry_i);
}

StatVec proxy_fi(PerSampleStatTable& table, std::size_t i, std::size_t j, const StatVec& s_new_i,
                 const StatVec& s_new_j, std::int64_t iter) {
  assert(i < table.size() && j < table.size());
  StatVec proxy = table.mean() + (s_new_i - table.entry(i));
  table.replace(j, s_new_j, iter);
  return proxy;
}

double gap_delta_s(const StatVec& a, const StatVec& b) {
  assert(a.size() == b.size());
  return (a - b).squaredNorm();
}

EpochAnchor epoch_refresh(const Model& model, const ParamVec& theta, int M, const kernels::PassStreams& streams,
                          std::span<Latent> warm, StatVec& stt, double rho, EStep estep, Exec exec) {
  EpochAnchor anchor;
  anchor.anchor_entries = estep == EStep::exact ? kernels::exact_pass(model, theta, exec)
                                                : kernels::mc_pass(model, theta, M, streams, warm, exec);
  anchor.anchor_mean = column_mean(anchor.anchor_entries);
  stt = inc_step(stt, anchor.anchor_mean, rho);
  anchor.anchor_stt = stt;
  anchor.start_iter = streams.iter;
  return anchor;
}

std::int64_t draw_termination(std::span<const double> gammas, rng::Stream& rng) {
  if (gammas.empty()) throw ConfigError("termination draw needs at least one stepsize");
  double total = 0.0;
  for (double g : gammas) {
    if (!(g > 0.0)) throw ConfigError("termination weights must be positive");
    total += g;
  }
  const double u = rng.uniform() * total;
  double cum = 0.0;
  for (std::size_t k = 0; k < gammas.size(); ++k) {
    cum += gammas[k];
    if (u < cum) return static_cast<std::int64_t>(k);
  }
  return static_cast<std::int64_t>(gammas.size()) - 1;
}

double epochs_after(const RunConfig& config, std::size_t n, std::int64_t iters) {
  const double nd = static_cast<double>(n);
  const double k = static_cast<double>(iters);
  switch (config.variant) {
    case Variant::EM:
    case Variant::MCEM:
    case Variant::SAEM:
      return k;
    case Variant::iEM:
    case Variant::iSAEM:
      return k / nd;
    case Variant::fiTTEM:
      return 2.0 * k / nd;
    case Variant::vrTTEM: {
      const std::int64_t refreshes = (iters + config.epoch_len - 1) / config.epoch_len;
      return static_cast<double>(refreshes) + k / nd;
    }
  }
  return k;
}

std::int64_t iterations_for_budget(const RunConfig& config, std::size_t n, double epochs) {
  constexpr double slack = 1e-9;
  std::int64_t lo = 0;
  std::int64_t hi = 1;
  while (epochs_after(config, n, hi) <= epochs + slack) hi *= 2;
  while (hi - lo > 1) {
    const std::int64_t mid = lo + (hi - lo) / 2;
    if (epochs_after(config, n, mid) <= epochs + slack)
      lo = mid;
    else
      hi = mid;
  }
  return lo;
}

namespace {

void require_finite(const StatVec& v, const char* what, std::int64_t k) {
  if (!all_finite(v))
    throw NumericalError(std::string("non-finite ") + what + " at iteration " + std::to_string(k));
}

class Driver {
 public:
  Driver(const Model& model, const RunConfig& config)
      : model_(model), cfg_(config), n_(model.num_samples()), root_(rng::root(config.seed)) {
    idx_i_ = root_.child(rng::Tag::index_i);
    idx_j_ = root_.child(rng::Tag::index_j);
  }

  Trajectory run(const ParamVec& theta0, const Observer& observer) {
    const auto start = std::chrono::steady_clock::now();
    Trajectory traj;
    traj.param_names = model_.param_names();
    traj.records.reserve(static_cast<std::size_t>(cfg_.total_iters) + 1);

    initialize(theta0);
    auto record = [&] {
      IterationRecord r;
      r.iter = st_.k;
      r.epoch = st_.epochs;
      r.theta = st_.theta;
      r.delta_s_sq = st_.delta_s_sq;
      r.wall_ns = std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() - start).count();
      traj.records.push_back(std::move(r));
      if (observer) observer(st_);
    };
    record();

    std::vector<double> gammas;
    for (std::int64_t k = 0; k < cfg_.total_iters; ++k) {
      step(k);
      if (cfg_.randomized_termination) gammas.push_back(st_.gamma);
      record();
    }

    traj.terminal_record = traj.records.size() - 1;
    if (cfg_.randomized_termination) {
      auto term = root_.child(rng::Tag::termination);
      traj.terminal_record = static_cast<std::size_t>(draw_termination(gammas, term)) + 1;
    }
    traj.terminal_theta = traj.records[traj.terminal_record].theta;
    return traj;
  }

 private:
  bool uses_table() const {
    return cfg_.variant == Variant::iEM || cfg_.variant == Variant::iSAEM || cfg_.variant == Variant::fiTTEM;
  }

  void initialize(const ParamVec& theta0) {
    st_.latents.resize(n_);
    for (std::size_t i = 0; i < n_; ++i) st_.latents[i] = model_.initial_latent(i, theta0);

    Eigen::MatrixXd entries;
    try {
      entries = cfg_.estep == EStep::exact
                    ? kernels::exact_pass(model_, theta0, cfg_.exec)
                    : kernels::mc_pass(model_, theta0, cfg_.mc_samples, {root_, -1}, st_.latents, cfg_.exec);
    } catch (const SamplingError& e) {
      throw SamplingError("initialization: " + e.reason(), e.index(), 0);
    }
    st_.s_hat = column_mean(entries);
    require_finite(st_.s_hat, "initial statistics", 0);
    st_.stt = st_.s_hat;
    st_.proxy = st_.s_hat;
    if (uses_table()) st_.table.emplace(std::move(entries), 0);
    st_.theta = checked_m_step(st_.s_hat, 0);
    require_finite(st_.theta, "parameters", 0);
  }

  ParamVec checked_m_step(const StatVec& s, std::int64_t k) {
    try {
      return model_.m_step(s);
    } catch (const NumericalError& e) {
      throw NumericalError(std::string(e.what()) + " at iteration " + std::to_string(k));
    }
  }

  StatVec fresh_stat(std::size_t i, std::int64_t k) {
    if (cfg_.estep == EStep::exact) return exact_step(model_, i, st_.theta);
    auto rng = rng::posterior_stream(root_, k, i);
    return mc_step(model_, i, st_.theta, cfg_.mc_samples, rng, st_.latents[i]);
  }

  Eigen::MatrixXd full_pass(std::int64_t k) {
    return cfg_.estep == EStep::exact
               ? kernels::exact_pass(model_, st_.theta, cfg_.exec)
               : kernels::mc_pass(model_, st_.theta, cfg_.mc_samples, {root_, k}, st_.latents, cfg_.exec);
  }

  void step(std::int64_t k) {
    try {
      st_.proxy = compute_proxy(k);
    } catch (const SamplingError& e) {
      throw SamplingError(e.reason(), e.index(), k);
    }
    st_.stt = inc_step(st_.stt, st_.proxy, cfg_.rho);
    st_.delta_s_sq = gap_delta_s(st_.proxy, st_.stt);
    st_.gamma = cfg_.gamma.eval(k);
    st_.s_hat = sa_step(st_.s_hat, st_.stt, st_.gamma);
    require_finite(st_.stt, "Inc-step statistics", k);
    require_finite(st_.s_hat, "SA-step statistics", k);
    st_.theta = checked_m_step(st_.s_hat, k);
    require_finite(st_.theta, "parameters", k);
    st_.k = k + 1;
    st_.epochs = epochs_after(cfg_, n_, st_.k);
  }

  StatVec compute_proxy(std::int64_t k) {
    switch (cfg_.variant) {
      case Variant::EM:
      case Variant::MCEM:
      case Variant::SAEM:
        return column_mean(full_pass(k));
      case Variant::iEM:
      case Variant::iSAEM: {
        const std::size_t i = idx_i_.index(n_);
        st_.last_i = i;
        return proxy_isaem(*st_.table, i, fresh_stat(i, k), k);
      }
      case Variant::vrTTEM: {
        bool refreshed = false;
        if (k % cfg_.epoch_len == 0) {
          st_.anchor = epoch_refresh(model_, st_.theta, cfg_.mc_samples, {root_, k}, st_.latents, st_.stt, cfg_.rho,
                                     cfg_.estep, cfg_.exec);
          refreshed = true;
        }
        const std::size_t i = idx_i_.index(n_);
        st_.last_i = i;
        const auto& anchor = *st_.anchor;
        // S~_i^{(k)} was already drawn by this iteration's refresh pass.
        StatVec s_new = refreshed ? StatVec(anchor.anchor_entries.col(static_cast<Eigen::Index>(i)))
                                  : fresh_stat(i, k);
        return proxy_vr(anchor.anchor_stt, anchor.anchor_entries.col(static_cast<Eigen::Index>(i)), s_new);
      }
      case Variant::fiTTEM: {
        const std::size_t i = idx_i_.index(n_);
        const std::size_t j = idx_j_.index(n_);
        st_.last_i = i;
        st_.last_j = j;
        StatVec s_i = fresh_stat(i, k);
        StatVec s_j = j == i ? s_i : fresh_stat(j, k);
        return proxy_fi(*st_.table, i, j, s_i, s_j, k);
      }
    }
    throw ConfigError("unhandled variant");
  }

  const Model& model_;
  const RunConfig& cfg_;
  std::size_t n_;
  rng::Stream root_;
  rng::Stream idx_i_;
  rng::Stream idx_j_;
  EngineState st_;
};

}  // namespace

Trajectory run(const Model& model, const RunConfig& config, const ParamVec& theta0, const Observer& observer) {
  config.validate();
  if (model.num_samples() == 0) throw ConfigError("dataset is empty");
  if (config.estep == EStep::exact && !model.has_exact_expectation())
    throw ConfigError(std::string(to_string(config.variant)) + " with the exact E-step needs a closed-form "
                      "conditional expectation, which " + model.name() + " does not provide");
  if (theta0.size() != static_cast<Eigen::Index>(model.param_dim()))
    throw ConfigError("initial parameter vector has the wrong length for " + model.name());
  Driver driver(model, config);
  return driver.run(theta0, observer);
}

}  // namespace ttsem
