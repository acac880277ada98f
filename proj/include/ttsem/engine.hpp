#ifndef TTSEM_ENGINE_HPP
#define TTSEM_ENGINE_HPP

#include "ttsem/core.hpp"
#include "ttsem/kernels.hpp"
#include "ttsem/model.hpp"
#include "ttsem/stat_table.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ttsem {

/// SA-step: s_hat + gamma (stt - s_hat). gamma == 1 returns stt exactly.
StatVec sa_step(const StatVec& s_hat, const StatVec& stt, double gamma);

/// Inc-step: stt + rho (proxy - stt). rho == 1 returns proxy exactly.
StatVec inc_step(const StatVec& stt, const StatVec& proxy, double rho);

/// iSAEM proxy: table.mean + (s_new - entry_i) / n, after which entry i is
/// replaced. Returns the updated table mean.
StatVec proxy_isaem(PerSampleStatTable& table, std::size_t i, const StatVec& s_new, std::int64_t iter = 0);

/// vrTTEM proxy: anchor_stt + (s_new - anchor_entry_i).
StatVec proxy_vr(const StatVec& anchor_stt, const Eigen::Ref<const Eigen::VectorXd>& anchor_entry_i,
                 const StatVec& s_new);

/// fiTTEM proxy: table.mean + (s_new_i - entry_i). Afterwards the mean moves
/// by (s_new_j - entry_j) / n and entry j is replaced; entry i is read only.
StatVec proxy_fi(PerSampleStatTable& table, std::size_t i, std::size_t j, const StatVec& s_new_i,
                 const StatVec& s_new_j, std::int64_t iter = 0);

/// ||a - b||^2.
double gap_delta_s(const StatVec& a, const StatVec& b);

/// Full-batch statistics S~_i^{(l(k))} captured at the start of a vrTTEM epoch.
struct EpochAnchor {
  StatVec anchor_stt;
  Eigen::MatrixXd anchor_entries;  // column i = sample i
  StatVec anchor_mean;
  std::int64_t start_iter = 0;
};

/// Full pass at the start of a vrTTEM epoch. Folds the fresh full-batch mean
/// into `stt` with one Inc-step and anchors the folded value.
EpochAnchor epoch_refresh(const Model& model, const ParamVec& theta, int M, const kernels::PassStreams& streams,
                          std::span<Latent> warm, StatVec& stt, double rho, EStep estep, Exec exec);

/// Draws K in {0, ..., K_f - 1} with P(K = k) proportional to gammas[k].
std::int64_t draw_termination(std::span<const double> gammas, rng::Stream& rng);

/// Engine state after `k` completed iterations.
struct EngineState {
  std::int64_t k = 0;
  ParamVec theta;
  StatVec s_hat;
  StatVec stt;
  StatVec proxy;                             // proxy of the last iteration
  std::optional<PerSampleStatTable> table;   // iEM, iSAEM, fiTTEM
  std::optional<EpochAnchor> anchor;         // vrTTEM
  std::vector<Latent> latents;               // persistent chain state per sample
  double epochs = 0.0;                       // cost in passes over the data
  std::optional<std::size_t> last_i;
  std::optional<std::size_t> last_j;
  double gamma = 1.0;
  double delta_s_sq = 0.0;
};

struct IterationRecord {
  std::int64_t iter = 0;
  double epoch = 0.0;
  ParamVec theta;
  double delta_s_sq = 0.0;
  std::int64_t wall_ns = 0;
};

/// K_f + 1 records (initial state plus one per iteration) and the terminal
/// estimate. `terminal_record` indexes `records`: the record after iteration
/// K, where K = K_f - 1 or the randomized termination index.
struct Trajectory {
  std::vector<std::string> param_names;
  std::vector<IterationRecord> records;
  std::size_t terminal_record = 0;
  ParamVec terminal_theta;
};

/// Called with the state after initialization and after every iteration.
using Observer = std::function<void(const EngineState&)>;

/// Runs `config.total_iters` iterations of the configured variant from theta0.
/// Initialization sets s_hat = stt = the full-batch statistic under theta0 and
/// theta^(0) = m_step(s_hat).
Trajectory run(const Model& model, const RunConfig& config, const ParamVec& theta0, const Observer& observer = {});

/// Passes over the data consumed by a run of `iters` iterations
/// (vrTTEM refresh passes included).
double epochs_after(const RunConfig& config, std::size_t n, std::int64_t iters);

/// Largest iteration count whose cost does not exceed `epochs` passes.
std::int64_t iterations_for_budget(const RunConfig& config, std::size_t n, double epochs);

}  // namespace ttsem

#endif  // TTSEM_ENGINE_HPP
