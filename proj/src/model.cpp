#include "ttsem/model.hpp"

namespace ttsem {

Latent Model::initial_latent(std::size_t, const ParamVec&) const { return {}; }

std::optional<StatVec> Model::exact_expectation(std::size_t, const ParamVec&) const { return std::nullopt; }

std::optional<double> Model::penalized_nll(const ParamVec&, Exec) const { return std::nullopt; }

}  // namespace ttsem
