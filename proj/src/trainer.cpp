#include "fedsim/trainer.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace fedsim {

const char* to_string(MomentumMode mode) {
  switch (mode) {
    case MomentumMode::restart: return "restart";
    case MomentumMode::baseline_m: return "baseline_m";
    case MomentumMode::m_aggregation: return "m_aggregation";
  }
  return "?";
}

MomentumMode momentum_mode_from_string(const std::string& name) {
  if (name == "restart") return MomentumMode::restart;
  if (name == "baseline_m") return MomentumMode::baseline_m;
  if (name == "m_aggregation") return MomentumMode::m_aggregation;
  throw std::invalid_argument("unknown momentum mode: " + name);
}

void TrainerConfig::validate() const {
  if (!(eta > 0.0)) throw std::invalid_argument("trainer: eta must be > 0");
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("trainer: beta1, beta2 must be in (0, 1)");
  }
  if (!(epsilon > 0.0)) throw std::invalid_argument("trainer: epsilon must be > 0");
  if (num_local_epochs < 1) throw std::invalid_argument("trainer: num_local_epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("trainer: batch_size must be >= 1");
}

ParamVector federated_gradient(const ParamVector& w_end, const ParamVector& w_start) {
  require_same_length(w_end, w_start, "federated_gradient");
  ParamVector delta(w_end.size());
  for (std::size_t i = 0; i < delta.size(); ++i) delta[i] = w_end[i] - w_start[i];
  return delta;
}

LocalTrainResult local_training(const ToyModel& model, const ParamVector& global_w,
                                const Dataset& shard, const TrainerConfig& cfg,
                                OptimizerState& state, const PrivacyPolicy& gate,
                                Rng& train_rng, Rng& noise_rng,
                                const AggregatedMoments* server_moments) {
  cfg.validate();
  const std::size_t p = model.param_count();
  if (global_w.size() != p) {
    throw std::invalid_argument("local_training: global model length mismatch");
  }
  if (shard.size() == 0) throw std::invalid_argument("local_training: empty dataset");
  if (shard.size() < cfg.batch_size) {
    throw std::invalid_argument("local_training: batch_size exceeds local dataset");
  }

  switch (cfg.momentum_mode) {
    case MomentumMode::restart: {
      // Moments are cleared every round. The bias-correction counter keeps
      // running by default: re-warming the corrected rate each round slows
      // restart enough at this scale to bury the effect it exists to show.
      const std::uint64_t step = cfg.restart_resets_counter ? 0 : state.step;
      state = OptimizerState::zeros(p);
      state.step = step;
      break;
    }
    case MomentumMode::baseline_m:
      if (state.m.size() != p || state.v.size() != p) {
        throw std::invalid_argument("local_training: optimizer state length mismatch");
      }
      break;
    case MomentumMode::m_aggregation:
      if (server_moments == nullptr) {
        throw std::invalid_argument("local_training: m_aggregation requires server moments");
      }
      state.m = server_moments->m;
      state.v = server_moments->v;
      if (state.m.size() != p || state.v.size() != p) {
        throw std::invalid_argument("local_training: aggregated moments length mismatch");
      }
      break;
  }
  const ParamVector moments_start_m = state.m;
  const ParamVector moments_start_v = state.v;

  ParamVector w = global_w;
  const ParamVector w_start = global_w;

  const std::size_t steps_per_epoch = shard.size() / cfg.batch_size;
  const std::uint64_t n_local =
      static_cast<std::uint64_t>(steps_per_epoch) * cfg.num_local_epochs;

  std::vector<std::size_t> order(shard.size());
  std::iota(order.begin(), order.end(), 0u);

  ParamVector grad;
  double loss_sum = 0.0;
  for (std::uint32_t epoch = 0; epoch < cfg.num_local_epochs; ++epoch) {
    train_rng.shuffle(order);
    for (std::size_t step = 0; step < steps_per_epoch; ++step) {
      const Batch batch = shard.gather(order, step * cfg.batch_size, cfg.batch_size);
      const double batch_loss = model.loss_and_gradient(w, batch, grad);
      if (!std::isfinite(batch_loss) || !all_finite(grad)) {
        throw std::runtime_error(
            "local_training: non-finite loss or gradient at local iteration " +
            std::to_string(state.step + 1));
      }
      loss_sum += batch_loss;
      state.step += 1;
      const double l = static_cast<double>(state.step);
      const double rate = cfg.eta * std::sqrt(1.0 - std::pow(cfg.beta2, l)) /
                          (1.0 - std::pow(cfg.beta1, l));
      for (std::size_t i = 0; i < p; ++i) {
        const double g = grad[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        w[i] -= rate * state.m[i] / (std::sqrt(state.v[i]) + cfg.epsilon);
      }
    }
  }
  if (!all_finite(w)) {
    throw std::runtime_error("local_training: non-finite model after round");
  }

  const ParamVector delta = federated_gradient(w, w_start);
  GateResult gated = apply_gate(delta, n_local, gate, noise_rng);

  LocalTrainResult result;
  result.update.delta = std::move(gated.update);
  result.update.n_local = n_local;
  if (cfg.momentum_mode == MomentumMode::m_aggregation) {
    MomentumDelta md;
    md.m = federated_gradient(state.m, moments_start_m);
    md.v = federated_gradient(state.v, moments_start_v);
    result.update.momentum_delta = std::move(md);
  }
  result.stats.mean_train_loss = n_local > 0 ? loss_sum / static_cast<double>(n_local) : 0.0;
  result.stats.released_fraction = gated.released_fraction;
  result.stats.gate_exhausted = gated.pool_exhausted;
  return result;
}

}  // namespace fedsim
