// Client-side training for one federated round: Adam with a bias-corrected
// learning rate, momentum handling variants, and the privacy gate applied to
// the resulting model difference.
#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "fedsim/dataset.hpp"
#include "fedsim/model.hpp"
#include "fedsim/param_vector.hpp"
#include "fedsim/privacy.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

enum class MomentumMode { restart, baseline_m, m_aggregation };

const char* to_string(MomentumMode mode);
MomentumMode momentum_mode_from_string(const std::string& name);

// Adam first/second moments and the step counter used for bias correction.
struct OptimizerState {
  ParamVector m;
  ParamVector v;
  std::uint64_t step = 0;

  static OptimizerState zeros(std::size_t p) {
    return {ParamVector(p, 0.0), ParamVector(p, 0.0), 0};
  }
};

struct TrainerConfig {
  double eta = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint32_t num_local_epochs = 2;
  std::uint32_t batch_size = 1;
  MomentumMode momentum_mode = MomentumMode::restart;
  // restart mode always zeroes m and v; this additionally zeroes the
  // bias-correction step counter, re-warming the corrected rate each round.
  bool restart_resets_counter = false;

  void validate() const;
};

// Momentum deltas shipped to the server in m_aggregation mode.
struct MomentumDelta {
  ParamVector m;
  ParamVector v;
};

// What a client uploads after one round: the gated model difference and the
// number of local iterations behind it.
struct ModelUpdate {
  SparseUpdate delta;
  std::uint64_t n_local = 0;
  std::optional<MomentumDelta> momentum_delta;
};

// Aggregated moments broadcast by the server in m_aggregation mode.
struct AggregatedMoments {
  ParamVector m;
  ParamVector v;
};

struct TrainStats {
  double mean_train_loss = 0.0;
  double released_fraction = 1.0;
  bool gate_exhausted = false;
};

struct LocalTrainResult {
  ModelUpdate update;
  TrainStats stats;
};

// Element-wise difference between the post-training and initial local model.
ParamVector federated_gradient(const ParamVector& w_end, const ParamVector& w_start);

// Runs num_local_epochs passes of Adam over the local shard starting from
// global_w, then pushes the model difference through the privacy gate.
// state is the client's persistent optimizer state: zeroed here in restart
// mode, reused as-is in baseline_m mode, seeded from server_moments in
// m_aggregation mode. Batches are drawn by a per-epoch local shuffle from
// train_rng; gate noise comes from noise_rng.
LocalTrainResult local_training(const ToyModel& model, const ParamVector& global_w,
                                const Dataset& shard, const TrainerConfig& cfg,
                                OptimizerState& state, const PrivacyPolicy& gate,
                                Rng& train_rng, Rng& noise_rng,
                                const AggregatedMoments* server_moments = nullptr);

}  // namespace fedsim
