// Server-side global model maintenance: iteration-weighted aggregation of
// client updates, the simple-average baseline, and the round loop.
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fedsim/param_vector.hpp"
#include "fedsim/trainer.hpp"

namespace fedsim {

enum class AggregationMode { weighted, simple };

const char* to_string(AggregationMode mode);
AggregationMode aggregation_mode_from_string(const std::string& name);

struct GlobalState {
  ParamVector w;
  std::uint64_t round = 0;
  AggregationMode mode = AggregationMode::weighted;
  std::optional<AggregatedMoments> moments;  // m_aggregation runs only
};

struct RoundContribution {
  std::uint32_t client_id = 0;
  ModelUpdate update;
  TrainStats stats;  // carried along for metrics, not used by aggregation
};

// One aggregation step. Weighted mode applies
//   w += sum_k (n_k / sum_j n_j) * delta_k,
// simple mode w += sum_k delta_k / K. Sparse deltas count as zero at
// unreleased indices. Contributions are summed in ascending client_id order
// so results do not depend on arrival order.
GlobalState aggregate(const GlobalState& state,
                      std::vector<RoundContribution> contributions);

// A client callback: given the current round (1-based), the global model and
// the aggregated moments (null outside m_aggregation), produce a contribution.
using ClientRoundFn = std::function<RoundContribution(
    std::uint64_t round, const ParamVector& w, const AggregatedMoments* moments)>;

// Invoked after every aggregation with the new state and the contributions
// that produced it.
using RoundObserver = std::function<void(
    const GlobalState& state, const std::vector<RoundContribution>& contributions)>;

// Runs T synchronous rounds: broadcast, collect all contributions, aggregate.
GlobalState run_rounds(GlobalState state, std::uint64_t num_rounds,
                       const std::vector<ClientRoundFn>& clients,
                       const RoundObserver& observer = nullptr);

// Checkpoints share the dataset container conventions: magic "FSCP",
// u8 version, u32 round, u64 config hash, u32 length, little-endian f64s.
struct Checkpoint {
  std::uint64_t round = 0;
  std::uint64_t config_hash = 0;
  ParamVector w;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace fedsim
