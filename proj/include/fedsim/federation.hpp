// Ties the pieces together: a synchronous-round federation run over either
// transport, with the server barrier and per-connection client handlers.
#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "fedsim/server.hpp"
#include "fedsim/transport.hpp"

namespace fedsim {

struct FederationClientSpec {
  std::uint32_t client_id = 0;
  Dataset shard;
  TrainerConfig trainer;
  PrivacyPolicy gate;
  std::uint64_t train_seed = 0;
  std::uint64_t noise_seed = 0;
};

struct FederationSetup {
  const ToyModel* model = nullptr;
  GlobalState initial_state;
  std::uint64_t rounds = 1;
  std::vector<FederationClientSpec> clients;
  RoundObserver observer;  // optional, called after every aggregation
};

// Server half: waits for a hello from every connection, then runs the
// round loop. The broadcast each round is one immutable snapshot; the
// barrier holds until all K contributions arrived. Any protocol violation
// aborts the federation with a diagnostic.
GlobalState run_federation_server(std::vector<std::unique_ptr<ByteStream>> connections,
                                  const FederationSetup& setup);

// Client half: hello, then train-and-contribute until the server signals
// completion. Keeps optimizer state across rounds; per-round rng streams
// are derived from (seed, client_id, round).
void run_federation_client(ByteStream& stream, const ToyModel& model,
                           const FederationClientSpec& spec);

// Runs server and clients over the chosen transport and returns the final
// state. Given identical seeds the result is bit-identical across kinds.
GlobalState run_federation(TransportKind kind, const FederationSetup& setup);

}  // namespace fedsim
