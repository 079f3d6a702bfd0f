#include <doctest.h>

#include <limits>
#include <thread>

#include "fedsim/federation.hpp"

using namespace fedsim;

namespace {

struct Fixture {
  ToyModel model;
  FederationSetup setup;
  std::vector<Dataset> shards;

  explicit Fixture(std::size_t num_clients, MomentumMode momentum,
                   std::uint64_t rounds)
      : model([] {
          ToyModel::Shape s;
          s.kind = ModelKind::logistic_classifier;
          s.input_dim = 5;
          s.output_dim = 3;
          s.weight_decay = 1e-5;
          return s;
        }()) {
    SynthSpec spec;
    spec.kind = ModelKind::logistic_classifier;
    spec.input_dim = 5;
    spec.output_dim = 3;
    auto synth = synth_dataset(spec, 2024, 12 * num_clients);
    setup.model = &model;
    setup.rounds = rounds;
    setup.initial_state.w = model.init_params(9);
    setup.initial_state.mode = AggregationMode::weighted;
    if (momentum == MomentumMode::m_aggregation) {
      AggregatedMoments zero;
      zero.m.assign(model.param_count(), 0.0);
      zero.v.assign(model.param_count(), 0.0);
      setup.initial_state.moments = std::move(zero);
    }
    for (std::size_t c = 0; c < num_clients; ++c) {
      FederationClientSpec client;
      client.client_id = static_cast<std::uint32_t>(c);
      client.shard.input_dim = 5;
      client.shard.target_dim = 3;
      for (std::size_t i = c * 12; i < (c + 1) * 12; ++i) {
        client.shard.examples.push_back(synth.data.examples[i]);
      }
      client.trainer.eta = 5e-3;
      client.trainer.num_local_epochs = 2;
      client.trainer.momentum_mode = momentum;
      client.train_seed = 111;
      client.noise_seed = 222;
      setup.clients.push_back(client);
    }
  }
};

// The same round driven by direct calls instead of the transport stack.
GlobalState manual_orchestration(const Fixture& fix) {
  std::vector<ClientRoundFn> fns;
  std::vector<OptimizerState> states(
      fix.setup.clients.size(),
      OptimizerState::zeros(fix.model.param_count()));
  for (std::size_t c = 0; c < fix.setup.clients.size(); ++c) {
    const FederationClientSpec& spec = fix.setup.clients[c];
    fns.push_back([&, c, spec](std::uint64_t round, const ParamVector& w,
                               const AggregatedMoments* moments) {
      Rng train_rng(derive_seed(spec.train_seed, spec.client_id, round));
      Rng noise_rng(derive_seed(spec.noise_seed, spec.client_id, round));
      LocalTrainResult res = local_training(fix.model, w, spec.shard, spec.trainer,
                                            states[c], spec.gate, train_rng,
                                            noise_rng, moments);
      RoundContribution contribution;
      contribution.client_id = spec.client_id;
      contribution.update = std::move(res.update);
      contribution.stats = res.stats;
      return contribution;
    });
  }
  return run_rounds(fix.setup.initial_state, fix.setup.rounds, fns);
}

}  // namespace

TEST_CASE("in-process federation equals manual orchestration") {
  Fixture fix(2, MomentumMode::restart, 3);
  const GlobalState via_net = run_federation(TransportKind::in_process, fix.setup);
  const GlobalState direct = manual_orchestration(fix);
  CHECK(via_net.w == direct.w);
  CHECK(via_net.round == 3);
}

TEST_CASE("tcp loopback matches in-process bit for bit") {
  Fixture fix(2, MomentumMode::restart, 2);
  const GlobalState inproc = run_federation(TransportKind::in_process, fix.setup);
  const GlobalState tcp = run_federation(TransportKind::tcp, fix.setup);
  CHECK(inproc.w == tcp.w);
}

TEST_CASE("momentum aggregation survives the wire") {
  Fixture fix(3, MomentumMode::m_aggregation, 2);
  const GlobalState via_net = run_federation(TransportKind::in_process, fix.setup);
  const GlobalState direct = manual_orchestration(fix);
  REQUIRE(via_net.moments.has_value());
  REQUIRE(direct.moments.has_value());
  CHECK(via_net.w == direct.w);
  CHECK(via_net.moments->m == direct.moments->m);
  CHECK(via_net.moments->v == direct.moments->v);
}

TEST_CASE("per-round observer sees every aggregation") {
  Fixture fix(2, MomentumMode::restart, 4);
  std::vector<std::uint64_t> rounds_seen;
  fix.setup.observer = [&](const GlobalState& state,
                           const std::vector<RoundContribution>& cs) {
    rounds_seen.push_back(state.round);
    CHECK(cs.size() == 2);
  };
  run_federation(TransportKind::in_process, fix.setup);
  CHECK(rounds_seen == std::vector<std::uint64_t>{1, 2, 3, 4});
}

TEST_CASE("selective q=1 with unbounded clip reproduces ungated FedAvg") {
  Fixture gated(3, MomentumMode::restart, 3);
  for (auto& client : gated.setup.clients) {
    client.gate.mode = GateMode::selective;
    client.gate.q = 1.0;
    client.gate.gamma = std::numeric_limits<double>::infinity();
  }
  Fixture plain(3, MomentumMode::restart, 3);
  const GlobalState a = run_federation(TransportKind::in_process, gated.setup);
  const GlobalState b = run_federation(TransportKind::in_process, plain.setup);
  CHECK(a.w == b.w);
}

TEST_CASE("a version-mismatched client is rejected with an error envelope") {
  Fixture fix(1, MomentumMode::restart, 1);
  auto [server_end, client_end] = make_in_process_pair();
  std::vector<std::unique_ptr<ByteStream>> conns;
  conns.push_back(std::move(server_end));
  GlobalState result;
  std::string server_error;
  std::thread server([&] {
    try {
      result = run_federation_server(std::move(conns), fix.setup);
    } catch (const std::exception& e) {
      server_error = e.what();
    }
  });
  RoundEnvelope hello{static_cast<std::uint8_t>(kProtocolVersion + 1),
                      MsgKind::round_done, 0, pack_hello(0)};
  send_envelope(*client_end, hello);
  RoundEnvelope reply;
  REQUIRE(recv_envelope(*client_end, reply) == DecodeStatus::ok);
  CHECK(reply.kind == MsgKind::error);
  const auto [code, message] = unpack_error({reply.payload.data(), reply.payload.size()});
  CHECK(code == 1);
  server.join();
  CHECK(server_error.find("version") != std::string::npos);
}

TEST_CASE("a client that dies mid-federation aborts the run") {
  Fixture fix(1, MomentumMode::restart, 3);
  auto [server_end, client_end] = make_in_process_pair();
  std::vector<std::unique_ptr<ByteStream>> conns;
  conns.push_back(std::move(server_end));
  std::string server_error;
  std::thread server([&] {
    try {
      run_federation_server(std::move(conns), fix.setup);
    } catch (const std::exception& e) {
      server_error = e.what();
    }
  });
  // Joins properly, then vanishes without contributing.
  send_envelope(*client_end, {kProtocolVersion, MsgKind::round_done, 0, pack_hello(0)});
  RoundEnvelope bc;
  REQUIRE(recv_envelope(*client_end, bc) == DecodeStatus::ok);
  client_end->close();
  server.join();
  CHECK_FALSE(server_error.empty());
}
