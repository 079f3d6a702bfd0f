#include "fedsim/federation.hpp"

#include <condition_variable>
#include <mutex>
#include <stdexcept>
#include <thread>

namespace fedsim {

namespace {

constexpr std::uint32_t kErrVersionMismatch = 1;
constexpr std::uint32_t kErrProtocol = 2;

struct SharedRound {
  std::mutex mu;
  std::condition_variable cv;
  std::uint64_t round = 0;  // 0 while collecting hellos
  bool done = false;
  bool failed = false;
  std::string error;
  std::vector<std::uint8_t> broadcast_frame;
  std::vector<bool> hello_seen;
  std::size_t hellos = 0;
  std::vector<RoundContribution> slots;
  std::vector<bool> slot_filled;
  std::size_t deposited = 0;

  void fail(const std::string& why) {
    failed = true;
    if (error.empty()) error = why;
    cv.notify_all();
  }
};

void serve_connection(ByteStream& stream, SharedRound& shared, std::size_t k) {
  RoundEnvelope env;
  std::uint32_t client_id = 0;
  try {
    const DecodeStatus st = recv_envelope(stream, env);
    if (st == DecodeStatus::bad_version) {
      send_envelope(stream, {kProtocolVersion, MsgKind::error, 0,
                             pack_error(kErrVersionMismatch,
                                        "protocol version mismatch")});
      throw std::runtime_error("client speaks protocol version " +
                               std::to_string(env.protocol_version));
    }
    if (st != DecodeStatus::ok || env.kind != MsgKind::round_done) {
      send_envelope(stream, {kProtocolVersion, MsgKind::error, 0,
                             pack_error(kErrProtocol, "expected hello")});
      throw std::runtime_error(std::string("bad hello: ") + to_string(st));
    }
    client_id = unpack_hello({env.payload.data(), env.payload.size()});
    {
      std::lock_guard<std::mutex> lock(shared.mu);
      if (client_id >= k || shared.hello_seen[client_id]) {
        throw std::runtime_error("bad or duplicate client id " +
                                 std::to_string(client_id));
      }
      shared.hello_seen[client_id] = true;
      shared.hellos += 1;
      shared.cv.notify_all();
    }

    std::uint64_t served = 0;
    for (;;) {
      std::vector<std::uint8_t> frame;
      {
        std::unique_lock<std::mutex> lock(shared.mu);
        shared.cv.wait(lock, [&] {
          return shared.failed || shared.done || shared.round > served;
        });
        if (shared.failed) return;
        if (shared.done) break;
        served = shared.round;
        frame = shared.broadcast_frame;
      }
      stream.write_all({frame.data(), frame.size()});

      const DecodeStatus rst = recv_envelope(stream, env);
      if (rst != DecodeStatus::ok) {
        throw std::runtime_error(std::string("contribution recv failed: ") +
                                 to_string(rst));
      }
      if (env.kind != MsgKind::contribution || env.round != served) {
        send_envelope(stream, {kProtocolVersion, MsgKind::error,
                               static_cast<std::uint32_t>(served),
                               pack_error(kErrProtocol, "expected contribution")});
        throw std::runtime_error("unexpected envelope mid-round");
      }
      ContributionPayload payload =
          unpack_contribution({env.payload.data(), env.payload.size()});
      if (payload.client_id != client_id) {
        throw std::runtime_error("contribution client id changed mid-federation");
      }
      {
        std::lock_guard<std::mutex> lock(shared.mu);
        RoundContribution& slot = shared.slots[client_id];
        slot.client_id = payload.client_id;
        slot.update = std::move(payload.update);
        slot.stats.mean_train_loss = payload.train_loss;
        slot.stats.released_fraction = payload.released_fraction;
        slot.stats.gate_exhausted = payload.gate_exhausted;
        shared.slot_filled[client_id] = true;
        shared.deposited += 1;
        shared.cv.notify_all();
      }
    }
    send_envelope(stream, {kProtocolVersion, MsgKind::round_done,
                           static_cast<std::uint32_t>(served), {}});
  } catch (const std::exception& e) {
    std::lock_guard<std::mutex> lock(shared.mu);
    shared.fail("connection for client " + std::to_string(client_id) + ": " +
                e.what());
  }
}

}  // namespace

GlobalState run_federation_server(std::vector<std::unique_ptr<ByteStream>> connections,
                                  const FederationSetup& setup) {
  const std::size_t k = connections.size();
  if (k == 0) throw std::invalid_argument("run_federation_server: no connections");
  SharedRound shared;
  shared.hello_seen.assign(k, false);
  shared.slots.resize(k);
  shared.slot_filled.assign(k, false);

  std::vector<std::thread> handlers;
  handlers.reserve(k);
  for (auto& conn : connections) {
    handlers.emplace_back(
        [&shared, k, stream = conn.get()] { serve_connection(*stream, shared, k); });
  }

  GlobalState state = setup.initial_state;
  std::string failure;
  {
    std::unique_lock<std::mutex> lock(shared.mu);
    shared.cv.wait(lock, [&] { return shared.failed || shared.hellos == k; });
    if (!shared.failed) {
      for (std::uint64_t t = 1; t <= setup.rounds && !shared.failed; ++t) {
        BroadcastPayload payload;
        payload.w = state.w;
        payload.moments = state.moments;
        RoundEnvelope env{kProtocolVersion, MsgKind::broadcast,
                          static_cast<std::uint32_t>(t), pack_broadcast(payload)};
        shared.broadcast_frame = encode(env);
        shared.deposited = 0;
        shared.slot_filled.assign(k, false);
        shared.round = t;
        shared.cv.notify_all();
        shared.cv.wait(lock, [&] { return shared.failed || shared.deposited == k; });
        if (shared.failed) break;
        std::vector<RoundContribution> contributions = shared.slots;
        lock.unlock();
        state = aggregate(state, contributions);
        if (setup.observer) setup.observer(state, contributions);
        lock.lock();
      }
    }
    shared.done = true;
    shared.cv.notify_all();
    failure = shared.error;
  }
  if (!failure.empty()) {
    // Unblock handlers stuck in stream reads before joining them.
    for (auto& conn : connections) conn->close();
  }
  for (auto& h : handlers) h.join();
  for (auto& conn : connections) conn->close();
  if (!failure.empty()) {
    throw std::runtime_error("federation aborted: " + failure);
  }
  return state;
}

void run_federation_client(ByteStream& stream, const ToyModel& model,
                           const FederationClientSpec& spec) {
  send_envelope(stream, {kProtocolVersion, MsgKind::round_done, 0,
                         pack_hello(spec.client_id)});
  OptimizerState state = OptimizerState::zeros(model.param_count());
  RoundEnvelope env;
  for (;;) {
    const DecodeStatus st = recv_envelope(stream, env);
    if (st != DecodeStatus::ok) {
      throw std::runtime_error(std::string("client ") +
                               std::to_string(spec.client_id) +
                               ": connection lost (" + to_string(st) + ")");
    }
    if (env.kind == MsgKind::round_done) return;  // federation complete
    if (env.kind == MsgKind::error) {
      const auto [code, message] = unpack_error({env.payload.data(), env.payload.size()});
      throw std::runtime_error("client " + std::to_string(spec.client_id) +
                               ": server error " + std::to_string(code) + ": " +
                               message);
    }
    if (env.kind != MsgKind::broadcast) {
      throw std::runtime_error("client: unexpected envelope kind");
    }
    const BroadcastPayload bc = unpack_broadcast({env.payload.data(), env.payload.size()});
    Rng train_rng(derive_seed(spec.train_seed, spec.client_id, env.round));
    Rng noise_rng(derive_seed(spec.noise_seed, spec.client_id, env.round));
    const AggregatedMoments* moments =
        bc.moments.has_value() ? &*bc.moments : nullptr;
    LocalTrainResult result =
        local_training(model, bc.w, spec.shard, spec.trainer, state, spec.gate,
                       train_rng, noise_rng, moments);
    ContributionPayload payload;
    payload.client_id = spec.client_id;
    payload.update = std::move(result.update);
    payload.train_loss = result.stats.mean_train_loss;
    payload.released_fraction = result.stats.released_fraction;
    payload.gate_exhausted = result.stats.gate_exhausted;
    send_envelope(stream, {kProtocolVersion, MsgKind::contribution, env.round,
                           pack_contribution(payload)});
  }
}

GlobalState run_federation(TransportKind kind, const FederationSetup& setup) {
  if (setup.model == nullptr) throw std::invalid_argument("run_federation: no model");
  if (setup.clients.empty()) throw std::invalid_argument("run_federation: no clients");

  std::vector<std::unique_ptr<ByteStream>> server_ends;
  std::vector<std::unique_ptr<ByteStream>> client_ends;
  std::unique_ptr<TcpListener> listener;
  if (kind == TransportKind::in_process) {
    for (std::size_t i = 0; i < setup.clients.size(); ++i) {
      auto [a, b] = make_in_process_pair();
      server_ends.push_back(std::move(a));
      client_ends.push_back(std::move(b));
    }
  } else {
    listener = std::make_unique<TcpListener>(0);
  }

  std::mutex err_mu;
  std::string client_error;
  std::vector<std::thread> client_threads;
  client_threads.reserve(setup.clients.size());
  for (std::size_t i = 0; i < setup.clients.size(); ++i) {
    const FederationClientSpec& spec = setup.clients[i];
    ByteStream* pre_made = kind == TransportKind::in_process ? client_ends[i].get() : nullptr;
    const std::uint16_t port = listener ? listener->port() : 0;
    client_threads.emplace_back([&, pre_made, port, spec_ptr = &spec] {
      std::unique_ptr<ByteStream> owned;
      ByteStream* stream = pre_made;
      try {
        if (stream == nullptr) {
          owned = tcp_connect("127.0.0.1", port);
          stream = owned.get();
        }
        run_federation_client(*stream, *setup.model, *spec_ptr);
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(err_mu);
        if (client_error.empty()) client_error = e.what();
      }
      // Always close so the server handler never blocks on a dead client.
      if (stream != nullptr) stream->close();
    });
  }

  if (kind == TransportKind::tcp) {
    for (std::size_t i = 0; i < setup.clients.size(); ++i) {
      server_ends.push_back(listener->accept());
    }
  }

  GlobalState final_state;
  std::string server_error;
  try {
    final_state = run_federation_server(std::move(server_ends), setup);
  } catch (const std::exception& e) {
    server_error = e.what();
  }
  for (auto& t : client_threads) t.join();
  if (!server_error.empty()) throw std::runtime_error(server_error);
  if (!client_error.empty()) {
    throw std::runtime_error(std::string("federation aborted: ") + client_error);
  }
  return final_state;
}

}  // namespace fedsim
