#include <doctest.h>

#include <cmath>

#include "fedsim/wire.hpp"

using namespace fedsim;

namespace {

RoundEnvelope random_envelope(Rng& rng) {
  RoundEnvelope env;
  env.kind = static_cast<MsgKind>(rng.bounded(4));
  env.round = static_cast<std::uint32_t>(rng.next_u64());
  const std::size_t len = rng.bounded(300);
  env.payload.resize(len);
  for (auto& b : env.payload) b = static_cast<std::uint8_t>(rng.bounded(256));
  return env;
}

}  // namespace

TEST_CASE("an empty sparse update round-trips") {
  ContributionPayload p;
  p.client_id = 3;
  p.update.n_local = 12;
  RoundEnvelope env{kProtocolVersion, MsgKind::contribution, 5,
                    pack_contribution(p)};
  const auto bytes = encode(env);
  RoundEnvelope back;
  std::size_t consumed = 0;
  REQUIRE(decode({bytes.data(), bytes.size()}, back, consumed) == DecodeStatus::ok);
  CHECK(consumed == bytes.size());
  CHECK(back == env);
  const ContributionPayload q =
      unpack_contribution({back.payload.data(), back.payload.size()});
  CHECK(q.client_id == 3);
  CHECK(q.update.n_local == 12);
  CHECK(q.update.delta.size() == 0);
  CHECK_FALSE(q.update.momentum_delta.has_value());
}

TEST_CASE("1000 random envelopes round-trip bit-exactly") {
  Rng rng(0x31137);
  for (int trial = 0; trial < 1000; ++trial) {
    const RoundEnvelope env = random_envelope(rng);
    const auto bytes = encode(env);
    RoundEnvelope back;
    std::size_t consumed = 0;
    REQUIRE(decode({bytes.data(), bytes.size()}, back, consumed) == DecodeStatus::ok);
    CHECK(consumed == bytes.size());
    CHECK(back == env);
  }
}

TEST_CASE("flipping a payload byte is a checksum failure") {
  RoundEnvelope env{kProtocolVersion, MsgKind::broadcast, 9,
                    {1, 2, 3, 4, 5, 6, 7, 8}};
  auto bytes = encode(env);
  bytes[kFrameHeaderSize + 3] ^= 0x10;
  RoundEnvelope back;
  std::size_t consumed = 0;
  CHECK(decode({bytes.data(), bytes.size()}, back, consumed) ==
        DecodeStatus::bad_checksum);
}

TEST_CASE("single-byte corruption is always detected") {
  Rng rng(777);
  for (int trial = 0; trial < 1000; ++trial) {
    const RoundEnvelope env = random_envelope(rng);
    auto bytes = encode(env);
    const std::size_t pos = rng.bounded(bytes.size());
    const std::uint8_t original = bytes[pos];
    std::uint8_t corrupted = original;
    while (corrupted == original) {
      corrupted = static_cast<std::uint8_t>(rng.bounded(256));
    }
    bytes[pos] = corrupted;
    RoundEnvelope back;
    std::size_t consumed = 0;
    const DecodeStatus st = decode({bytes.data(), bytes.size()}, back, consumed);
    CHECK(st != DecodeStatus::ok);
  }
}

TEST_CASE("any prefix of a stream decodes to a prefix of the sequence") {
  Rng rng(31337);
  std::vector<RoundEnvelope> envs;
  std::vector<std::uint8_t> stream;
  std::vector<std::size_t> boundaries;
  for (int i = 0; i < 3; ++i) {
    envs.push_back(random_envelope(rng));
    const auto f = encode(envs.back());
    stream.insert(stream.end(), f.begin(), f.end());
    boundaries.push_back(stream.size());
  }
  for (std::size_t cut = 0; cut <= stream.size(); ++cut) {
    std::span<const std::uint8_t> view{stream.data(), cut};
    std::size_t decoded = 0;
    while (true) {
      RoundEnvelope env;
      std::size_t consumed = 0;
      const DecodeStatus st = decode(view, env, consumed);
      if (st == DecodeStatus::need_more) break;
      REQUIRE(st == DecodeStatus::ok);
      CHECK(env == envs[decoded]);
      ++decoded;
      view = view.subspan(consumed);
      if (view.empty()) break;
    }
    // Exactly the fully contained envelopes decode.
    std::size_t expected = 0;
    for (std::size_t b : boundaries) {
      if (cut >= b) ++expected;
    }
    CHECK(decoded == expected);
  }
}

TEST_CASE("a version-mismatched frame is reported but recoverable") {
  RoundEnvelope env{static_cast<std::uint8_t>(kProtocolVersion + 6),
                    MsgKind::round_done, 2, pack_hello(4)};
  const auto bytes = encode(env);
  RoundEnvelope back;
  std::size_t consumed = 0;
  CHECK(decode({bytes.data(), bytes.size()}, back, consumed) ==
        DecodeStatus::bad_version);
  CHECK(consumed == bytes.size());
  CHECK(back.protocol_version == kProtocolVersion + 6);
  CHECK(unpack_hello({back.payload.data(), back.payload.size()}) == 4);
}

TEST_CASE("typed payloads round-trip") {
  Rng rng(55);
  BroadcastPayload bc;
  bc.w.resize(17);
  for (auto& x : bc.w) x = rng.normal();
  SUBCASE("broadcast without moments") {
    const auto bytes = pack_broadcast(bc);
    const BroadcastPayload back = unpack_broadcast({bytes.data(), bytes.size()});
    CHECK(back.w == bc.w);
    CHECK_FALSE(back.moments.has_value());
  }
  SUBCASE("broadcast with moments") {
    AggregatedMoments m;
    m.m.assign(17, 0.5);
    m.v.assign(17, 0.125);
    bc.moments = m;
    const auto bytes = pack_broadcast(bc);
    const BroadcastPayload back = unpack_broadcast({bytes.data(), bytes.size()});
    REQUIRE(back.moments.has_value());
    CHECK(back.moments->m == m.m);
    CHECK(back.moments->v == m.v);
  }
  SUBCASE("contribution with momentum delta") {
    ContributionPayload p;
    p.client_id = 7;
    p.update.n_local = 20;
    p.update.delta.indices = {1, 5, 9};
    p.update.delta.values = {0.1, -0.2, 0.3};
    MomentumDelta md;
    md.m.assign(4, -1.0);
    md.v.assign(4, 2.0);
    p.update.momentum_delta = md;
    p.train_loss = 0.75;
    p.released_fraction = 0.3;
    p.gate_exhausted = true;
    const auto bytes = pack_contribution(p);
    const ContributionPayload back = unpack_contribution({bytes.data(), bytes.size()});
    CHECK(back.client_id == 7);
    CHECK(back.update.n_local == 20);
    CHECK(back.update.delta == p.update.delta);
    REQUIRE(back.update.momentum_delta.has_value());
    CHECK(back.update.momentum_delta->m == md.m);
    CHECK(back.update.momentum_delta->v == md.v);
    CHECK(back.train_loss == 0.75);
    CHECK(back.released_fraction == 0.3);
    CHECK(back.gate_exhausted);
  }
  SUBCASE("error payload") {
    const auto bytes = pack_error(42, "boom");
    const auto [code, message] = unpack_error({bytes.data(), bytes.size()});
    CHECK(code == 42);
    CHECK(message == "boom");
  }
  SUBCASE("truncated payload throws") {
    const auto bytes = pack_broadcast(bc);
    CHECK_THROWS_AS(unpack_broadcast({bytes.data(), bytes.size() - 3}),
                    std::runtime_error);
  }
}
