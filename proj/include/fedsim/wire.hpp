// Versioned wire messages. Frame layout, little-endian throughout:
//   magic "FSIM" | u8 version | u8 kind | u32 round | u32 payload_len |
//   payload bytes | u32 crc32
// The CRC covers every byte from the magic through the payload, so any
// single-byte corruption in header or payload is detectable.
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedsim/param_vector.hpp"
#include "fedsim/trainer.hpp"

namespace fedsim {

constexpr std::uint8_t kProtocolVersion = 1;
constexpr std::size_t kFrameHeaderSize = 14;  // magic..payload_len
constexpr std::size_t kFrameOverhead = kFrameHeaderSize + 4;

enum class MsgKind : std::uint8_t {
  broadcast = 0,
  contribution = 1,
  round_done = 2,
  error = 3,
};

struct RoundEnvelope {
  std::uint8_t protocol_version = kProtocolVersion;
  MsgKind kind = MsgKind::round_done;
  std::uint32_t round = 0;
  std::vector<std::uint8_t> payload;

  friend bool operator==(const RoundEnvelope&, const RoundEnvelope&) = default;
};

enum class DecodeStatus {
  ok,
  need_more,     // truncated: the buffer holds only a frame prefix
  bad_magic,
  bad_version,   // frame intact (crc passed) but version differs
  bad_kind,
  bad_checksum,
};

const char* to_string(DecodeStatus status);

std::uint32_t crc32(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode(const RoundEnvelope& envelope);

// Decodes one frame from the front of bytes. On ok (and on bad_version,
// where the frame is intact) fills envelope and consumed; otherwise
// consumed is 0 and envelope is untouched.
DecodeStatus decode(std::span<const std::uint8_t> bytes, RoundEnvelope& envelope,
                    std::size_t& consumed);

// --- payload schemas ------------------------------------------------------
// Dense vectors are u32 count + count little-endian f64; sparse updates are
// u32 count + count (u32 index, f64 value) pairs, indices ascending.

// broadcast: u8 has_moments, dense w [, dense m, dense v]
struct BroadcastPayload {
  ParamVector w;
  std::optional<AggregatedMoments> moments;
};

// contribution: u32 client_id, u64 n_local, f64 train_loss,
//               f64 released_fraction, u8 exhausted, u8 has_moments,
//               sparse delta [, dense dm, dense dv]
struct ContributionPayload {
  std::uint32_t client_id = 0;
  ModelUpdate update;
  double train_loss = 0.0;
  double released_fraction = 1.0;
  bool gate_exhausted = false;
};

// round_done: u32 client_id (client hello; 0 from the server side)
// error: u32 code, utf-8 message

std::vector<std::uint8_t> pack_broadcast(const BroadcastPayload& payload);
BroadcastPayload unpack_broadcast(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> pack_contribution(const ContributionPayload& payload);
ContributionPayload unpack_contribution(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> pack_hello(std::uint32_t client_id);
std::uint32_t unpack_hello(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> pack_error(std::uint32_t code, const std::string& message);
std::pair<std::uint32_t, std::string> unpack_error(std::span<const std::uint8_t> bytes);

}  // namespace fedsim
