#include "fedsim/wire.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <stdexcept>

namespace fedsim {

namespace {

constexpr std::uint8_t kMagic[4] = {'F', 'S', 'I', 'M'};

std::array<std::uint32_t, 256> make_crc_table() {
  std::array<std::uint32_t, 256> table{};
  for (std::uint32_t i = 0; i < 256; ++i) {
    std::uint32_t c = i;
    for (int k = 0; k < 8; ++k) {
      c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
    }
    table[i] = c;
  }
  return table;
}

const std::array<std::uint32_t, 256> kCrcTable = make_crc_table();

void put_u32(std::vector<std::uint8_t>& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

void put_u64(std::vector<std::uint8_t>& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

void put_f64(std::vector<std::uint8_t>& buf, double v) {
  put_u64(buf, std::bit_cast<std::uint64_t>(v));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint8_t u8() { return take(1)[0]; }

  std::uint32_t u32() {
    auto p = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return v;
  }

  std::uint64_t u64() {
    auto p = take(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
  }

  double f64() { return std::bit_cast<double>(u64()); }

  std::span<const std::uint8_t> take(std::size_t n) {
    if (off_ + n > bytes_.size()) {
      throw std::runtime_error("wire: payload truncated");
    }
    auto out = bytes_.subspan(off_, n);
    off_ += n;
    return out;
  }

  std::size_t remaining() const { return bytes_.size() - off_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t off_ = 0;
};

void put_dense(std::vector<std::uint8_t>& buf, const ParamVector& v) {
  put_u32(buf, static_cast<std::uint32_t>(v.size()));
  for (double x : v) put_f64(buf, x);
}

ParamVector get_dense(Reader& r) {
  const std::uint32_t n = r.u32();
  ParamVector v(n);
  for (auto& x : v) x = r.f64();
  return v;
}

void put_sparse(std::vector<std::uint8_t>& buf, const SparseUpdate& u) {
  put_u32(buf, static_cast<std::uint32_t>(u.size()));
  for (std::size_t i = 0; i < u.size(); ++i) {
    put_u32(buf, u.indices[i]);
    put_f64(buf, u.values[i]);
  }
}

SparseUpdate get_sparse(Reader& r) {
  const std::uint32_t n = r.u32();
  SparseUpdate u;
  u.indices.resize(n);
  u.values.resize(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    u.indices[i] = r.u32();
    u.values[i] = r.f64();
  }
  return u;
}

}  // namespace

const char* to_string(DecodeStatus status) {
  switch (status) {
    case DecodeStatus::ok: return "ok";
    case DecodeStatus::need_more: return "need_more";
    case DecodeStatus::bad_magic: return "bad_magic";
    case DecodeStatus::bad_version: return "bad_version";
    case DecodeStatus::bad_kind: return "bad_kind";
    case DecodeStatus::bad_checksum: return "bad_checksum";
  }
  return "?";
}

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  std::uint32_t c = 0xffffffffu;
  for (std::uint8_t b : bytes) {
    c = kCrcTable[(c ^ b) & 0xffu] ^ (c >> 8);
  }
  return c ^ 0xffffffffu;
}

std::vector<std::uint8_t> encode(const RoundEnvelope& envelope) {
  if (envelope.payload.size() > 0xffffffffull - kFrameOverhead) {
    throw std::invalid_argument("encode: payload too large for 32-bit framing");
  }
  std::vector<std::uint8_t> buf;
  buf.reserve(envelope.payload.size() + kFrameOverhead);
  for (std::uint8_t b : kMagic) buf.push_back(b);
  buf.push_back(envelope.protocol_version);
  buf.push_back(static_cast<std::uint8_t>(envelope.kind));
  put_u32(buf, envelope.round);
  put_u32(buf, static_cast<std::uint32_t>(envelope.payload.size()));
  buf.insert(buf.end(), envelope.payload.begin(), envelope.payload.end());
  put_u32(buf, crc32({buf.data(), buf.size()}));
  return buf;
}

DecodeStatus decode(std::span<const std::uint8_t> bytes, RoundEnvelope& envelope,
                    std::size_t& consumed) {
  consumed = 0;
  if (bytes.size() < 4) {
    // With less than the magic available, corruption is still detectable.
    for (std::size_t i = 0; i < bytes.size(); ++i) {
      if (bytes[i] != kMagic[i]) return DecodeStatus::bad_magic;
    }
    return DecodeStatus::need_more;
  }
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) return DecodeStatus::bad_magic;
  if (bytes.size() < kFrameHeaderSize) return DecodeStatus::need_more;

  std::uint32_t payload_len = 0;
  for (int i = 0; i < 4; ++i) {
    payload_len |= static_cast<std::uint32_t>(bytes[10 + i]) << (8 * i);
  }
  const std::size_t frame_len = kFrameHeaderSize + payload_len + 4;
  if (bytes.size() < frame_len) return DecodeStatus::need_more;

  std::uint32_t stored_crc = 0;
  for (int i = 0; i < 4; ++i) {
    stored_crc |= static_cast<std::uint32_t>(bytes[kFrameHeaderSize + payload_len + i])
                  << (8 * i);
  }
  if (crc32(bytes.first(kFrameHeaderSize + payload_len)) != stored_crc) {
    return DecodeStatus::bad_checksum;
  }
  const std::uint8_t kind = bytes[5];
  if (kind > static_cast<std::uint8_t>(MsgKind::error)) return DecodeStatus::bad_kind;

  envelope.protocol_version = bytes[4];
  envelope.kind = static_cast<MsgKind>(kind);
  envelope.round = 0;
  for (int i = 0; i < 4; ++i) {
    envelope.round |= static_cast<std::uint32_t>(bytes[6 + i]) << (8 * i);
  }
  envelope.payload.assign(bytes.begin() + kFrameHeaderSize,
                          bytes.begin() + kFrameHeaderSize + payload_len);
  consumed = frame_len;
  if (envelope.protocol_version != kProtocolVersion) return DecodeStatus::bad_version;
  return DecodeStatus::ok;
}

std::vector<std::uint8_t> pack_broadcast(const BroadcastPayload& payload) {
  std::vector<std::uint8_t> buf;
  buf.push_back(payload.moments.has_value() ? 1 : 0);
  put_dense(buf, payload.w);
  if (payload.moments.has_value()) {
    put_dense(buf, payload.moments->m);
    put_dense(buf, payload.moments->v);
  }
  return buf;
}

BroadcastPayload unpack_broadcast(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  BroadcastPayload p;
  const bool has_moments = r.u8() != 0;
  p.w = get_dense(r);
  if (has_moments) {
    AggregatedMoments m;
    m.m = get_dense(r);
    m.v = get_dense(r);
    p.moments = std::move(m);
  }
  return p;
}

std::vector<std::uint8_t> pack_contribution(const ContributionPayload& payload) {
  std::vector<std::uint8_t> buf;
  put_u32(buf, payload.client_id);
  put_u64(buf, payload.update.n_local);
  put_f64(buf, payload.train_loss);
  put_f64(buf, payload.released_fraction);
  buf.push_back(payload.gate_exhausted ? 1 : 0);
  buf.push_back(payload.update.momentum_delta.has_value() ? 1 : 0);
  put_sparse(buf, payload.update.delta);
  if (payload.update.momentum_delta.has_value()) {
    put_dense(buf, payload.update.momentum_delta->m);
    put_dense(buf, payload.update.momentum_delta->v);
  }
  return buf;
}

ContributionPayload unpack_contribution(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  ContributionPayload p;
  p.client_id = r.u32();
  p.update.n_local = r.u64();
  p.train_loss = r.f64();
  p.released_fraction = r.f64();
  p.gate_exhausted = r.u8() != 0;
  const bool has_moments = r.u8() != 0;
  p.update.delta = get_sparse(r);
  if (has_moments) {
    MomentumDelta md;
    md.m = get_dense(r);
    md.v = get_dense(r);
    p.update.momentum_delta = std::move(md);
  }
  return p;
}

std::vector<std::uint8_t> pack_hello(std::uint32_t client_id) {
  std::vector<std::uint8_t> buf;
  put_u32(buf, client_id);
  return buf;
}

std::uint32_t unpack_hello(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  return r.u32();
}

std::vector<std::uint8_t> pack_error(std::uint32_t code, const std::string& message) {
  std::vector<std::uint8_t> buf;
  put_u32(buf, code);
  buf.insert(buf.end(), message.begin(), message.end());
  return buf;
}

std::pair<std::uint32_t, std::string> unpack_error(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const std::uint32_t code = r.u32();
  auto rest = r.take(r.remaining());
  return {code, std::string(rest.begin(), rest.end())};
}

}  // namespace fedsim
