#include "fedsim/server.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace fedsim {

const char* to_string(AggregationMode mode) {
  return mode == AggregationMode::weighted ? "weighted" : "simple";
}

AggregationMode aggregation_mode_from_string(const std::string& name) {
  if (name == "weighted") return AggregationMode::weighted;
  if (name == "simple") return AggregationMode::simple;
  throw std::invalid_argument("unknown aggregation mode: " + name);
}

GlobalState aggregate(const GlobalState& state,
                      std::vector<RoundContribution> contributions) {
  if (contributions.empty()) {
    throw std::invalid_argument("aggregate: no contributions");
  }
  std::sort(contributions.begin(), contributions.end(),
            [](const RoundContribution& a, const RoundContribution& b) {
              return a.client_id < b.client_id;
            });
  std::uint64_t n_total = 0;
  for (std::size_t i = 0; i < contributions.size(); ++i) {
    if (i > 0 && contributions[i].client_id == contributions[i - 1].client_id) {
      throw std::invalid_argument("aggregate: duplicate client_id " +
                                  std::to_string(contributions[i].client_id));
    }
    if (contributions[i].update.n_local < 1) {
      throw std::invalid_argument("aggregate: n_local must be >= 1");
    }
    n_total += contributions[i].update.n_local;
  }

  GlobalState next = state;
  const double k = static_cast<double>(contributions.size());
  for (const RoundContribution& c : contributions) {
    // Coefficients are formed first so the single-client weighted case is
    // exactly 1.0 and adds the delta unscaled.
    const double coeff =
        state.mode == AggregationMode::weighted
            ? static_cast<double>(c.update.n_local) / static_cast<double>(n_total)
            : 1.0 / k;
    c.update.delta.add_dense(next.w, coeff);
    if (c.update.momentum_delta.has_value()) {
      if (!next.moments.has_value()) {
        AggregatedMoments zero;
        zero.m.assign(state.w.size(), 0.0);
        zero.v.assign(state.w.size(), 0.0);
        next.moments = std::move(zero);
      }
      const MomentumDelta& md = *c.update.momentum_delta;
      require_same_length(md.m, next.w, "aggregate momentum");
      require_same_length(md.v, next.w, "aggregate momentum");
      for (std::size_t i = 0; i < next.w.size(); ++i) {
        next.moments->m[i] += coeff * md.m[i];
        next.moments->v[i] += coeff * md.v[i];
      }
    }
  }
  if (!all_finite(next.w)) {
    throw std::runtime_error("aggregate: non-finite global model");
  }
  next.round = state.round + 1;
  return next;
}

GlobalState run_rounds(GlobalState state, std::uint64_t num_rounds,
                       const std::vector<ClientRoundFn>& clients,
                       const RoundObserver& observer) {
  if (clients.empty()) throw std::invalid_argument("run_rounds: no clients");
  for (std::uint64_t t = 1; t <= num_rounds; ++t) {
    const AggregatedMoments* moments =
        state.moments.has_value() ? &*state.moments : nullptr;
    std::vector<RoundContribution> contributions;
    contributions.reserve(clients.size());
    for (const ClientRoundFn& client : clients) {
      contributions.push_back(client(t, state.w, moments));
    }
    state = aggregate(state, contributions);
    if (observer) observer(state, contributions);
  }
  return state;
}

namespace {

constexpr char kCheckpointMagic[4] = {'F', 'S', 'C', 'P'};
constexpr std::uint8_t kCheckpointVersion = 1;

void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::string buf;
  buf.append(kCheckpointMagic, 4);
  buf.push_back(static_cast<char>(kCheckpointVersion));
  put_u32(buf, static_cast<std::uint32_t>(ckpt.round));
  put_u64(buf, ckpt.config_hash);
  put_u32(buf, static_cast<std::uint32_t>(ckpt.w.size()));
  for (double v : ckpt.w) put_u64(buf, std::bit_cast<std::uint64_t>(v));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw std::runtime_error("save_checkpoint: write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(in)),
                  std::istreambuf_iterator<char>());
  if (buf.size() < 21 || std::memcmp(buf.data(), kCheckpointMagic, 4) != 0) {
    throw std::runtime_error("load_checkpoint: bad magic: " + path);
  }
  const auto* p = reinterpret_cast<const unsigned char*>(buf.data());
  if (p[4] != kCheckpointVersion) {
    throw std::runtime_error("load_checkpoint: unsupported version");
  }
  Checkpoint ckpt;
  ckpt.round = get_u32(p + 5);
  ckpt.config_hash = get_u64(p + 9);
  const std::uint32_t n = get_u32(p + 17);
  if (buf.size() != 21 + static_cast<std::size_t>(n) * 8) {
    throw std::runtime_error("load_checkpoint: truncated file");
  }
  ckpt.w.resize(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    ckpt.w[i] = std::bit_cast<double>(get_u64(p + 21 + i * 8));
  }
  return ckpt;
}

}  // namespace fedsim
