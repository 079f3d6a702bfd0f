#include "fedsim/privacy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace fedsim {

const char* to_string(GateMode mode) {
  switch (mode) {
    case GateMode::off: return "off";
    case GateMode::selective: return "selective";
    case GateMode::svt: return "svt";
  }
  return "?";
}

GateMode gate_mode_from_string(const std::string& name) {
  if (name == "off") return GateMode::off;
  if (name == "selective") return GateMode::selective;
  if (name == "svt") return GateMode::svt;
  throw std::invalid_argument("unknown gate mode: " + name);
}

void PrivacyPolicy::validate() const {
  if (mode == GateMode::off) return;
  if (!(q > 0.0 && q <= 1.0)) throw std::invalid_argument("policy: q must be in (0, 1]");
  if (!(gamma > 0.0)) throw std::invalid_argument("policy: gamma must be > 0");
  if (!(tau_percentile >= 0.0 && tau_percentile < 100.0)) {
    throw std::invalid_argument("policy: tau_percentile must be in [0, 100)");
  }
  if (mode == GateMode::svt) {
    if (!(sensitivity > 0.0)) throw std::invalid_argument("policy: sensitivity must be > 0");
    if (!(eps1 > 0.0 && eps2 > 0.0 && eps3 > 0.0)) {
      throw std::invalid_argument("policy: svt mode requires eps1, eps2, eps3 > 0");
    }
  }
}

double PrivacyPolicy::derive_eps2(double q, double sensitivity, double eps1) {
  return std::pow(2.0 * q * sensitivity, 2.0 / 3.0) * eps1;
}

double privacy_cost(const PrivacyPolicy& policy) {
  if (policy.mode != GateMode::svt) {
    throw std::logic_error("privacy_cost: policy mode is not svt");
  }
  return policy.eps1 + policy.eps2 + policy.eps3;
}

double clip(double x, double gamma) {
  return std::min(std::max(x, -gamma), gamma);
}

double select_threshold(const ParamVector& delta, double percentile) {
  if (delta.empty()) throw std::invalid_argument("select_threshold: empty vector");
  if (!(percentile >= 0.0 && percentile < 100.0)) {
    throw std::invalid_argument("select_threshold: percentile out of [0, 100)");
  }
  std::vector<double> mags(delta.size());
  for (std::size_t i = 0; i < delta.size(); ++i) mags[i] = std::fabs(delta[i]);
  const auto n = static_cast<double>(mags.size());
  // Nearest rank: smallest rank r with r/n >= percentile/100, 1-indexed.
  auto rank = static_cast<std::size_t>(std::ceil(percentile / 100.0 * n));
  if (rank < 1) rank = 1;
  std::nth_element(mags.begin(), mags.begin() + (rank - 1), mags.end());
  return mags[rank - 1];
}

GateResult selective_release(const ParamVector& delta, const PrivacyPolicy& policy) {
  policy.validate();
  GateResult res;
  if (delta.empty()) return res;
  if (policy.q >= 1.0) {
    // Full sharing: identity apart from the clip.
    res.update.indices.reserve(delta.size());
    res.update.values.reserve(delta.size());
    for (std::size_t i = 0; i < delta.size(); ++i) {
      res.update.indices.push_back(static_cast<std::uint32_t>(i));
      res.update.values.push_back(clip(delta[i], policy.gamma));
    }
    res.released_fraction = 1.0;
    return res;
  }
  const double tau = select_threshold(delta, 100.0 * (1.0 - policy.q));
  for (std::size_t i = 0; i < delta.size(); ++i) {
    if (std::fabs(delta[i]) > tau) {
      res.update.indices.push_back(static_cast<std::uint32_t>(i));
      res.update.values.push_back(clip(delta[i], policy.gamma));
    }
  }
  res.released_fraction =
      static_cast<double>(res.update.size()) / static_cast<double>(delta.size());
  return res;
}

double LaplaceSampler::sample() {
  if (scale_ == 0.0) return 0.0;
  const double u = rng_->uniform_open();
  return u < 0.5 ? scale_ * std::log(2.0 * u) : -scale_ * std::log(2.0 * (1.0 - u));
}

GateResult svt_release(const ParamVector& delta, std::uint64_t n_local,
                       const PrivacyPolicy& policy, Rng& rng) {
  policy.validate();
  if (policy.mode != GateMode::svt) throw std::logic_error("svt_release: mode is not svt");
  if (n_local < 1) throw std::invalid_argument("svt_release: n_local must be >= 1");
  const std::size_t p = delta.size();
  GateResult res;
  if (p == 0) return res;

  // Normalise by iterations.
  ParamVector norm(p);
  const double inv_n = 1.0 / static_cast<double>(n_local);
  for (std::size_t i = 0; i < p; ++i) norm[i] = delta[i] * inv_n;

  std::size_t q_count = static_cast<std::size_t>(
      std::floor(policy.q * static_cast<double>(p)));
  if (q_count < 1) q_count = 1;

  const double h = select_threshold(norm, policy.tau_percentile);
  LaplaceSampler threshold_noise(policy.sensitivity / policy.eps2, rng);
  const double noisy_h = h + threshold_noise.sample();

  // Candidates are drawn uniformly without replacement: one shuffled pass.
  std::vector<std::uint32_t> order(p);
  std::iota(order.begin(), order.end(), 0u);
  rng.shuffle(order);

  const double qs = static_cast<double>(q_count) * policy.sensitivity;
  LaplaceSampler query_noise(2.0 * qs / policy.eps1, rng);
  LaplaceSampler answer_noise(qs / policy.eps3, rng);

  std::map<std::uint32_t, double> released;
  for (std::uint32_t idx : order) {
    if (released.size() >= q_count) break;
    const double w = norm[idx];
    if (std::fabs(clip(w, policy.gamma)) + query_noise.sample() >= noisy_h) {
      released[idx] = clip(w + answer_noise.sample(), policy.gamma);
    }
  }
  res.pool_exhausted = released.size() < q_count;

  // Undo normalisation.
  for (auto& [idx, val] : released) val *= static_cast<double>(n_local);
  res.update = SparseUpdate::from_map(released);
  res.released_fraction =
      static_cast<double>(res.update.size()) / static_cast<double>(p);
  return res;
}

GateResult apply_gate(const ParamVector& delta, std::uint64_t n_local,
                      const PrivacyPolicy& policy, Rng& rng) {
  switch (policy.mode) {
    case GateMode::off: {
      GateResult res;
      res.update = SparseUpdate::from_dense(delta);
      res.released_fraction = 1.0;
      return res;
    }
    case GateMode::selective:
      return selective_release(delta, policy);
    case GateMode::svt:
      return svt_release(delta, n_local, policy, rng);
  }
  throw std::logic_error("apply_gate: bad mode");
}

}  // namespace fedsim
