// Client-side release gate: gradient clipping, selective parameter sharing
// and the sparse-vector-technique differential privacy mechanism.
#pragma once

#include <cstdint>
#include <string>

#include "fedsim/param_vector.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

enum class GateMode { off, selective, svt };

const char* to_string(GateMode mode);
GateMode gate_mode_from_string(const std::string& name);

struct PrivacyPolicy {
  GateMode mode = GateMode::off;
  double q = 1.0;                // fraction of components to share, (0, 1]
  double gamma = 1e-4;           // clip bound, > 0
  double sensitivity = 2e-4;     // defaults to 2 * gamma
  double tau_percentile = 0.0;   // threshold percentile in [0, 100)
  double eps1 = 0.0;             // gradient-query budget
  double eps2 = 0.0;             // threshold budget; derivable, see below
  double eps3 = 0.0;             // answer budget

  void validate() const;

  // eps2 = (2*q*s)^(2/3) * eps1.
  static double derive_eps2(double q, double sensitivity, double eps1);
};

// Total privacy cost eps1 + eps2 + eps3; only meaningful in svt mode.
double privacy_cost(const PrivacyPolicy& policy);

double clip(double x, double gamma);

// Nearest-rank percentile of |values|; percentile in [0, 100), values
// non-empty.
double select_threshold(const ParamVector& delta, double percentile);

struct GateResult {
  SparseUpdate update;
  double released_fraction = 0.0;
  bool pool_exhausted = false;  // svt stopped before q_count acceptances
};

// Shares the components of delta whose magnitude strictly exceeds the
// percentile threshold targeting fraction q, clipped to [-gamma, gamma].
// q == 1 shares everything. No noise is added.
GateResult selective_release(const ParamVector& delta, const PrivacyPolicy& policy);

// Laplace noise via inverse CDF over a 64-bit uniform stream; scale 0 gives
// exactly zero noise, which the zero-noise-limit tests rely on.
class LaplaceSampler {
 public:
  LaplaceSampler(double scale, Rng& rng) : scale_(scale), rng_(&rng) {}
  double sample();
  double scale() const { return scale_; }

 private:
  double scale_;
  Rng* rng_;
};

// Sparse vector technique over the normalised delta. Consumes the rng in a
// fixed order (threshold noise, candidate permutation, per-candidate query
// noise, per-acceptance answer noise) so rounds replay from a logged seed.
GateResult svt_release(const ParamVector& delta, std::uint64_t n_local,
                       const PrivacyPolicy& policy, Rng& rng);

// Dispatch on policy.mode; off returns the dense identity update.
GateResult apply_gate(const ParamVector& delta, std::uint64_t n_local,
                      const PrivacyPolicy& policy, Rng& rng);

}  // namespace fedsim
