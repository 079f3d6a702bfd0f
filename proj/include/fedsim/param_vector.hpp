// Flat parameter vectors: the currency every module trades in. Models,
// updates and momentum terms are all fixed-length vectors of doubles.
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <vector>

namespace fedsim {

using ParamVector = std::vector<double>;

inline void require_same_length(const ParamVector& a, const ParamVector& b,
                                const char* what) {
  if (a.size() != b.size()) {
    throw std::invalid_argument(std::string(what) + ": length mismatch (" +
                                std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()) + ")");
  }
}

inline bool all_finite(const ParamVector& v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

// Sparse parameter delta: unique indices in [0, P), kept sorted so that
// summation order is well defined everywhere downstream.
struct SparseUpdate {
  std::vector<std::uint32_t> indices;
  std::vector<double> values;

  std::size_t size() const { return indices.size(); }

  void add_dense(ParamVector& target, double coeff) const {
    for (std::size_t i = 0; i < indices.size(); ++i) {
      if (indices[i] >= target.size()) {
        throw std::invalid_argument("SparseUpdate: index out of range");
      }
      target[indices[i]] += coeff * values[i];
    }
  }

  static SparseUpdate from_dense(const ParamVector& delta) {
    SparseUpdate u;
    u.indices.reserve(delta.size());
    u.values.reserve(delta.size());
    for (std::size_t i = 0; i < delta.size(); ++i) {
      u.indices.push_back(static_cast<std::uint32_t>(i));
      u.values.push_back(delta[i]);
    }
    return u;
  }

  static SparseUpdate from_map(const std::map<std::uint32_t, double>& entries) {
    SparseUpdate u;
    u.indices.reserve(entries.size());
    u.values.reserve(entries.size());
    for (const auto& [idx, val] : entries) {
      u.indices.push_back(idx);
      u.values.push_back(val);
    }
    return u;
  }
};

inline bool operator==(const SparseUpdate& a, const SparseUpdate& b) {
  return a.indices == b.indices && a.values == b.values;
}

}  // namespace fedsim
