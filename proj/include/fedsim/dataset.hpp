// Synthetic datasets standing in for real training data, plus a binary
// snapshot format for reproducible experiments.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedsim/model.hpp"

namespace fedsim {

struct Example {
  std::vector<double> input;
  std::vector<double> target;
};

struct Dataset {
  std::size_t input_dim = 0;
  std::size_t target_dim = 0;
  std::vector<Example> examples;

  std::size_t size() const { return examples.size(); }

  // One batch over the given example indices.
  Batch gather(const std::vector<std::size_t>& order, std::size_t first,
               std::size_t count) const;
  // All examples in stored order; used for evaluation.
  Batch as_batch() const;
};

struct SynthDataset {
  Dataset data;
  // Ground truth for the linear kind (generating weights then bias);
  // empty for the other kinds.
  ParamVector generating_params;
};

struct SynthSpec {
  ModelKind kind = ModelKind::linear_regression;
  std::size_t input_dim = 8;    // segmenter: grid_size^2 overrides this
  std::size_t output_dim = 1;   // classes for the classifier
  std::size_t grid_size = 6;    // segmenter images are grid_size x grid_size
  double noise = 0.05;          // observation noise level
  double feature_shift = 0.0;   // additive input shift (domain shift knob)
};

// Deterministic for fixed (spec, seed, n): same arguments give bit-identical
// examples. n must be >= 1.
SynthDataset synth_dataset(const SynthSpec& spec, std::uint64_t seed,
                           std::size_t n_examples);

// Additive input shift applied in place; targets are left untouched so the
// task is unchanged while the feature distribution moves. The second form
// shifts each input dimension by its own offset.
void apply_feature_shift(Dataset& data, double shift);
void apply_feature_shift(Dataset& data, const std::vector<double>& per_dim);

// Snapshot format: magic "FSDS", u8 version, u32 n, u32 input_dim,
// u32 target_dim, then per example inputs and targets as little-endian f64.
void save_dataset(const Dataset& data, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace fedsim
