#include "fedsim/dataset.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace fedsim {

Batch Dataset::gather(const std::vector<std::size_t>& order, std::size_t first,
                      std::size_t count) const {
  Batch b;
  b.batch_size = count;
  b.input_dim = input_dim;
  b.target_dim = target_dim;
  b.inputs.reserve(count * input_dim);
  b.targets.reserve(count * target_dim);
  for (std::size_t i = 0; i < count; ++i) {
    const Example& ex = examples.at(order.at(first + i));
    b.inputs.insert(b.inputs.end(), ex.input.begin(), ex.input.end());
    b.targets.insert(b.targets.end(), ex.target.begin(), ex.target.end());
  }
  return b;
}

Batch Dataset::as_batch() const {
  Batch b;
  b.batch_size = examples.size();
  b.input_dim = input_dim;
  b.target_dim = target_dim;
  for (const Example& ex : examples) {
    b.inputs.insert(b.inputs.end(), ex.input.begin(), ex.input.end());
    b.targets.insert(b.targets.end(), ex.target.begin(), ex.target.end());
  }
  return b;
}

namespace {

SynthDataset make_linear(const SynthSpec& spec, Rng& rng, std::size_t n) {
  const std::size_t d = spec.input_dim;
  SynthDataset out;
  out.data.input_dim = d;
  out.data.target_dim = 1;
  ParamVector w(d + 1);
  for (std::size_t j = 0; j <= d; ++j) w[j] = rng.uniform(-1.0, 1.0);
  out.generating_params = w;
  out.data.examples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Example ex;
    ex.input.resize(d);
    double y = w[d];
    for (std::size_t j = 0; j < d; ++j) {
      ex.input[j] = rng.normal();
      y += w[j] * ex.input[j];
    }
    ex.target = {y + spec.noise * rng.normal()};
    out.data.examples.push_back(std::move(ex));
  }
  return out;
}

SynthDataset make_classifier(const SynthSpec& spec, Rng& rng, std::size_t n) {
  const std::size_t d = spec.input_dim;
  const std::size_t classes = spec.output_dim;
  SynthDataset out;
  out.data.input_dim = d;
  out.data.target_dim = classes;
  // Class means drawn once, pushed apart so the task is learnable but the
  // observation noise still leaves a few hard examples.
  std::vector<std::vector<double>> means(classes, std::vector<double>(d));
  for (auto& m : means) {
    for (double& v : m) v = rng.uniform(-1.0, 1.0) * 1.5;
  }
  out.data.examples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = static_cast<std::size_t>(rng.bounded(classes));
    Example ex;
    ex.input.resize(d);
    for (std::size_t j = 0; j < d; ++j) {
      ex.input[j] = means[c][j] + (0.35 + spec.noise) * rng.normal();
    }
    ex.target.assign(classes, 0.0);
    ex.target[c] = 1.0;
    out.data.examples.push_back(std::move(ex));
  }
  return out;
}

// Procedural "images": a bright blob at a random position over a noisy
// background; the mask marks pixels inside the blob radius.
SynthDataset make_segmenter(const SynthSpec& spec, Rng& rng, std::size_t n) {
  const std::size_t g = spec.grid_size;
  const std::size_t pixels = g * g;
  SynthDataset out;
  out.data.input_dim = pixels;
  out.data.target_dim = pixels;
  out.data.examples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double cx = rng.uniform(1.0, static_cast<double>(g) - 2.0);
    const double cy = rng.uniform(1.0, static_cast<double>(g) - 2.0);
    const double radius = rng.uniform(1.1, 1.9);
    Example ex;
    ex.input.resize(pixels);
    ex.target.resize(pixels);
    for (std::size_t r = 0; r < g; ++r) {
      for (std::size_t c = 0; c < g; ++c) {
        const double dx = static_cast<double>(c) - cx;
        const double dy = static_cast<double>(r) - cy;
        const double dist2 = dx * dx + dy * dy;
        const double bump = std::exp(-dist2 / (2.0 * 0.8 * radius * radius));
        ex.input[r * g + c] = bump + spec.noise * rng.normal();
        ex.target[r * g + c] = dist2 <= radius * radius ? 1.0 : 0.0;
      }
    }
    out.data.examples.push_back(std::move(ex));
  }
  return out;
}

}  // namespace

SynthDataset synth_dataset(const SynthSpec& spec, std::uint64_t seed,
                           std::size_t n_examples) {
  if (n_examples == 0) throw std::invalid_argument("synth_dataset: n must be >= 1");
  Rng rng(derive_seed(seed, "data", static_cast<std::uint64_t>(spec.kind)));
  SynthDataset out;
  switch (spec.kind) {
    case ModelKind::linear_regression:
      out = make_linear(spec, rng, n_examples);
      break;
    case ModelKind::logistic_classifier:
      out = make_classifier(spec, rng, n_examples);
      break;
    case ModelKind::mlp_softdice_segmenter:
      out = make_segmenter(spec, rng, n_examples);
      break;
    default:
      throw std::invalid_argument("synth_dataset: unknown kind");
  }
  if (spec.feature_shift != 0.0) apply_feature_shift(out.data, spec.feature_shift);
  return out;
}

void apply_feature_shift(Dataset& data, double shift) {
  for (Example& ex : data.examples) {
    for (double& v : ex.input) v += shift;
  }
}

void apply_feature_shift(Dataset& data, const std::vector<double>& per_dim) {
  if (per_dim.size() != data.input_dim) {
    throw std::invalid_argument("apply_feature_shift: offset length mismatch");
  }
  for (Example& ex : data.examples) {
    for (std::size_t j = 0; j < per_dim.size(); ++j) ex.input[j] += per_dim[j];
  }
}

namespace {

constexpr char kDatasetMagic[4] = {'F', 'S', 'D', 'S'};
constexpr std::uint8_t kDatasetVersion = 1;

void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& buf, double v) {
  const std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

double get_f64(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace

void save_dataset(const Dataset& data, const std::string& path) {
  std::string buf;
  buf.append(kDatasetMagic, 4);
  buf.push_back(static_cast<char>(kDatasetVersion));
  put_u32(buf, static_cast<std::uint32_t>(data.examples.size()));
  put_u32(buf, static_cast<std::uint32_t>(data.input_dim));
  put_u32(buf, static_cast<std::uint32_t>(data.target_dim));
  for (const Example& ex : data.examples) {
    for (double v : ex.input) put_f64(buf, v);
    for (double v : ex.target) put_f64(buf, v);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("save_dataset: cannot open " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw std::runtime_error("save_dataset: write failed: " + path);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_dataset: cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(in)),
                  std::istreambuf_iterator<char>());
  if (buf.size() < 17 || std::memcmp(buf.data(), kDatasetMagic, 4) != 0) {
    throw std::runtime_error("load_dataset: bad magic: " + path);
  }
  const auto* p = reinterpret_cast<const unsigned char*>(buf.data());
  if (p[4] != kDatasetVersion) {
    throw std::runtime_error("load_dataset: unsupported version");
  }
  const std::uint32_t n = get_u32(p + 5);
  const std::uint32_t in_dim = get_u32(p + 9);
  const std::uint32_t tg_dim = get_u32(p + 13);
  const std::size_t need =
      17 + static_cast<std::size_t>(n) * (in_dim + tg_dim) * 8;
  if (buf.size() != need) throw std::runtime_error("load_dataset: truncated file");
  Dataset data;
  data.input_dim = in_dim;
  data.target_dim = tg_dim;
  data.examples.resize(n);
  std::size_t off = 17;
  for (auto& ex : data.examples) {
    ex.input.resize(in_dim);
    ex.target.resize(tg_dim);
    for (auto& v : ex.input) { v = get_f64(p + off); off += 8; }
    for (auto& v : ex.target) { v = get_f64(p + off); off += 8; }
  }
  return data;
}

}  // namespace fedsim
