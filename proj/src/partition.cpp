#include "fedsim/partition.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "fedsim/rng.hpp"

namespace fedsim {

const char* to_string(PartitionKind kind) {
  switch (kind) {
    case PartitionKind::balanced: return "balanced";
    case PartitionKind::powerlaw: return "powerlaw";
    case PartitionKind::explicit_list: return "explicit";
  }
  return "?";
}

PartitionKind partition_kind_from_string(const std::string& name) {
  if (name == "balanced") return PartitionKind::balanced;
  if (name == "powerlaw") return PartitionKind::powerlaw;
  if (name == "explicit") return PartitionKind::explicit_list;
  throw std::invalid_argument("unknown partition kind: " + name);
}

const std::vector<std::uint64_t>& reference_shares_13() {
  static const std::vector<std::uint64_t> shares = {77, 30, 25, 22, 18, 15, 13,
                                                    11, 9,  8,  6,  5,  3};
  return shares;
}

namespace {

// Largest-remainder scaling of weights to integer shares summing to n,
// every share at least 1.
std::vector<std::uint64_t> scale_shares(const std::vector<double>& weights,
                                        std::size_t n) {
  const std::size_t k = weights.size();
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (!(total > 0.0)) throw std::invalid_argument("partition: weights must be positive");
  std::vector<std::uint64_t> shares(k);
  std::vector<std::pair<double, std::size_t>> remainders(k);
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const double exact = static_cast<double>(n) * weights[i] / total;
    shares[i] = static_cast<std::uint64_t>(std::floor(exact));
    remainders[i] = {exact - std::floor(exact), i};
    assigned += shares[i];
  }
  // Hand out the remainder by largest fractional part, ties to lower index.
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t r = 0; assigned < n; ++r) {
    shares[remainders[r % k].second] += 1;
    assigned += 1;
  }
  // Enforce the every-share >= 1 invariant by stealing from the largest.
  for (std::size_t i = 0; i < k; ++i) {
    while (shares[i] < 1) {
      const std::size_t donor =
          std::max_element(shares.begin(), shares.end()) - shares.begin();
      if (shares[donor] <= 1) throw std::invalid_argument("partition: shares infeasible");
      shares[donor] -= 1;
      shares[i] += 1;
    }
  }
  return shares;
}

// Power-law weights i^(-alpha); alpha is chosen by bisection so the largest
// client holds the requested fraction.
std::vector<double> powerlaw_weights(std::size_t k, double largest_share) {
  if (k == 1) return {1.0};
  if (!(largest_share >= 1.0 / static_cast<double>(k) && largest_share < 1.0)) {
    throw std::invalid_argument("partition: largest_share out of [1/K, 1)");
  }
  auto top_fraction = [k](double alpha) {
    double sum = 0.0;
    for (std::size_t i = 1; i <= k; ++i) {
      sum += std::pow(static_cast<double>(i), -alpha);
    }
    return 1.0 / sum;
  };
  double lo = 0.0, hi = 64.0;
  for (int iter = 0; iter < 200; ++iter) {
    const double mid = 0.5 * (lo + hi);
    if (top_fraction(mid) < largest_share) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  const double alpha = 0.5 * (lo + hi);
  std::vector<double> weights(k);
  for (std::size_t i = 0; i < k; ++i) {
    weights[i] = std::pow(static_cast<double>(i + 1), -alpha);
  }
  return weights;
}

}  // namespace

Partition make_partition(std::size_t n_examples, std::size_t num_clients,
                         const PartitionSpec& spec, std::uint64_t seed) {
  if (num_clients < 1) throw std::invalid_argument("partition: K must be >= 1");
  if (n_examples < num_clients) {
    throw std::invalid_argument("partition: need at least one example per client");
  }
  Partition part;
  switch (spec.kind) {
    case PartitionKind::balanced: {
      std::vector<double> weights(num_clients, 1.0);
      part.client_shares = scale_shares(weights, n_examples);
      break;
    }
    case PartitionKind::powerlaw:
      part.client_shares =
          scale_shares(powerlaw_weights(num_clients, spec.largest_share), n_examples);
      break;
    case PartitionKind::explicit_list: {
      if (spec.shares.size() != num_clients) {
        throw std::invalid_argument("partition: explicit share list length != K");
      }
      std::vector<double> weights(num_clients);
      for (std::size_t i = 0; i < num_clients; ++i) {
        if (spec.shares[i] < 1) throw std::invalid_argument("partition: zero share");
        weights[i] = static_cast<double>(spec.shares[i]);
      }
      part.client_shares = scale_shares(weights, n_examples);
      break;
    }
  }

  std::vector<std::size_t> order(n_examples);
  std::iota(order.begin(), order.end(), 0u);
  Rng rng(derive_seed(seed, "partition"));
  rng.shuffle(order);
  part.assignments.resize(num_clients);
  std::size_t offset = 0;
  for (std::size_t c = 0; c < num_clients; ++c) {
    part.assignments[c].assign(order.begin() + offset,
                               order.begin() + offset + part.client_shares[c]);
    offset += part.client_shares[c];
  }
  return part;
}

}  // namespace fedsim
