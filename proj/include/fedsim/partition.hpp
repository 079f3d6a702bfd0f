// Client data partitioning: balanced, power-law imbalanced, or an explicit
// share list scaled to the dataset size.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace fedsim {

enum class PartitionKind { balanced, powerlaw, explicit_list };

const char* to_string(PartitionKind kind);
PartitionKind partition_kind_from_string(const std::string& name);

struct PartitionSpec {
  PartitionKind kind = PartitionKind::balanced;
  // powerlaw: fraction of the data held by the largest client, in [1/K, 1).
  double largest_share = 0.32;
  // explicit_list: relative shares, scaled to the dataset size.
  std::vector<std::uint64_t> shares;
};

// Approximates the 13-institution imbalance: sums to 242 with a largest
// client of 77.
const std::vector<std::uint64_t>& reference_shares_13();

struct Partition {
  std::vector<std::uint64_t> client_shares;           // length K, each >= 1
  std::vector<std::vector<std::size_t>> assignments;  // example indices per client

  std::size_t num_clients() const { return client_shares.size(); }
};

// Disjoint covering partition of [0, n) into K shards with share sizes from
// spec; the example-to-client assignment is a seeded shuffle.
Partition make_partition(std::size_t n_examples, std::size_t num_clients,
                         const PartitionSpec& spec, std::uint64_t seed);

}  // namespace fedsim
