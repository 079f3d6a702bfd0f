#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <set>
#include <stdexcept>

#include "fedsim/partition.hpp"
#include "fedsim/rng.hpp"

using namespace fedsim;

TEST_CASE("balanced partition splits evenly") {
  PartitionSpec spec;
  const Partition part = make_partition(26, 13, spec, 1);
  REQUIRE(part.client_shares.size() == 13);
  for (auto s : part.client_shares) CHECK(s == 2);
}

TEST_CASE("balanced partition spreads a remainder") {
  PartitionSpec spec;
  const Partition part = make_partition(30, 4, spec, 1);
  std::uint64_t total = 0;
  for (auto s : part.client_shares) {
    CHECK(s >= 7);
    CHECK(s <= 8);
    total += s;
  }
  CHECK(total == 30);
}

TEST_CASE("the reference 13-client share list reproduces itself at n=242") {
  PartitionSpec spec;
  spec.kind = PartitionKind::explicit_list;
  spec.shares = reference_shares_13();
  REQUIRE(spec.shares.size() == 13);
  CHECK(std::accumulate(spec.shares.begin(), spec.shares.end(), 0ull) == 242);
  const Partition part = make_partition(242, 13, spec, 7);
  CHECK(part.client_shares == reference_shares_13());
  CHECK(part.client_shares[0] == 77);  // the slowest-client share
}

TEST_CASE("explicit shares scale to other dataset sizes") {
  PartitionSpec spec;
  spec.kind = PartitionKind::explicit_list;
  spec.shares = reference_shares_13();
  const Partition part = make_partition(121, 13, spec, 7);
  CHECK(std::accumulate(part.client_shares.begin(), part.client_shares.end(), 0ull) ==
        121);
  // Largest client keeps roughly its 31.8% share.
  CHECK(part.client_shares[0] >= 37);
  CHECK(part.client_shares[0] <= 40);
  for (auto s : part.client_shares) CHECK(s >= 1);
}

TEST_CASE("powerlaw partition hits the requested largest share") {
  PartitionSpec spec;
  spec.kind = PartitionKind::powerlaw;
  spec.largest_share = 0.318;  // the reference imbalance: 77 of 242
  const Partition part = make_partition(242, 13, spec, 3);
  const double frac = static_cast<double>(part.client_shares[0]) / 242.0;
  CHECK(frac == doctest::Approx(0.318).epsilon(0.02));
  for (std::size_t c = 1; c < 13; ++c) {
    CHECK(part.client_shares[c] <= part.client_shares[c - 1]);
  }
}

TEST_CASE("partitions are disjoint and cover the dataset") {
  Rng rng(99);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t k = 1 + rng.bounded(16);
    const std::size_t n = k + rng.bounded(300);
    PartitionSpec spec;
    switch (rng.bounded(3)) {
      case 0: spec.kind = PartitionKind::balanced; break;
      case 1:
        spec.kind = PartitionKind::powerlaw;
        spec.largest_share =
            std::min(0.95, 1.0 / static_cast<double>(k) + 0.5 * rng.uniform());
        break;
      default:
        spec.kind = PartitionKind::explicit_list;
        spec.shares.clear();
        for (std::size_t c = 0; c < k; ++c) spec.shares.push_back(1 + rng.bounded(40));
        break;
    }
    const Partition part = make_partition(n, k, spec, rng.next_u64());
    // Set-union oracle: sizes match shares, indices unique, union covers.
    std::set<std::size_t> seen;
    std::uint64_t total = 0;
    for (std::size_t c = 0; c < k; ++c) {
      CHECK(part.assignments[c].size() == part.client_shares[c]);
      CHECK(part.client_shares[c] >= 1);
      total += part.client_shares[c];
      for (std::size_t idx : part.assignments[c]) {
        CHECK(idx < n);
        CHECK(seen.insert(idx).second);
      }
    }
    CHECK(total == n);
    CHECK(seen.size() == n);
  }
}

TEST_CASE("partition assignment is deterministic in the seed") {
  PartitionSpec spec;
  spec.kind = PartitionKind::powerlaw;
  spec.largest_share = 0.4;
  const Partition a = make_partition(100, 7, spec, 42);
  const Partition b = make_partition(100, 7, spec, 42);
  const Partition c = make_partition(100, 7, spec, 43);
  CHECK(a.assignments == b.assignments);
  CHECK(a.assignments != c.assignments);
  CHECK(a.client_shares == c.client_shares);  // shares ignore the seed
}

TEST_CASE("infeasible partitions are rejected") {
  PartitionSpec spec;
  CHECK_THROWS_AS(make_partition(5, 6, spec, 1), std::invalid_argument);
  spec.kind = PartitionKind::explicit_list;
  spec.shares = {1, 2};
  CHECK_THROWS_AS(make_partition(10, 3, spec, 1), std::invalid_argument);
  spec.kind = PartitionKind::powerlaw;
  spec.largest_share = 1.5;
  CHECK_THROWS_AS(make_partition(10, 3, spec, 1), std::invalid_argument);
}
