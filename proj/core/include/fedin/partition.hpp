#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedin/dataset.hpp"

namespace fedin {

enum class PartitionKind { Iid, Dirichlet };

PartitionKind partition_kind_from_string(const std::string& s);
std::string partition_kind_name(PartitionKind kind);

struct PartitionSpec {
    PartitionKind kind = PartitionKind::Iid;
    double alpha = 0.5;
    int num_clients = 1;
    uint64_t seed = 0;

    bool operator==(const PartitionSpec&) const = default;
};

// Splits the dataset into num_clients disjoint index shards covering all of
// {0..N-1}. Iid shuffles then slices near-evenly. Dirichlet draws, per class,
// client proportions from Dirichlet(alpha) and rounds them to counts by
// largest remainder; a client that ends up empty takes one index from the
// largest shard. Shards come back sorted ascending.
std::vector<std::vector<int>> partition(const Dataset& dataset, const PartitionSpec& spec);

}  // namespace fedin
