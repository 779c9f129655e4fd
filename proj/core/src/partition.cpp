#include "fedin/partition.hpp"

#include <algorithm>
#include <numeric>

#include "fedin/errors.hpp"
#include "fedin/rng.hpp"

namespace fedin {

PartitionKind partition_kind_from_string(const std::string& s) {
    if (s == "iid") return PartitionKind::Iid;
    if (s == "dirichlet") return PartitionKind::Dirichlet;
    throw ConfigError("unknown partition kind '" + s + "'");
}

std::string partition_kind_name(PartitionKind kind) {
    return kind == PartitionKind::Iid ? "iid" : "dirichlet";
}

namespace {

// Converts proportions over K clients into integer counts summing to total,
// flooring first and then handing out the remainder by largest fractional
// part (ties broken toward the lower client index).
std::vector<int> largest_remainder_counts(const std::vector<double>& props, int total) {
    const int k = static_cast<int>(props.size());
    std::vector<int> counts(k);
    std::vector<std::pair<double, int>> fractions(k);
    int assigned = 0;
    for (int i = 0; i < k; ++i) {
        const double exact = props[i] * total;
        counts[i] = static_cast<int>(exact);
        fractions[i] = {exact - counts[i], i};
        assigned += counts[i];
    }
    std::sort(fractions.begin(), fractions.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    for (int r = 0; r < total - assigned; ++r) counts[fractions[r % k].second] += 1;
    return counts;
}

std::vector<std::vector<int>> partition_iid(int n, int k, Rng& rng) {
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    std::vector<std::vector<int>> shards(k);
    const int base = n / k;
    const int extra = n % k;
    int cursor = 0;
    for (int i = 0; i < k; ++i) {
        const int take = base + (i < extra ? 1 : 0);
        shards[i].assign(order.begin() + cursor, order.begin() + cursor + take);
        cursor += take;
    }
    return shards;
}

std::vector<std::vector<int>> partition_dirichlet(const Dataset& ds, int k, double alpha,
                                                  uint64_t seed) {
    std::vector<std::vector<int>> by_class(ds.num_classes);
    for (int i = 0; i < ds.size(); ++i) by_class[ds.labels[i]].push_back(i);

    std::vector<std::vector<int>> shards(k);
    for (int c = 0; c < ds.num_classes; ++c) {
        auto& members = by_class[c];
        if (members.empty()) continue;
        Rng rng(derive_seed(seed, "partition-class", static_cast<uint64_t>(c)));
        rng.shuffle(members);
        std::vector<double> draws(k);
        double sum = 0.0;
        for (int i = 0; i < k; ++i) {
            draws[i] = rng.gamma(alpha);
            sum += draws[i];
        }
        if (sum <= 0.0) {
            std::fill(draws.begin(), draws.end(), 1.0);
            sum = k;
        }
        for (auto& d : draws) d /= sum;
        const std::vector<int> counts =
            largest_remainder_counts(draws, static_cast<int>(members.size()));
        int cursor = 0;
        for (int i = 0; i < k; ++i) {
            shards[i].insert(shards[i].end(), members.begin() + cursor,
                             members.begin() + cursor + counts[i]);
            cursor += counts[i];
        }
    }
    return shards;
}

void repair_empty_shards(std::vector<std::vector<int>>& shards) {
    for (auto& shard : shards) {
        if (!shard.empty()) continue;
        int donor = -1;
        for (int i = 0; i < static_cast<int>(shards.size()); ++i) {
            if (donor < 0 || shards[i].size() > shards[donor].size()) donor = i;
        }
        if (donor < 0 || shards[donor].size() < 2) continue;
        shard.push_back(shards[donor].back());
        shards[donor].pop_back();
    }
}

}  // namespace

std::vector<std::vector<int>> partition(const Dataset& dataset, const PartitionSpec& spec) {
    const int n = dataset.size();
    const int k = spec.num_clients;
    if (k < 1) throw ValidationError("partition needs at least one client");
    if (k > n) {
        throw ValidationError("cannot partition " + std::to_string(n) + " samples across " +
                              std::to_string(k) + " clients");
    }
    std::vector<std::vector<int>> shards;
    if (spec.kind == PartitionKind::Iid) {
        Rng rng(derive_seed(spec.seed, "partition-iid"));
        shards = partition_iid(n, k, rng);
    } else {
        if (spec.alpha <= 0.0) throw ValidationError("dirichlet partition needs alpha > 0");
        shards = partition_dirichlet(dataset, k, spec.alpha, spec.seed);
        repair_empty_shards(shards);
    }
    for (auto& shard : shards) std::sort(shard.begin(), shard.end());
    return shards;
}

}  // namespace fedin
