#pragma once

#include <array>
#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "fedin/errors.hpp"

namespace fedin {

enum class ParamGroup : int { Extractor = 0, Intermediate = 1, Classifier = 2 };

inline const char* group_name(ParamGroup g) {
    switch (g) {
        case ParamGroup::Extractor: return "extractor";
        case ParamGroup::Intermediate: return "intermediate";
        case ParamGroup::Classifier: return "classifier";
    }
    return "?";
}

// Where each named parameter's flattened gradient lives inside its group.
struct LayoutEntry {
    ParamGroup group;
    std::string name;
    size_t offset;
    size_t length;

    bool operator==(const LayoutEntry&) const = default;
};

struct GradientLayout {
    std::array<size_t, 3> group_sizes{0, 0, 0};
    std::vector<LayoutEntry> entries;

    bool operator==(const GradientLayout&) const = default;
};

// Per-group flattened gradients. Stored in 64-bit regardless of the training
// precision; the resolver's correctness guarantees are stated in doubles.
struct GradientSet {
    std::shared_ptr<const GradientLayout> layout;
    std::array<std::vector<double>, 3> groups;

    GradientSet() = default;

    explicit GradientSet(std::shared_ptr<const GradientLayout> l) : layout(std::move(l)) {
        for (int g = 0; g < 3; ++g) groups[g].assign(layout->group_sizes[g], 0.0);
    }

    std::vector<double>& group(ParamGroup g) { return groups[static_cast<int>(g)]; }
    const std::vector<double>& group(ParamGroup g) const { return groups[static_cast<int>(g)]; }

    size_t total_size() const {
        return groups[0].size() + groups[1].size() + groups[2].size();
    }

    // Concatenated view in group order; used by the oracle and the tests.
    std::vector<double> flattened() const {
        std::vector<double> flat;
        flat.reserve(total_size());
        for (const auto& g : groups) flat.insert(flat.end(), g.begin(), g.end());
        return flat;
    }
};

inline void require_same_layout(const GradientSet& a, const GradientSet& b, const char* where) {
    const bool ok = a.layout && b.layout &&
                    (a.layout == b.layout || *a.layout == *b.layout);
    if (!ok) throw ContractError(std::string(where) + ": gradient layouts differ");
}

}  // namespace fedin
