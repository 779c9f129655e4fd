#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <memory>

#include "fedin/gradient.hpp"
#include "fedin/model.hpp"

namespace fedin {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adaptive-moment optimizer over a model's three parameter groups. Moments
// are tracked per group so shell groups can be reset independently when their
// weights are replaced by a broadcast; each group also keeps its own step
// counter for bias correction.
class Adam {
public:
    Adam(std::shared_ptr<const GradientLayout> layout, AdamConfig cfg = {})
        : cfg_(cfg), layout_(std::move(layout)) {
        for (int g = 0; g < 3; ++g) {
            m_[g].assign(layout_->group_sizes[g], 0.0);
            v_[g].assign(layout_->group_sizes[g], 0.0);
            t_[g] = 0;
        }
    }

    void reset_group(ParamGroup group) {
        const int g = static_cast<int>(group);
        std::fill(m_[g].begin(), m_[g].end(), 0.0);
        std::fill(v_[g].begin(), v_[g].end(), 0.0);
        t_[g] = 0;
    }

    template <typename T>
    void step(SplitModel<T>& model, const GradientSet& grads, double lr) {
        if (!grads.layout || !(grads.layout == layout_ || *grads.layout == *layout_))
            throw ContractError("Adam::step: gradient layout differs from model layout");
        for (int g = 0; g < 3; ++g) t_[g] += 1;
        for (size_t i = 0; i < model.params.size(); ++i) {
            const LayoutEntry& entry = layout_->entries[i];
            const int g = static_cast<int>(entry.group);
            const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_[g]));
            const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_[g]));
            const auto& grad = grads.groups[g];
            auto& values = model.params[i].tensor.values;
            for (size_t k = 0; k < entry.length; ++k) {
                const size_t j = entry.offset + k;
                const double gk = grad[j];
                m_[g][j] = cfg_.beta1 * m_[g][j] + (1.0 - cfg_.beta1) * gk;
                v_[g][j] = cfg_.beta2 * v_[g][j] + (1.0 - cfg_.beta2) * gk * gk;
                const double mhat = m_[g][j] / bc1;
                const double vhat = v_[g][j] / bc2;
                values[k] = static_cast<T>(static_cast<double>(values[k]) -
                                           lr * mhat / (std::sqrt(vhat) + cfg_.eps));
            }
        }
    }

    const AdamConfig& config() const { return cfg_; }

private:
    AdamConfig cfg_;
    std::shared_ptr<const GradientLayout> layout_;
    std::array<std::vector<double>, 3> m_, v_;
    std::array<int64_t, 3> t_{};
};

}  // namespace fedin
