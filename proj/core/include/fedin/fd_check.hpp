#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>

#include "fedin/model.hpp"

namespace fedin {

// Which loss the gradient check differentiates.
enum class CheckLoss {
    CrossEntropyFull,     // full forward, softmax cross-entropy on logits
    MseIntermediate,      // intermediate stage only, mse against a target
};

struct FdCheckResult {
    double max_rel_error = 0.0;
    std::string worst_param;
    size_t worst_index = 0;
};

namespace detail {

inline double fd_loss(const SplitModel<double>& model, CheckLoss which, const Tensor<double>& x,
                      const std::vector<int>& labels, const Tensor<double>& target) {
    if (which == CheckLoss::CrossEntropyFull) {
        ModelTape<double> tape = tape_full(model, x, false);
        Graph<double>& g = tape.graph;
        const NodeId loss = g.softmax_cross_entropy(tape.logits, labels);
        return g.out(loss).values[0];
    }
    ModelTape<double> tape = tape_intermediate(model, x, false);
    Graph<double>& g = tape.graph;
    const NodeId loss = g.mse_loss(tape.s_out, target);
    return g.out(loss).values[0];
}

}  // namespace detail

// Compares backward-pass gradients against central finite differences. The
// difference quotient always runs in double precision: perturbations of 1e-5
// vanish in float32 arithmetic, so the model is promoted for the forward
// evaluations while the analytic gradient keeps the model's own precision.
template <typename T>
FdCheckResult finite_difference_check(const SplitModel<T>& model, CheckLoss which,
                                      const Tensor<T>& x, const std::vector<int>& labels,
                                      const Tensor<T>& target, double eps = 1e-5) {
    GradientSet analytic(model.layout);
    if (which == CheckLoss::CrossEntropyFull) {
        ModelTape<T> tape = tape_full(model, x, true);
        const NodeId loss = tape.graph.softmax_cross_entropy(tape.logits, labels);
        tape.graph.backward(loss);
        analytic = collect_gradients(model, tape);
    } else {
        ModelTape<T> tape = tape_intermediate(model, x, true);
        const NodeId loss = tape.graph.mse_loss(tape.s_out, target);
        tape.graph.backward(loss);
        analytic = collect_gradients(model, tape);
    }

    SplitModel<double> probe = model.template cast<double>();
    const Tensor<double> xd = x.template cast<double>();
    const Tensor<double> td = target.template cast<double>();

    FdCheckResult result;
    for (size_t i = 0; i < probe.params.size(); ++i) {
        const LayoutEntry& entry = probe.layout->entries[i];
        if (which == CheckLoss::MseIntermediate && entry.group != ParamGroup::Intermediate)
            continue;
        auto& values = probe.params[i].tensor.values;
        const auto& grads = analytic.groups[static_cast<int>(entry.group)];
        for (size_t k = 0; k < entry.length; ++k) {
            const double saved = values[k];
            values[k] = saved + eps;
            const double up = detail::fd_loss(probe, which, xd, labels, td);
            values[k] = saved - eps;
            const double down = detail::fd_loss(probe, which, xd, labels, td);
            values[k] = saved;
            const double fd = (up - down) / (2.0 * eps);
            const double bw = grads[entry.offset + k];
            const double denom = std::max({std::abs(fd), std::abs(bw), 1.0});
            const double rel = std::abs(fd - bw) / denom;
            if (rel > result.max_rel_error) {
                result.max_rel_error = rel;
                result.worst_param = entry.name;
                result.worst_index = k;
            }
        }
    }
    return result;
}

}  // namespace fedin
