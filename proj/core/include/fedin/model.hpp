#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "fedin/arch.hpp"
#include "fedin/gradient.hpp"
#include "fedin/graph.hpp"
#include "fedin/rng.hpp"
#include "fedin/tensor.hpp"

namespace fedin {

template <typename T>
struct NamedParam {
    ParamGroup group;
    std::string name;
    Tensor<T> tensor;
};

// A client model split into extractor / intermediate / classifier parameter
// groups. Parameter order is fixed at construction and shared with the
// gradient layout, so gradient sets from any two models of the same ArchSpec
// shape family align.
template <typename T>
struct SplitModel {
    ArchSpec arch;
    std::vector<NamedParam<T>> params;
    std::shared_ptr<const GradientLayout> layout;

    Tensor<T>& param(const std::string& name) {
        for (auto& p : params)
            if (p.name == name) return p.tensor;
        throw ContractError("model has no parameter '" + name + "'");
    }
    const Tensor<T>& param(const std::string& name) const {
        for (const auto& p : params)
            if (p.name == name) return p.tensor;
        throw ContractError("model has no parameter '" + name + "'");
    }

    template <typename U>
    SplitModel<U> cast() const {
        SplitModel<U> out;
        out.arch = arch;
        out.layout = layout;
        out.params.reserve(params.size());
        for (const auto& p : params)
            out.params.push_back({p.group, p.name, p.tensor.template cast<U>()});
        return out;
    }
};

// Per-batch capture of the three stage outputs. All tensors are plain values
// detached from any graph.
template <typename T>
struct ForwardCapture {
    Tensor<T> logits;
    Tensor<T> s_in;
    Tensor<T> s_out;
};

namespace detail {

inline std::shared_ptr<const GradientLayout> make_layout(
    const std::vector<std::pair<ParamGroup, std::pair<std::string, size_t>>>& specs) {
    auto layout = std::make_shared<GradientLayout>();
    for (const auto& [group, named] : specs) {
        const int g = static_cast<int>(group);
        layout->entries.push_back({group, named.first, layout->group_sizes[g], named.second});
        layout->group_sizes[g] += named.second;
    }
    return layout;
}

}  // namespace detail

// Deterministic fan-in-scaled uniform initialization; every parameter draws
// from its own stream keyed by (seed, variant, parameter name).
template <typename T>
SplitModel<T> build_model(const ArchSpec& arch, uint64_t seed) {
    SplitModel<T> model;
    model.arch = arch;

    auto add = [&](ParamGroup group, const std::string& name, std::vector<int> shape,
                   int fan_in, bool is_bias) {
        Tensor<T> t(std::move(shape));
        Rng rng(derive_seed(seed, name, static_cast<uint64_t>(arch.variant)));
        const double bound = is_bias ? 1.0 / std::sqrt(static_cast<double>(fan_in))
                                     : std::sqrt(6.0 / static_cast<double>(fan_in));
        for (auto& v : t.values) v = static_cast<T>(rng.uniform(-bound, bound));
        model.params.push_back({group, name, std::move(t)});
    };

    const int f_in = arch.feature_dim_in;
    const int f_out = arch.feature_dim_out;
    const int depth = arch.depth();

    if (arch.mode == ModelMode::Mlp) {
        add(ParamGroup::Extractor, "e.w", {arch.input_dim, f_in}, arch.input_dim, false);
        add(ParamGroup::Extractor, "e.b", {f_in}, arch.input_dim, true);
        int width = f_in;
        for (int j = 0; j < depth; ++j) {
            const std::string base = "in." + std::to_string(j);
            add(ParamGroup::Intermediate, base + ".w", {width, f_out}, width, false);
            add(ParamGroup::Intermediate, base + ".b", {f_out}, width, true);
            width = f_out;
        }
    } else {
        const int cc = arch.conv_channels;
        const int fan_e = arch.in_channels * 9;
        add(ParamGroup::Extractor, "e.w", {cc, arch.in_channels, 3, 3}, fan_e, false);
        add(ParamGroup::Extractor, "e.b", {cc}, fan_e, true);
        const int fan_c = cc * 9;
        for (int j = 0; j < depth - 1; ++j) {
            const std::string base = "in." + std::to_string(j);
            add(ParamGroup::Intermediate, base + ".w", {cc, cc, 3, 3}, fan_c, false);
            add(ParamGroup::Intermediate, base + ".b", {cc}, fan_c, true);
        }
        const std::string base = "in." + std::to_string(depth - 1);
        add(ParamGroup::Intermediate, base + ".w", {f_in, f_out}, f_in, false);
        add(ParamGroup::Intermediate, base + ".b", {f_out}, f_in, true);
    }
    add(ParamGroup::Classifier, "c.w", {f_out, arch.num_classes}, f_out, false);
    add(ParamGroup::Classifier, "c.b", {arch.num_classes}, f_out, true);

    std::vector<std::pair<ParamGroup, std::pair<std::string, size_t>>> specs;
    for (const auto& p : model.params)
        specs.push_back({p.group, {p.name, p.tensor.numel()}});
    model.layout = detail::make_layout(specs);
    return model;
}

// One forward (and optionally backward) episode over a model. param_nodes is
// aligned with model.params; -1 marks parameters not in this episode's graph.
template <typename T>
struct ModelTape {
    Graph<T> graph;
    std::vector<NodeId> param_nodes;
    NodeId input = -1;
    NodeId s_in = -1;
    NodeId s_out = -1;
    NodeId logits = -1;

    const Tensor<T>& value(NodeId id) const { return graph.out(id); }
};

namespace detail {

template <typename T>
int param_index(const SplitModel<T>& model, const std::string& name) {
    for (size_t i = 0; i < model.params.size(); ++i)
        if (model.params[i].name == name) return static_cast<int>(i);
    throw ContractError("model has no parameter '" + name + "'");
}

template <typename T>
NodeId tape_param(const SplitModel<T>& model, ModelTape<T>& tape, const std::string& name,
                  bool with_grad) {
    const int idx = param_index(model, name);
    if (tape.param_nodes[idx] < 0)
        tape.param_nodes[idx] = tape.graph.leaf(model.params[idx].tensor, with_grad);
    return tape.param_nodes[idx];
}

template <typename T>
NodeId build_extractor(const SplitModel<T>& model, ModelTape<T>& tape, NodeId x,
                       bool with_grad) {
    auto& g = tape.graph;
    const NodeId w = tape_param(model, tape, "e.w", with_grad);
    const NodeId b = tape_param(model, tape, "e.b", with_grad);
    if (model.arch.mode == ModelMode::Mlp) {
        return g.relu(g.affine(x, w, b));
    }
    return g.flatten(g.relu(g.conv2d(x, w, b, /*stride=*/2, /*pad=*/1)));
}

template <typename T>
NodeId build_intermediate(const SplitModel<T>& model, ModelTape<T>& tape, NodeId s_in,
                          bool with_grad) {
    auto& g = tape.graph;
    const ArchSpec& arch = model.arch;
    const int depth = arch.depth();
    NodeId h = s_in;
    if (arch.mode == ModelMode::Mlp) {
        for (int j = 0; j < depth; ++j) {
            const std::string base = "in." + std::to_string(j);
            const NodeId w = tape_param(model, tape, base + ".w", with_grad);
            const NodeId b = tape_param(model, tape, base + ".b", with_grad);
            h = g.affine(h, w, b);
            if (j + 1 < depth) h = g.relu(h);
        }
        return h;
    }
    const int batch = g.out(s_in).shape[0];
    h = g.reshape(s_in, {batch, arch.conv_channels, arch.extractor_out_h(), arch.extractor_out_w()});
    for (int j = 0; j < depth - 1; ++j) {
        const std::string base = "in." + std::to_string(j);
        const NodeId w = tape_param(model, tape, base + ".w", with_grad);
        const NodeId b = tape_param(model, tape, base + ".b", with_grad);
        h = g.relu(g.conv2d(h, w, b, /*stride=*/1, /*pad=*/1));
    }
    const std::string base = "in." + std::to_string(depth - 1);
    const NodeId w = tape_param(model, tape, base + ".w", with_grad);
    const NodeId b = tape_param(model, tape, base + ".b", with_grad);
    return g.affine(g.flatten(h), w, b);
}

template <typename T>
NodeId build_classifier(const SplitModel<T>& model, ModelTape<T>& tape, NodeId s_out,
                        bool with_grad) {
    const NodeId w = tape_param(model, tape, "c.w", with_grad);
    const NodeId b = tape_param(model, tape, "c.b", with_grad);
    return tape.graph.affine(s_out, w, b);
}

template <typename T>
void check_input_shape(const ArchSpec& arch, const Tensor<T>& x) {
    if (arch.mode == ModelMode::Mlp) {
        if (x.shape.size() != 2 || x.shape[1] != arch.input_dim) {
            throw DimensionError("model input " + shape_str(x.shape) + " does not match [B," +
                                 std::to_string(arch.input_dim) + "]");
        }
    } else {
        if (x.shape.size() != 4 || x.shape[1] != arch.in_channels || x.shape[2] != arch.in_h ||
            x.shape[3] != arch.in_w) {
            throw DimensionError("model input " + shape_str(x.shape) + " does not match [B," +
                                 std::to_string(arch.in_channels) + "," +
                                 std::to_string(arch.in_h) + "," + std::to_string(arch.in_w) +
                                 "]");
        }
    }
}

}  // namespace detail

// Full three-stage forward on a fresh tape.
template <typename T>
ModelTape<T> tape_full(const SplitModel<T>& model, const Tensor<T>& x, bool with_grad) {
    detail::check_input_shape(model.arch, x);
    ModelTape<T> tape;
    tape.param_nodes.assign(model.params.size(), -1);
    tape.input = tape.graph.leaf(x, false);
    tape.s_in = detail::build_extractor(model, tape, tape.input, with_grad);
    tape.s_out = detail::build_intermediate(model, tape, tape.s_in, with_grad);
    tape.logits = detail::build_classifier(model, tape, tape.s_out, with_grad);
    return tape;
}

// Intermediate stage only, with s_in as the (constant) input. Extractor and
// classifier parameters never enter this graph.
template <typename T>
ModelTape<T> tape_intermediate(const SplitModel<T>& model, const Tensor<T>& s_in,
                               bool with_grad) {
    if (s_in.shape.size() != 2 || s_in.shape[1] != model.arch.feature_dim_in) {
        throw DimensionError("s_in " + shape_str(s_in.shape) + " does not match [B," +
                             std::to_string(model.arch.feature_dim_in) + "]");
    }
    ModelTape<T> tape;
    tape.param_nodes.assign(model.params.size(), -1);
    tape.input = tape.graph.leaf(s_in, false);
    tape.s_out = detail::build_intermediate(model, tape, tape.input, with_grad);
    return tape;
}

template <typename T>
ForwardCapture<T> forward_full(const SplitModel<T>& model, const Tensor<T>& x) {
    ModelTape<T> tape = tape_full(model, x, false);
    ForwardCapture<T> cap;
    cap.logits = tape.value(tape.logits);
    cap.s_in = tape.value(tape.s_in);
    cap.s_out = tape.value(tape.s_out);
    cap.logits.grad.clear();
    cap.s_in.grad.clear();
    cap.s_out.grad.clear();
    return cap;
}

template <typename T>
Tensor<T> forward_extractor(const SplitModel<T>& model, const Tensor<T>& x) {
    detail::check_input_shape(model.arch, x);
    ModelTape<T> tape;
    tape.param_nodes.assign(model.params.size(), -1);
    tape.input = tape.graph.leaf(x, false);
    return tape.value(detail::build_extractor(model, tape, tape.input, false));
}

template <typename T>
Tensor<T> forward_intermediate(const SplitModel<T>& model, const Tensor<T>& s_in) {
    ModelTape<T> tape = tape_intermediate(model, s_in, false);
    return tape.value(tape.s_out);
}

template <typename T>
Tensor<T> forward_classifier(const SplitModel<T>& model, const Tensor<T>& s_out) {
    if (s_out.shape.size() != 2 || s_out.shape[1] != model.arch.feature_dim_out) {
        throw DimensionError("s_out " + shape_str(s_out.shape) + " does not match [B," +
                             std::to_string(model.arch.feature_dim_out) + "]");
    }
    ModelTape<T> tape;
    tape.param_nodes.assign(model.params.size(), -1);
    tape.input = tape.graph.leaf(s_out, false);
    return tape.value(detail::build_classifier(model, tape, tape.input, false));
}

// Fraction of rows whose argmax logit matches the label. Ties pick the lowest
// class index. Runs in fixed-size batches so memory stays flat.
template <typename T>
double evaluate(const SplitModel<T>& model, const Tensor<T>& inputs,
                const std::vector<int>& labels, int batch_size = 256) {
    const int n = inputs.shape.empty() ? 0 : inputs.shape[0];
    if (n == 0) throw ValidationError("evaluate called with an empty input batch");
    if (static_cast<int>(labels.size()) != n) {
        throw DimensionError("evaluate got " + std::to_string(labels.size()) + " labels for " +
                             std::to_string(n) + " inputs");
    }
    if (batch_size <= 0) throw ValidationError("evaluate batch_size must be positive");
    const size_t row = inputs.numel() / static_cast<size_t>(n);
    int correct = 0;
    for (int start = 0; start < n; start += batch_size) {
        const int count = std::min(batch_size, n - start);
        std::vector<int> shape = inputs.shape;
        shape[0] = count;
        Tensor<T> batch(shape);
        std::copy(inputs.values.begin() + static_cast<size_t>(start) * row,
                  inputs.values.begin() + static_cast<size_t>(start + count) * row,
                  batch.values.begin());
        ModelTape<T> tape = tape_full(model, batch, false);
        const Tensor<T>& logits = tape.value(tape.logits);
        const int classes = logits.shape[1];
        for (int r = 0; r < count; ++r) {
            int best = 0;
            for (int c = 1; c < classes; ++c)
                if (logits.at(r, c) > logits.at(r, best)) best = c;
            if (best == labels[start + r]) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

// Copies graph gradients into a full-layout GradientSet; parameters absent
// from the tape contribute exact zeros.
template <typename T>
GradientSet collect_gradients(const SplitModel<T>& model, const ModelTape<T>& tape) {
    GradientSet gs(model.layout);
    for (size_t i = 0; i < model.params.size(); ++i) {
        const NodeId node = tape.param_nodes[i];
        if (node < 0) continue;
        const std::vector<T>& g = tape.graph.grad(node);
        if (g.empty()) continue;
        const LayoutEntry& entry = model.layout->entries[i];
        auto& dst = gs.groups[static_cast<int>(entry.group)];
        for (size_t k = 0; k < entry.length; ++k)
            dst[entry.offset + k] = static_cast<double>(g[k]);
    }
    return gs;
}

}  // namespace fedin
