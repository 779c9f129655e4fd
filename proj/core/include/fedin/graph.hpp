#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "fedin/tensor.hpp"

namespace fedin {

// Reverse-mode autodiff over a record-as-you-go tape. One Graph holds one
// forward episode; backward() walks the tape in reverse. Nodes are appended in
// topological order by construction (an op can only consume already-existing
// ids), and every reduction sums in fixed index order, so re-running an
// identical episode is bit-exact.
//
// Supported ops: affine, relu, conv2d (stride 1/2, zero padding, no dilation),
// reshape/flatten, softmax cross-entropy, mse. That is the full set the split
// models need; there is deliberately no broadcasting and no graph reuse.

enum class OpKind { Leaf, Affine, Relu, Conv2d, Reshape, SoftmaxCrossEntropy, MseLoss };

using NodeId = int;

template <typename T>
class Graph {
public:
    NodeId leaf(Tensor<T> value, bool requires_grad) {
        Node n;
        n.kind = OpKind::Leaf;
        n.out = std::move(value);
        n.needs_grad = requires_grad;
        return push(std::move(n));
    }

    // out[r,c] = b[c] + sum_k x[r,k] * W[k,c]
    NodeId affine(NodeId x, NodeId w, NodeId b) {
        const Tensor<T>& xt = out(x);
        const Tensor<T>& wt = out(w);
        const Tensor<T>& bt = out(b);
        if (xt.shape.size() != 2 || wt.shape.size() != 2 || xt.shape[1] != wt.shape[0]) {
            throw DimensionError("affine: input " + shape_str(xt.shape) +
                                 " incompatible with weight " + shape_str(wt.shape));
        }
        if (bt.shape.size() != 1 || bt.shape[0] != wt.shape[1]) {
            throw DimensionError("affine: bias " + shape_str(bt.shape) +
                                 " incompatible with weight " + shape_str(wt.shape));
        }
        const int rows = xt.shape[0], inner = xt.shape[1], cols = wt.shape[1];
        Node n;
        n.kind = OpKind::Affine;
        n.inputs = {x, w, b};
        n.n_inputs = 3;
        n.out = Tensor<T>({rows, cols});
        for (int r = 0; r < rows; ++r) {
            T* orow = &n.out.values[static_cast<size_t>(r) * cols];
            for (int c = 0; c < cols; ++c) orow[c] = bt.values[c];
            const T* xrow = &xt.values[static_cast<size_t>(r) * inner];
            for (int k = 0; k < inner; ++k) {
                const T xv = xrow[k];
                const T* wrow = &wt.values[static_cast<size_t>(k) * cols];
                for (int c = 0; c < cols; ++c) orow[c] += xv * wrow[c];
            }
        }
        n.needs_grad = needs(x) || needs(w) || needs(b);
        return push(std::move(n));
    }

    NodeId relu(NodeId x) {
        const Tensor<T>& xt = out(x);
        Node n;
        n.kind = OpKind::Relu;
        n.inputs = {x, -1, -1};
        n.n_inputs = 1;
        n.out.shape = xt.shape;
        n.out.values.resize(xt.numel());
        for (size_t i = 0; i < xt.numel(); ++i)
            n.out.values[i] = xt.values[i] > T(0) ? xt.values[i] : T(0);
        n.needs_grad = needs(x);
        return push(std::move(n));
    }

    // x: [B,C,H,W], kernel: [O,C,kh,kw], bias: [O]; zero padding `pad`.
    NodeId conv2d(NodeId x, NodeId kernel, NodeId bias, int stride, int pad) {
        const Tensor<T>& xt = out(x);
        const Tensor<T>& kt = out(kernel);
        const Tensor<T>& bt = out(bias);
        if (xt.shape.size() != 4 || kt.shape.size() != 4 || xt.shape[1] != kt.shape[1]) {
            throw DimensionError("conv2d: input " + shape_str(xt.shape) +
                                 " incompatible with kernel " + shape_str(kt.shape));
        }
        if (stride != 1 && stride != 2) throw ValidationError("conv2d: stride must be 1 or 2");
        if (pad < 0) throw ValidationError("conv2d: negative padding");
        if (bt.shape.size() != 1 || bt.shape[0] != kt.shape[0]) {
            throw DimensionError("conv2d: bias " + shape_str(bt.shape) +
                                 " incompatible with kernel " + shape_str(kt.shape));
        }
        const int batch = xt.shape[0], cin = xt.shape[1], h = xt.shape[2], w = xt.shape[3];
        const int cout = kt.shape[0], kh = kt.shape[2], kw = kt.shape[3];
        const int ho = (h + 2 * pad - kh) / stride + 1;
        const int wo = (w + 2 * pad - kw) / stride + 1;
        if (ho < 1 || wo < 1) {
            throw DimensionError("conv2d: kernel " + shape_str(kt.shape) +
                                 " larger than padded input " + shape_str(xt.shape));
        }
        Node n;
        n.kind = OpKind::Conv2d;
        n.inputs = {x, kernel, bias};
        n.n_inputs = 3;
        n.stride = stride;
        n.pad = pad;
        n.out = Tensor<T>({batch, cout, ho, wo});
        for (int b = 0; b < batch; ++b) {
            for (int o = 0; o < cout; ++o) {
                for (int oi = 0; oi < ho; ++oi) {
                    for (int oj = 0; oj < wo; ++oj) {
                        T acc = bt.values[o];
                        for (int c = 0; c < cin; ++c) {
                            for (int u = 0; u < kh; ++u) {
                                const int ii = oi * stride + u - pad;
                                if (ii < 0 || ii >= h) continue;
                                for (int v = 0; v < kw; ++v) {
                                    const int jj = oj * stride + v - pad;
                                    if (jj < 0 || jj >= w) continue;
                                    acc += xt.values[((static_cast<size_t>(b) * cin + c) * h + ii) * w + jj] *
                                           kt.values[((static_cast<size_t>(o) * cin + c) * kh + u) * kw + v];
                                }
                            }
                        }
                        n.out.values[((static_cast<size_t>(b) * cout + o) * ho + oi) * wo + oj] = acc;
                    }
                }
            }
        }
        n.needs_grad = needs(x) || needs(kernel) || needs(bias);
        return push(std::move(n));
    }

    NodeId reshape(NodeId x, std::vector<int> shape) {
        const Tensor<T>& xt = out(x);
        if (shape_numel(shape) != xt.numel()) {
            throw DimensionError("reshape: " + shape_str(xt.shape) + " to " + shape_str(shape) +
                                 " changes element count");
        }
        Node n;
        n.kind = OpKind::Reshape;
        n.inputs = {x, -1, -1};
        n.n_inputs = 1;
        n.out.shape = std::move(shape);
        n.out.values = xt.values;
        n.needs_grad = needs(x);
        return push(std::move(n));
    }

    // [B, d0, d1, ...] -> [B, d0*d1*...]
    NodeId flatten(NodeId x) {
        const Tensor<T>& xt = out(x);
        if (xt.shape.empty()) throw DimensionError("flatten: rank-0 input");
        const int b = xt.shape[0];
        return reshape(x, {b, static_cast<int>(xt.numel()) / b});
    }

    // Mean over the batch of -log softmax(logits)[label], max-stabilized.
    NodeId softmax_cross_entropy(NodeId logits, std::vector<int> labels) {
        const Tensor<T>& lt = out(logits);
        if (lt.shape.size() != 2) {
            throw DimensionError("cross_entropy: logits must be rank 2, got " + shape_str(lt.shape));
        }
        const int batch = lt.shape[0], classes = lt.shape[1];
        if (static_cast<int>(labels.size()) != batch) {
            throw ValidationError("cross_entropy: " + std::to_string(labels.size()) +
                                  " labels for batch of " + std::to_string(batch));
        }
        for (int lab : labels) {
            if (lab < 0 || lab >= classes) {
                throw ValidationError("cross_entropy: label " + std::to_string(lab) +
                                      " outside [0," + std::to_string(classes) + ")");
            }
        }
        Node n;
        n.kind = OpKind::SoftmaxCrossEntropy;
        n.inputs = {logits, -1, -1};
        n.n_inputs = 1;
        n.labels = std::move(labels);
        n.saved.resize(lt.numel());
        T total = T(0);
        for (int r = 0; r < batch; ++r) {
            const T* row = &lt.values[static_cast<size_t>(r) * classes];
            T m = row[0];
            for (int c = 1; c < classes; ++c) m = std::max(m, row[c]);
            T sum = T(0);
            for (int c = 0; c < classes; ++c) sum += std::exp(row[c] - m);
            const T lse = std::log(sum);
            for (int c = 0; c < classes; ++c)
                n.saved[static_cast<size_t>(r) * classes + c] = std::exp(row[c] - m) / sum;
            total += lse - (row[n.labels[r]] - m);
        }
        n.out = Tensor<T>({1}, {total / static_cast<T>(batch)});
        n.needs_grad = needs(logits);
        return push(std::move(n));
    }

    // Mean over all elements of (pred - target)^2. No gradient reaches target.
    NodeId mse_loss(NodeId pred, NodeId target) {
        const Tensor<T>& pt = out(pred);
        const Tensor<T>& tt = out(target);
        if (pt.shape != tt.shape) {
            throw DimensionError("mse: prediction " + shape_str(pt.shape) + " vs target " +
                                 shape_str(tt.shape));
        }
        Node n;
        n.kind = OpKind::MseLoss;
        n.inputs = {pred, target, -1};
        n.n_inputs = 2;
        T total = T(0);
        for (size_t i = 0; i < pt.numel(); ++i) {
            const T d = pt.values[i] - tt.values[i];
            total += d * d;
        }
        n.out = Tensor<T>({1}, {total / static_cast<T>(pt.numel())});
        n.needs_grad = needs(pred);
        return push(std::move(n));
    }

    NodeId mse_loss(NodeId pred, Tensor<T> target) {
        return mse_loss(pred, leaf(std::move(target), false));
    }

    const Tensor<T>& out(NodeId id) const { return nodes_[check(id)].out; }
    const std::vector<T>& grad(NodeId id) const { return nodes_[check(id)].out.grad; }
    size_t size() const { return nodes_.size(); }

    // Populates grad slots of every grad-requiring node reachable from `loss`.
    void backward(NodeId loss) {
        Node& ln = nodes_[check(loss)];
        if (ln.out.numel() != 1) {
            throw ContractError("backward: loss must be scalar, got " + shape_str(ln.out.shape));
        }
        for (Node& n : nodes_) {
            if (n.needs_grad) n.out.grad.assign(n.out.numel(), T(0));
        }
        if (!ln.needs_grad) return;  // loss independent of all parameters
        ln.out.grad[0] = T(1);
        for (int id = loss; id >= 0; --id) {
            Node& n = nodes_[id];
            if (!n.needs_grad || n.kind == OpKind::Leaf || n.out.grad.empty()) continue;
            backprop(n);
        }
    }

private:
    struct Node {
        OpKind kind = OpKind::Leaf;
        std::array<NodeId, 3> inputs{-1, -1, -1};
        int n_inputs = 0;
        bool needs_grad = false;
        int stride = 0, pad = 0;
        std::vector<int> labels;
        std::vector<T> saved;  // softmax probabilities
        Tensor<T> out;
    };

    NodeId push(Node n) {
        nodes_.push_back(std::move(n));
        return static_cast<NodeId>(nodes_.size() - 1);
    }

    NodeId check(NodeId id) const {
        if (id < 0 || id >= static_cast<NodeId>(nodes_.size()))
            throw ContractError("graph: node id " + std::to_string(id) + " out of range");
        return id;
    }

    bool needs(NodeId id) const { return nodes_[check(id)].needs_grad; }

    std::vector<T>* grad_of(NodeId id) {
        Node& n = nodes_[id];
        return n.needs_grad ? &n.out.grad : nullptr;
    }

    void backprop(Node& n) {
        const std::vector<T>& dy = n.out.grad;
        switch (n.kind) {
            case OpKind::Affine: {
                const Tensor<T>& xt = nodes_[n.inputs[0]].out;
                const Tensor<T>& wt = nodes_[n.inputs[1]].out;
                const int rows = xt.shape[0], inner = xt.shape[1], cols = wt.shape[1];
                if (auto* dx = grad_of(n.inputs[0])) {
                    for (int r = 0; r < rows; ++r) {
                        const T* dyrow = &dy[static_cast<size_t>(r) * cols];
                        for (int k = 0; k < inner; ++k) {
                            T acc = T(0);
                            const T* wrow = &wt.values[static_cast<size_t>(k) * cols];
                            for (int c = 0; c < cols; ++c) acc += dyrow[c] * wrow[c];
                            (*dx)[static_cast<size_t>(r) * inner + k] += acc;
                        }
                    }
                }
                if (auto* dw = grad_of(n.inputs[1])) {
                    for (int r = 0; r < rows; ++r) {
                        const T* xrow = &xt.values[static_cast<size_t>(r) * inner];
                        const T* dyrow = &dy[static_cast<size_t>(r) * cols];
                        for (int k = 0; k < inner; ++k) {
                            const T xv = xrow[k];
                            T* dwrow = &(*dw)[static_cast<size_t>(k) * cols];
                            for (int c = 0; c < cols; ++c) dwrow[c] += xv * dyrow[c];
                        }
                    }
                }
                if (auto* db = grad_of(n.inputs[2])) {
                    for (int r = 0; r < rows; ++r) {
                        const T* dyrow = &dy[static_cast<size_t>(r) * cols];
                        for (int c = 0; c < cols; ++c) (*db)[c] += dyrow[c];
                    }
                }
                break;
            }
            case OpKind::Relu: {
                const Tensor<T>& xt = nodes_[n.inputs[0]].out;
                if (auto* dx = grad_of(n.inputs[0])) {
                    for (size_t i = 0; i < xt.numel(); ++i)
                        if (xt.values[i] > T(0)) (*dx)[i] += dy[i];
                }
                break;
            }
            case OpKind::Conv2d: {
                const Tensor<T>& xt = nodes_[n.inputs[0]].out;
                const Tensor<T>& kt = nodes_[n.inputs[1]].out;
                const int batch = xt.shape[0], cin = xt.shape[1], h = xt.shape[2], w = xt.shape[3];
                const int cout = kt.shape[0], kh = kt.shape[2], kw = kt.shape[3];
                const int ho = n.out.shape[2], wo = n.out.shape[3];
                auto* dx = grad_of(n.inputs[0]);
                auto* dk = grad_of(n.inputs[1]);
                auto* db = grad_of(n.inputs[2]);
                for (int b = 0; b < batch; ++b) {
                    for (int o = 0; o < cout; ++o) {
                        for (int oi = 0; oi < ho; ++oi) {
                            for (int oj = 0; oj < wo; ++oj) {
                                const T g = dy[((static_cast<size_t>(b) * cout + o) * ho + oi) * wo + oj];
                                if (db) (*db)[o] += g;
                                if (!dx && !dk) continue;
                                for (int c = 0; c < cin; ++c) {
                                    for (int u = 0; u < kh; ++u) {
                                        const int ii = oi * n.stride + u - n.pad;
                                        if (ii < 0 || ii >= h) continue;
                                        for (int v = 0; v < kw; ++v) {
                                            const int jj = oj * n.stride + v - n.pad;
                                            if (jj < 0 || jj >= w) continue;
                                            const size_t xi =
                                                ((static_cast<size_t>(b) * cin + c) * h + ii) * w + jj;
                                            const size_t ki =
                                                ((static_cast<size_t>(o) * cin + c) * kh + u) * kw + v;
                                            if (dx) (*dx)[xi] += g * kt.values[ki];
                                            if (dk) (*dk)[ki] += g * xt.values[xi];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                break;
            }
            case OpKind::Reshape: {
                if (auto* dx = grad_of(n.inputs[0])) {
                    for (size_t i = 0; i < dy.size(); ++i) (*dx)[i] += dy[i];
                }
                break;
            }
            case OpKind::SoftmaxCrossEntropy: {
                const Tensor<T>& lt = nodes_[n.inputs[0]].out;
                const int batch = lt.shape[0], classes = lt.shape[1];
                if (auto* dl = grad_of(n.inputs[0])) {
                    const T scale = dy[0] / static_cast<T>(batch);
                    for (int r = 0; r < batch; ++r) {
                        for (int c = 0; c < classes; ++c) {
                            const size_t i = static_cast<size_t>(r) * classes + c;
                            T p = n.saved[i];
                            if (c == n.labels[r]) p -= T(1);
                            (*dl)[i] += scale * p;
                        }
                    }
                }
                break;
            }
            case OpKind::MseLoss: {
                const Tensor<T>& pt = nodes_[n.inputs[0]].out;
                const Tensor<T>& tt = nodes_[n.inputs[1]].out;
                if (auto* dp = grad_of(n.inputs[0])) {
                    const T scale = dy[0] * T(2) / static_cast<T>(pt.numel());
                    for (size_t i = 0; i < pt.numel(); ++i)
                        (*dp)[i] += scale * (pt.values[i] - tt.values[i]);
                }
                break;
            }
            case OpKind::Leaf:
                break;
        }
    }

    std::vector<Node> nodes_;
};

}  // namespace fedin
