#pragma once

#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "fedin/errors.hpp"

namespace fedin {

inline size_t shape_numel(const std::vector<int>& shape) {
    size_t n = 1;
    for (int d : shape) n *= static_cast<size_t>(d);
    return n;
}

inline std::string shape_str(const std::vector<int>& shape) {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

// Dense n-d array, the sole numeric carrier. `grad` is empty until a backward
// pass fills it; when present it has the same length as `values`.
template <typename T>
struct Tensor {
    std::vector<int> shape;
    std::vector<T> values;
    std::vector<T> grad;

    Tensor() = default;

    explicit Tensor(std::vector<int> s) : shape(std::move(s)), values(shape_numel(shape), T(0)) {}

    Tensor(std::vector<int> s, std::vector<T> v) : shape(std::move(s)), values(std::move(v)) {
        if (values.size() != shape_numel(shape)) {
            throw DimensionError("tensor data length " + std::to_string(values.size()) +
                                 " does not match shape " + shape_str(shape));
        }
    }

    size_t numel() const { return values.size(); }
    int dim(size_t i) const { return shape[i]; }

    T& at(int r, int c) { return values[static_cast<size_t>(r) * shape[1] + c]; }
    const T& at(int r, int c) const { return values[static_cast<size_t>(r) * shape[1] + c]; }

    void ensure_grad() {
        if (grad.size() != values.size()) grad.assign(values.size(), T(0));
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.values.resize(values.size());
        for (size_t i = 0; i < values.size(); ++i) out.values[i] = static_cast<U>(values[i]);
        return out;
    }
};

template <typename T>
bool same_shape(const Tensor<T>& a, const Tensor<T>& b) {
    return a.shape == b.shape;
}

}  // namespace fedin
