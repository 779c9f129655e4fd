#pragma once

#include <stdexcept>
#include <string>

namespace fedin {

// Shape disagreement between tensors (affine/conv/mse operands, model inputs).
struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

// Caller handed in values outside the documented domain (labels, sizes, widths).
struct ValidationError : std::runtime_error {
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// An internal precondition between cooperating components was broken
// (mismatched gradient layouts, non-scalar loss, empty aggregation).
struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad experiment configuration (unknown keys, missing fields, unknown variant).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Corrupt or truncated input file; message names the byte offset.
struct IngestError : std::runtime_error {
    explicit IngestError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace fedin
