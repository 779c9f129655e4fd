#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedin/tensor.hpp"

namespace fedin {

struct Dataset {
    Tensor<float> inputs;
    std::vector<int> labels;
    int num_classes = 0;

    int size() const { return inputs.shape.empty() ? 0 : inputs.shape[0]; }
};

// Reads an IDX image/label file pair (big-endian dims, magic 0x00000803 for
// images and 0x00000801 for labels). Pixels come back scaled to [0,1] in a
// [N,1,H,W] tensor.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

// Gaussian blobs around class means placed deterministically on the unit
// sphere. Labels are assigned round-robin, so class counts are balanced to
// within one sample. Inputs have shape [n, dim].
Dataset synth_blobs(int n, int num_classes, int dim, float spread, uint64_t seed);

}  // namespace fedin
