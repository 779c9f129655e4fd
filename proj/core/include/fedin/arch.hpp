#pragma once

#include <string>

#include "fedin/errors.hpp"

namespace fedin {

// Five client architectures sharing one extractor/classifier shape and
// differing only in intermediate depth (deepest A, shallowest B/E).
enum class Variant { A, B, C, D, E };

enum class ModelMode { Mlp, Conv };

Variant variant_from_string(const std::string& s);
char variant_char(Variant v);

// Number of intermediate blocks for each variant.
int variant_depth(Variant v);

// Geometry of a split model. The extractor and classifier dimensions are
// shared by all variants so their weights stay aggregable; only the
// intermediate stack depth varies.
struct ArchSpec {
    Variant variant = Variant::A;
    ModelMode mode = ModelMode::Mlp;
    int num_classes = 10;

    // Mlp mode: flat input of input_dim features.
    int input_dim = 32;

    // Conv mode: image input; the extractor is a stride-2 3x3 convolution to
    // conv_channels, so feature_dim_in is conv_channels * ceil(h/2) * ceil(w/2).
    int in_channels = 1;
    int in_h = 28;
    int in_w = 28;
    int conv_channels = 8;

    int feature_dim_in = 64;   // width of s_in
    int feature_dim_out = 64;  // width of s_out

    int depth() const { return variant_depth(variant); }
    int extractor_out_h() const { return (in_h - 1) / 2 + 1; }
    int extractor_out_w() const { return (in_w - 1) / 2 + 1; }

    bool operator==(const ArchSpec&) const = default;
};

ArchSpec make_mlp_arch(Variant v, int input_dim, int feature_dim_in, int feature_dim_out,
                       int num_classes);

ArchSpec make_conv_arch(Variant v, int in_channels, int in_h, int in_w, int conv_channels,
                        int feature_dim_out, int num_classes);

}  // namespace fedin
