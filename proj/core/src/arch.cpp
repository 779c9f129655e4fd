#include "fedin/arch.hpp"

namespace fedin {

Variant variant_from_string(const std::string& s) {
    if (s == "A" || s == "a") return Variant::A;
    if (s == "B" || s == "b") return Variant::B;
    if (s == "C" || s == "c") return Variant::C;
    if (s == "D" || s == "d") return Variant::D;
    if (s == "E" || s == "e") return Variant::E;
    throw ConfigError("unknown model variant '" + s + "' (expected A..E)");
}

char variant_char(Variant v) {
    switch (v) {
        case Variant::A: return 'A';
        case Variant::B: return 'B';
        case Variant::C: return 'C';
        case Variant::D: return 'D';
        case Variant::E: return 'E';
    }
    return '?';
}

int variant_depth(Variant v) {
    switch (v) {
        case Variant::A: return 6;
        case Variant::B: return 3;
        case Variant::C: return 5;
        case Variant::D: return 4;
        case Variant::E: return 3;
    }
    return 0;
}

ArchSpec make_mlp_arch(Variant v, int input_dim, int feature_dim_in, int feature_dim_out,
                       int num_classes) {
    if (input_dim < 1 || feature_dim_in < 1 || feature_dim_out < 1 || num_classes < 2) {
        throw ConfigError("make_mlp_arch: nonpositive dimension");
    }
    ArchSpec a;
    a.variant = v;
    a.mode = ModelMode::Mlp;
    a.input_dim = input_dim;
    a.feature_dim_in = feature_dim_in;
    a.feature_dim_out = feature_dim_out;
    a.num_classes = num_classes;
    return a;
}

ArchSpec make_conv_arch(Variant v, int in_channels, int in_h, int in_w, int conv_channels,
                        int feature_dim_out, int num_classes) {
    if (in_channels < 1 || in_h < 3 || in_w < 3 || conv_channels < 1 || feature_dim_out < 1 ||
        num_classes < 2) {
        throw ConfigError("make_conv_arch: invalid geometry");
    }
    ArchSpec a;
    a.variant = v;
    a.mode = ModelMode::Conv;
    a.in_channels = in_channels;
    a.in_h = in_h;
    a.in_w = in_w;
    a.conv_channels = conv_channels;
    a.feature_dim_in = conv_channels * a.extractor_out_h() * a.extractor_out_w();
    a.feature_dim_out = feature_dim_out;
    a.num_classes = num_classes;
    return a;
}

}  // namespace fedin
