#include "fedin/dataset.hpp"

#include <cmath>
#include <fstream>

#include "fedin/errors.hpp"
#include "fedin/rng.hpp"

namespace fedin {

namespace {

struct IdxReader {
    std::ifstream in;
    std::string path;
    size_t offset = 0;

    IdxReader(const std::string& p) : in(p, std::ios::binary), path(p) {
        if (!in) throw IngestError("cannot open '" + p + "'");
    }

    [[noreturn]] void fail(const std::string& what) {
        throw IngestError("'" + path + "': " + what + " at byte offset " +
                          std::to_string(offset));
    }

    uint32_t read_u32_be() {
        unsigned char b[4];
        if (!in.read(reinterpret_cast<char*>(b), 4)) fail("truncated 32-bit field");
        offset += 4;
        return (static_cast<uint32_t>(b[0]) << 24) | (static_cast<uint32_t>(b[1]) << 16) |
               (static_cast<uint32_t>(b[2]) << 8) | static_cast<uint32_t>(b[3]);
    }

    void read_bytes(unsigned char* dst, size_t count) {
        if (!in.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(count)))
            fail("truncated payload");
        offset += count;
    }
};

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    IdxReader images(images_path);
    const uint32_t image_magic = images.read_u32_be();
    if (image_magic != 0x00000803u) {
        images.offset = 0;
        images.fail("bad image magic " + std::to_string(image_magic) + ", expected 2051");
    }
    const uint32_t n_images = images.read_u32_be();
    const uint32_t rows = images.read_u32_be();
    const uint32_t cols = images.read_u32_be();
    if (n_images == 0 || rows == 0 || cols == 0) images.fail("degenerate image dimensions");

    IdxReader labels(labels_path);
    const uint32_t label_magic = labels.read_u32_be();
    if (label_magic != 0x00000801u) {
        labels.offset = 0;
        labels.fail("bad label magic " + std::to_string(label_magic) + ", expected 2049");
    }
    const uint32_t n_labels = labels.read_u32_be();
    if (n_labels != n_images) {
        throw IngestError("'" + labels_path + "': label count " + std::to_string(n_labels) +
                          " does not match image count " + std::to_string(n_images) +
                          " at byte offset 4");
    }

    Dataset ds;
    ds.inputs = Tensor<float>(
        {static_cast<int>(n_images), 1, static_cast<int>(rows), static_cast<int>(cols)});
    const size_t pixels = static_cast<size_t>(n_images) * rows * cols;
    std::vector<unsigned char> raw(pixels);
    images.read_bytes(raw.data(), pixels);
    for (size_t i = 0; i < pixels; ++i)
        ds.inputs.values[i] = static_cast<float>(raw[i]) / 255.0f;

    std::vector<unsigned char> raw_labels(n_labels);
    labels.read_bytes(raw_labels.data(), n_labels);
    ds.labels.resize(n_labels);
    int max_label = 0;
    for (uint32_t i = 0; i < n_labels; ++i) {
        ds.labels[i] = raw_labels[i];
        if (ds.labels[i] > max_label) max_label = ds.labels[i];
    }
    ds.num_classes = max_label + 1;
    return ds;
}

Dataset synth_blobs(int n, int num_classes, int dim, float spread, uint64_t seed) {
    if (num_classes < 1) throw ValidationError("synth_blobs needs at least one class");
    if (n < num_classes) {
        throw ValidationError("synth_blobs n=" + std::to_string(n) + " is below num_classes=" +
                              std::to_string(num_classes));
    }
    if (dim < 1) throw ValidationError("synth_blobs dim must be positive");
    if (spread < 0.0f) throw ValidationError("synth_blobs spread must be nonnegative");

    std::vector<std::vector<double>> means(num_classes, std::vector<double>(dim));
    Rng mean_rng(derive_seed(seed, "blob-means"));
    for (int c = 0; c < num_classes; ++c) {
        double norm_sq = 0.0;
        for (int d = 0; d < dim; ++d) {
            means[c][d] = mean_rng.normal();
            norm_sq += means[c][d] * means[c][d];
        }
        const double norm = std::sqrt(norm_sq);
        if (norm > 0.0)
            for (int d = 0; d < dim; ++d) means[c][d] /= norm;
        else
            means[c][0] = 1.0;
    }

    Dataset ds;
    ds.num_classes = num_classes;
    ds.inputs = Tensor<float>({n, dim});
    ds.labels.resize(n);
    Rng sample_rng(derive_seed(seed, "blob-samples"));
    for (int i = 0; i < n; ++i) {
        const int c = i % num_classes;
        ds.labels[i] = c;
        for (int d = 0; d < dim; ++d) {
            ds.inputs.values[static_cast<size_t>(i) * dim + d] =
                static_cast<float>(means[c][d] + spread * sample_rng.normal());
        }
    }
    return ds;
}

}  // namespace fedin
