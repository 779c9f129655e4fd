#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedin/arch.hpp"
#include "fedin/partition.hpp"
#include "fedin/protocol.hpp"

namespace fedin {

struct DatasetConfig {
    std::string kind = "synth";  // "synth" or "idx"
    int n = 5000;
    int num_classes = 10;
    int dim = 32;
    double spread = 0.35;
    int test_n = 1000;
    std::string train_images, train_labels;
    std::string test_images, test_labels;

    bool operator==(const DatasetConfig&) const = default;
};

struct PartitionConfig {
    std::string kind = "dirichlet";
    double alpha = 0.5;
    int num_clients = 10;

    bool operator==(const PartitionConfig&) const = default;
};

struct ModelConfig {
    std::string mode = "mlp";  // "mlp" or "conv"
    int feature_dim_in = 64;
    int feature_dim_out = 64;
    int conv_channels = 8;

    bool operator==(const ModelConfig&) const = default;
};

struct ExperimentConfig {
    RunMode mode = RunMode::Fedin;
    DatasetConfig dataset;
    PartitionConfig partition;
    ModelConfig model;
    int num_rounds = 60;
    int inner_epochs = 1;
    int batch_size = 32;
    double lambda = 2.0;
    int sample_size = 512;
    int store_capacity = 1024;
    int upload_cap = 256;
    double learning_rate = 1e-3;
    int lr_drop_round = -1;  // negative disables the step drop
    double lr_drop_rate = 1e-4;
    uint64_t seed = 1;
    std::vector<std::string> variant_assignment;  // per-client letters; empty uses the default mix
    bool exclude_self = false;
    bool record_elapsed = true;
    int eval_batch = 256;

    bool operator==(const ExperimentConfig&) const = default;
};

ExperimentConfig parse_config(const std::string& path);
ExperimentConfig parse_config_text(const std::string& text, const std::string& where);
std::string serialize_config(const ExperimentConfig& cfg);

// Per-client variants, applying the default assignment pattern when the
// config leaves it empty. The default for ten clients is A,A,B,C,C,D,D,E,E,E;
// other counts repeat that pattern. Full-model averaging defaults to variant
// A everywhere.
std::vector<Variant> resolve_variants(const ExperimentConfig& cfg);

void validate_config(const ExperimentConfig& cfg);

}  // namespace fedin
