#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "fedin/config.hpp"
#include "fedin/protocol.hpp"

namespace fedin {

struct ExperimentResult {
    std::vector<RoundMetrics> rounds;
    double final_mean_accuracy = 0.0;
    int best_round = 0;
    double best_accuracy = 0.0;
};

// Runs the whole experiment: builds data, shards, and per-client models, then
// drives num_rounds rounds. When csv_path is non-empty one metrics row is
// appended (and flushed) per round; when checkpoint_prefix is non-empty the
// final per-client weights land in <prefix>client<k>.ckpt. Thread count comes
// from the FEDIN_THREADS environment variable and never changes results.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::string& csv_path = "",
                                const std::string& checkpoint_prefix = "",
                                std::ostream* log = nullptr);

std::string metrics_csv_header(int num_clients);
std::string metrics_csv_row(const RoundMetrics& m, bool record_elapsed);

struct MetricsRun {
    std::vector<int> rounds;
    std::vector<double> mean_accuracy;
    int num_clients = 0;
};

MetricsRun parse_metrics_csv(const std::string& path);

struct CompareResult {
    std::vector<int> rounds;
    std::vector<double> delta;  // mean accuracy, first run minus second
    double mean_last10_a = 0.0;
    double mean_last10_b = 0.0;
    double mean_last10_delta = 0.0;
};

CompareResult compare_runs(const std::string& csv_a, const std::string& csv_b);
void print_compare(const CompareResult& result, std::ostream& out);

}  // namespace fedin
