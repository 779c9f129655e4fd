#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fedin/checkpoint.hpp"
#include "fedin/dataset.hpp"
#include "fedin/model.hpp"
#include "fedin/optimizer.hpp"
#include "fedin/rng.hpp"

namespace fedin {

enum class RunMode {
    Fedin,
    FedinIgnoreDivergence,
    FedinNoAggregation,
    FedinNoIn,
    Fedavg,
};

RunMode run_mode_from_string(const std::string& s);
std::string run_mode_name(RunMode mode);

// One captured (s_in, s_out) observation from a client's local forward pass.
struct FeaturePair {
    std::vector<float> s_in;
    std::vector<float> s_out;
    int client_id = 0;
    int round = 0;

    bool operator==(const FeaturePair&) const = default;
};

// Server-side pair retention: one bounded FIFO queue per client, oldest
// evicted first.
class FeatureStore {
public:
    explicit FeatureStore(int capacity_per_client);

    void add(const FeaturePair& pair);
    size_t total() const;
    const std::deque<FeaturePair>& queue(int client_id) const;
    std::vector<int> client_ids() const;
    int capacity_per_client() const { return capacity_; }

private:
    std::map<int, std::deque<FeaturePair>> entries_;
    int capacity_;
};

struct ClientUpdate {
    int client_id = 0;
    std::vector<NamedParam<float>> w_e;
    std::vector<NamedParam<float>> w_c;
    std::vector<NamedParam<float>> w_in;  // populated only under full-model averaging
    std::vector<FeaturePair> pairs;
    double local_loss = 0.0;
    std::optional<double> in_loss;
};

struct ServerBroadcast {
    std::vector<NamedParam<double>> w_e;
    std::vector<NamedParam<double>> w_c;
    std::vector<NamedParam<double>> w_in;  // populated only under full-model averaging
    std::vector<FeaturePair> sample;
    int round = 0;
};

// Unweighted elementwise mean of the shell weights, accumulated in 64-bit and
// summed in ascending client_id order.
std::pair<std::vector<NamedParam<double>>, std::vector<NamedParam<double>>> aggregate_shells(
    const std::vector<ClientUpdate>& updates);

// Same mean over the intermediate group; only meaningful when all clients
// share one architecture.
std::vector<NamedParam<double>> aggregate_intermediate(const std::vector<ClientUpdate>& updates);

void server_ingest(FeatureStore& store, const ClientUpdate& update, int feature_dim_in,
                   int feature_dim_out);

// Uniform sample without replacement across all queues; asking for more than
// is available returns everything, shuffled. An empty store yields an empty
// list.
std::vector<FeaturePair> sample_features(const FeatureStore& store, int size, Rng& rng);

struct LocalStepResult {
    GradientSet g_local;
    std::vector<FeaturePair> pairs;
    double loss = 0.0;
};

LocalStepResult client_local_step(const SplitModel<float>& model, const Tensor<float>& batch,
                                  const std::vector<int>& labels, int client_id, int round);

struct InStepResult {
    GradientSet g_in;
    double loss = 0.0;
};

InStepResult client_in_step(const SplitModel<float>& model,
                            const std::vector<const FeaturePair*>& feature_batch);

// Everything a client carries across rounds.
struct ClientState {
    int client_id = 0;
    SplitModel<float> model;
    Adam opt;

    ClientState(int id, SplitModel<float> m)
        : client_id(id), model(std::move(m)), opt(model.layout) {}
};

struct StepSettings {
    RunMode mode = RunMode::Fedin;
    double lambda = 2.0;
    double learning_rate = 1e-3;
    int batch_size = 32;
    int inner_epochs = 1;
    int upload_cap = 256;
    bool exclude_self = false;
    uint64_t seed = 0;
    int round = 0;
};

ClientUpdate client_round(ClientState& client, const ServerBroadcast& broadcast,
                          const Dataset& data, const std::vector<int>& shard,
                          const StepSettings& settings);

struct RoundMetrics {
    int round = 0;
    std::vector<double> per_client_accuracy;
    double mean_accuracy = 0.0;
    double mean_local_loss = 0.0;
    std::optional<double> mean_in_loss;
    double elapsed_seconds = 0.0;
};

// Shared mutable state the server threads through rounds.
struct RoundState {
    std::vector<ClientState> clients;
    std::vector<std::vector<int>> shards;
    const Dataset* train = nullptr;
    FeatureStore store{1024};
    std::vector<NamedParam<double>> shell_e, shell_c, avg_in;
    Tensor<float> test_inputs;
    std::vector<int> test_labels;
    int round = 0;
};

struct RoundSettings {
    RunMode mode = RunMode::Fedin;
    double lambda = 2.0;
    double learning_rate = 1e-3;
    int batch_size = 32;
    int inner_epochs = 1;
    int sample_size = 512;
    int upload_cap = 256;
    bool exclude_self = false;
    uint64_t seed = 0;
    int eval_batch = 256;
    int num_threads = 1;
};

RoundMetrics run_round(RoundState& state, const RoundSettings& settings);

// Fixture plumbing: messages round-trip through the flat named-tensor record
// format used for checkpoints.
std::vector<ParamRecord> update_to_records(const ClientUpdate& update);
ClientUpdate update_from_records(const std::vector<ParamRecord>& records);

}  // namespace fedin
