#include "fedin/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <ostream>
#include <sstream>

#include "fedin/checkpoint.hpp"
#include "fedin/errors.hpp"
#include "fedin/rng.hpp"

namespace fedin {

namespace {

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

int threads_from_env() {
    const char* raw = std::getenv("FEDIN_THREADS");
    if (!raw || !*raw) return 1;
    const int n = std::atoi(raw);
    return n < 1 ? 1 : n;
}

Tensor<float> flatten_rows(const Tensor<float>& t) {
    const int n = t.shape[0];
    const int rest = static_cast<int>(t.numel()) / n;
    Tensor<float> out({n, rest});
    out.values = t.values;
    return out;
}

struct BuiltData {
    Dataset train;
    Tensor<float> test_inputs;
    std::vector<int> test_labels;
    ArchSpec base_arch;  // variant field is per-client; the rest is shared
};

BuiltData build_data(const ExperimentConfig& cfg) {
    BuiltData built;
    if (cfg.dataset.kind == "synth") {
        Dataset all = synth_blobs(cfg.dataset.n + cfg.dataset.test_n, cfg.dataset.num_classes,
                                  cfg.dataset.dim, static_cast<float>(cfg.dataset.spread),
                                  derive_seed(cfg.seed, "data"));
        const int n = cfg.dataset.n;
        const int dim = cfg.dataset.dim;
        built.train.num_classes = all.num_classes;
        built.train.inputs = Tensor<float>({n, dim});
        std::copy(all.inputs.values.begin(), all.inputs.values.begin() + static_cast<size_t>(n) * dim,
                  built.train.inputs.values.begin());
        built.train.labels.assign(all.labels.begin(), all.labels.begin() + n);
        if (cfg.dataset.test_n > 0) {
            built.test_inputs = Tensor<float>({cfg.dataset.test_n, dim});
            std::copy(all.inputs.values.begin() + static_cast<size_t>(n) * dim,
                      all.inputs.values.end(), built.test_inputs.values.begin());
            built.test_labels.assign(all.labels.begin() + n, all.labels.end());
        }
        built.base_arch = make_mlp_arch(Variant::A, dim, cfg.model.feature_dim_in,
                                        cfg.model.feature_dim_out, all.num_classes);
        return built;
    }

    Dataset train = load_idx(cfg.dataset.train_images, cfg.dataset.train_labels);
    Dataset test;
    const bool have_test = !cfg.dataset.test_images.empty() && !cfg.dataset.test_labels.empty();
    if (have_test) {
        test = load_idx(cfg.dataset.test_images, cfg.dataset.test_labels);
        if (test.num_classes > train.num_classes) train.num_classes = test.num_classes;
    }
    if (cfg.model.mode == "mlp") {
        const int dim = static_cast<int>(train.inputs.numel()) / train.size();
        built.train.inputs = flatten_rows(train.inputs);
        built.train.labels = train.labels;
        built.train.num_classes = train.num_classes;
        if (have_test) {
            built.test_inputs = flatten_rows(test.inputs);
            built.test_labels = test.labels;
        }
        built.base_arch = make_mlp_arch(Variant::A, dim, cfg.model.feature_dim_in,
                                        cfg.model.feature_dim_out, train.num_classes);
    } else {
        built.train = std::move(train);
        if (have_test) {
            built.test_inputs = std::move(test.inputs);
            built.test_labels = std::move(test.labels);
        }
        built.base_arch = make_conv_arch(Variant::A, built.train.inputs.shape[1],
                                         built.train.inputs.shape[2], built.train.inputs.shape[3],
                                         cfg.model.conv_channels, cfg.model.feature_dim_out,
                                         built.train.num_classes);
    }
    return built;
}

}  // namespace

std::string metrics_csv_header(int num_clients) {
    std::string header = "round,mean_accuracy,mean_local_loss,mean_in_loss,elapsed_seconds";
    for (int i = 0; i < num_clients; ++i) header += ",acc_c" + std::to_string(i);
    return header;
}

std::string metrics_csv_row(const RoundMetrics& m, bool record_elapsed) {
    std::string row = std::to_string(m.round);
    row += "," + fmt(m.mean_accuracy);
    row += "," + fmt(m.mean_local_loss);
    row += ",";
    if (m.mean_in_loss) row += fmt(*m.mean_in_loss);
    row += ",";
    row += record_elapsed ? fmt(m.elapsed_seconds) : "0";
    for (double acc : m.per_client_accuracy) row += "," + fmt(acc);
    return row;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::string& csv_path,
                                const std::string& checkpoint_prefix, std::ostream* log) {
    validate_config(cfg);
    BuiltData data = build_data(cfg);

    PartitionSpec pspec;
    pspec.kind = partition_kind_from_string(cfg.partition.kind);
    pspec.alpha = cfg.partition.alpha;
    pspec.num_clients = cfg.partition.num_clients;
    pspec.seed = cfg.seed;
    std::vector<std::vector<int>> shards = partition(data.train, pspec);

    const std::vector<Variant> variants = resolve_variants(cfg);
    RoundState state;
    state.train = &data.train;
    state.store = FeatureStore(cfg.store_capacity);
    state.shards = std::move(shards);
    state.test_inputs = std::move(data.test_inputs);
    state.test_labels = std::move(data.test_labels);
    for (int k = 0; k < cfg.partition.num_clients; ++k) {
        ArchSpec arch = data.base_arch;
        arch.variant = variants[k];
        state.clients.emplace_back(
            k, build_model<float>(arch, derive_seed(cfg.seed, "client-model",
                                                    static_cast<uint64_t>(k))));
    }

    RoundSettings rs;
    rs.mode = cfg.mode;
    rs.lambda = cfg.lambda;
    rs.batch_size = cfg.batch_size;
    rs.inner_epochs = cfg.inner_epochs;
    rs.sample_size = cfg.sample_size;
    rs.upload_cap = cfg.upload_cap;
    rs.exclude_self = cfg.exclude_self;
    rs.seed = cfg.seed;
    rs.eval_batch = cfg.eval_batch;
    rs.num_threads = threads_from_env();

    std::ofstream csv;
    if (!csv_path.empty()) {
        csv.open(csv_path, std::ios::trunc);
        if (!csv) throw IngestError("cannot open '" + csv_path + "' for writing");
        csv << metrics_csv_header(cfg.partition.num_clients) << "\n";
        csv.flush();
    }

    ExperimentResult result;
    result.best_round = -1;
    for (int round = 0; round < cfg.num_rounds; ++round) {
        rs.learning_rate = (cfg.lr_drop_round >= 0 && round >= cfg.lr_drop_round)
                               ? cfg.lr_drop_rate
                               : cfg.learning_rate;
        RoundMetrics m = run_round(state, rs);
        if (csv.is_open()) {
            csv << metrics_csv_row(m, cfg.record_elapsed) << "\n";
            csv.flush();
            if (!csv) throw IngestError("metrics write to '" + csv_path + "' failed");
        }
        if (log) {
            (*log) << "round " << m.round << ": mean_accuracy=" << fmt(m.mean_accuracy)
                   << " mean_local_loss=" << fmt(m.mean_local_loss);
            if (m.mean_in_loss) (*log) << " mean_in_loss=" << fmt(*m.mean_in_loss);
            (*log) << "\n";
        }
        if (result.best_round < 0 || m.mean_accuracy > result.best_accuracy) {
            result.best_accuracy = m.mean_accuracy;
            result.best_round = m.round;
        }
        result.rounds.push_back(std::move(m));
    }
    result.final_mean_accuracy = result.rounds.back().mean_accuracy;

    if (!checkpoint_prefix.empty()) {
        for (const auto& client : state.clients) {
            save_checkpoint(checkpoint_prefix + "client" + std::to_string(client.client_id) +
                                ".ckpt",
                            client.model);
        }
    }
    if (log) {
        (*log) << "final mean accuracy " << fmt(result.final_mean_accuracy) << "; best round "
               << result.best_round << " at " << fmt(result.best_accuracy) << "\n";
    }
    return result;
}

MetricsRun parse_metrics_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IngestError("cannot open '" + path + "'");
    MetricsRun run;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::string field;
        std::istringstream ss(line);
        while (std::getline(ss, field, ',')) fields.push_back(field);
        if (!line.empty() && line.back() == ',') fields.push_back("");
        if (lineno == 1) {
            if (fields.size() < 6 || fields[0] != "round" || fields[1] != "mean_accuracy")
                throw IngestError(path + ":1: unrecognized metrics header");
            run.num_clients = static_cast<int>(fields.size()) - 5;
            continue;
        }
        if (static_cast<int>(fields.size()) != run.num_clients + 5) {
            throw IngestError(path + ":" + std::to_string(lineno) + ": expected " +
                              std::to_string(run.num_clients + 5) + " fields, got " +
                              std::to_string(fields.size()));
        }
        try {
            size_t used = 0;
            run.rounds.push_back(std::stoi(fields[0], &used));
            if (used != fields[0].size()) throw std::invalid_argument(fields[0]);
            run.mean_accuracy.push_back(std::stod(fields[1], &used));
            if (used != fields[1].size()) throw std::invalid_argument(fields[1]);
        } catch (const std::exception&) {
            throw IngestError(path + ":" + std::to_string(lineno) + ": unparsable numeric field");
        }
    }
    if (run.rounds.empty()) throw IngestError(path + ": no metric rows");
    return run;
}

CompareResult compare_runs(const std::string& csv_a, const std::string& csv_b) {
    const MetricsRun a = parse_metrics_csv(csv_a);
    const MetricsRun b = parse_metrics_csv(csv_b);
    if (a.rounds != b.rounds) {
        throw ValidationError("round columns differ: '" + csv_a + "' spans " +
                              std::to_string(a.rounds.front()) + ".." +
                              std::to_string(a.rounds.back()) + ", '" + csv_b + "' spans " +
                              std::to_string(b.rounds.front()) + ".." +
                              std::to_string(b.rounds.back()));
    }
    CompareResult result;
    result.rounds = a.rounds;
    result.delta.resize(a.rounds.size());
    for (size_t i = 0; i < a.rounds.size(); ++i)
        result.delta[i] = a.mean_accuracy[i] - b.mean_accuracy[i];
    const size_t tail = std::min<size_t>(10, a.rounds.size());
    double sum_a = 0.0, sum_b = 0.0;
    for (size_t i = a.rounds.size() - tail; i < a.rounds.size(); ++i) {
        sum_a += a.mean_accuracy[i];
        sum_b += b.mean_accuracy[i];
    }
    result.mean_last10_a = sum_a / tail;
    result.mean_last10_b = sum_b / tail;
    result.mean_last10_delta = result.mean_last10_a - result.mean_last10_b;
    return result;
}

void print_compare(const CompareResult& result, std::ostream& out) {
    out << "round,delta_mean_accuracy\n";
    for (size_t i = 0; i < result.rounds.size(); ++i)
        out << result.rounds[i] << "," << fmt(result.delta[i]) << "\n";
    out << "mean of last " << std::min<size_t>(10, result.rounds.size())
        << " rounds: " << fmt(result.mean_last10_a) << " vs " << fmt(result.mean_last10_b)
        << " (delta " << fmt(result.mean_last10_delta) << ")\n";
}

}  // namespace fedin
