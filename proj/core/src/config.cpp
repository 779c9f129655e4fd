#include "fedin/config.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "fedin/errors.hpp"

namespace fedin {

namespace {

using json = nlohmann::ordered_json;

void reject_unknown(const json& obj, const std::string& where,
                    std::initializer_list<const char*> allowed) {
    for (const auto& item : obj.items()) {
        bool known = false;
        for (const char* key : allowed) known = known || item.key() == key;
        if (!known) throw ConfigError(where + ": unknown key '" + item.key() + "'");
    }
}

const json* find(const json& obj, const char* key) {
    const auto it = obj.find(key);
    return it == obj.end() ? nullptr : &*it;
}

template <typename T>
void read_field(const json& obj, const char* key, const std::string& where, T& out) {
    const json* v = find(obj, key);
    if (!v) return;
    try {
        out = v->get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(where + "." + key + ": " + e.what());
    }
}

void parse_dataset(const json& obj, const std::string& where, DatasetConfig& out) {
    if (!obj.is_object()) throw ConfigError(where + ": expected an object");
    reject_unknown(obj, where,
                   {"kind", "n", "num_classes", "dim", "spread", "test_n", "train_images",
                    "train_labels", "test_images", "test_labels"});
    read_field(obj, "kind", where, out.kind);
    read_field(obj, "n", where, out.n);
    read_field(obj, "num_classes", where, out.num_classes);
    read_field(obj, "dim", where, out.dim);
    read_field(obj, "spread", where, out.spread);
    read_field(obj, "test_n", where, out.test_n);
    read_field(obj, "train_images", where, out.train_images);
    read_field(obj, "train_labels", where, out.train_labels);
    read_field(obj, "test_images", where, out.test_images);
    read_field(obj, "test_labels", where, out.test_labels);
}

void parse_partition(const json& obj, const std::string& where, PartitionConfig& out) {
    if (!obj.is_object()) throw ConfigError(where + ": expected an object");
    reject_unknown(obj, where, {"kind", "alpha", "num_clients"});
    read_field(obj, "kind", where, out.kind);
    read_field(obj, "alpha", where, out.alpha);
    read_field(obj, "num_clients", where, out.num_clients);
}

void parse_model(const json& obj, const std::string& where, ModelConfig& out) {
    if (!obj.is_object()) throw ConfigError(where + ": expected an object");
    reject_unknown(obj, where, {"mode", "feature_dim_in", "feature_dim_out", "conv_channels"});
    read_field(obj, "mode", where, out.mode);
    read_field(obj, "feature_dim_in", where, out.feature_dim_in);
    read_field(obj, "feature_dim_out", where, out.feature_dim_out);
    read_field(obj, "conv_channels", where, out.conv_channels);
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& text, const std::string& where) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(where + ": " + e.what());
    }
    if (!root.is_object()) throw ConfigError(where + ": top level must be an object");
    reject_unknown(root, where,
                   {"mode", "dataset", "partition", "model", "num_rounds", "inner_epochs",
                    "batch_size", "lambda", "sample_size", "store_capacity", "upload_cap",
                    "learning_rate", "lr_drop_round", "lr_drop_rate", "seed",
                    "variant_assignment", "exclude_self", "record_elapsed", "eval_batch"});

    ExperimentConfig cfg;
    const json* mode = find(root, "mode");
    if (!mode) throw ConfigError(where + ": missing required key 'mode'");
    if (!mode->is_string()) throw ConfigError(where + ".mode: expected a string");
    cfg.mode = run_mode_from_string(mode->get<std::string>());

    const json* dataset = find(root, "dataset");
    if (!dataset) throw ConfigError(where + ": missing required key 'dataset'");
    parse_dataset(*dataset, where + ".dataset", cfg.dataset);

    if (const json* partition = find(root, "partition"))
        parse_partition(*partition, where + ".partition", cfg.partition);
    if (const json* model = find(root, "model"))
        parse_model(*model, where + ".model", cfg.model);

    read_field(root, "num_rounds", where, cfg.num_rounds);
    read_field(root, "inner_epochs", where, cfg.inner_epochs);
    read_field(root, "batch_size", where, cfg.batch_size);
    read_field(root, "lambda", where, cfg.lambda);
    read_field(root, "sample_size", where, cfg.sample_size);
    read_field(root, "store_capacity", where, cfg.store_capacity);
    read_field(root, "upload_cap", where, cfg.upload_cap);
    read_field(root, "learning_rate", where, cfg.learning_rate);
    read_field(root, "lr_drop_round", where, cfg.lr_drop_round);
    read_field(root, "lr_drop_rate", where, cfg.lr_drop_rate);
    read_field(root, "seed", where, cfg.seed);
    read_field(root, "variant_assignment", where, cfg.variant_assignment);
    read_field(root, "exclude_self", where, cfg.exclude_self);
    read_field(root, "record_elapsed", where, cfg.record_elapsed);
    read_field(root, "eval_batch", where, cfg.eval_batch);

    validate_config(cfg);
    return cfg;
}

ExperimentConfig parse_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str(), path);
}

std::string serialize_config(const ExperimentConfig& cfg) {
    json root;
    root["mode"] = run_mode_name(cfg.mode);
    json ds;
    ds["kind"] = cfg.dataset.kind;
    ds["n"] = cfg.dataset.n;
    ds["num_classes"] = cfg.dataset.num_classes;
    ds["dim"] = cfg.dataset.dim;
    ds["spread"] = cfg.dataset.spread;
    ds["test_n"] = cfg.dataset.test_n;
    ds["train_images"] = cfg.dataset.train_images;
    ds["train_labels"] = cfg.dataset.train_labels;
    ds["test_images"] = cfg.dataset.test_images;
    ds["test_labels"] = cfg.dataset.test_labels;
    root["dataset"] = std::move(ds);
    json part;
    part["kind"] = cfg.partition.kind;
    part["alpha"] = cfg.partition.alpha;
    part["num_clients"] = cfg.partition.num_clients;
    root["partition"] = std::move(part);
    json model;
    model["mode"] = cfg.model.mode;
    model["feature_dim_in"] = cfg.model.feature_dim_in;
    model["feature_dim_out"] = cfg.model.feature_dim_out;
    model["conv_channels"] = cfg.model.conv_channels;
    root["model"] = std::move(model);
    root["num_rounds"] = cfg.num_rounds;
    root["inner_epochs"] = cfg.inner_epochs;
    root["batch_size"] = cfg.batch_size;
    root["lambda"] = cfg.lambda;
    root["sample_size"] = cfg.sample_size;
    root["store_capacity"] = cfg.store_capacity;
    root["upload_cap"] = cfg.upload_cap;
    root["learning_rate"] = cfg.learning_rate;
    root["lr_drop_round"] = cfg.lr_drop_round;
    root["lr_drop_rate"] = cfg.lr_drop_rate;
    root["seed"] = cfg.seed;
    root["variant_assignment"] = cfg.variant_assignment;
    root["exclude_self"] = cfg.exclude_self;
    root["record_elapsed"] = cfg.record_elapsed;
    root["eval_batch"] = cfg.eval_batch;
    return root.dump(2) + "\n";
}

std::vector<Variant> resolve_variants(const ExperimentConfig& cfg) {
    const int k = cfg.partition.num_clients;
    std::vector<Variant> variants(k);
    if (!cfg.variant_assignment.empty()) {
        if (static_cast<int>(cfg.variant_assignment.size()) != k) {
            throw ConfigError("variant_assignment lists " +
                              std::to_string(cfg.variant_assignment.size()) + " clients but " +
                              "partition.num_clients is " + std::to_string(k));
        }
        for (int i = 0; i < k; ++i) variants[i] = variant_from_string(cfg.variant_assignment[i]);
        return variants;
    }
    if (cfg.mode == RunMode::Fedavg) {
        for (int i = 0; i < k; ++i) variants[i] = Variant::A;
        return variants;
    }
    static const Variant pattern[10] = {Variant::A, Variant::A, Variant::B, Variant::C,
                                        Variant::C, Variant::D, Variant::D, Variant::E,
                                        Variant::E, Variant::E};
    for (int i = 0; i < k; ++i) variants[i] = pattern[i % 10];
    return variants;
}

void validate_config(const ExperimentConfig& cfg) {
    if (cfg.num_rounds < 1) throw ConfigError("num_rounds must be at least 1");
    if (cfg.inner_epochs < 0) throw ConfigError("inner_epochs must be nonnegative");
    if (cfg.batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (cfg.lambda < 0.0) throw ConfigError("lambda must be nonnegative");
    if (cfg.sample_size < 0) throw ConfigError("sample_size must be nonnegative");
    if (cfg.store_capacity < 1) throw ConfigError("store_capacity must be at least 1");
    if (cfg.upload_cap < 0) throw ConfigError("upload_cap must be nonnegative");
    if (cfg.learning_rate <= 0.0) throw ConfigError("learning_rate must be positive");
    if (cfg.eval_batch < 1) throw ConfigError("eval_batch must be at least 1");
    if (cfg.partition.num_clients < 1) throw ConfigError("partition.num_clients must be at least 1");
    partition_kind_from_string(cfg.partition.kind);
    if (cfg.partition.kind == "dirichlet" && cfg.partition.alpha <= 0.0)
        throw ConfigError("partition.alpha must be positive for the dirichlet kind");
    if (cfg.dataset.kind != "synth" && cfg.dataset.kind != "idx")
        throw ConfigError("dataset.kind must be 'synth' or 'idx'");
    if (cfg.dataset.kind == "synth") {
        if (cfg.dataset.n < cfg.dataset.num_classes)
            throw ConfigError("dataset.n must be at least dataset.num_classes");
        if (cfg.dataset.num_classes < 2) throw ConfigError("dataset.num_classes must be at least 2");
        if (cfg.dataset.dim < 1) throw ConfigError("dataset.dim must be positive");
        if (cfg.dataset.spread < 0.0) throw ConfigError("dataset.spread must be nonnegative");
        if (cfg.dataset.test_n < 0) throw ConfigError("dataset.test_n must be nonnegative");
    } else {
        if (cfg.dataset.train_images.empty() || cfg.dataset.train_labels.empty())
            throw ConfigError("idx datasets need train_images and train_labels paths");
    }
    if (cfg.model.mode != "mlp" && cfg.model.mode != "conv")
        throw ConfigError("model.mode must be 'mlp' or 'conv'");
    if (cfg.model.mode == "conv" && cfg.dataset.kind != "idx")
        throw ConfigError("model.mode 'conv' needs an image (idx) dataset");
    if (cfg.model.feature_dim_in < 1 || cfg.model.feature_dim_out < 1)
        throw ConfigError("model feature dims must be positive");
    if (cfg.model.conv_channels < 1) throw ConfigError("model.conv_channels must be positive");

    const std::vector<Variant> variants = resolve_variants(cfg);
    if (cfg.mode == RunMode::Fedavg) {
        for (Variant v : variants) {
            if (v != variants[0])
                throw ConfigError("fedavg mode requires one shared architecture variant");
        }
    }
}

}  // namespace fedin
