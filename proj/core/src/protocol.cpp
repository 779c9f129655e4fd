#include "fedin/protocol.hpp"

#include <algorithm>
#include <chrono>
#include <exception>
#include <functional>
#include <thread>

#include "fedin/errors.hpp"
#include "fedin/resolve.hpp"

namespace fedin {

RunMode run_mode_from_string(const std::string& s) {
    if (s == "fedin") return RunMode::Fedin;
    if (s == "fedin_ignore_divergence") return RunMode::FedinIgnoreDivergence;
    if (s == "fedin_no_aggregation") return RunMode::FedinNoAggregation;
    if (s == "fedin_no_in") return RunMode::FedinNoIn;
    if (s == "fedavg") return RunMode::Fedavg;
    throw ConfigError("unknown run mode '" + s + "'");
}

std::string run_mode_name(RunMode mode) {
    switch (mode) {
        case RunMode::Fedin: return "fedin";
        case RunMode::FedinIgnoreDivergence: return "fedin_ignore_divergence";
        case RunMode::FedinNoAggregation: return "fedin_no_aggregation";
        case RunMode::FedinNoIn: return "fedin_no_in";
        case RunMode::Fedavg: return "fedavg";
    }
    return "?";
}

FeatureStore::FeatureStore(int capacity_per_client) : capacity_(capacity_per_client) {
    if (capacity_ < 1) throw ValidationError("feature store capacity must be positive");
}

void FeatureStore::add(const FeaturePair& pair) {
    auto& queue = entries_[pair.client_id];
    queue.push_back(pair);
    while (static_cast<int>(queue.size()) > capacity_) queue.pop_front();
}

size_t FeatureStore::total() const {
    size_t n = 0;
    for (const auto& [id, queue] : entries_) n += queue.size();
    return n;
}

const std::deque<FeaturePair>& FeatureStore::queue(int client_id) const {
    static const std::deque<FeaturePair> empty;
    const auto it = entries_.find(client_id);
    return it == entries_.end() ? empty : it->second;
}

std::vector<int> FeatureStore::client_ids() const {
    std::vector<int> ids;
    ids.reserve(entries_.size());
    for (const auto& [id, queue] : entries_) ids.push_back(id);
    return ids;
}

namespace {

std::vector<const ClientUpdate*> by_ascending_id(const std::vector<ClientUpdate>& updates) {
    std::vector<const ClientUpdate*> order;
    order.reserve(updates.size());
    for (const auto& u : updates) order.push_back(&u);
    std::sort(order.begin(), order.end(),
              [](const ClientUpdate* a, const ClientUpdate* b) { return a->client_id < b->client_id; });
    return order;
}

std::vector<NamedParam<double>> mean_params(
    const std::vector<const ClientUpdate*>& order,
    const std::vector<NamedParam<float>> ClientUpdate::*member) {
    const auto& first = (*order[0]).*member;
    std::vector<NamedParam<double>> mean;
    mean.reserve(first.size());
    for (const auto& p : first)
        mean.push_back({p.group, p.name, Tensor<double>(p.tensor.shape)});
    for (const ClientUpdate* u : order) {
        const auto& params = u->*member;
        if (params.size() != mean.size())
            throw ContractError("aggregation: update from client " + std::to_string(u->client_id) +
                                " has a different parameter count");
        for (size_t i = 0; i < params.size(); ++i) {
            if (params[i].name != mean[i].name || params[i].tensor.shape != mean[i].tensor.shape) {
                throw ContractError("aggregation: parameter '" + params[i].name + "' shape " +
                                    shape_str(params[i].tensor.shape) + " from client " +
                                    std::to_string(u->client_id) + " does not match '" +
                                    mean[i].name + "' " + shape_str(mean[i].tensor.shape));
            }
            auto& acc = mean[i].tensor.values;
            const auto& src = params[i].tensor.values;
            for (size_t k = 0; k < src.size(); ++k) acc[k] += static_cast<double>(src[k]);
        }
    }
    const double inv = 1.0 / static_cast<double>(order.size());
    for (auto& p : mean)
        for (auto& v : p.tensor.values) v *= inv;
    return mean;
}

void overwrite_params(SplitModel<float>& model, const std::vector<NamedParam<double>>& src) {
    for (const auto& p : src) {
        Tensor<float>& dst = model.param(p.name);
        if (dst.shape != p.tensor.shape) {
            throw ContractError("broadcast parameter '" + p.name + "' shape " +
                                shape_str(p.tensor.shape) + " does not match model shape " +
                                shape_str(dst.shape));
        }
        for (size_t i = 0; i < dst.values.size(); ++i)
            dst.values[i] = static_cast<float>(p.tensor.values[i]);
    }
}

std::vector<NamedParam<float>> extract_group(const SplitModel<float>& model, ParamGroup group) {
    std::vector<NamedParam<float>> out;
    for (const auto& p : model.params)
        if (p.group == group) out.push_back(p);
    return out;
}

void run_clients(int count, int threads, const std::function<void(int)>& body) {
    if (threads <= 1 || count <= 1) {
        for (int i = 0; i < count; ++i) body(i);
        return;
    }
    const int workers = std::min(threads, count);
    std::vector<std::exception_ptr> errors(count);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            for (int i = w; i < count; i += workers) {
                try {
                    body(i);
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    for (int i = 0; i < count; ++i)
        if (errors[i]) std::rethrow_exception(errors[i]);
}

}  // namespace

std::pair<std::vector<NamedParam<double>>, std::vector<NamedParam<double>>> aggregate_shells(
    const std::vector<ClientUpdate>& updates) {
    if (updates.empty()) throw ValidationError("aggregate_shells needs at least one update");
    const auto order = by_ascending_id(updates);
    return {mean_params(order, &ClientUpdate::w_e), mean_params(order, &ClientUpdate::w_c)};
}

std::vector<NamedParam<double>> aggregate_intermediate(const std::vector<ClientUpdate>& updates) {
    if (updates.empty()) throw ValidationError("aggregate_intermediate needs at least one update");
    const auto order = by_ascending_id(updates);
    return mean_params(order, &ClientUpdate::w_in);
}

void server_ingest(FeatureStore& store, const ClientUpdate& update, int feature_dim_in,
                   int feature_dim_out) {
    for (const auto& pair : update.pairs) {
        if (static_cast<int>(pair.s_in.size()) != feature_dim_in ||
            static_cast<int>(pair.s_out.size()) != feature_dim_out) {
            throw ValidationError("feature pair widths (" + std::to_string(pair.s_in.size()) +
                                  "," + std::to_string(pair.s_out.size()) +
                                  ") from client " + std::to_string(update.client_id) +
                                  " do not match (" + std::to_string(feature_dim_in) + "," +
                                  std::to_string(feature_dim_out) + ")");
        }
        store.add(pair);
    }
}

std::vector<FeaturePair> sample_features(const FeatureStore& store, int size, Rng& rng) {
    if (size < 0) throw ValidationError("sample size must be nonnegative");
    if (size == 0) return {};
    std::vector<FeaturePair> all;
    for (int id : store.client_ids())
        for (const auto& pair : store.queue(id)) all.push_back(pair);
    if (all.empty()) return {};
    rng.shuffle(all);
    if (static_cast<int>(all.size()) > size) all.resize(size);
    return all;
}

LocalStepResult client_local_step(const SplitModel<float>& model, const Tensor<float>& batch,
                                  const std::vector<int>& labels, int client_id, int round) {
    if (batch.shape.empty() || batch.shape[0] == 0)
        throw ValidationError("local step needs a non-empty batch");
    ModelTape<float> tape = tape_full(model, batch, true);
    const NodeId loss = tape.graph.softmax_cross_entropy(tape.logits, labels);
    tape.graph.backward(loss);

    LocalStepResult result;
    result.g_local = collect_gradients(model, tape);
    result.loss = static_cast<double>(tape.graph.out(loss).values[0]);

    const Tensor<float>& s_in = tape.graph.out(tape.s_in);
    const Tensor<float>& s_out = tape.graph.out(tape.s_out);
    const int b = batch.shape[0];
    const int f_in = s_in.shape[1];
    const int f_out = s_out.shape[1];
    result.pairs.reserve(b);
    for (int r = 0; r < b; ++r) {
        FeaturePair pair;
        pair.client_id = client_id;
        pair.round = round;
        pair.s_in.assign(s_in.values.begin() + static_cast<size_t>(r) * f_in,
                         s_in.values.begin() + static_cast<size_t>(r + 1) * f_in);
        pair.s_out.assign(s_out.values.begin() + static_cast<size_t>(r) * f_out,
                          s_out.values.begin() + static_cast<size_t>(r + 1) * f_out);
        result.pairs.push_back(std::move(pair));
    }
    return result;
}

InStepResult client_in_step(const SplitModel<float>& model,
                            const std::vector<const FeaturePair*>& feature_batch) {
    if (feature_batch.empty()) throw ValidationError("in step needs a non-empty feature batch");
    const int f_in = model.arch.feature_dim_in;
    const int f_out = model.arch.feature_dim_out;
    const int m = static_cast<int>(feature_batch.size());
    Tensor<float> s_in({m, f_in});
    Tensor<float> target({m, f_out});
    for (int r = 0; r < m; ++r) {
        const FeaturePair& pair = *feature_batch[r];
        if (static_cast<int>(pair.s_in.size()) != f_in ||
            static_cast<int>(pair.s_out.size()) != f_out) {
            throw ValidationError("feature pair widths (" + std::to_string(pair.s_in.size()) +
                                  "," + std::to_string(pair.s_out.size()) +
                                  ") do not match model dims (" + std::to_string(f_in) + "," +
                                  std::to_string(f_out) + ")");
        }
        std::copy(pair.s_in.begin(), pair.s_in.end(),
                  s_in.values.begin() + static_cast<size_t>(r) * f_in);
        std::copy(pair.s_out.begin(), pair.s_out.end(),
                  target.values.begin() + static_cast<size_t>(r) * f_out);
    }
    ModelTape<float> tape = tape_intermediate(model, s_in, true);
    const NodeId loss = tape.graph.mse_loss(tape.s_out, target);
    tape.graph.backward(loss);

    InStepResult result;
    result.g_in = collect_gradients(model, tape);
    result.loss = static_cast<double>(tape.graph.out(loss).values[0]);
    return result;
}

ClientUpdate client_round(ClientState& client, const ServerBroadcast& broadcast,
                          const Dataset& data, const std::vector<int>& shard,
                          const StepSettings& settings) {
    if (shard.empty()) throw ValidationError("client " + std::to_string(client.client_id) +
                                             " has an empty shard");
    if (settings.batch_size < 1) throw ValidationError("batch_size must be positive");
    SplitModel<float>& model = client.model;
    const bool fedavg = settings.mode == RunMode::Fedavg;

    if (settings.mode != RunMode::FedinNoAggregation && !broadcast.w_e.empty()) {
        overwrite_params(model, broadcast.w_e);
        overwrite_params(model, broadcast.w_c);
        client.opt.reset_group(ParamGroup::Extractor);
        client.opt.reset_group(ParamGroup::Classifier);
        if (fedavg && !broadcast.w_in.empty()) {
            overwrite_params(model, broadcast.w_in);
            client.opt.reset_group(ParamGroup::Intermediate);
        }
    }

    const bool in_capable = settings.mode == RunMode::Fedin ||
                            settings.mode == RunMode::FedinNoAggregation ||
                            settings.mode == RunMode::FedinIgnoreDivergence;
    std::vector<const FeaturePair*> pool;
    if (in_capable) {
        for (const auto& pair : broadcast.sample)
            if (!settings.exclude_self || pair.client_id != client.client_id)
                pool.push_back(&pair);
    }

    Rng order_rng(derive_seed(settings.seed, "client-batches",
                              static_cast<uint64_t>(client.client_id),
                              static_cast<uint64_t>(settings.round)));
    const size_t row = data.inputs.numel() / static_cast<size_t>(data.size());
    std::vector<int> batch_shape = data.inputs.shape;

    size_t cursor = 0;
    double local_sum = 0.0, in_sum = 0.0;
    int local_n = 0, in_n = 0;
    std::vector<FeaturePair> captured;

    for (int epoch = 0; epoch < settings.inner_epochs; ++epoch) {
        std::vector<int> order = shard;
        order_rng.shuffle(order);
        for (size_t start = 0; start < order.size(); start += settings.batch_size) {
            const int count =
                static_cast<int>(std::min(order.size() - start,
                                          static_cast<size_t>(settings.batch_size)));
            batch_shape[0] = count;
            Tensor<float> batch(batch_shape);
            std::vector<int> labels(count);
            for (int r = 0; r < count; ++r) {
                const size_t idx = static_cast<size_t>(order[start + r]);
                std::copy(data.inputs.values.begin() + idx * row,
                          data.inputs.values.begin() + (idx + 1) * row,
                          batch.values.begin() + static_cast<size_t>(r) * row);
                labels[r] = data.labels[order[start + r]];
            }

            LocalStepResult local =
                client_local_step(model, batch, labels, client.client_id, settings.round);
            local_sum += local.loss;
            ++local_n;
            for (auto& pair : local.pairs) captured.push_back(std::move(pair));

            if (pool.empty()) {
                client.opt.step(model, local.g_local, settings.learning_rate);
                continue;
            }
            const int m = static_cast<int>(
                std::min(pool.size(), static_cast<size_t>(settings.batch_size)));
            std::vector<const FeaturePair*> feature_batch(m);
            for (int i = 0; i < m; ++i) feature_batch[i] = pool[(cursor + i) % pool.size()];
            cursor = (cursor + m) % pool.size();

            if (settings.mode == RunMode::FedinIgnoreDivergence) {
                client.opt.step(model, local.g_local, settings.learning_rate);
                InStepResult in = client_in_step(model, feature_batch);
                in_sum += in.loss;
                ++in_n;
                client.opt.step(model, in.g_in, settings.learning_rate);
            } else {
                InStepResult in = client_in_step(model, feature_batch);
                in_sum += in.loss;
                ++in_n;
                GradientSet z = resolve_simplified(in.g_in, local.g_local, settings.lambda);
                client.opt.step(model, z, settings.learning_rate);
            }
        }
    }

    ClientUpdate update;
    update.client_id = client.client_id;
    update.w_e = extract_group(model, ParamGroup::Extractor);
    update.w_c = extract_group(model, ParamGroup::Classifier);
    if (fedavg) update.w_in = extract_group(model, ParamGroup::Intermediate);
    if (!fedavg) {
        if (static_cast<int>(captured.size()) > settings.upload_cap) {
            Rng upload_rng(derive_seed(settings.seed, "client-upload",
                                       static_cast<uint64_t>(client.client_id),
                                       static_cast<uint64_t>(settings.round)));
            upload_rng.shuffle(captured);
            captured.resize(settings.upload_cap);
        }
        update.pairs = std::move(captured);
    }
    update.local_loss = local_n > 0 ? local_sum / local_n : 0.0;
    if (in_n > 0) update.in_loss = in_sum / in_n;
    return update;
}

RoundMetrics run_round(RoundState& state, const RoundSettings& settings) {
    const auto t0 = std::chrono::steady_clock::now();
    if (state.clients.empty()) throw ValidationError("run_round needs at least one client");
    if (!state.train) throw ContractError("round state has no training dataset");
    if (state.shards.size() != state.clients.size())
        throw ContractError("round state has " + std::to_string(state.shards.size()) +
                            " shards for " + std::to_string(state.clients.size()) + " clients");

    const ArchSpec& arch = state.clients[0].model.arch;
    ServerBroadcast broadcast;
    broadcast.round = state.round;
    broadcast.w_e = state.shell_e;
    broadcast.w_c = state.shell_c;
    if (settings.mode == RunMode::Fedavg) broadcast.w_in = state.avg_in;
    Rng sample_rng(derive_seed(settings.seed, "server-sample",
                               static_cast<uint64_t>(state.round)));
    broadcast.sample = sample_features(state.store, settings.sample_size, sample_rng);

    StepSettings step;
    step.mode = settings.mode;
    step.lambda = settings.lambda;
    step.learning_rate = settings.learning_rate;
    step.batch_size = settings.batch_size;
    step.inner_epochs = settings.inner_epochs;
    step.upload_cap = settings.upload_cap;
    step.exclude_self = settings.exclude_self;
    step.seed = settings.seed;
    step.round = state.round;

    const int k = static_cast<int>(state.clients.size());
    std::vector<ClientUpdate> updates(k);
    std::vector<double> accuracy(k, 0.0);
    const bool have_test = !state.test_labels.empty();
    run_clients(k, settings.num_threads, [&](int i) {
        updates[i] = client_round(state.clients[i], broadcast, *state.train, state.shards[i], step);
        if (have_test)
            accuracy[i] = evaluate(state.clients[i].model, state.test_inputs, state.test_labels,
                                   settings.eval_batch);
    });

    for (const ClientUpdate* u : by_ascending_id(updates))
        server_ingest(state.store, *u, arch.feature_dim_in, arch.feature_dim_out);
    auto [shell_e, shell_c] = aggregate_shells(updates);
    state.shell_e = std::move(shell_e);
    state.shell_c = std::move(shell_c);
    if (settings.mode == RunMode::Fedavg) state.avg_in = aggregate_intermediate(updates);

    RoundMetrics metrics;
    metrics.round = state.round;
    metrics.per_client_accuracy = accuracy;
    double acc_sum = 0.0, local_sum = 0.0, in_sum = 0.0;
    int in_n = 0;
    for (int i = 0; i < k; ++i) {
        acc_sum += accuracy[i];
        local_sum += updates[i].local_loss;
        if (updates[i].in_loss) {
            in_sum += *updates[i].in_loss;
            ++in_n;
        }
    }
    metrics.mean_accuracy = acc_sum / k;
    metrics.mean_local_loss = local_sum / k;
    if (in_n > 0) metrics.mean_in_loss = in_sum / in_n;
    const auto t1 = std::chrono::steady_clock::now();
    metrics.elapsed_seconds = std::chrono::duration<double>(t1 - t0).count();
    state.round += 1;
    return metrics;
}

std::vector<ParamRecord> update_to_records(const ClientUpdate& update) {
    std::vector<ParamRecord> records;
    records.push_back({"meta.client_id", {1}, {static_cast<float>(update.client_id)}});
    records.push_back({"meta.local_loss", {1}, {static_cast<float>(update.local_loss)}});
    if (update.in_loss)
        records.push_back({"meta.in_loss", {1}, {static_cast<float>(*update.in_loss)}});
    auto emit_params = [&](const std::vector<NamedParam<float>>& params) {
        for (const auto& p : params)
            records.push_back({"param." + p.name, p.tensor.shape, p.tensor.values});
    };
    emit_params(update.w_e);
    emit_params(update.w_c);
    emit_params(update.w_in);
    for (size_t i = 0; i < update.pairs.size(); ++i) {
        const auto& pair = update.pairs[i];
        const std::string base = "pair." + std::to_string(i);
        records.push_back({base + ".meta", {2},
                           {static_cast<float>(pair.client_id), static_cast<float>(pair.round)}});
        records.push_back({base + ".in", {static_cast<int>(pair.s_in.size())}, pair.s_in});
        records.push_back({base + ".out", {static_cast<int>(pair.s_out.size())}, pair.s_out});
    }
    return records;
}

ClientUpdate update_from_records(const std::vector<ParamRecord>& records) {
    ClientUpdate update;
    std::map<int, FeaturePair> pairs;
    for (const auto& rec : records) {
        if (rec.name == "meta.client_id") {
            update.client_id = static_cast<int>(rec.values.at(0));
        } else if (rec.name == "meta.local_loss") {
            update.local_loss = rec.values.at(0);
        } else if (rec.name == "meta.in_loss") {
            update.in_loss = rec.values.at(0);
        } else if (rec.name.rfind("param.", 0) == 0) {
            const std::string name = rec.name.substr(6);
            NamedParam<float> p;
            p.name = name;
            p.tensor = Tensor<float>(rec.shape, rec.values);
            if (name.rfind("e.", 0) == 0) {
                p.group = ParamGroup::Extractor;
                update.w_e.push_back(std::move(p));
            } else if (name.rfind("c.", 0) == 0) {
                p.group = ParamGroup::Classifier;
                update.w_c.push_back(std::move(p));
            } else if (name.rfind("in.", 0) == 0) {
                p.group = ParamGroup::Intermediate;
                update.w_in.push_back(std::move(p));
            } else {
                throw IngestError("record '" + rec.name + "' has no recognizable group prefix");
            }
        } else if (rec.name.rfind("pair.", 0) == 0) {
            const size_t dot = rec.name.find('.', 5);
            if (dot == std::string::npos)
                throw IngestError("malformed pair record name '" + rec.name + "'");
            const int idx = std::stoi(rec.name.substr(5, dot - 5));
            const std::string field = rec.name.substr(dot + 1);
            FeaturePair& pair = pairs[idx];
            if (field == "meta") {
                pair.client_id = static_cast<int>(rec.values.at(0));
                pair.round = static_cast<int>(rec.values.at(1));
            } else if (field == "in") {
                pair.s_in = rec.values;
            } else if (field == "out") {
                pair.s_out = rec.values;
            } else {
                throw IngestError("unknown pair field in record '" + rec.name + "'");
            }
        } else {
            throw IngestError("unknown record '" + rec.name + "' in client update");
        }
    }
    for (auto& [idx, pair] : pairs) update.pairs.push_back(std::move(pair));
    return update;
}

}  // namespace fedin
