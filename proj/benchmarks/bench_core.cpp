#include <benchmark/benchmark.h>

#include "fedin/graph.hpp"
#include "fedin/model.hpp"
#include "fedin/partition.hpp"
#include "fedin/protocol.hpp"
#include "fedin/resolve.hpp"
#include "fedin/rng.hpp"

namespace {

using namespace fedin;

std::shared_ptr<GradientLayout> bench_layout(size_t dim) {
    auto layout = std::make_shared<GradientLayout>();
    layout->group_sizes = {dim / 4 + 1, dim, dim / 8 + 1};
    return layout;
}

GradientSet random_set(const std::shared_ptr<GradientLayout>& layout, Rng& rng, bool in_only) {
    GradientSet gs(layout);
    for (int g = 0; g < 3; ++g) {
        if (in_only && g != static_cast<int>(ParamGroup::Intermediate)) continue;
        for (auto& v : gs.groups[g]) v = rng.normal();
    }
    return gs;
}

void bm_resolve_simplified(benchmark::State& state) {
    Rng rng(7);
    auto layout = bench_layout(static_cast<size_t>(state.range(0)));
    const GradientSet g_in = random_set(layout, rng, true);
    const GradientSet g_local = random_set(layout, rng, false);
    for (auto _ : state) {
        GradientSet z = resolve_simplified(g_in, g_local, 2.0);
        benchmark::DoNotOptimize(z.groups[1].data());
    }
}
BENCHMARK(bm_resolve_simplified)->Arg(256)->Arg(4096);

void bm_resolve_analytic(benchmark::State& state) {
    Rng rng(7);
    auto layout = bench_layout(static_cast<size_t>(state.range(0)));
    const GradientSet g_in = random_set(layout, rng, true);
    const GradientSet g_local = random_set(layout, rng, false);
    for (auto _ : state) {
        GradientSet z = resolve_analytic(g_in, g_local);
        benchmark::DoNotOptimize(z.groups[1].data());
    }
}
BENCHMARK(bm_resolve_analytic)->Arg(256)->Arg(4096);

void bm_affine_forward(benchmark::State& state) {
    const int dim = static_cast<int>(state.range(0));
    Rng rng(11);
    Tensor<float> x({32, dim}), w({dim, dim}), b({dim});
    for (auto& v : x.values) v = static_cast<float>(rng.normal());
    for (auto& v : w.values) v = static_cast<float>(rng.normal());
    for (auto _ : state) {
        Graph<float> g;
        const NodeId out = g.affine(g.leaf(x, false), g.leaf(w, false), g.leaf(b, false));
        benchmark::DoNotOptimize(g.out(out).values.data());
    }
}
BENCHMARK(bm_affine_forward)->Arg(64)->Arg(128);

void bm_affine_backward(benchmark::State& state) {
    const int dim = static_cast<int>(state.range(0));
    Rng rng(11);
    Tensor<float> x({32, dim}), w({dim, dim}), b({dim});
    std::vector<int> labels(32, 0);
    for (auto& v : x.values) v = static_cast<float>(rng.normal());
    for (auto& v : w.values) v = static_cast<float>(rng.normal());
    for (auto _ : state) {
        Graph<float> g;
        const NodeId wn = g.leaf(w, true);
        const NodeId out = g.affine(g.leaf(x, false), wn, g.leaf(b, true));
        const NodeId loss = g.mse_loss(out, Tensor<float>({32, dim}));
        g.backward(loss);
        benchmark::DoNotOptimize(g.grad(wn).data());
    }
}
BENCHMARK(bm_affine_backward)->Arg(64)->Arg(128);

void bm_conv_forward(benchmark::State& state) {
    Rng rng(13);
    Tensor<float> x({8, 8, 14, 14}), k({8, 8, 3, 3}), b({8});
    for (auto& v : x.values) v = static_cast<float>(rng.normal());
    for (auto& v : k.values) v = static_cast<float>(rng.normal());
    for (auto _ : state) {
        Graph<float> g;
        const NodeId out = g.conv2d(g.leaf(x, false), g.leaf(k, false), g.leaf(b, false), 1, 1);
        benchmark::DoNotOptimize(g.out(out).values.data());
    }
}
BENCHMARK(bm_conv_forward);

void bm_partition_dirichlet(benchmark::State& state) {
    const Dataset ds = synth_blobs(20000, 10, 8, 0.3f, 3);
    PartitionSpec spec;
    spec.kind = PartitionKind::Dirichlet;
    spec.alpha = 0.5;
    spec.num_clients = 10;
    spec.seed = 3;
    for (auto _ : state) {
        auto shards = partition(ds, spec);
        benchmark::DoNotOptimize(shards.data());
    }
}
BENCHMARK(bm_partition_dirichlet);

void bm_aggregate_shells(benchmark::State& state) {
    const ArchSpec arch = make_mlp_arch(Variant::A, 32, 64, 64, 10);
    std::vector<ClientUpdate> updates;
    for (int k = 0; k < 10; ++k) {
        auto model = build_model<float>(arch, 100 + static_cast<uint64_t>(k));
        ClientUpdate u;
        u.client_id = k;
        for (const auto& p : model.params) {
            if (p.group == ParamGroup::Extractor) u.w_e.push_back(p);
            if (p.group == ParamGroup::Classifier) u.w_c.push_back(p);
        }
        updates.push_back(std::move(u));
    }
    for (auto _ : state) {
        auto shells = aggregate_shells(updates);
        benchmark::DoNotOptimize(shells.first.data());
    }
}
BENCHMARK(bm_aggregate_shells);

void bm_client_local_step(benchmark::State& state) {
    const ArchSpec arch = make_mlp_arch(Variant::C, 32, 64, 64, 10);
    const auto model = build_model<float>(arch, 5);
    Rng rng(17);
    Tensor<float> batch({32, 32});
    std::vector<int> labels(32);
    for (auto& v : batch.values) v = static_cast<float>(rng.normal());
    for (auto& l : labels) l = static_cast<int>(rng.below(10));
    for (auto _ : state) {
        LocalStepResult r = client_local_step(model, batch, labels, 0, 0);
        benchmark::DoNotOptimize(r.g_local.groups[1].data());
    }
}
BENCHMARK(bm_client_local_step);

}  // namespace

BENCHMARK_MAIN();
