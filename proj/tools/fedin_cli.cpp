#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "fedin/experiment.hpp"
#include "fedin/fd_check.hpp"
#include "fedin/resolve.hpp"
#include "fedin/rng.hpp"

namespace {

std::string checkpoint_prefix_for(const std::string& csv_path) {
    std::string prefix = csv_path;
    const size_t dot = prefix.rfind(".csv");
    if (dot != std::string::npos && dot == prefix.size() - 4) prefix.resize(dot);
    return prefix + ".";
}

int cmd_run(const std::string& config_path, bool have_seed, uint64_t seed,
            const std::string& mode, int rounds, const std::string& out) {
    fedin::ExperimentConfig cfg = fedin::parse_config(config_path);
    if (have_seed) cfg.seed = seed;
    if (!mode.empty()) cfg.mode = fedin::run_mode_from_string(mode);
    if (rounds > 0) cfg.num_rounds = rounds;
    fedin::validate_config(cfg);
    fedin::run_experiment(cfg, out, checkpoint_prefix_for(out), &std::cout);
    return 0;
}

int cmd_compare(const std::string& csv_a, const std::string& csv_b) {
    const fedin::CompareResult result = fedin::compare_runs(csv_a, csv_b);
    fedin::print_compare(result, std::cout);
    return 0;
}

// Random gradient sets shaped like a model's: three groups, with the
// IN-training gradient zero outside the intermediate group.
struct ResolverProbe {
    fedin::GradientSet g_in;
    fedin::GradientSet g_local;
};

ResolverProbe make_probe(fedin::Rng& rng, int dim_in) {
    auto layout = std::make_shared<fedin::GradientLayout>();
    layout->group_sizes = {4, static_cast<size_t>(dim_in), 3};
    ResolverProbe probe{fedin::GradientSet(layout), fedin::GradientSet(layout)};
    for (int g = 0; g < 3; ++g)
        for (auto& v : probe.g_local.groups[g]) v = rng.normal();
    for (auto& v : probe.g_in.group(fedin::ParamGroup::Intermediate)) v = rng.normal();
    return probe;
}

int cmd_check_grads(uint64_t seed) {
    bool ok = true;

    for (char letter : {'A', 'B', 'C', 'D', 'E'}) {
        const fedin::Variant v = fedin::variant_from_string(std::string(1, letter));
        const fedin::ArchSpec arch = fedin::make_mlp_arch(v, 12, 16, 16, 6);
        fedin::Rng rng(fedin::derive_seed(seed, "check-grads", static_cast<uint64_t>(letter)));
        fedin::Tensor<float> x({4, 12});
        for (auto& val : x.values) val = static_cast<float>(rng.normal());
        std::vector<int> labels(4);
        for (auto& l : labels) l = static_cast<int>(rng.below(6));
        fedin::Tensor<float> target({4, 16});
        for (auto& val : target.values) val = static_cast<float>(rng.normal());

        const auto model32 = fedin::build_model<float>(arch, seed);
        const auto r32 = fedin::finite_difference_check(
            model32, fedin::CheckLoss::CrossEntropyFull, x, labels, target);
        const auto model64 = model32.cast<double>();
        const auto r64 = fedin::finite_difference_check(
            model64, fedin::CheckLoss::CrossEntropyFull, x.cast<double>(), labels,
            target.cast<double>());
        const bool pass = r32.max_rel_error < 1e-4 && r64.max_rel_error < 1e-6;
        ok = ok && pass;
        std::cout << "variant " << letter << ": max rel error " << r32.max_rel_error
                  << " (32-bit, worst " << r32.worst_param << "), " << r64.max_rel_error
                  << " (64-bit) " << (pass ? "ok" : "FAIL") << "\n";
    }

    fedin::Rng rng(fedin::derive_seed(seed, "check-resolver"));
    double worst = 0.0;
    for (int i = 0; i < 200; ++i) {
        ResolverProbe probe = make_probe(rng, 2 + static_cast<int>(rng.below(127)));
        const fedin::GradientSet z = fedin::resolve_analytic(probe.g_in, probe.g_local);
        const fedin::GradientSet oracle = fedin::projection_oracle(probe.g_in, probe.g_local);
        for (int g = 0; g < 3; ++g)
            for (size_t k = 0; k < z.groups[g].size(); ++k)
                worst = std::max(worst, std::abs(z.groups[g][k] - oracle.groups[g][k]));
    }
    const bool resolver_ok = worst < 1e-6;
    ok = ok && resolver_ok;
    std::cout << "projection vs oracle: max elementwise gap " << worst << " "
              << (resolver_ok ? "ok" : "FAIL") << "\n";

    return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Heterogeneous federated learning simulator"};
    app.require_subcommand(1);

    std::string config_path, mode, out = "metrics.csv";
    uint64_t seed = 0;
    int rounds = 0;
    auto* run = app.add_subcommand("run", "Run an experiment from a config file");
    run->add_option("--config", config_path, "Path to the JSON config")->required();
    auto* seed_opt = run->add_option("--seed", seed, "Override the config seed");
    run->add_option("--mode", mode, "Override the run mode");
    run->add_option("--rounds", rounds, "Override the round count");
    run->add_option("--out", out, "Metrics CSV path");

    std::string csv_a, csv_b;
    auto* compare = app.add_subcommand("compare", "Compare two metrics CSVs");
    compare->add_option("csv_a", csv_a, "First metrics CSV")->required();
    compare->add_option("csv_b", csv_b, "Second metrics CSV")->required();

    uint64_t grad_seed = 1;
    auto* check = app.add_subcommand("check-grads", "Run gradient and projection checks");
    check->add_option("--seed", grad_seed, "Seed for the random probes");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed())
            return cmd_run(config_path, seed_opt->count() > 0, seed, mode, rounds, out);
        if (compare->parsed()) return cmd_compare(csv_a, csv_b);
        if (check->parsed()) return cmd_check_grads(grad_seed);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
