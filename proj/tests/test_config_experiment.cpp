#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "fedin/checkpoint.hpp"
#include "fedin/config.hpp"
#include "fedin/errors.hpp"
#include "fedin/experiment.hpp"

using namespace fedin;
namespace fs = std::filesystem;

namespace {

std::string scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "fedin-experiment-tests";
    fs::create_directories(dir);
    return (dir / name).string();
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void spit(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << text;
}

std::string error_text(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const std::exception& e) {
        return e.what();
    }
    return "";
}

ExperimentConfig tiny_config() {
    ExperimentConfig cfg;
    cfg.mode = RunMode::Fedin;
    cfg.dataset.n = 60;
    cfg.dataset.num_classes = 4;
    cfg.dataset.dim = 6;
    cfg.dataset.spread = 0.3;
    cfg.dataset.test_n = 12;
    cfg.partition.kind = "iid";
    cfg.partition.num_clients = 3;
    cfg.model.feature_dim_in = 8;
    cfg.model.feature_dim_out = 8;
    cfg.num_rounds = 1;
    cfg.batch_size = 8;
    cfg.sample_size = 64;
    cfg.store_capacity = 64;
    cfg.upload_cap = 32;
    cfg.record_elapsed = false;
    cfg.seed = 3;
    return cfg;
}

}  // namespace

TEST_CASE("a minimal config fills in every default") {
    const ExperimentConfig cfg = parse_config_text(R"({"mode":"fedin","dataset":{}})", "test");
    CHECK(cfg.mode == RunMode::Fedin);
    CHECK(cfg.lambda == 2.0);
    CHECK(cfg.sample_size == 512);
    CHECK(cfg.store_capacity == 1024);
    CHECK(cfg.upload_cap == 256);
    CHECK(cfg.num_rounds == 60);
    CHECK(cfg.inner_epochs == 1);
    CHECK(cfg.batch_size == 32);
    CHECK(cfg.learning_rate == 1e-3);
    CHECK(cfg.lr_drop_round == -1);
    CHECK(cfg.seed == 1);
    CHECK(cfg.exclude_self == false);
    CHECK(cfg.record_elapsed == true);
    CHECK(cfg.eval_batch == 256);
    CHECK(cfg.dataset.kind == "synth");
    CHECK(cfg.dataset.n == 5000);
    CHECK(cfg.dataset.num_classes == 10);
    CHECK(cfg.dataset.dim == 32);
    CHECK(cfg.dataset.spread == 0.35);
    CHECK(cfg.dataset.test_n == 1000);
    CHECK(cfg.partition.kind == "dirichlet");
    CHECK(cfg.partition.alpha == 0.5);
    CHECK(cfg.partition.num_clients == 10);
    CHECK(cfg.model.mode == "mlp");
    CHECK(cfg.model.feature_dim_in == 64);
    CHECK(cfg.model.feature_dim_out == 64);
    CHECK(cfg.variant_assignment.empty());
}

TEST_CASE("config errors name the offending key") {
    auto message = [](const std::string& text) {
        return error_text([&] { parse_config_text(text, "test"); });
    };
    CHECK(message(R"({"mode":"fedin","dataset":{},"foo":1})").find("'foo'") !=
          std::string::npos);
    CHECK(message(R"({"mode":"fedin","dataset":{"bogus":1}})").find("test.dataset") !=
          std::string::npos);
    CHECK(message(R"({"mode":"fedin","dataset":{},"batch_size":"big"})").find("batch_size") !=
          std::string::npos);
    CHECK(message(R"({"dataset":{}})").find("'mode'") != std::string::npos);
    CHECK(message(R"({"mode":"fedin"})").find("'dataset'") != std::string::npos);
    CHECK(message(R"([1,2])").find("top level") != std::string::npos);
    CHECK(!message(R"({not json)").empty());
    CHECK(message(R"({"mode":"sideways","dataset":{}})").find("sideways") != std::string::npos);
}

TEST_CASE("configs survive a serialize and parse round trip") {
    ExperimentConfig cfg = tiny_config();
    cfg.mode = RunMode::FedinIgnoreDivergence;
    cfg.lambda = 0.5;
    cfg.lr_drop_round = 30;
    cfg.lr_drop_rate = 5e-5;
    cfg.exclude_self = true;
    cfg.variant_assignment = {"A", "B", "E"};
    cfg.partition.kind = "dirichlet";
    cfg.partition.alpha = 0.25;

    const ExperimentConfig back = parse_config_text(serialize_config(cfg), "roundtrip");
    CHECK(back == cfg);
}

TEST_CASE("config files are read from disk") {
    const ExperimentConfig cfg = tiny_config();
    const std::string path = scratch("config.json");
    spit(path, serialize_config(cfg));
    CHECK(parse_config(path) == cfg);
    CHECK_THROWS_AS(parse_config(scratch("missing.json")), ConfigError);
}

TEST_CASE("config validation rejects out-of-range settings") {
    auto expect_reject = [](const std::function<void(ExperimentConfig&)>& tweak) {
        ExperimentConfig cfg = tiny_config();
        tweak(cfg);
        CHECK_THROWS_AS(validate_config(cfg), ConfigError);
    };
    expect_reject([](ExperimentConfig& c) { c.num_rounds = 0; });
    expect_reject([](ExperimentConfig& c) { c.inner_epochs = -1; });
    expect_reject([](ExperimentConfig& c) { c.batch_size = 0; });
    expect_reject([](ExperimentConfig& c) { c.lambda = -1.0; });
    expect_reject([](ExperimentConfig& c) { c.sample_size = -1; });
    expect_reject([](ExperimentConfig& c) { c.store_capacity = 0; });
    expect_reject([](ExperimentConfig& c) { c.upload_cap = -1; });
    expect_reject([](ExperimentConfig& c) { c.learning_rate = 0.0; });
    expect_reject([](ExperimentConfig& c) { c.eval_batch = 0; });
    expect_reject([](ExperimentConfig& c) { c.partition.num_clients = 0; });
    expect_reject([](ExperimentConfig& c) { c.partition.kind = "sorted"; });
    expect_reject([](ExperimentConfig& c) {
        c.partition.kind = "dirichlet";
        c.partition.alpha = 0.0;
    });
    expect_reject([](ExperimentConfig& c) { c.dataset.kind = "csv"; });
    expect_reject([](ExperimentConfig& c) { c.dataset.num_classes = 1; });
    expect_reject([](ExperimentConfig& c) { c.dataset.n = 2; });
    expect_reject([](ExperimentConfig& c) { c.dataset.spread = -0.5; });
    expect_reject([](ExperimentConfig& c) { c.dataset.kind = "idx"; });  // no paths
    expect_reject([](ExperimentConfig& c) { c.model.mode = "rnn"; });
    expect_reject([](ExperimentConfig& c) { c.model.mode = "conv"; });  // synth data
    expect_reject([](ExperimentConfig& c) { c.model.feature_dim_in = 0; });
    expect_reject([](ExperimentConfig& c) { c.variant_assignment = {"A"}; });  // 3 clients
    expect_reject([](ExperimentConfig& c) {
        c.mode = RunMode::Fedavg;
        c.variant_assignment = {"A", "B", "A"};
    });
}

TEST_CASE("variant assignment defaults follow the ten-client pattern") {
    ExperimentConfig cfg = tiny_config();
    cfg.partition.num_clients = 10;
    const std::vector<Variant> ten = resolve_variants(cfg);
    const std::vector<Variant> expect = {Variant::A, Variant::A, Variant::B, Variant::C,
                                         Variant::C, Variant::D, Variant::D, Variant::E,
                                         Variant::E, Variant::E};
    CHECK(ten == expect);

    cfg.partition.num_clients = 12;
    const std::vector<Variant> twelve = resolve_variants(cfg);
    CHECK(twelve[10] == Variant::A);
    CHECK(twelve[11] == Variant::A);

    cfg.mode = RunMode::Fedavg;
    for (Variant v : resolve_variants(cfg)) CHECK(v == Variant::A);

    cfg.mode = RunMode::Fedin;
    cfg.partition.num_clients = 3;
    cfg.variant_assignment = {"e", "B", "a"};
    const std::vector<Variant> chosen = resolve_variants(cfg);
    CHECK(chosen == std::vector<Variant>{Variant::E, Variant::B, Variant::A});
}

TEST_CASE("metrics rows format losses and optional fields") {
    RoundMetrics m;
    m.round = 4;
    m.mean_accuracy = 0.5;
    m.mean_local_loss = 1.25;
    m.elapsed_seconds = 2.5;
    m.per_client_accuracy = {0.25, 0.75};

    CHECK(metrics_csv_header(2) ==
          "round,mean_accuracy,mean_local_loss,mean_in_loss,elapsed_seconds,acc_c0,acc_c1");
    CHECK(metrics_csv_row(m, true) == "4,0.5,1.25,,2.5,0.25,0.75");
    CHECK(metrics_csv_row(m, false) == "4,0.5,1.25,,0,0.25,0.75");
    m.mean_in_loss = 0.125;
    CHECK(metrics_csv_row(m, false) == "4,0.5,1.25,0.125,0,0.25,0.75");
}

TEST_CASE("a one-round experiment writes a header and one row") {
    ExperimentConfig cfg = tiny_config();
    const std::string csv = scratch("one-round.csv");
    const std::string prefix = scratch("one-round-");
    std::ostringstream log;

    const ExperimentResult result = run_experiment(cfg, csv, prefix, &log);
    REQUIRE(result.rounds.size() == 1);
    CHECK(result.best_round == 0);
    CHECK(result.final_mean_accuracy == result.rounds[0].mean_accuracy);
    CHECK(result.best_accuracy == result.final_mean_accuracy);
    CHECK(log.str().find("round 0:") != std::string::npos);
    CHECK(log.str().find("final mean accuracy") != std::string::npos);

    const std::string text = slurp(csv);
    std::istringstream lines(text);
    std::string header, row, extra;
    REQUIRE(std::getline(lines, header));
    REQUIRE(std::getline(lines, row));
    CHECK(!std::getline(lines, extra));
    CHECK(header == metrics_csv_header(3));
    CHECK(row.rfind("0,", 0) == 0);

    const MetricsRun parsed = parse_metrics_csv(csv);
    CHECK(parsed.num_clients == 3);
    CHECK(parsed.rounds == std::vector<int>{0});
    CHECK(parsed.mean_accuracy[0] ==
          doctest::Approx(result.rounds[0].mean_accuracy).epsilon(1e-9));

    // Per-client checkpoints restore into matching architectures; the default
    // mix gives the third client a different intermediate depth.
    SplitModel<float> c0 = build_model<float>(make_mlp_arch(Variant::A, 6, 8, 8, 4), 999);
    load_checkpoint(prefix + "client0.ckpt", c0);
    SplitModel<float> c2 = build_model<float>(make_mlp_arch(Variant::B, 6, 8, 8, 4), 999);
    load_checkpoint(prefix + "client2.ckpt", c2);
    CHECK_THROWS_AS(load_checkpoint(prefix + "client2.ckpt", c0), IngestError);
}

TEST_CASE("experiments repeat byte for byte when timing is excluded") {
    ExperimentConfig cfg = tiny_config();
    cfg.num_rounds = 2;

    const std::string a = scratch("repeat-a.csv");
    const std::string b = scratch("repeat-b.csv");
    run_experiment(cfg, a);
    run_experiment(cfg, b);
    CHECK(slurp(a) == slurp(b));
}

TEST_CASE("the worker thread count never changes results") {
    ExperimentConfig cfg = tiny_config();
    cfg.num_rounds = 2;

    const std::string serial = scratch("threads-1.csv");
    const std::string threaded = scratch("threads-4.csv");
    unsetenv("FEDIN_THREADS");
    run_experiment(cfg, serial);
    setenv("FEDIN_THREADS", "4", 1);
    run_experiment(cfg, threaded);
    unsetenv("FEDIN_THREADS");
    CHECK(slurp(serial) == slurp(threaded));
}

TEST_CASE("an early learning-rate drop equals running at the dropped rate") {
    ExperimentConfig drop = tiny_config();
    drop.num_rounds = 2;
    drop.learning_rate = 0.5;
    drop.lr_drop_round = 0;
    drop.lr_drop_rate = 1e-3;

    ExperimentConfig flat = tiny_config();
    flat.num_rounds = 2;
    flat.learning_rate = 1e-3;

    const std::string a = scratch("drop.csv");
    const std::string b = scratch("flat.csv");
    run_experiment(drop, a);
    run_experiment(flat, b);
    CHECK(slurp(a) == slurp(b));
}

TEST_CASE("metrics parsing rejects malformed files") {
    CHECK_THROWS_AS(parse_metrics_csv(scratch("absent.csv")), IngestError);

    const std::string bad_header = scratch("bad-header.csv");
    spit(bad_header, "epoch,accuracy\n0,0.5\n");
    CHECK_THROWS_AS(parse_metrics_csv(bad_header), IngestError);

    const std::string short_row = scratch("short-row.csv");
    spit(short_row, metrics_csv_header(2) + "\n0,0.5,1.0,,0,0.5,0.5\n1,0.6\n");
    const std::string msg = error_text([&] { parse_metrics_csv(short_row); });
    CHECK(msg.find(":3:") != std::string::npos);

    const std::string bad_number = scratch("bad-number.csv");
    spit(bad_number, metrics_csv_header(1) + "\nzero,0.5,1.0,,0,0.5\n");
    CHECK_THROWS_AS(parse_metrics_csv(bad_number), IngestError);

    const std::string empty = scratch("empty.csv");
    spit(empty, metrics_csv_header(1) + "\n");
    CHECK_THROWS_AS(parse_metrics_csv(empty), IngestError);
}

TEST_CASE("run comparison reports per-round deltas and a tail mean") {
    const std::string a = scratch("cmp-a.csv");
    const std::string b = scratch("cmp-b.csv");
    spit(a, metrics_csv_header(1) + "\n0,0.5,1,,0,0.5\n1,0.6,1,,0,0.6\n2,0.9,1,,0,0.9\n");
    spit(b, metrics_csv_header(1) + "\n0,0.4,1,,0,0.4\n1,0.7,1,,0,0.7\n2,0.8,1,,0,0.8\n");

    const CompareResult cmp = compare_runs(a, b);
    CHECK(cmp.rounds == std::vector<int>{0, 1, 2});
    REQUIRE(cmp.delta.size() == 3);
    CHECK(cmp.delta[0] == doctest::Approx(0.1));
    CHECK(cmp.delta[1] == doctest::Approx(-0.1));
    CHECK(cmp.delta[2] == doctest::Approx(0.1));
    CHECK(cmp.mean_last10_a == doctest::Approx((0.5 + 0.6 + 0.9) / 3));
    CHECK(cmp.mean_last10_b == doctest::Approx((0.4 + 0.7 + 0.8) / 3));
    CHECK(cmp.mean_last10_delta == doctest::Approx(0.1 / 3));

    std::ostringstream out;
    print_compare(cmp, out);
    CHECK(out.str().find("round,delta_mean_accuracy") != std::string::npos);
    CHECK(out.str().find("mean of last 3 rounds") != std::string::npos);

    // Self-comparison is a flat zero.
    const CompareResult self = compare_runs(a, a);
    for (double d : self.delta) CHECK(d == 0.0);
    CHECK(self.mean_last10_delta == 0.0);

    const std::string c = scratch("cmp-c.csv");
    spit(c, metrics_csv_header(1) + "\n0,0.5,1,,0,0.5\n");
    CHECK_THROWS_AS(compare_runs(a, c), ValidationError);
}
