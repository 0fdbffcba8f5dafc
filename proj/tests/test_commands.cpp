#include "doctest.h"

#include <cmath>
#include <fstream>
#include <sstream>

#include "oracles.hpp"
#include "sohpulse/commands.hpp"
#include "sohpulse/error.hpp"
#include "sohpulse/simbench.hpp"

using namespace sohpulse;
using namespace sohpulse::cli;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("sohpulse_" + name)) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

template <typename T, typename Read>
T load(const fs::path& p, Read&& read) {
    std::ifstream in(p);
    return read(in, p.string());
}

void write_spec(const fs::path& p, const std::string& json) { io::write_text_file(p, json); }

const char* kNoiseless = R"({"noise": {"voltage_sigma": 0, "capacity_sigma": 0, "param_jitter": 0, "cell_spread": 0}})";

}  // namespace

TEST_CASE("fit") {
    TempDir dir("fit");
    std::ostringstream out, err;

    SUBCASE("no inputs is a usage error") {
        CHECK(cmd_fit({{}, dir.path / "p.csv"}, out, err) == 2);
        CHECK(err.str().find("usage") != std::string::npos);
    }

    SUBCASE("noiseless traces come back within 1e-4") {
        write_spec(dir.path / "spec.json", R"([{"battery_id": 2, "n_cycles": 6, "burn_in_cycles": 0}])");
        write_spec(dir.path / "profile.json", kNoiseless);
        REQUIRE(cmd_simulate({dir.path / "spec.json", dir.path / "profile.json", 1, dir.path / "sim"}, out, err) == 0);
        FitConfig config{{dir.path / "sim" / "traces"}, dir.path / "params.csv"};
        config.jobs = 3;
        REQUIRE(cmd_fit(config, out, err) == 0);
        const auto rows = load<std::vector<io::ParamsRow>>(dir.path / "params.csv", io::read_params_csv);
        const auto truth = load<std::vector<CycleRecord>>(dir.path / "sim" / "ground_truth.csv", io::read_ground_truth_csv);
        REQUIRE(rows.size() == 6);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            CHECK(rows[i].battery_id == 2);
            CHECK(rows[i].cycle_index == static_cast<int>(i));
            CHECK(rows[i].converged);
            const auto got = rows[i].params.to_array();
            const auto want = truth[i].params.to_array();
            for (std::size_t j = 0; j < 5; ++j) CHECK(oracle::rel_err(got[j], want[j]) < 1e-4);
        }

        // Thread count never changes the output.
        config.jobs = 1;
        config.output = dir.path / "params1.csv";
        REQUIRE(cmd_fit(config, out, err) == 0);
        CHECK(io::read_text_file(dir.path / "params.csv") == io::read_text_file(dir.path / "params1.csv"));
    }

    SUBCASE("the same battery and cycle twice is fatal") {
        write_spec(dir.path / "spec.json", R"([{"battery_id": 1, "n_cycles": 1, "burn_in_cycles": 0}])");
        REQUIRE(cmd_simulate({dir.path / "spec.json", std::nullopt, 1, dir.path / "a"}, out, err) == 0);
        REQUIRE(cmd_simulate({dir.path / "spec.json", std::nullopt, 2, dir.path / "b"}, out, err) == 0);
        CHECK(cmd_fit({{dir.path / "a" / "traces", dir.path / "b" / "traces"}, dir.path / "p.csv"}, out, err) == 1);
        CHECK(err.str().find("duplicate") != std::string::npos);
        CHECK_FALSE(fs::exists(dir.path / "p.csv"));
    }

    SUBCASE("a failed fit becomes a NaN row and a nonzero exit") {
        write_spec(dir.path / "spec.json", R"([{"battery_id": 1, "n_cycles": 1, "burn_in_cycles": 0}])");
        REQUIRE(cmd_simulate({dir.path / "spec.json", std::nullopt, 1, dir.path / "sim"}, out, err) == 0);
        io::write_text_file(dir.path / "sim" / "traces" / "b1_c1.csv",
                            "t_s,current_a,voltage_delta_v\n0,-60,-0.06\n1,-60,-0.07\n2,-60,-0.08\n");
        CHECK(cmd_fit({{dir.path / "sim" / "traces"}, dir.path / "p.csv"}, out, err) == 1);
        const auto rows = load<std::vector<io::ParamsRow>>(dir.path / "p.csv", io::read_params_csv);
        REQUIRE(rows.size() == 2);
        CHECK(rows[0].fit_ok());
        CHECK_FALSE(rows[1].fit_ok());
        CHECK(err.str().find("cycle 1") != std::string::npos);
    }
}

TEST_CASE("join_records") {
    std::ostringstream err;
    const EcmParams p{1e-3, 5e-4, 1.0, 8e-4, 20.0};
    const double nan = std::nan("");
    const std::vector<io::ParamsRow> params{{1, 1, p, 0, true, 0}, {1, 0, p, 0, true, 0}, {1, 2, {nan, nan, nan, nan, nan}, nan, false, nan}};
    const std::vector<io::CycleEntry> cycles{{1, 0, 104.0}, {1, 1, 103.0}, {1, 2, 102.0}, {1, 3, 101.0}};
    const auto records = join_records(params, cycles, err);
    REQUIRE(records.size() == 2);
    CHECK(records[0].cycle_index == 0);
    CHECK(records[1].discharged_ah == 103.0);
    CHECK(err.str().find("skipped 1") != std::string::npos);
    CHECK(err.str().find("1 cycle(s) have no fitted") != std::string::npos);

    try {
        join_records({{9, 0, p, 0, true, 0}}, cycles, err);
        FAIL("expected join mismatch");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::JoinMismatch);
    }
    try {
        join_records(params, {{1, 0, 1.0}, {1, 0, 2.0}}, err);
        FAIL("expected duplicate");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::DuplicateKey);
    }
}

TEST_CASE("pipeline") {
    TempDir dir("pipeline");
    std::ostringstream out, err;
    const EcmParams p{1e-3, 5e-4, 1.0, 8e-4, 20.0};
    std::vector<io::ParamsRow> params;
    std::vector<io::CycleEntry> cycles;
    for (int c = 0; c < 30; ++c) {
        params.push_back({1, c, p, 0.0, true, 0.0});
        cycles.push_back({1, c, 100.0});
    }
    std::ofstream(dir.path / "params.csv") << [&] { std::ostringstream s; io::write_params_csv(s, params); return s.str(); }();
    std::ofstream(dir.path / "cycles.csv") << [&] { std::ostringstream s; io::write_cycles_csv(s, cycles); return s.str(); }();

    SUBCASE("constant inputs pass through unchanged") {
        PipelineConfig config{dir.path / "params.csv", dir.path / "cycles.csv"};
        config.output = dir.path / "features.csv";
        REQUIRE(cmd_pipeline(config, out, err) == 0);
        const auto rows = load<std::vector<FeatureRow>>(config.output, io::read_features_csv);
        REQUIRE(rows.size() == 30);
        for (const auto& r : rows) {
            CHECK(r.r1 == p.r1);
            CHECK(r.tau2 == p.tau2);
            CHECK(r.soh_percent == 100.0);
        }
    }

    SUBCASE("a correction shifts SoH by 100 * delta / reference") {
        io::write_text_file(dir.path / "corr.csv", "battery_id,cycle_from,cycle_to,delta_ah\n1,10,29,-1\n");
        PipelineConfig config{dir.path / "params.csv", dir.path / "cycles.csv", dir.path / "corr.csv", 1, 100.0,
                              dir.path / "features.csv"};
        REQUIRE(cmd_pipeline(config, out, err) == 0);
        const auto rows = load<std::vector<FeatureRow>>(config.output, io::read_features_csv);
        REQUIRE(rows.size() == 30);
        CHECK(rows[9].soh_percent == 100.0);
        CHECK(rows[10].soh_percent == doctest::Approx(99.0).epsilon(1e-14));
    }

    SUBCASE("bad corrections exit nonzero") {
        io::write_text_file(dir.path / "corr.csv", "battery_id,cycle_from,cycle_to,delta_ah\n5,1,2,-1\n");
        PipelineConfig config{dir.path / "params.csv", dir.path / "cycles.csv", dir.path / "corr.csv"};
        config.output = dir.path / "features.csv";
        CHECK(cmd_pipeline(config, out, err) == 1);
        CHECK(err.str().find("battery 5") != std::string::npos);
    }
}

TEST_CASE("train and eval") {
    TempDir dir("train");
    std::ostringstream out, err;
    std::vector<FeatureRow> rows;
    for (BatteryId id = 1; id <= 4; ++id) {
        for (int c = 0; c < 40; ++c) {
            FeatureRow r{4e-4 + 1e-5 * c + 3e-6 * id, 8e-4 + 1.3e-5 * ((c * 7) % 40), 1.0 + 0.01 * ((c * 11) % 40),
                         20.0 + 0.1 * ((c * 13) % 40) + 0.05 * id, 0.0, id, c};
            r.soh_percent = 120.0 - 20000.0 * r.r1 - 5000.0 * r.r2 - 3.0 * r.tau1 - 0.4 * r.tau2;
            rows.push_back(r);
        }
    }
    std::ofstream(dir.path / "features.csv") << [&] { std::ostringstream s; io::write_features_csv(s, rows); return s.str(); }();

    TrainConfig train_config{dir.path / "features.csv", {3, 4}, EstimatorKind::Ols, 0, dir.path / "model.json"};
    REQUIRE(cmd_train(train_config, out, err) == 0);
    const SohModel model = io::model_from_json(nlohmann::json::parse(io::read_text_file(dir.path / "model.json")));
    CHECK(model.training_meta.battery_ids == std::vector<BatteryId>{3, 4});
    // The model file reproduces in-memory predictions exactly.
    std::vector<FeatureRow> train_rows(rows.begin() + 80, rows.end());
    const SohModel direct = train(train_rows, EstimatorKind::Ols, 0);
    for (const auto& r : rows) CHECK(predict(model, r) == predict(direct, r));

    EvalConfig eval_config{dir.path / "features.csv", dir.path / "model.json", {1, 2}, dir.path / "report.csv",
                           dir.path / "residuals.csv"};
    REQUIRE(cmd_eval(eval_config, out, err) == 0);
    const auto report = load<std::map<BatteryId, BatteryMetrics>>(dir.path / "report.csv", io::read_report_csv);
    REQUIRE(report.size() == 2);
    for (const auto& [id, m] : report) {
        CHECK(m.mae_percent <= 1e-9);
        CHECK(m.r2 == doctest::Approx(1.0));
    }
    CHECK(load<std::vector<Residual>>(dir.path / "residuals.csv", io::read_residuals_csv).size() == 80);
    CHECK(out.str().find("battery 1: MAE") != std::string::npos);

    SUBCASE("test ids overlapping training ids are refused") {
        eval_config.test_ids = {2, 3};
        CHECK(cmd_eval(eval_config, out, err) == 1);
    }
    SUBCASE("unknown battery") {
        eval_config.test_ids = {8};
        CHECK(cmd_eval(eval_config, out, err) == 1);
        train_config.train_ids = {9};
        CHECK(cmd_train(train_config, out, err) == 1);
    }
}

TEST_CASE("simulate") {
    TempDir dir("simulate");
    std::ostringstream out, err;
    write_spec(dir.path / "spec.json",
               R"([{"battery_id": 1, "n_cycles": 5}, {"battery_id": 2, "n_cycles": 0}])");
    REQUIRE(cmd_simulate({dir.path / "spec.json", std::nullopt, 9, dir.path / "a"}, out, err) == 0);
    REQUIRE(cmd_simulate({dir.path / "spec.json", std::nullopt, 9, dir.path / "b"}, out, err) == 0);
    for (const char* name : {"cycles.csv", "ground_truth.csv", "traces/b1_c0.csv", "traces/b1_c4.csv"}) {
        CHECK(io::read_text_file(dir.path / "a" / name) == io::read_text_file(dir.path / "b" / name));
    }
    const auto cycles = load<std::vector<io::CycleEntry>>(dir.path / "a" / "cycles.csv", io::read_cycles_csv);
    CHECK(cycles.size() == 5);
    CHECK_FALSE(fs::exists(dir.path / "a" / "traces" / "b2_c0.csv"));

    write_spec(dir.path / "empty.json", R"([{"battery_id": 3, "n_cycles": 0}])");
    REQUIRE(cmd_simulate({dir.path / "empty.json", std::nullopt, 0, dir.path / "c"}, out, err) == 0);
    CHECK(io::read_text_file(dir.path / "c" / "cycles.csv") == std::string(io::kCyclesHeader) + "\n");

    write_spec(dir.path / "bad.json", R"([{"battery_id": 1, "colour": "red"}])");
    CHECK(cmd_simulate({dir.path / "bad.json", std::nullopt, 0, dir.path / "d"}, out, err) == 1);
    CHECK(err.str().find("colour") != std::string::npos);
}
