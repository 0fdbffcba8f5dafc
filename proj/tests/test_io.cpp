#include "doctest.h"

#include <bit>
#include <cmath>
#include <filesystem>
#include <random>
#include <sstream>

#include "sohpulse/error.hpp"
#include "sohpulse/io.hpp"

using namespace sohpulse;
using namespace sohpulse::io;

namespace {

template <typename F>
std::string parse_error(F&& f) {
    try {
        f();
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Parse);
        return e.what();
    }
    FAIL("expected a parse error");
    return {};
}

}  // namespace

TEST_CASE("numbers round-trip exactly") {
    std::mt19937_64 rng(1);
    std::uniform_int_distribution<std::uint64_t> bits;
    int checked = 0;
    while (checked < 10000) {
        const double v = std::bit_cast<double>(bits(rng));
        if (!std::isfinite(v)) continue;
        CHECK(parse_number(format_number(v), "x") == v);
        ++checked;
    }
    for (double v : {0.0, -0.0, 1e-300, 5e-324, 0.1, 105.0, -60.0}) CHECK(parse_number(format_number(v), "x") == v);
    CHECK(std::isnan(parse_number(format_number(std::nan("")), "x")));
    CHECK(parse_number(" 2.5 ", "x") == 2.5);

    const auto what = parse_error([] { parse_number("1.2.3", "f.csv:4"); });
    CHECK(what.find("f.csv:4") != std::string::npos);
    parse_error([] { parse_number("", "x"); });
    parse_error([] { parse_int("3.5", "x"); });
    CHECK(parse_int("-12", "x") == -12);
}

TEST_CASE("trace file names") {
    CHECK(trace_filename(3, 117) == "b3_c117.csv");
    CHECK(parse_trace_filename("b3_c117.csv") == std::pair{3, 117});
    CHECK_FALSE(parse_trace_filename("b3_c117.txt"));
    CHECK_FALSE(parse_trace_filename("x3_c117.csv"));
    CHECK_FALSE(parse_trace_filename("b3c117.csv"));
    CHECK_FALSE(parse_trace_filename("b_c1.csv"));
    CHECK_FALSE(parse_trace_filename("b3_c1x.csv"));
}

TEST_CASE("trace csv round-trip") {
    const EcmParams p{1.1e-3, 5.3e-4, 0.97, 8.2e-4, 21.3};
    const PulseTrace trace = synthesize_trace(p, -60.0, 10.0, 10.0, {4, 9, 21.0});
    std::stringstream buf;
    write_trace_csv(buf, trace);
    const PulseTrace back = read_trace_csv(buf, "mem", trace.meta());
    REQUIRE(back.size() == trace.size());
    for (std::size_t i = 0; i < trace.size(); ++i) {
        CHECK(back.samples()[i].t == trace.samples()[i].t);
        CHECK(back.samples()[i].current == trace.samples()[i].current);
        CHECK(back.samples()[i].voltage_delta == trace.samples()[i].voltage_delta);
    }

    const auto dir = std::filesystem::temp_directory_path() / "sohpulse_test_io";
    std::filesystem::create_directories(dir);
    std::ostringstream text;
    write_trace_csv(text, trace);
    write_text_file(dir / "b4_c9.csv", text.str());
    const PulseTrace from_file = read_trace_file(dir / "b4_c9.csv");
    CHECK(from_file.meta().battery_id == 4);
    CHECK(from_file.meta().cycle_index == 9);
    write_text_file(dir / "pulse.csv", text.str());
    parse_error([&] { read_trace_file(dir / "pulse.csv"); });
    try {
        read_trace_file(dir / "b1_c1.csv");
        FAIL("expected io error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Io);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("csv parse errors carry file and line") {
    SUBCASE("wrong header") {
        std::istringstream in("t,i,v\n0,1,2\n");
        const auto what = parse_error([&] { read_trace_csv(in, "trace.csv", {}); });
        CHECK(what.find("trace.csv:1") != std::string::npos);
    }
    SUBCASE("bad number") {
        std::istringstream in("t_s,current_a,voltage_delta_v\n0,-60,-0.06\n0.1,-60,oops\n");
        const auto what = parse_error([&] { read_trace_csv(in, "trace.csv", {}); });
        CHECK(what.find("trace.csv:3") != std::string::npos);
        CHECK(what.find("oops") != std::string::npos);
    }
    SUBCASE("wrong field count") {
        std::istringstream in("battery_id,cycle_index,discharged_ah\n1,2\n");
        const auto what = parse_error([&] { read_cycles_csv(in, "cycles.csv"); });
        CHECK(what.find("cycles.csv:2") != std::string::npos);
    }
    SUBCASE("empty file") {
        std::istringstream in("");
        parse_error([&] { read_cycles_csv(in, "cycles.csv"); });
    }
    SUBCASE("invalid trace content") {
        std::istringstream in("t_s,current_a,voltage_delta_v\n0.2,-60,-0.06\n0.1,-60,-0.07\n");
        parse_error([&] { read_trace_csv(in, "trace.csv", {}); });
    }
    SUBCASE("header only is an empty table") {
        std::istringstream in("battery_id,cycle_index,discharged_ah\n");
        CHECK(read_cycles_csv(in, "cycles.csv").empty());
    }
}

TEST_CASE("table round-trips") {
    SUBCASE("params, including a failed fit") {
        const double nan = std::numeric_limits<double>::quiet_NaN();
        const std::vector<ParamsRow> rows{
            {1, 0, {1e-3, 5e-4, 1.0, 8e-4, 20.0}, 1.234e-9, true, 3.7e-6},
            {1, 1, {nan, nan, nan, nan, nan}, nan, false, nan},
        };
        std::stringstream buf;
        write_params_csv(buf, rows);
        const auto back = read_params_csv(buf, "mem");
        REQUIRE(back.size() == 2);
        CHECK(back[0] == rows[0]);
        CHECK(back[0].fit_ok());
        CHECK_FALSE(back[1].fit_ok());
        CHECK_FALSE(back[1].converged);
        CHECK(std::isnan(back[1].params.r1));
    }
    SUBCASE("cycles") {
        const std::vector<CycleEntry> rows{{1, 0, 101.9}, {2, 5, 99.123456789012345}};
        std::stringstream buf;
        write_cycles_csv(buf, rows);
        CHECK(read_cycles_csv(buf, "mem") == rows);
    }
    SUBCASE("corrections") {
        const std::vector<Correction> rows{{2, 51, 259, -1.0}};
        std::stringstream buf;
        write_corrections_csv(buf, rows);
        const auto back = read_corrections_csv(buf, "mem");
        REQUIRE(back.size() == 1);
        CHECK(back[0].battery_id == 2);
        CHECK(back[0].cycle_from == 51);
        CHECK(back[0].cycle_to == 259);
        CHECK(back[0].delta_ah == -1.0);
    }
    SUBCASE("features") {
        const std::vector<FeatureRow> rows{{5.1e-4, 8.3e-4, 1.02, 20.4, 97.3, 3, 71}};
        std::stringstream buf;
        write_features_csv(buf, rows);
        const auto back = read_features_csv(buf, "mem");
        REQUIRE(back.size() == 1);
        CHECK(back[0].r1 == rows[0].r1);
        CHECK(back[0].tau2 == rows[0].tau2);
        CHECK(back[0].soh_percent == rows[0].soh_percent);
        CHECK(back[0].cycle_index == 71);
    }
    SUBCASE("ground truth") {
        const std::vector<CycleRecord> rows{{4, 12, 104.1, {1e-3, 5e-4, 1.0, 8e-4, 20.0}, 99.2}};
        std::stringstream buf;
        write_ground_truth_csv(buf, rows);
        const auto back = read_ground_truth_csv(buf, "mem");
        REQUIRE(back.size() == 1);
        CHECK(back[0].params == rows[0].params);
        CHECK(back[0].discharged_ah == 104.1);
        CHECK(*back[0].soh_percent == 99.2);
    }
    SUBCASE("report and residuals") {
        EvalReport report;
        report.mae_percent = 0.8;
        report.r2 = 0.9;
        report.per_battery[1] = {0.7, 0.91, 2.5};
        report.per_battery[2] = {0.9, 0.88, 3.1};
        report.residuals = {{1, 80, 97.5, 97.0, 0.5}, {2, 81, 96.0, 96.25, -0.25}};
        std::stringstream a, b;
        write_report_csv(a, report);
        write_residuals_csv(b, report);
        const auto per = read_report_csv(a, "mem");
        REQUIRE(per.size() == 2);
        CHECK(per.at(2).max_abs_error_percent == 3.1);
        const auto res = read_residuals_csv(b, "mem");
        REQUIRE(res.size() == 2);
        CHECK(res[1].error == -0.25);
        CHECK(res[1].cycle_index == 81);
    }
}

TEST_CASE("model json") {
    SohModel m;
    m.kind = EstimatorKind::Huber;
    m.coefficients = {-4012.3456789, -2500.1, -11.9, -0.81};
    m.intercept = 125.000000001;
    m.training_meta = {{3, 4}, 680, 0.42, std::numeric_limits<double>::quiet_NaN()};

    const auto doc = nlohmann::json::parse(model_to_json(m).dump());
    CHECK(doc["feature_names"] == nlohmann::json({"r1", "r2", "tau1", "tau2"}));
    CHECK(doc["format_version"] == kModelFormatVersion);
    CHECK(doc["training_meta"]["train_r2"].is_null());
    const SohModel back = model_from_json(doc);
    CHECK(back.kind == m.kind);
    CHECK(back.coefficients == m.coefficients);
    CHECK(back.intercept == m.intercept);
    CHECK(back.training_meta.battery_ids == m.training_meta.battery_ids);
    CHECK(back.training_meta.row_count == 680);
    CHECK(std::isnan(back.training_meta.train_r2));

    auto bad = doc;
    bad["feature_names"] = {"r1", "tau1", "r2", "tau2"};
    parse_error([&] { model_from_json(bad); });
    bad = doc;
    bad["format_version"] = 2;
    parse_error([&] { model_from_json(bad); });
    bad = doc;
    bad.erase("intercept");
    parse_error([&] { model_from_json(bad); });
    bad = doc;
    bad["coefficients"] = {1, 2, 3};
    parse_error([&] { model_from_json(bad); });
}

TEST_CASE("spec and profile json") {
    SUBCASE("specs round-trip") {
        auto specs = default_paper_campaign();
        specs[0].burn_in_cycles = 65;
        const auto back = specs_from_json(nlohmann::json::parse(specs_to_json(specs).dump()));
        REQUIRE(back.size() == 4);
        CHECK(back[0].burn_in_cycles == 65);
        CHECK_FALSE(back[1].burn_in_cycles);
        CHECK(back[3].end_soh == 85.0);
        CHECK(back[2].n_cycles == 420);
    }
    SUBCASE("absent fields keep defaults") {
        const auto specs = specs_from_json(nlohmann::json::parse(R"([{"battery_id": 7, "n_cycles": 12}])"));
        CHECK(specs[0].battery_id == 7);
        CHECK(specs[0].n_cycles == 12);
        CHECK(specs[0].nominal_ah == 105.0);
    }
    SUBCASE("spec errors") {
        parse_error([] { specs_from_json(nlohmann::json::parse(R"({"battery_id": 1})")); });
        parse_error([] { specs_from_json(nlohmann::json::parse(R"([{"batery_id": 1}])")); });
        parse_error([] { specs_from_json(nlohmann::json::parse(R"([{"n_cycles": "many"}])")); });
        try {
            specs_from_json(nlohmann::json::parse(R"([{"battery_id": 1}, {"battery_id": 1}])"));
            FAIL("expected duplicate");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::DuplicateKey);
        }
    }
    SUBCASE("profile round-trip and partial override") {
        DriftProfile p = default_paper_profile();
        p.fade.shape = FadeShape::Exponential;
        p.tau2.curvature = 1e-3;
        p.noise.cell_spread = 0.07;
        const DriftProfile back = profile_from_json(nlohmann::json::parse(profile_to_json(p).dump()));
        CHECK(back.params_at(90.0) == p.params_at(90.0));
        CHECK(back.fade.shape == FadeShape::Exponential);
        CHECK(back.noise.cell_spread == 0.07);

        const DriftProfile partial = profile_from_json(nlohmann::json::parse(R"({"noise": {"voltage_sigma": 0}})"));
        CHECK(partial.noise.voltage_sigma == 0.0);
        CHECK(partial.noise.capacity_sigma == default_paper_profile().noise.capacity_sigma);
        CHECK(partial.params_at(95.0) == default_paper_profile().params_at(95.0));

        parse_error([] { profile_from_json(nlohmann::json::parse(R"({"fade": {"shape": "cubic"}})")); });
        parse_error([] { profile_from_json(nlohmann::json::parse(R"({"r1": {"offset": 1}})")); });
    }
}
