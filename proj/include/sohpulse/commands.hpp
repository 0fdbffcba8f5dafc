#pragma once

// Batch commands behind the `sohpulse` executable. Each returns the process
// exit status (0 iff nothing errored) and reports diagnostics on `err`.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <set>
#include <vector>

#include "sohpulse/estimator.hpp"
#include "sohpulse/identify.hpp"
#include "sohpulse/io.hpp"
#include "sohpulse/pipeline.hpp"

namespace sohpulse::cli {

namespace fs = std::filesystem;

struct FitConfig {
    /// Trace files, or directories searched for b<battery>_c<cycle>.csv files.
    std::vector<fs::path> inputs;
    fs::path output;
    FitOptions options;
    unsigned jobs = 1;
};

struct PipelineConfig {
    fs::path params;
    fs::path cycles;
    std::optional<fs::path> corrections;
    int window = kDefaultSmoothingWindow;
    SohReference reference = PerBatteryMax{};
    fs::path output;
};

struct TrainConfig {
    fs::path features;
    std::set<BatteryId> train_ids;
    EstimatorKind kind = EstimatorKind::Ols;
    std::uint64_t seed = 0;
    fs::path model;
};

struct EvalConfig {
    fs::path features;
    fs::path model;
    std::set<BatteryId> test_ids;
    fs::path report;
    std::optional<fs::path> residuals;
};

struct SimulateConfig {
    std::optional<fs::path> spec;
    std::optional<fs::path> profile;
    std::uint64_t seed = 0;
    fs::path out_dir;
};

int cmd_fit(const FitConfig& config, std::ostream& out, std::ostream& err);
int cmd_pipeline(const PipelineConfig& config, std::ostream& out, std::ostream& err);
int cmd_train(const TrainConfig& config, std::ostream& out, std::ostream& err);
int cmd_eval(const EvalConfig& config, std::ostream& out, std::ostream& err);
int cmd_simulate(const SimulateConfig& config, std::ostream& out, std::ostream& err);

/// Joins fitted parameters with cycle capacities on (battery_id, cycle_index).
/// Params rows without a cycle entry are an error; cycles without a
/// successful fit are dropped. Output is sorted by battery then cycle.
std::vector<CycleRecord> join_records(const std::vector<io::ParamsRow>& params,
                                      const std::vector<io::CycleEntry>& cycles, std::ostream& err);

}  // namespace sohpulse::cli
