#pragma once

// File formats shared by the CLI and the simulator. Every number is written
// in its shortest round-trip decimal form, so reading a file back yields the
// exact doubles that were written.

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

#include "sohpulse/estimator.hpp"
#include "sohpulse/identify.hpp"
#include "sohpulse/pipeline.hpp"
#include "sohpulse/simbench.hpp"

namespace sohpulse::io {

inline constexpr std::string_view kTraceHeader = "t_s,current_a,voltage_delta_v";
inline constexpr std::string_view kParamsHeader =
    "battery_id,cycle_index,r_int,r1,tau1,r2,tau2,sse,converged,residual_rms";
inline constexpr std::string_view kCyclesHeader = "battery_id,cycle_index,discharged_ah";
inline constexpr std::string_view kCorrectionsHeader = "battery_id,cycle_from,cycle_to,delta_ah";
inline constexpr std::string_view kFeaturesHeader = "battery_id,cycle_index,r1,r2,tau1,tau2,soh_percent";
inline constexpr std::string_view kGroundTruthHeader =
    "battery_id,cycle_index,r_int,r1,tau1,r2,tau2,soh_percent,discharged_ah";
inline constexpr std::string_view kReportHeader = "battery_id,mae_percent,r2,max_abs_error_percent";
inline constexpr std::string_view kResidualsHeader = "battery_id,cycle_index,predicted,actual,error";
inline constexpr int kModelFormatVersion = 1;

std::string format_number(double value);
double parse_number(std::string_view text, const std::string& context);
int parse_int(std::string_view text, const std::string& context);

/// `b<battery_id>_c<cycle_index>.csv`
std::string trace_filename(BatteryId battery_id, int cycle_index);
std::optional<std::pair<BatteryId, int>> parse_trace_filename(std::string_view filename);

void write_trace_csv(std::ostream& out, const PulseTrace& trace);
PulseTrace read_trace_csv(std::istream& in, const std::string& source, const TraceMeta& meta);
/// Reads a trace file, taking battery and cycle from its name.
PulseTrace read_trace_file(const std::filesystem::path& path);

/// One line of the params CSV; a failed fit has non-finite values and converged = false.
struct ParamsRow {
    BatteryId battery_id = 0;
    int cycle_index = 0;
    EcmParams params;
    double sse = 0.0;
    bool converged = false;
    double residual_rms = 0.0;

    bool fit_ok() const;
    friend bool operator==(const ParamsRow&, const ParamsRow&) = default;
};

struct CycleEntry {
    BatteryId battery_id = 0;
    int cycle_index = 0;
    double discharged_ah = 0.0;

    friend bool operator==(const CycleEntry&, const CycleEntry&) = default;
};

void write_params_csv(std::ostream& out, const std::vector<ParamsRow>& rows);
std::vector<ParamsRow> read_params_csv(std::istream& in, const std::string& source);

void write_cycles_csv(std::ostream& out, const std::vector<CycleEntry>& rows);
std::vector<CycleEntry> read_cycles_csv(std::istream& in, const std::string& source);

void write_corrections_csv(std::ostream& out, const std::vector<Correction>& rows);
std::vector<Correction> read_corrections_csv(std::istream& in, const std::string& source);

void write_features_csv(std::ostream& out, const std::vector<FeatureRow>& rows);
std::vector<FeatureRow> read_features_csv(std::istream& in, const std::string& source);

/// Ground truth of a simulated campaign: true parameters and true SoH.
void write_ground_truth_csv(std::ostream& out, const std::vector<CycleRecord>& records);
std::vector<CycleRecord> read_ground_truth_csv(std::istream& in, const std::string& source);

void write_report_csv(std::ostream& out, const EvalReport& report);
std::map<BatteryId, BatteryMetrics> read_report_csv(std::istream& in, const std::string& source);
void write_residuals_csv(std::ostream& out, const EvalReport& report);
std::vector<Residual> read_residuals_csv(std::istream& in, const std::string& source);

nlohmann::json model_to_json(const SohModel& model);
SohModel model_from_json(const nlohmann::json& doc);

/// Battery spec file: a JSON array of objects with BatterySpec field names;
/// absent fields keep their defaults.
std::vector<BatterySpec> specs_from_json(const nlohmann::json& doc);
nlohmann::json specs_to_json(const std::vector<BatterySpec>& specs);

/// Profile file: fields absent from the document keep the default profile's values.
DriftProfile profile_from_json(const nlohmann::json& doc);
nlohmann::json profile_to_json(const DriftProfile& profile);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& contents);

}  // namespace sohpulse::io
