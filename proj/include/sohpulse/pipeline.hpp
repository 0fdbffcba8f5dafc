#pragma once

// Per-cycle records to training features: capacity corrections, SoH labels,
// burn-in trimming, trailing sliding mean, feature assembly.

#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "sohpulse/ecm_model.hpp"

namespace sohpulse {

struct CycleRecord {
    BatteryId battery_id = 0;
    int cycle_index = 0;
    double discharged_ah = 0.0;
    EcmParams params;
    std::optional<double> soh_percent;

    friend bool operator==(const CycleRecord&, const CycleRecord&) = default;
};

/// Additive capacity fix for cycles [cycle_from, cycle_to] of one battery.
struct Correction {
    BatteryId battery_id = 0;
    int cycle_from = 0;
    int cycle_to = 0;
    double delta_ah = 0.0;

    friend bool operator==(const Correction&, const Correction&) = default;
};

struct FeatureRow {
    double r1 = 0.0;
    double r2 = 0.0;
    double tau1 = 0.0;
    double tau2 = 0.0;
    double soh_percent = 0.0;
    BatteryId battery_id = 0;
    int cycle_index = 0;

    void validate() const;
    friend bool operator==(const FeatureRow&, const FeatureRow&) = default;
};

struct PerBatteryMax {};
/// Either the per-battery maximum discharged capacity or a fixed capacity in Ah.
using SohReference = std::variant<PerBatteryMax, double>;

inline constexpr int kDefaultSmoothingWindow = 20;

std::vector<CycleRecord> apply_corrections(std::span<const CycleRecord> records,
                                           std::span<const Correction> corrections);

std::vector<CycleRecord> compute_soh(std::span<const CycleRecord> records,
                                     const SohReference& reference = PerBatteryMax{});

/// Per battery, drops every cycle before the first one with maximum
/// discharged capacity. Input order is preserved.
std::vector<CycleRecord> trim_burn_in(std::span<const CycleRecord> records);

/// Trailing mean: out[i] = mean(series[max(0, i - window + 1) ..= i]).
std::vector<double> sliding_mean(std::span<const double> series, int window = kDefaultSmoothingWindow);

/// Smooths r1, r2, tau1, tau2 and the SoH label independently per battery and
/// emits one row per record, in input order.
std::vector<FeatureRow> build_features(std::span<const CycleRecord> records,
                                       int window = kDefaultSmoothingWindow);

}  // namespace sohpulse
