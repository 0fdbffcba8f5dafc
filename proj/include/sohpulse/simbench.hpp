#pragma once

// Synthetic aging campaigns used as the verification oracle. Every numeric
// default below is a constant of this toolkit chosen to resemble a 105 Ah
// LiFePO4 cell pulsed at -60 A for 10 s; none of it is measured data.

#include <cstdint>
#include <optional>
#include <vector>

#include "sohpulse/ecm_model.hpp"
#include "sohpulse/pipeline.hpp"

namespace sohpulse {

struct BatterySpec {
    BatteryId battery_id = 1;
    double nominal_ah = 105.0;
    double pulse_current = -60.0;  // A
    double pulse_duration = 10.0;  // s
    double sample_rate = 10.0;     // Hz
    /// Cycles spent ramping up to peak capacity. Drawn uniformly from
    /// [60, 80] with the battery's own seed when unset.
    std::optional<int> burn_in_cycles;
    int n_cycles = 300;
    double ambient_temp_celsius = 21.0;
    /// Overrides DriftProfile::fade.end_soh for this battery.
    std::optional<double> end_soh;

    void validate() const;
};

/// value(soh) = base + slope * (100 - soh) + curvature * (100 - soh)^2
struct ParamDrift {
    double base = 0.0;
    double slope = 0.0;
    double curvature = 0.0;

    double at(double soh) const noexcept {
        const double lost = 100.0 - soh;
        return base + slope * lost + curvature * lost * lost;
    }
};

enum class FadeShape { Linear, Exponential };

/// SoH trajectory: a saturating ramp from (100 - burn_in_depth) up to 100 %
/// reached exactly at cycle burn_in_cycles, then a nonincreasing fade that
/// lands on end_soh at the last cycle.
struct FadeCurve {
    FadeShape shape = FadeShape::Linear;
    double end_soh = 85.0;
    double burn_in_depth = 3.0;  // SoH points below 100 at cycle 0
    double exponential_rate = 3.0;

    double soh_at(int cycle, int burn_in_cycles, int n_cycles, double end) const;
};

struct NoiseProfile {
    double voltage_sigma = 1e-4;   // V, iid per trace sample
    double capacity_sigma = 0.0;   // Ah, iid per cycle
    double param_jitter = 0.0;     // relative, iid per cycle and parameter
    double cell_spread = 0.0;      // relative, fixed per battery and parameter (off by default)
};

struct DriftProfile {
    ParamDrift r_int, r1, tau1, r2, tau2;
    FadeCurve fade;
    NoiseProfile noise;

    EcmParams params_at(double soh) const;
    /// Throws Error(Domain) if any parameter would be non-positive (or the
    /// branches would swap order) for soh in [soh_min, 100].
    void validate(double soh_min = 80.0) const;
};

DriftProfile default_paper_profile();

/// Four batteries shaped like the reference campaign: batteries 3 and 4 fade
/// to 85 % over 420 cycles, batteries 1 and 2 to 90 % over 330 cycles.
std::vector<BatterySpec> default_paper_campaign();

struct Campaign {
    /// Ground truth per cycle: soh_percent is the true SoH, params the true
    /// parameters, discharged_ah the noisy measured capacity.
    std::vector<CycleRecord> records;
    std::vector<PulseTrace> traces;  // same order as records
    /// Resolved burn-in length per battery, in spec order.
    std::vector<int> burn_in_cycles;
};

Campaign simulate_campaign(const std::vector<BatterySpec>& specs, const DriftProfile& profile,
                           std::uint64_t seed);

/// Noiseless trace of `params` sampled at k / sample_rate for k = 0..duration*rate.
PulseTrace synthesize_trace(const EcmParams& params, double current, double duration, double sample_rate,
                            TraceMeta meta = {});

}  // namespace sohpulse
