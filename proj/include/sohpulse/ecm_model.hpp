#pragma once

// Second-order equivalent circuit: a series resistance followed by two
// parallel RC branches. Under a constant-current step applied at t = 0 the
// terminal voltage moves away from its pre-pulse value by
//
//   dV(t) = I * (R_int + R1 (1 - exp(-t/tau1)) + R2 (1 - exp(-t/tau2)))
//
// Discharge current is negative, so a discharge pulse yields a negative dV.

#include <array>
#include <span>
#include <string>
#include <vector>

namespace sohpulse {

using BatteryId = int;

struct EcmParams {
    double r_int = 0.0;  // ohm
    double r1 = 0.0;     // ohm
    double tau1 = 0.0;   // s
    double r2 = 0.0;     // ohm
    double tau2 = 0.0;   // s

    /// Throws Error(Domain) unless all five values are finite and > 0.
    void validate() const;

    /// Swaps the RC branches if needed so that tau1 <= tau2. The response is
    /// symmetric under the swap, so this never changes the model output.
    EcmParams normalized() const;

    std::array<double, 5> to_array() const { return {r_int, r1, tau1, r2, tau2}; }
    static EcmParams from_array(const std::array<double, 5>& v) { return {v[0], v[1], v[2], v[3], v[4]}; }

    friend bool operator==(const EcmParams&, const EcmParams&) = default;
};

inline constexpr std::array<const char*, 5> kParamNames = {"r_int", "r1", "tau1", "r2", "tau2"};

struct PulseSample {
    double t = 0.0;              // s since pulse onset
    double current = 0.0;        // A, discharge negative
    double voltage_delta = 0.0;  // V relative to the last pre-pulse sample

    friend bool operator==(const PulseSample&, const PulseSample&) = default;
};

struct TraceMeta {
    BatteryId battery_id = 0;
    int cycle_index = 0;
    double ambient_temp_celsius = 21.0;

    friend bool operator==(const TraceMeta&, const TraceMeta&) = default;
};

/// One constant-current pulse. The constructor enforces: at least one sample,
/// t strictly increasing from t[0] >= 0, all values finite, and current equal
/// to the first sample's within `current_tolerance` (relative, with an
/// absolute floor of 1e-9 A for zero-current traces).
class PulseTrace {
public:
    static constexpr double kDefaultCurrentTolerance = 1e-2;

    PulseTrace(std::vector<PulseSample> samples, TraceMeta meta = {},
               double current_tolerance = kDefaultCurrentTolerance);

    /// Builds a trace from absolute terminal voltages. Samples with t < 0 are
    /// pre-pulse; the voltage of the last of them is the reference that is
    /// subtracted, and only samples with t >= 0 are kept.
    static PulseTrace from_absolute(std::span<const double> t, std::span<const double> current,
                                    std::span<const double> voltage, TraceMeta meta = {},
                                    double current_tolerance = kDefaultCurrentTolerance);

    const std::vector<PulseSample>& samples() const noexcept { return samples_; }
    const TraceMeta& meta() const noexcept { return meta_; }
    std::size_t size() const noexcept { return samples_.size(); }
    /// Current of the first sample; the trace is constant-current.
    double current() const noexcept { return samples_.front().current; }

    friend bool operator==(const PulseTrace&, const PulseTrace&) = default;

private:
    std::vector<PulseSample> samples_;
    TraceMeta meta_;
};

struct FitWindow {
    double t_min = 1.0;
    double t_max = 10.0;

    void validate() const;
    bool contains(double t) const noexcept { return t >= t_min && t <= t_max; }
};

double pulse_response(const EcmParams& params, double current, double t);

std::vector<double> response_series(const EcmParams& params, const PulseTrace& trace);

/// Plain sum of squared residuals over samples with t_min <= t <= t_max.
/// Throws Error(DegenerateWindow) if fewer than two samples fall inside.
double sse(const EcmParams& params, const PulseTrace& trace, const FitWindow& window);

/// Partials of pulse_response in EcmParams field order.
std::array<double, 5> jacobian(const EcmParams& params, double current, double t);

std::size_t count_in_window(const PulseTrace& trace, const FitWindow& window);

}  // namespace sohpulse
