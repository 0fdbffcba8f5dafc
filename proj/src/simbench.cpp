#include "sohpulse/simbench.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "sohpulse/error.hpp"

namespace sohpulse {

namespace {

// Per-battery stream so batteries can be generated in any order (or in
// parallel) and still reproduce the serial campaign bit for bit.
std::mt19937_64 battery_rng(std::uint64_t seed, BatteryId id) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(id), 0x50C1u};
    return std::mt19937_64(seq);
}

int sample_count(double duration, double rate) { return static_cast<int>(std::lround(duration * rate)) + 1; }

}  // namespace

void BatterySpec::validate() const {
    const auto fail = [&](const std::string& what) {
        throw Error(ErrorKind::Domain, "battery " + std::to_string(battery_id) + ": " + what);
    };
    if (!(nominal_ah > 0.0) || !std::isfinite(nominal_ah)) fail("nominal capacity must be positive");
    if (pulse_current == 0.0 || !std::isfinite(pulse_current)) fail("pulse current must be non-zero");
    if (!(pulse_duration > 0.0) || !std::isfinite(pulse_duration)) fail("pulse duration must be positive");
    if (!(sample_rate > 0.0) || !std::isfinite(sample_rate)) fail("sample rate must be positive");
    if (n_cycles < 0) fail("cycle count must be >= 0");
    if (burn_in_cycles && *burn_in_cycles < 0) fail("burn-in cycle count must be >= 0");
    if (end_soh && !(*end_soh > 0.0 && *end_soh <= 100.0)) fail("end SoH must be in (0, 100]");
}

double FadeCurve::soh_at(int cycle, int burn_in_cycles, int n_cycles, double end) const {
    if (cycle < burn_in_cycles) {
        const double remaining = 1.0 - static_cast<double>(cycle) / burn_in_cycles;
        return 100.0 - burn_in_depth * remaining * remaining;
    }
    const int fade_cycles = n_cycles - 1 - burn_in_cycles;
    if (fade_cycles <= 0) return 100.0;
    const double x = static_cast<double>(cycle - burn_in_cycles) / fade_cycles;
    double fraction = x;
    if (shape == FadeShape::Exponential) {
        fraction = std::expm1(-exponential_rate * x) / std::expm1(-exponential_rate);
    }
    if (cycle == n_cycles - 1) fraction = 1.0;
    return 100.0 - (100.0 - end) * fraction;
}

EcmParams DriftProfile::params_at(double soh) const {
    return {r_int.at(soh), r1.at(soh), tau1.at(soh), r2.at(soh), tau2.at(soh)};
}

void DriftProfile::validate(double soh_min) const {
    if (!(soh_min > 0.0 && soh_min <= 100.0)) throw Error(ErrorKind::Domain, "SoH range must be within (0, 100]");
    if (noise.voltage_sigma < 0.0 || noise.capacity_sigma < 0.0 || noise.param_jitter < 0.0 ||
        noise.cell_spread < 0.0) {
        throw Error(ErrorKind::Domain, "noise magnitudes must be >= 0");
    }
    if (!(fade.burn_in_depth >= 0.0 && fade.burn_in_depth < 100.0)) {
        throw Error(ErrorKind::Domain, "burn-in depth must be in [0, 100)");
    }
    if (!(fade.end_soh > 0.0 && fade.end_soh <= 100.0)) throw Error(ErrorKind::Domain, "end SoH must be in (0, 100]");
    if (fade.shape == FadeShape::Exponential && !(fade.exponential_rate > 0.0)) {
        throw Error(ErrorKind::Domain, "exponential fade rate must be positive");
    }
    // Drift is at most quadratic, so a dense grid plus the endpoints is exact
    // enough to catch a sign change.
    constexpr int kSteps = 400;
    for (int k = 0; k <= kSteps; ++k) {
        const double soh = soh_min + (100.0 - soh_min) * k / kSteps;
        const EcmParams p = params_at(soh);
        try {
            p.validate();
        } catch (const Error& e) {
            std::ostringstream msg;
            msg << "drift profile invalid at SoH " << soh << ": " << e.what();
            throw Error(ErrorKind::Domain, msg.str());
        }
        if (!(p.tau1 < p.tau2)) {
            std::ostringstream msg;
            msg << "drift profile swaps the RC branches at SoH " << soh;
            throw Error(ErrorKind::Domain, msg.str());
        }
    }
}

DriftProfile default_paper_profile() {
    DriftProfile p;
    // ~1.5 % per SoH point for the resistances, ~2 % for tau1, ~1 % for tau2.
    p.r_int = {1.0e-3, 1.5e-5, 0.0};
    p.r1 = {0.5e-3, 0.75e-5, 0.0};
    p.tau1 = {1.0, 0.02, 0.0};
    p.r2 = {0.8e-3, 1.2e-5, 0.0};
    p.tau2 = {20.0, 0.2, 0.0};
    p.fade = FadeCurve{FadeShape::Linear, 85.0, 3.0, 3.0};
    // No cell-to-cell spread by default: it biases each battery by a random
    // sign, which makes the correction-direction check a coin flip.
    p.noise = NoiseProfile{1e-4, 0.05, 0.01, 0.0};
    return p;
}

std::vector<BatterySpec> default_paper_campaign() {
    std::vector<BatterySpec> specs;
    for (BatteryId id = 1; id <= 4; ++id) {
        BatterySpec s;
        s.battery_id = id;
        s.n_cycles = id <= 2 ? 330 : 420;
        s.end_soh = id <= 2 ? 90.0 : 85.0;
        specs.push_back(s);
    }
    return specs;
}

PulseTrace synthesize_trace(const EcmParams& params, double current, double duration, double sample_rate,
                            TraceMeta meta) {
    const int n = sample_count(duration, sample_rate);
    std::vector<PulseSample> samples;
    samples.reserve(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) {
        const double t = k / sample_rate;
        samples.push_back({t, current, pulse_response(params, current, t)});
    }
    return PulseTrace(std::move(samples), meta);
}

Campaign simulate_campaign(const std::vector<BatterySpec>& specs, const DriftProfile& profile, std::uint64_t seed) {
    if (specs.empty()) throw Error(ErrorKind::Precondition, "campaign needs at least one battery");
    double soh_min = 100.0;
    for (const auto& s : specs) {
        s.validate();
        soh_min = std::min({soh_min, s.end_soh.value_or(profile.fade.end_soh), 100.0 - profile.fade.burn_in_depth});
    }
    profile.validate(soh_min);

    Campaign campaign;
    for (const auto& spec : specs) {
        auto rng = battery_rng(seed, spec.battery_id);
        std::normal_distribution<double> normal(0.0, 1.0);

        const int burn_in = spec.burn_in_cycles ? *spec.burn_in_cycles
                                                : std::uniform_int_distribution<int>(60, 80)(rng);
        campaign.burn_in_cycles.push_back(burn_in);
        const double end_soh = spec.end_soh.value_or(profile.fade.end_soh);

        std::array<double, 5> cell_factor{};
        for (double& f : cell_factor) f = 1.0 + profile.noise.cell_spread * normal(rng);

        for (int cycle = 0; cycle < spec.n_cycles; ++cycle) {
            const double soh = profile.fade.soh_at(cycle, burn_in, spec.n_cycles, end_soh);

            auto values = profile.params_at(soh).to_array();
            for (std::size_t j = 0; j < values.size(); ++j) {
                values[j] *= cell_factor[j] * (1.0 + profile.noise.param_jitter * normal(rng));
            }
            const EcmParams truth = EcmParams::from_array(values);
            try {
                truth.validate();
            } catch (const Error& e) {
                throw Error(ErrorKind::Domain, "noise drove battery " + std::to_string(spec.battery_id) +
                                                   " cycle " + std::to_string(cycle) + " invalid: " + e.what());
            }

            const double capacity = soh / 100.0 * spec.nominal_ah + profile.noise.capacity_sigma * normal(rng);
            campaign.records.push_back({spec.battery_id, cycle, capacity, truth, soh});

            const TraceMeta meta{spec.battery_id, cycle, spec.ambient_temp_celsius};
            PulseTrace clean = synthesize_trace(truth, spec.pulse_current, spec.pulse_duration, spec.sample_rate, meta);
            std::vector<PulseSample> samples = clean.samples();
            for (auto& s : samples) s.voltage_delta += profile.noise.voltage_sigma * normal(rng);
            campaign.traces.emplace_back(std::move(samples), meta);
        }
    }
    return campaign;
}

}  // namespace sohpulse
