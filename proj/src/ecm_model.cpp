#include "sohpulse/ecm_model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "sohpulse/error.hpp"

namespace sohpulse {

namespace {

void check_time(double t) {
    if (!std::isfinite(t) || t < 0.0) {
        std::ostringstream msg;
        msg << "pulse time must be finite and >= 0, got " << t;
        throw Error(ErrorKind::Domain, msg.str());
    }
}

void check_current(double current) {
    if (!std::isfinite(current)) throw Error(ErrorKind::Domain, "pulse current must be finite");
}

// 1 - exp(-x) without cancellation for small x.
double rise(double x) { return -std::expm1(-x); }

}  // namespace

void EcmParams::validate() const {
    const auto values = to_array();
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!std::isfinite(values[i]) || values[i] <= 0.0) {
            std::ostringstream msg;
            msg << "ECM parameter " << kParamNames[i] << " must be finite and > 0, got " << values[i];
            throw Error(ErrorKind::Domain, msg.str());
        }
    }
}

EcmParams EcmParams::normalized() const {
    if (tau1 <= tau2) return *this;
    return {r_int, r2, tau2, r1, tau1};
}

PulseTrace::PulseTrace(std::vector<PulseSample> samples, TraceMeta meta, double current_tolerance)
    : samples_(std::move(samples)), meta_(meta) {
    if (samples_.empty()) throw Error(ErrorKind::Precondition, "pulse trace has no samples");
    const double i0 = samples_.front().current;
    const double allowed = std::max(current_tolerance * std::abs(i0), 1e-9);
    for (std::size_t k = 0; k < samples_.size(); ++k) {
        const auto& s = samples_[k];
        if (!std::isfinite(s.t) || !std::isfinite(s.current) || !std::isfinite(s.voltage_delta)) {
            throw Error(ErrorKind::Precondition, "pulse trace sample " + std::to_string(k) + " is not finite");
        }
        if (k == 0 && s.t < 0.0) throw Error(ErrorKind::Precondition, "pulse trace must start at t >= 0");
        if (k > 0 && !(s.t > samples_[k - 1].t)) {
            throw Error(ErrorKind::Precondition,
                        "pulse trace times must be strictly increasing (sample " + std::to_string(k) + ")");
        }
        if (std::abs(s.current - i0) > allowed) {
            throw Error(ErrorKind::Precondition,
                        "pulse current is not constant (sample " + std::to_string(k) + ")");
        }
    }
}

PulseTrace PulseTrace::from_absolute(std::span<const double> t, std::span<const double> current,
                                     std::span<const double> voltage, TraceMeta meta,
                                     double current_tolerance) {
    if (t.size() != current.size() || t.size() != voltage.size()) {
        throw Error(ErrorKind::Precondition, "time, current and voltage columns differ in length");
    }
    std::size_t onset = 0;
    while (onset < t.size() && t[onset] < 0.0) ++onset;
    if (onset == 0) throw Error(ErrorKind::InsufficientData, "no pre-pulse sample to reference the voltage");
    const double reference = voltage[onset - 1];

    std::vector<PulseSample> samples;
    samples.reserve(t.size() - onset);
    for (std::size_t k = onset; k < t.size(); ++k) {
        samples.push_back({t[k], current[k], voltage[k] - reference});
    }
    return PulseTrace(std::move(samples), meta, current_tolerance);
}

void FitWindow::validate() const {
    if (!std::isfinite(t_min) || !std::isfinite(t_max) || t_min < 0.0 || !(t_min < t_max)) {
        std::ostringstream msg;
        msg << "invalid fit window [" << t_min << ", " << t_max << "]";
        throw Error(ErrorKind::Precondition, msg.str());
    }
}

double pulse_response(const EcmParams& params, double current, double t) {
    check_time(t);
    check_current(current);
    params.validate();
    return current * (params.r_int + params.r1 * rise(t / params.tau1) + params.r2 * rise(t / params.tau2));
}

std::vector<double> response_series(const EcmParams& params, const PulseTrace& trace) {
    std::vector<double> out;
    out.reserve(trace.size());
    for (const auto& s : trace.samples()) out.push_back(pulse_response(params, s.current, s.t));
    return out;
}

std::size_t count_in_window(const PulseTrace& trace, const FitWindow& window) {
    return static_cast<std::size_t>(std::count_if(trace.samples().begin(), trace.samples().end(),
                                                  [&](const PulseSample& s) { return window.contains(s.t); }));
}

double sse(const EcmParams& params, const PulseTrace& trace, const FitWindow& window) {
    window.validate();
    if (count_in_window(trace, window) < 2) {
        throw Error(ErrorKind::DegenerateWindow, "fit window holds fewer than 2 samples");
    }
    double total = 0.0;
    for (const auto& s : trace.samples()) {
        if (!window.contains(s.t)) continue;
        const double r = s.voltage_delta - pulse_response(params, s.current, s.t);
        total += r * r;
    }
    return total;
}

std::array<double, 5> jacobian(const EcmParams& params, double current, double t) {
    check_time(t);
    check_current(current);
    params.validate();
    const double e1 = std::exp(-t / params.tau1);
    const double e2 = std::exp(-t / params.tau2);
    return {
        current,
        current * rise(t / params.tau1),
        -current * params.r1 * (t / (params.tau1 * params.tau1)) * e1,
        current * rise(t / params.tau2),
        -current * params.r2 * (t / (params.tau2 * params.tau2)) * e2,
    };
}

}  // namespace sohpulse
