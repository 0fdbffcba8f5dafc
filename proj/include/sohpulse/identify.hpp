#pragma once

#include <vector>

#include "sohpulse/ecm_model.hpp"
#include "sohpulse/error.hpp"

namespace sohpulse {

struct FitOptions {
    FitWindow window{1.0, 10.0};
    int max_iterations = 200;
    double cost_tolerance = 1e-10;   // relative SSE change between accepted steps
    double param_tolerance = 1e-8;   // relative step norm
    double gradient_tolerance = 1e-12;  // relative to the initial gradient norm
    double initial_damping = 1e-3;
    EcmParams lower_bounds{1e-6, 1e-6, 1e-3, 1e-6, 1e-3};
    EcmParams upper_bounds{1.0, 1.0, 1e3, 1.0, 1e3};

    void validate() const;
};

struct FitReport {
    EcmParams params;  // normalized, tau1 <= tau2
    double sse = 0.0;
    int iterations = 0;
    bool converged = false;
    double residual_rms = 0.0;
    bool condition_warning = false;
    /// SSE after the initial guess followed by every accepted step.
    std::vector<double> cost_history;
};

/// Raised when the cost stops being finite; carries the last finite iterate.
class DivergenceError : public Error {
public:
    DivergenceError(const std::string& what, EcmParams last_good)
        : Error(ErrorKind::Divergence, what), last_good_(last_good) {}
    const EcmParams& last_good() const noexcept { return last_good_; }

private:
    EcmParams last_good_;
};

/// Deterministic starting point for the solver. Voltages are read only from
/// samples inside `window`:
///   r_int  = earliest in-window voltage / current
///   total  = last in-window voltage / current
///   r1, r2 = 40 % / 60 % of (total - r_int)
///   tau1   = 0.1 * t_max, tau2 = 0.5 * t_max
/// Each value is clipped to the bounds.
EcmParams initial_guess(const PulseTrace& trace, const FitWindow& window,
                        const EcmParams& lower = FitOptions{}.lower_bounds,
                        const EcmParams& upper = FitOptions{}.upper_bounds);

/// Damped Gauss-Newton (Levenberg-Marquardt) minimisation of the in-window
/// SSE, with bounds enforced by projection after every step.
FitReport fit_pulse(const PulseTrace& trace, const FitOptions& options = {});

}  // namespace sohpulse
