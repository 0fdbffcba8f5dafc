#include "sohpulse/identify.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <sstream>

namespace sohpulse {

namespace {

using Vec5 = Eigen::Matrix<double, 5, 1>;
using Mat5 = Eigen::Matrix<double, 5, 5>;

constexpr std::size_t kMinFitSamples = 6;
constexpr double kMaxDamping = 1e20;

struct WindowData {
    std::vector<double> t;
    std::vector<double> current;
    std::vector<double> voltage;
};

WindowData select_window(const PulseTrace& trace, const FitWindow& window) {
    WindowData data;
    for (const auto& s : trace.samples()) {
        if (!window.contains(s.t)) continue;
        data.t.push_back(s.t);
        data.current.push_back(s.current);
        data.voltage.push_back(s.voltage_delta);
    }
    return data;
}

Vec5 to_vec(const EcmParams& p) {
    const auto a = p.to_array();
    return Vec5(a[0], a[1], a[2], a[3], a[4]);
}

EcmParams from_vec(const Vec5& v) { return {v[0], v[1], v[2], v[3], v[4]}; }

Vec5 clip(const Vec5& v, const Vec5& lo, const Vec5& hi) { return v.cwiseMax(lo).cwiseMin(hi); }

double cost_of(const WindowData& d, const EcmParams& p) {
    double total = 0.0;
    for (std::size_t i = 0; i < d.t.size(); ++i) {
        const double r = d.voltage[i] - pulse_response(p, d.current[i], d.t[i]);
        total += r * r;
    }
    return total;
}

void check_current_nonzero(const WindowData& d) {
    const bool all_zero = std::all_of(d.current.begin(), d.current.end(), [](double i) { return i == 0.0; });
    if (all_zero) throw Error(ErrorKind::Domain, "pulse current is zero; resistances are unobservable");
}

bool poorly_conditioned(const WindowData& d, const EcmParams& p) {
    Eigen::MatrixXd jac(static_cast<Eigen::Index>(d.t.size()), 5);
    const Vec5 scale = to_vec(p);
    for (std::size_t i = 0; i < d.t.size(); ++i) {
        const auto row = jacobian(p, d.current[i], d.t[i]);
        for (int j = 0; j < 5; ++j) jac(static_cast<Eigen::Index>(i), j) = row[j] * scale[j];
    }
    const Eigen::VectorXd sv = Eigen::JacobiSVD<Eigen::MatrixXd>(jac).singularValues();
    if (sv[0] <= 0.0 || sv[sv.size() - 1] < 1e-8 * sv[0]) return true;
    return std::abs(p.tau1 - p.tau2) <= 1e-6 * std::max(p.tau1, p.tau2);
}

}  // namespace

void FitOptions::validate() const {
    window.validate();
    if (max_iterations <= 0) throw Error(ErrorKind::Precondition, "max_iterations must be positive");
    if (!(cost_tolerance > 0.0) || !(param_tolerance > 0.0) || !(gradient_tolerance > 0.0) ||
        !(initial_damping > 0.0)) {
        throw Error(ErrorKind::Precondition, "fit tolerances and damping must be positive");
    }
    lower_bounds.validate();
    upper_bounds.validate();
    const auto lo = lower_bounds.to_array();
    const auto hi = upper_bounds.to_array();
    for (std::size_t i = 0; i < lo.size(); ++i) {
        if (!(lo[i] < hi[i])) {
            throw Error(ErrorKind::Precondition, std::string("lower bound must be below upper bound for ") +
                                                     kParamNames[i]);
        }
    }
}

EcmParams initial_guess(const PulseTrace& trace, const FitWindow& window, const EcmParams& lower,
                        const EcmParams& upper) {
    window.validate();
    const WindowData d = select_window(trace, window);
    if (d.t.size() < kMinFitSamples) {
        throw Error(ErrorKind::InsufficientData, "initial guess needs at least 6 samples in the fit window");
    }
    if (d.t.front() > window.t_min + 0.2 * (window.t_max - window.t_min) || d.t.back() < 0.8 * window.t_max) {
        throw Error(ErrorKind::InsufficientData, "fit window samples do not span the window");
    }
    check_current_nonzero(d);

    const double current = d.current.front();
    if (current == 0.0) throw Error(ErrorKind::Domain, "first in-window sample has zero current");
    const double r_int = d.voltage.front() / current;
    const double total = d.voltage.back() / d.current.back();
    // Noise can invert the two readings; keep some dynamic resistance either way.
    const double dynamic = std::max(total - r_int, 0.1 * std::abs(total));

    const EcmParams raw{r_int, 0.4 * dynamic, 0.1 * window.t_max, 0.6 * dynamic, 0.5 * window.t_max};
    return from_vec(clip(to_vec(raw), to_vec(lower), to_vec(upper)));
}

FitReport fit_pulse(const PulseTrace& trace, const FitOptions& options) {
    options.validate();
    const WindowData d = select_window(trace, options.window);
    if (d.t.size() < kMinFitSamples) {
        std::ostringstream msg;
        msg << "fit window holds " << d.t.size() << " samples, need at least " << kMinFitSamples;
        throw Error(ErrorKind::InsufficientData, msg.str());
    }
    check_current_nonzero(d);

    const Vec5 lo = to_vec(options.lower_bounds);
    const Vec5 hi = to_vec(options.upper_bounds);
    Vec5 p = to_vec(initial_guess(trace, options.window, options.lower_bounds, options.upper_bounds));

    FitReport report;
    double cost = cost_of(d, from_vec(p));
    if (!std::isfinite(cost)) throw DivergenceError("initial cost is not finite", from_vec(p));
    report.cost_history.push_back(cost);

    const auto n = static_cast<Eigen::Index>(d.t.size());
    Eigen::Matrix<double, Eigen::Dynamic, 5> jac(n, 5);
    Eigen::VectorXd resid(n);
    double damping = options.initial_damping;
    double initial_gradient = -1.0;

    while (report.iterations < options.max_iterations && !report.converged) {
        ++report.iterations;
        const EcmParams current_params = from_vec(p);
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto k = static_cast<std::size_t>(i);
            const auto row = jacobian(current_params, d.current[k], d.t[k]);
            for (int j = 0; j < 5; ++j) jac(i, j) = row[j];
            resid[i] = d.voltage[k] - pulse_response(current_params, d.current[k], d.t[k]);
        }
        const Mat5 jtj = jac.transpose() * jac;
        const Vec5 gradient = jac.transpose() * resid;

        const double scaled_gradient = gradient.cwiseProduct(p).norm();
        if (initial_gradient < 0.0) initial_gradient = scaled_gradient;
        if (cost == 0.0 || scaled_gradient <= options.gradient_tolerance * initial_gradient) {
            report.converged = true;
            break;
        }

        bool accepted = false;
        while (!accepted && damping < kMaxDamping) {
            Mat5 lhs = jtj;
            for (int j = 0; j < 5; ++j) lhs(j, j) += damping * std::max(jtj(j, j), 1e-300);
            const Vec5 step = lhs.ldlt().solve(gradient);
            const Vec5 candidate = clip(p + step, lo, hi);
            const Vec5 taken = candidate - p;
            const double relative_step = taken.cwiseQuotient(p).norm();

            const double candidate_cost = cost_of(d, from_vec(candidate));
            if (!std::isfinite(candidate_cost) || !step.allFinite()) {
                if (!std::isfinite(cost)) throw DivergenceError("cost became non-finite", from_vec(p));
                damping *= 10.0;
                continue;
            }
            if (candidate_cost < cost) {
                const double relative_change = (cost - candidate_cost) / cost;
                p = candidate;
                cost = candidate_cost;
                report.cost_history.push_back(cost);
                damping = std::max(damping / 10.0, 1e-12);
                accepted = true;
                if (relative_change < options.cost_tolerance || relative_step < options.param_tolerance) {
                    report.converged = true;
                }
            } else {
                damping *= 10.0;
                if (relative_step < options.param_tolerance) {
                    // No descent is available at machine precision: p is a local minimum.
                    report.converged = true;
                    break;
                }
            }
        }
        if (!accepted && !report.converged) break;
    }

    const EcmParams best = from_vec(p);
    if (!std::isfinite(cost)) throw DivergenceError("final cost is not finite", best);
    report.params = best.normalized();
    report.sse = cost;
    report.residual_rms = std::sqrt(cost / static_cast<double>(d.t.size()));
    report.condition_warning = poorly_conditioned(d, report.params);
    return report;
}

}  // namespace sohpulse
