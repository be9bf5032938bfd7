#pragma once

#include "mvflow/stopping.hpp"
#include "mvflow/types.hpp"

#include <cmath>
#include <span>
#include <vector>

namespace mvflow::oracle {

/// Left-point Itô sums Σ_{i<k} g_i (W_{i+1} - W_i) at every knot.
inline std::vector<double> ito_integral(std::span<const double> g, std::span<const double> w) {
    if (g.size() != w.size()) throw ConfigError("ito_integral: integrand and path knots differ");
    std::vector<double> out(w.size(), 0.0);
    for (std::size_t i = 0; i + 1 < w.size(); ++i) out[i + 1] = out[i] + g[i] * (w[i + 1] - w[i]);
    return out;
}

/// exp{Σ g dW - 1/2 Σ g² dt} with left-point sums; strictly positive.
inline std::vector<double> stochastic_exponential(std::span<const double> g, std::span<const double> w, double dt) {
    if (g.size() != w.size()) throw ConfigError("stochastic_exponential: integrand and path knots differ");
    std::vector<double> out(w.size(), 1.0);
    double log_value = 0.0;
    for (std::size_t i = 0; i + 1 < w.size(); ++i) {
        log_value += g[i] * (w[i + 1] - w[i]) - 0.5 * g[i] * g[i] * dt;
        out[i + 1] = std::exp(log_value);
    }
    return out;
}

/// Closed-form Jacobian of the centered family and its running integral.
struct OraclePath {
    double s = 0.0;
    double dt = 0.0;
    /// W_t - W_s at every knot.
    std::vector<double> w;
    /// Σ_{i<k} exp(-I_{r_i} + (r_i - s)/2 - (W_{r_i} - W_s)) E[J_{r_i}] ΔW_i, with I = ∫ f'(Φ) dr.
    std::vector<double> integral;
    /// J*_t = exp(I_t - (t - s)/2 + W_t - W_s) (1 - integral_t).
    std::vector<double> jacobian;
    /// First knot where the integral reaches 1, i.e. where J* stops being positive.
    Knot crossing;
};

/// First knot where the series reaches the threshold.
inline Knot crossing_time(std::span<const double> f_series, double threshold) {
    for (std::size_t k = 0; k < f_series.size(); ++k)
        if (threshold <= f_series[k]) return static_cast<int>(k);
    return std::nullopt;
}

/// J*_t from the path W (knot values, W_s = w[0]), f'(Φ_{s,r}(x)) and E[J_r] on the same knots.
inline OraclePath closed_form_jacobian(std::span<const double> w, double s, double dt, std::span<const double> fprime,
                                       std::span<const double> mean_jacobian) {
    if (w.empty()) throw ConfigError("closed_form_jacobian: empty path");
    if (fprime.size() != w.size() || mean_jacobian.size() != w.size())
        throw ConfigError("closed_form_jacobian: f' and E[J] series must share the path's knots");
    OraclePath out;
    out.s = s;
    out.dt = dt;
    out.w.resize(w.size());
    for (std::size_t k = 0; k < w.size(); ++k) out.w[k] = w[k] - w[0];
    out.integral.assign(w.size(), 0.0);
    out.jacobian.assign(w.size(), 1.0);
    double drift_integral = 0.0;
    for (std::size_t i = 0; i + 1 < w.size(); ++i) {
        const double r = static_cast<double>(i) * dt;
        const double weight = std::exp(-drift_integral + 0.5 * r - out.w[i]) * mean_jacobian[i];
        out.integral[i + 1] = out.integral[i] + weight * (out.w[i + 1] - out.w[i]);
        drift_integral += fprime[i] * dt;
        const double t = static_cast<double>(i + 1) * dt;
        out.jacobian[i + 1] = std::exp(drift_integral - 0.5 * t + out.w[i + 1]) * (1.0 - out.integral[i + 1]);
    }
    out.crossing = crossing_time(out.integral, 1.0);
    return out;
}

/// f = id specialisation: f' ≡ 1 and E[J] ≡ 1.
inline OraclePath identity_jacobian(std::span<const double> w, double s, double dt) {
    const std::vector<double> ones(w.size(), 1.0);
    return closed_form_jacobian(w, s, dt, ones, ones);
}

}  // namespace mvflow::oracle
