#pragma once

#include "mvflow/coefficients.hpp"

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace mvflow::families {

enum class CenteredDrift { identity, tanh_a };

namespace detail {

inline MomentStatistic mean_component(int j, int d) {
    return {[j](const Vec& z) { return z(j); },
            [j, d](const Vec&) {
                Vec g = zero_vec(d);
                g(j) = 1.0;
                return g;
            }};
}

inline Vec scalar(double v) { return make_vec({v}); }
inline Mat scalar_mat(double v) {
    Mat m(1, 1);
    m(0, 0) = v;
    return m;
}

}  // namespace detail

/// dX = ∫(f(X) - z) P_X(dz) dt + ∫(X - z) P_X(dz) dW, with f = id or f(x) = tanh(a x).
inline MomentFormSpec centered_spec(CenteredDrift kind, double a = 1.0) {
    using detail::scalar;
    using detail::scalar_mat;
    std::function<double(double)> f, fprime;
    if (kind == CenteredDrift::identity) {
        f = [](double x) { return x; };
        fprime = [](double) { return 1.0; };
    } else {
        f = [a](double x) { return std::tanh(a * x); };
        fprime = [a](double x) {
            const double t = std::tanh(a * x);
            return a * (1.0 - t * t);
        };
    }
    MomentFormSpec spec;
    spec.dim_state = 1;
    spec.dim_noise = 1;
    spec.stats = {detail::mean_component(0, 1)};
    spec.drift.value = [f](const Vec& x, std::span<const double> m) { return scalar(f(x(0)) - m[0]); };
    spec.drift.dx = [fprime](const Vec& x, std::span<const double>) { return scalar_mat(fprime(x(0))); };
    spec.drift.dm = [](const Vec&, std::span<const double>, std::size_t) { return scalar(-1.0); };
    MomentOuter diff;
    diff.value = [](const Vec& x, std::span<const double> m) { return scalar(x(0) - m[0]); };
    diff.dx = [](const Vec&, std::span<const double>) { return scalar_mat(1.0); };
    diff.dm = [](const Vec&, std::span<const double>, std::size_t) { return scalar(-1.0); };
    spec.diffusion = {diff};
    spec.lipschitz_bound = kind == CenteredDrift::identity ? 1.0 : std::max(1.0, std::abs(a));
    return spec;
}

inline CoefficientSet centered(CenteredDrift kind, double a = 1.0) { return make_moment_coeffs(centered_spec(kind, a)); }

/// Linear mean-field family: drift A x + B mean(μ), diffusion k: C[:,k] + D_k x.
struct MomentLinearParams {
    Mat A;
    Mat B;
    Eigen::MatrixXd C;      ///< d x d'
    std::vector<Mat> D;     ///< one d x d matrix per driver (empty = additive noise)
};

inline CoefficientSet moment_linear(const MomentLinearParams& p) {
    const int d = static_cast<int>(p.A.rows());
    if (d < 1 || p.A.cols() != d) throw ConfigError("moment_linear: A must be square d x d");
    if (p.B.rows() != d || p.B.cols() != d) throw ConfigError("moment_linear: B must be d x d");
    const int dn = static_cast<int>(p.C.cols());
    if (p.C.rows() != d || dn < 1) throw ConfigError("moment_linear: C must be d x d' with d' >= 1");
    if (!p.D.empty() && static_cast<int>(p.D.size()) != dn) throw ConfigError("moment_linear: D needs one matrix per driver");
    for (const auto& dk : p.D)
        if (dk.rows() != d || dk.cols() != d) throw ConfigError("moment_linear: every D_k must be d x d");

    const bool mean_field = !p.B.isZero(0.0);
    MomentFormSpec spec;
    spec.dim_state = d;
    spec.dim_noise = dn;
    if (mean_field)
        for (int j = 0; j < d; ++j) spec.stats.push_back(detail::mean_component(j, d));
    const Mat A = p.A, B = p.B;
    spec.drift.value = [A, B, d, mean_field](const Vec& x, std::span<const double> m) {
        Vec v = A * x;
        if (mean_field)
            for (int j = 0; j < d; ++j) v += B.col(j) * m[static_cast<std::size_t>(j)];
        return v;
    };
    spec.drift.dx = [A](const Vec&, std::span<const double>) { return A; };
    spec.drift.dm = [B](const Vec&, std::span<const double>, std::size_t j) { return Vec(B.col(static_cast<Eigen::Index>(j))); };
    double bound = std::max({A.norm(), B.norm(), 1e-12});
    for (int k = 0; k < dn; ++k) {
        const Vec ck = p.C.col(k);
        const Mat dk = p.D.empty() ? zero_mat(d) : p.D[static_cast<std::size_t>(k)];
        bound = std::max(bound, dk.norm());
        MomentOuter o;
        o.value = [ck, dk](const Vec& x, std::span<const double>) { return Vec(ck + dk * x); };
        o.dx = [dk](const Vec&, std::span<const double>) { return dk; };
        o.dm = [d](const Vec&, std::span<const double>, std::size_t) { return zero_vec(d); };
        spec.diffusion.push_back(o);
    }
    spec.lipschitz_bound = bound;
    return make_moment_coeffs(spec);
}

/// All coefficients identically zero.
inline CoefficientSet zero(int d = 1, int dn = 1) {
    MomentLinearParams p{zero_mat(d), zero_mat(d), Eigen::MatrixXd::Zero(d, dn), {}};
    return moment_linear(p);
}

/// Measure-free geometric flow dX = b X dW (Itô), d = 1.
inline CoefficientSet geometric(double b) {
    MomentLinearParams p{zero_mat(1), zero_mat(1), Eigen::MatrixXd::Zero(1, 1), {detail::scalar_mat(b)}};
    return moment_linear(p);
}

/// dX = -mean(μ) dt, no noise.
inline CoefficientSet mean_decay() {
    MomentLinearParams p{zero_mat(1), detail::scalar_mat(-1.0), Eigen::MatrixXd::Zero(1, 1), {}};
    return moment_linear(p);
}

/// Nonlinear mean-field family with a spreading law:
/// drift -x + 0.5 sin(m), diffusion 0.4 + 0.2 sin(x) + 0.1 cos(m), m = mean(μ).
inline CoefficientSet mf_sine() {
    using detail::scalar;
    using detail::scalar_mat;
    MomentFormSpec spec;
    spec.stats = {detail::mean_component(0, 1)};
    spec.drift.value = [](const Vec& x, std::span<const double> m) { return scalar(-x(0) + 0.5 * std::sin(m[0])); };
    spec.drift.dx = [](const Vec&, std::span<const double>) { return scalar_mat(-1.0); };
    spec.drift.dm = [](const Vec&, std::span<const double> m, std::size_t) { return scalar(0.5 * std::cos(m[0])); };
    MomentOuter diff;
    diff.value = [](const Vec& x, std::span<const double> m) { return scalar(0.4 + 0.2 * std::sin(x(0)) + 0.1 * std::cos(m[0])); };
    diff.dx = [](const Vec& x, std::span<const double>) { return scalar_mat(0.2 * std::cos(x(0))); };
    diff.dm = [](const Vec&, std::span<const double> m, std::size_t) { return scalar(-0.1 * std::sin(m[0])); };
    spec.diffusion = {diff};
    spec.lipschitz_bound = 1.0;
    return make_moment_coeffs(spec);
}

/// Stratonovich family V_0 = mean(μ), V_1 = sin(x), converted to Itô.
inline CoefficientSet sin_stratonovich() {
    using detail::scalar;
    using detail::scalar_mat;
    MomentFormSpec spec;
    spec.stats = {detail::mean_component(0, 1)};
    spec.drift.value = [](const Vec&, std::span<const double> m) { return scalar(m[0]); };
    spec.drift.dx = [](const Vec&, std::span<const double>) { return scalar_mat(0.0); };
    spec.drift.dm = [](const Vec&, std::span<const double>, std::size_t) { return scalar(1.0); };
    MomentOuter diff;
    diff.value = [](const Vec& x, std::span<const double>) { return scalar(std::sin(x(0))); };
    diff.dx = [](const Vec& x, std::span<const double>) { return scalar_mat(std::cos(x(0))); };
    diff.dm = [](const Vec&, std::span<const double>, std::size_t) { return scalar(0.0); };
    spec.diffusion = {diff};
    spec.lipschitz_bound = 1.0;
    return strat_to_ito(make_moment_coeffs(spec));
}

using Factory = std::function<CoefficientSet(const std::map<std::string, double>&)>;

/// Compiled-in families addressable by the `custom` config key.
inline const std::map<std::string, Factory>& registry() {
    static const std::map<std::string, Factory> reg = {
        {"zero", [](const std::map<std::string, double>& p) {
             const auto get = [&](const char* k, double dflt) { auto it = p.find(k); return it == p.end() ? dflt : it->second; };
             return zero(static_cast<int>(get("d", 1)), static_cast<int>(get("d_noise", 1)));
         }},
         {"geometric", [](const std::map<std::string, double>& p) {
             auto it = p.find("b");
             return geometric(it == p.end() ? 0.5 : it->second);
         }},
        {"mean_decay", [](const std::map<std::string, double>&) { return mean_decay(); }},
        {"mf_sine", [](const std::map<std::string, double>&) { return mf_sine(); }},
        {"sin_stratonovich", [](const std::map<std::string, double>&) { return sin_stratonovich(); }},
    };
    return reg;
}

}  // namespace mvflow::families
