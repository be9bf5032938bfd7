#pragma once

#include "mvflow/coefficients.hpp"
#include "mvflow/flow.hpp"
#include "mvflow/grid.hpp"
#include "mvflow/parallel.hpp"
#include "mvflow/stopping.hpp"
#include "mvflow/types.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mvflow {

/// Evaluation point outside the grid box.
class OutOfDomain : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Φ_t, ∂_xΦ_t and the law statistics at an off-grid point.
struct FlowSample {
    Vec phi;
    Mat jac;
    std::vector<double> stats;
};

/// Piecewise-multilinear interpolation of the stored physical map, Jacobian and law statistics.
inline FlowSample interpolate_flow(const FlowField& field, int knot, const Vec& y) {
    if (field.dim() > 2) throw CapabilityError("the built-in interpolator supports d <= 2");
    if (y.size() != field.dim()) throw ConfigError("interpolate_flow: point dimension differs from the grid dimension");
    if (knot < 0 || knot >= field.knots()) throw ConfigError("interpolate_flow: knot out of range");
    const auto st = field.grid().stencil(y);
    if (!st) throw OutOfDomain("point outside the grid box");
    const int d = field.dim();
    FlowSample out{zero_vec(d), zero_mat(d), std::vector<double>(field.stat_count(), 0.0)};
    for (std::size_t c = 0; c < st->nodes.size(); ++c) {
        const double w = st->weights[c];
        if (w == 0.0) continue;
        const std::size_t p = st->nodes[c];
        out.phi += w * field.phi(knot, p);
        out.jac += w * field.jacobian(knot, p);
        const auto s = field.stats(knot, p);
        for (std::size_t j = 0; j < s.size(); ++j) out.stats[j] += w * s[j];
    }
    return out;
}

struct InverseTrajectory {
    Vec x;
    /// Ψ_{s,t}(x) per knot, frozen after the failure knot.
    std::vector<Vec> psi;
    /// |J_t(Ψ_t)^{-1}|_F of the interpolated Jacobian (NaN after failure).
    std::vector<double> inv_norm;
    /// τ̄_m(x): first failing knot, nullopt if Ψ survives to T.
    Knot failure;
    std::string reason;

    bool alive(int knot) const { return alive_at(failure, knot); }
};

namespace detail {

/// Stratonovich coefficients 𝒱_c(y) = -J_t(y)^{-1} V_c(Φ_t(y), law(y)) of the inverse flow, c = 0..d'.
struct PsiTerms {
    int count = 0;
    std::array<Vec, kMaxNoise + 1> v;
    double inv_norm = 0.0;
};

inline std::optional<PsiTerms> psi_terms(const FlowField& field, const CoefficientSet& cset, int knot, const Vec& y) {
    if (!field.grid().contains(y)) return std::nullopt;
    const FlowSample fs = interpolate_flow(field, knot, y);
    if (!is_invertible(fs.jac)) return std::nullopt;
    const LawView law{nullptr, fs.stats};
    PsiTerms t;
    t.count = cset.count();
    t.inv_norm = inverse_norm(fs.jac);
    const auto lu = fs.jac.partialPivLu();
    t.v[0] = -Vec(lu.solve(cset.strat_drift(fs.phi, law)));
    for (int k = 1; k < t.count; ++k) t.v[static_cast<std::size_t>(k)] = -Vec(lu.solve(cset.value(k, fs.phi, law)));
    return t;
}

}  // namespace detail

/// Euler-Maruyama integration of the inverse flow on the physical path. The Itô drift is
/// 𝒱_0 + 1/2 Σ_k ∂_y𝒱_k 𝒱_k with ∂_y by grid-spacing central differences (one-sided at the box
/// edge). Fails at the first knot where Ψ leaves the box, the interpolated Jacobian is singular
/// or |J^{-1}|_F > m, or at `theta_m` when given.
inline InverseTrajectory integrate_psi(const FlowField& field, const CoefficientSet& cset, const Vec& x, double m,
                                       Knot theta_m = std::nullopt) {
    if (cset.law_dependence() == LawDependence::general)
        throw CapabilityError("inverse flow needs moment-form or measure-free coefficients");
    if (cset.dim_state() != field.dim() || cset.dim_noise() != field.dim_noise())
        throw ConfigError("coefficient dimensions differ from the flow field");
    if (cset.dim_noise() > kMaxNoise) throw CapabilityError("too many Brownian drivers");
    const SpatialGrid& grid = field.grid();
    const int d = field.dim();
    const int knots = field.knots();
    const double dt = field.time().dt();

    InverseTrajectory tr;
    tr.x = x;
    tr.psi.assign(static_cast<std::size_t>(knots), x);
    tr.inv_norm.assign(static_cast<std::size_t>(knots), std::numeric_limits<double>::quiet_NaN());
    const auto fail = [&](int k, std::string why) {
        tr.failure = k;
        tr.reason = std::move(why);
        for (int j = k + 1; j < knots; ++j) tr.psi[static_cast<std::size_t>(j)] = tr.psi[static_cast<std::size_t>(k)];
    };

    for (int k = 0; k < knots; ++k) {
        const Vec y = tr.psi[static_cast<std::size_t>(k)];
        if (!grid.contains(y)) return fail(k, "left grid box"), tr;
        const auto here = detail::psi_terms(field, cset, k, y);
        if (!here) return fail(k, "singular Jacobian"), tr;
        tr.inv_norm[static_cast<std::size_t>(k)] = here->inv_norm;
        if (here->inv_norm > m) return fail(k, "inverse-Jacobian threshold"), tr;
        if (theta_m && k >= *theta_m) return fail(k, "theta_m"), tr;
        if (k == knots - 1) break;

        std::array<Mat, kMaxNoise + 1> grad;
        for (int c = 1; c < here->count; ++c) grad[static_cast<std::size_t>(c)] = zero_mat(d);
        for (int a = 0; a < d; ++a) {
            const double h = grid.spacing(a);
            Vec up = y, down = y;
            up(a) += h;
            down(a) -= h;
            double span = 2.0 * h;
            std::optional<detail::PsiTerms> tu, td;
            if (up(a) > grid.hi()(a)) {
                tu = here;
                span = h;
            } else {
                tu = detail::psi_terms(field, cset, k, up);
            }
            if (down(a) < grid.lo()(a)) {
                td = here;
                span = h;
            } else {
                td = detail::psi_terms(field, cset, k, down);
            }
            if (!tu || !td) return fail(k, "singular Jacobian near the trajectory"), tr;
            for (int c = 1; c < here->count; ++c)
                grad[static_cast<std::size_t>(c)].col(a) = (tu->v[static_cast<std::size_t>(c)] - td->v[static_cast<std::size_t>(c)]) / span;
        }
        Vec drift = here->v[0];
        for (int c = 1; c < here->count; ++c) drift += 0.5 * grad[static_cast<std::size_t>(c)] * here->v[static_cast<std::size_t>(c)];
        const auto dw = field.physical_increments(k);
        Vec next = y + drift * dt;
        for (int c = 1; c < here->count; ++c) next += here->v[static_cast<std::size_t>(c)] * dw[static_cast<std::size_t>(c - 1)];
        if (!all_finite(next)) return fail(k + 1, "non-finite value"), tr;
        tr.psi[static_cast<std::size_t>(k) + 1] = next;
    }
    return tr;
}

struct PointResidual {
    /// sup_{t < τ̄} |Φ_t(Ψ_t(x)) - x|
    double left = 0.0;
    /// sup_{t < τ̄'} |Ψ_t(Φ_t(x)) - x|
    double right = 0.0;
    Knot tau_bar;
    Knot tau_bar_prime;
    Knot tau;
};

struct TwoSidedReport {
    std::vector<PointResidual> points;
    double max_left = 0.0;
    double max_right = 0.0;
};

/// Checks Φ∘Ψ = Ψ∘Φ = id on the physical path. `trajectories` holds one Ψ trajectory per grid
/// node in flat order; Ψ at Φ_t(x) is interpolated from them. τ̄'(x) is the first knot where
/// Φ_t(x) leaves the box, a contributing node's Ψ has failed, or ∂_xΨ_t(Φ_t(x)) =
/// J_t(Ψ_t(Φ_t(x)))^{-1} is singular or exceeds m.
inline TwoSidedReport verify_two_sided(const FlowField& field, std::span<const InverseTrajectory> trajectories, double m,
                                       int threads = 1) {
    if (trajectories.size() != field.points()) throw ConfigError("verify_two_sided: one trajectory per grid node required");
    const SpatialGrid& grid = field.grid();
    const int knots = field.knots();
    TwoSidedReport report;
    report.points.resize(field.points());
    parallel_for(field.points(), threads, [&](std::size_t p) {
        PointResidual& r = report.points[p];
        const InverseTrajectory& own = trajectories[p];
        const Vec x = grid.node(p);
        r.tau_bar = own.failure;
        for (int k = 0; k < knots && own.alive(k); ++k) {
            const Vec back = interpolate_flow(field, k, own.psi[static_cast<std::size_t>(k)]).phi;
            r.left = std::max(r.left, (back - x).norm());
        }
        for (int k = 0; k < knots; ++k) {
            const Vec z = field.phi(k, p);
            const auto st = grid.stencil(z);
            if (!st) {
                r.tau_bar_prime = k;
                break;
            }
            Vec psi = zero_vec(grid.dim());
            bool ok = true;
            for (std::size_t c = 0; c < st->nodes.size(); ++c) {
                if (st->weights[c] == 0.0) continue;
                const InverseTrajectory& tc = trajectories[st->nodes[c]];
                if (!tc.alive(k)) {
                    ok = false;
                    break;
                }
                psi += st->weights[c] * tc.psi[static_cast<std::size_t>(k)];
            }
            if (!ok || !grid.contains(psi)) {
                r.tau_bar_prime = k;
                break;
            }
            const Mat j = interpolate_flow(field, k, psi).jac;
            if (inverse_norm(j) > m) {
                r.tau_bar_prime = k;
                break;
            }
            r.right = std::max(r.right, (psi - x).norm());
        }
        r.tau = earliest(r.tau_bar, r.tau_bar_prime);
    });
    for (const auto& r : report.points) {
        report.max_left = std::max(report.max_left, r.left);
        report.max_right = std::max(report.max_right, r.right);
    }
    return report;
}

/// τ̄_m of a trajectory integrated with a larger threshold: the paths agree up to the first
/// failure, so lowering m only moves the failure to the first knot where |J^{-1}|_F > m or ϑ_m.
inline Knot truncation_knot(const InverseTrajectory& tr, double m, Knot theta_m) {
    Knot hit = earliest(tr.failure, theta_m);
    const int last = hit ? *hit : static_cast<int>(tr.inv_norm.size()) - 1;
    for (int k = 0; k <= last; ++k)
        if (tr.inv_norm[static_cast<std::size_t>(k)] > m) return k;
    return hit;
}

struct StoppingAnalysis {
    std::vector<double> m_ladder;
    std::vector<double> n_ladder;
    std::vector<Knot> theta;
    std::vector<Knot> tau_n;
    std::vector<StoppingRecord> records;
    /// Ψ trajectories for the largest m, one per grid node.
    std::vector<InverseTrajectory> trajectories;
    TwoSidedReport residuals;
};

/// Runs every detector and the truncated inverse flow for each m in the ladder; τ̄ is the
/// largest-m failure knot and τ = min(τ̄, τ̄').
inline StoppingAnalysis analyze_stopping(const FlowField& field, const CoefficientSet& cset, std::vector<double> m_ladder,
                                         std::vector<double> n_ladder, int threads = 1) {
    if (m_ladder.empty()) throw ConfigError("m_ladder must not be empty");
    if (!std::is_sorted(m_ladder.begin(), m_ladder.end(), std::less_equal<>()))
        throw ConfigError("m_ladder must be strictly increasing");
    StoppingAnalysis out;
    out.m_ladder = std::move(m_ladder);
    out.n_ladder = std::move(n_ladder);
    const auto inv_sup = inverse_norm_series(field);
    for (double m : out.m_ladder) out.theta.push_back(first_exceeding(inv_sup, m));
    if (!out.n_ladder.empty()) {
        const auto monitor = tau_n_monitor(field);
        for (double n : out.n_ladder) out.tau_n.push_back(first_exceeding(monitor, n));
    }
    const std::size_t points = field.points();
    out.records.resize(points);
    out.trajectories.resize(points);
    parallel_for(points, threads, [&](std::size_t p) {
        StoppingRecord& rec = out.records[p];
        rec.theta_m = out.theta;
        rec.tau_n = out.tau_n;
        rec.rho = detect_rho(field, p);
        out.trajectories[p] = integrate_psi(field, cset, field.grid().node(p), out.m_ladder.back(), out.theta.back());
        for (std::size_t i = 0; i < out.m_ladder.size(); ++i)
            rec.tau_bar_m.push_back(truncation_knot(out.trajectories[p], out.m_ladder[i], out.theta[i]));
        rec.tau_bar = rec.tau_bar_m.back();
    });
    out.residuals = verify_two_sided(field, out.trajectories, out.m_ladder.back(), threads);
    for (std::size_t p = 0; p < points; ++p) {
        out.records[p].tau_bar_prime = out.residuals.points[p].tau_bar_prime;
        out.records[p].tau = out.residuals.points[p].tau;
    }
    return out;
}

}  // namespace mvflow
