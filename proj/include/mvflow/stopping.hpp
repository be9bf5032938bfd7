#pragma once

#include "mvflow/flow.hpp"
#include "mvflow/grid.hpp"
#include "mvflow/types.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mvflow {

/// A first-hit knot index; nullopt means "not hit" on [s, T].
using Knot = std::optional<int>;

inline Knot earliest(Knot a, Knot b) {
    if (!a) return b;
    if (!b) return a;
    return std::min(*a, *b);
}

/// True when a stopping time with this hit knot is still strictly beyond `knot`.
inline bool alive_at(Knot hit, int knot) { return !hit || *hit > knot; }

inline std::string knot_text(Knot k) { return k ? std::to_string(*k) : std::string("none"); }

/// Per grid point first-hit knots. Ladder-indexed entries follow the configured m and n ladders.
struct StoppingRecord {
    std::vector<Knot> theta_m;
    std::vector<Knot> tau_n;
    Knot rho;
    std::vector<Knot> tau_bar_m;
    Knot tau_bar;
    Knot tau_bar_prime;
    Knot tau;
};

/// Scan helper: first index whose value exceeds the threshold.
inline Knot first_exceeding(std::span<const double> series, double threshold) {
    for (std::size_t k = 0; k < series.size(); ++k)
        if (series[k] > threshold) return static_cast<int>(k);
    return std::nullopt;
}

/// sup over the grid of |J_t(x)^{-1}|_F at every knot (physical path; +inf when singular).
inline std::vector<double> inverse_norm_series(const FlowField& field) {
    std::vector<double> out(static_cast<std::size_t>(field.knots()), 0.0);
    for (int k = 0; k < field.knots(); ++k)
        for (std::size_t p = 0; p < field.points(); ++p)
            out[static_cast<std::size_t>(k)] = std::max(out[static_cast<std::size_t>(k)], inverse_norm(field.jacobian(k, p)));
    return out;
}

/// First knot where the sup over the grid box of |J^{-1}|_F exceeds m.
inline Knot detect_theta(const FlowField& field, double m) { return first_exceeding(inverse_norm_series(field), m); }

namespace detail {

/// One-dimensional central-difference weights over offsets -2..2 for derivative orders 0..3.
inline const std::array<std::array<double, 5>, 4>& fd_weights() {
    static const std::array<std::array<double, 5>, 4> w = {{
        {0.0, 0.0, 1.0, 0.0, 0.0},
        {0.0, -0.5, 0.0, 0.5, 0.0},
        {0.0, 1.0, -2.0, 1.0, 0.0},
        {-0.5, 1.0, 0.0, -1.0, 0.5},
    }};
    return w;
}

/// Multi-indices α of the given total order over d axes, with multiplicity |α|!/α!.
struct MultiIndex {
    std::array<int, kMaxDim> order{};
    double multiplicity = 1.0;
};

inline std::vector<MultiIndex> multi_indices(int d, int total) {
    std::vector<MultiIndex> out;
    std::array<int, kMaxDim> cur{};
    const auto fact = [](int n) {
        double f = 1.0;
        for (int i = 2; i <= n; ++i) f *= i;
        return f;
    };
    const auto rec = [&](auto&& self, int axis, int left) -> void {
        if (axis == d - 1) {
            cur[static_cast<std::size_t>(axis)] = left;
            MultiIndex mi;
            mi.order = cur;
            double denom = 1.0;
            for (int a = 0; a < d; ++a) denom *= fact(cur[static_cast<std::size_t>(a)]);
            mi.multiplicity = fact(total) / denom;
            out.push_back(mi);
            return;
        }
        for (int o = 0; o <= left; ++o) {
            cur[static_cast<std::size_t>(axis)] = o;
            self(self, axis + 1, left - o);
        }
    };
    rec(rec, 0, total);
    return out;
}

}  // namespace detail

/// Monitor max{|Φ|, |∂Φ|, |∇²Φ|, |∇³Φ|} (sup over the grid) at every knot; higher derivatives by
/// tensor-product central differences of the stored physical map at points with two neighbours
/// on each side along every axis.
inline std::vector<double> tau_n_monitor(const FlowField& field) {
    const SpatialGrid& grid = field.grid();
    const int d = grid.dim();
    for (int a = 0; a < d; ++a)
        if (grid.points(a) < 7)
            throw CapabilityError("third-order differences need at least 7 grid points per axis; axis " + std::to_string(a) +
                                  " has " + std::to_string(grid.points(a)));
    const auto second = detail::multi_indices(d, 2);
    const auto third = detail::multi_indices(d, 3);
    const auto& w = detail::fd_weights();

    std::vector<double> out(static_cast<std::size_t>(field.knots()), 0.0);
    for (int k = 0; k < field.knots(); ++k) {
        double sup = 0.0;
        std::vector<Vec> phi(grid.size());
        for (std::size_t p = 0; p < grid.size(); ++p) {
            phi[p] = field.phi(k, p);
            sup = std::max({sup, phi[p].norm(), frobenius(field.jacobian(k, p))});
        }
        const auto derivative = [&](const std::array<int, kMaxDim>& base, const detail::MultiIndex& mi) {
            Vec acc = zero_vec(d);
            const int taps = static_cast<int>(std::pow(5, d));
            for (int t = 0; t < taps; ++t) {
                std::array<int, kMaxDim> idx = base;
                double weight = 1.0;
                int rem = t;
                for (int a = 0; a < d; ++a) {
                    const int off = rem % 5 - 2;
                    rem /= 5;
                    const int o = mi.order[static_cast<std::size_t>(a)];
                    weight *= w[static_cast<std::size_t>(o)][static_cast<std::size_t>(off + 2)] / std::pow(grid.spacing(a), o);
                    idx[static_cast<std::size_t>(a)] += off;
                }
                if (weight != 0.0) acc += weight * phi[grid.flat_index(idx)];
            }
            return acc;
        };
        for (std::size_t p = 0; p < grid.size(); ++p) {
            const auto base = grid.multi_index(p);
            bool interior = true;
            for (int a = 0; a < d; ++a) {
                const int i = base[static_cast<std::size_t>(a)];
                if (i < 2 || i > grid.points(a) - 3) interior = false;
            }
            if (!interior) continue;
            double n2 = 0.0, n3 = 0.0;
            for (const auto& mi : second) n2 += mi.multiplicity * derivative(base, mi).squaredNorm();
            for (const auto& mi : third) n3 += mi.multiplicity * derivative(base, mi).squaredNorm();
            sup = std::max({sup, std::sqrt(n2), std::sqrt(n3)});
        }
        out[static_cast<std::size_t>(k)] = std::isfinite(sup) ? sup : std::numeric_limits<double>::infinity();
    }
    return out;
}

inline Knot detect_tau_n(const FlowField& field, double n) { return first_exceeding(tau_n_monitor(field), n); }

/// First knot where det J < 1e-12 |J|_F^d (a sign change counts as a crossing), or the V
/// explosion knot, whichever comes first.
inline Knot detect_rho(std::span<const Mat> jacobians, Knot v_explosion = std::nullopt) {
    Knot hit;
    for (std::size_t k = 0; k < jacobians.size(); ++k) {
        const Mat& j = jacobians[k];
        const double det = j.determinant();
        if (!all_finite(j) || det == 0.0 || !(det >= singularity_threshold(j))) {
            hit = static_cast<int>(k);
            break;
        }
    }
    return earliest(hit, v_explosion);
}

/// detect_rho on the physical Jacobian series of grid point p.
inline Knot detect_rho(const FlowField& field, std::size_t p) {
    std::vector<Mat> series;
    series.reserve(static_cast<std::size_t>(field.knots()));
    for (int k = 0; k < field.knots(); ++k) series.push_back(field.jacobian(k, p));
    const Knot v_explosion = field.v_exploded(p) ? Knot(field.v_stop_knot(p)) : std::nullopt;
    return detect_rho(series, v_explosion);
}

struct DomainEstimate {
    int knot = 0;
    double time = 0.0;
    /// mask[p] = 1 when τ(s, x_p) > t.
    std::vector<char> mask;
    /// Physical images Φ_{s,t}(x_p) of the masked points, in grid order.
    std::vector<Vec> image;

    std::size_t cardinality() const { return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1)); }
};

/// D_{s,t} = {x : τ(s, x) > t} on the grid and its image R_{s,t}.
inline DomainEstimate estimate_domain(const FlowField& field, std::span<const StoppingRecord> records, int knot) {
    if (records.size() != field.points()) throw ConfigError("estimate_domain: one stopping record per grid point required");
    if (knot < 0 || knot >= field.knots()) throw ConfigError("estimate_domain: knot out of range");
    DomainEstimate est;
    est.knot = knot;
    est.time = field.time().time(knot);
    est.mask.assign(field.points(), 0);
    for (std::size_t p = 0; p < field.points(); ++p)
        if (alive_at(records[p].tau, knot)) {
            est.mask[p] = 1;
            est.image.push_back(field.phi(knot, p));
        }
    return est;
}

/// Exact set inclusion of a in b.
inline bool mask_subset(const std::vector<char>& a, const std::vector<char>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i] && !b[i]) return false;
    return true;
}

}  // namespace mvflow
