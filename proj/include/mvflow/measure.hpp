#pragma once

#include "mvflow/parallel.hpp"
#include "mvflow/types.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace mvflow {

/// Weighted sample approximation of a law in P_2(R^d). Immutable after construction.
class EmpiricalMeasure {
public:
    EmpiricalMeasure() = default;

    /// Uniformly weighted atoms.
    explicit EmpiricalMeasure(std::span<const Vec> atoms) {
        if (atoms.empty()) throw ConfigError("empirical measure needs at least one atom");
        dim_ = static_cast<int>(atoms.front().size());
        coords_.reserve(atoms.size() * static_cast<std::size_t>(dim_));
        for (const Vec& a : atoms) {
            if (a.size() != dim_) throw ConfigError("empirical measure atoms have mixed dimensions");
            for (int k = 0; k < dim_; ++k) coords_.push_back(a(k));
        }
        weights_.assign(atoms.size(), 1.0 / static_cast<double>(atoms.size()));
        uniform_ = true;
        validate();
    }

    EmpiricalMeasure(std::span<const Vec> atoms, std::vector<double> weights) : EmpiricalMeasure(atoms) {
        if (weights.size() != size()) throw ConfigError("weight count differs from atom count");
        weights_ = std::move(weights);
        uniform_ = false;
        validate();
    }

    /// Scalar atoms, uniform weights.
    static EmpiricalMeasure from_scalars(std::span<const double> values) {
        std::vector<Vec> atoms;
        atoms.reserve(values.size());
        for (double v : values) atoms.push_back(make_vec({v}));
        return EmpiricalMeasure(atoms);
    }

    static EmpiricalMeasure dirac(const Vec& x) { return EmpiricalMeasure(std::span<const Vec>(&x, 1)); }

    int dim() const { return dim_; }
    std::size_t size() const { return weights_.size(); }
    bool uniform() const { return uniform_; }
    double weight(std::size_t i) const { return weights_[i]; }
    std::span<const double> weights() const { return weights_; }

    Vec atom(std::size_t i) const {
        Vec v(dim_);
        for (int k = 0; k < dim_; ++k) v(k) = coords_[i * static_cast<std::size_t>(dim_) + static_cast<std::size_t>(k)];
        return v;
    }

    double coord(std::size_t i, int k) const { return coords_[i * static_cast<std::size_t>(dim_) + static_cast<std::size_t>(k)]; }

    /// Mean in fixed atom order.
    Vec mean() const {
        Vec m(dim_);
        for (int k = 0; k < dim_; ++k) {
            CompensatedSum acc;
            for (std::size_t i = 0; i < size(); ++i) acc.add(weights_[i] * coord(i, k));
            m(k) = acc.value();
        }
        return m;
    }

    double second_moment() const {
        CompensatedSum acc;
        for (std::size_t i = 0; i < size(); ++i) {
            double sq = 0.0;
            for (int k = 0; k < dim_; ++k) sq += coord(i, k) * coord(i, k);
            acc.add(weights_[i] * sq);
        }
        return acc.value();
    }

private:
    void validate() const {
        CompensatedSum total;
        for (double w : weights_) {
            if (!(w >= 0.0)) throw ConfigError("measure weights must be nonnegative");
            total.add(w);
        }
        if (std::abs(total.value() - 1.0) > 1e-12) throw ConfigError("measure weights must sum to 1");
        for (double c : coords_)
            if (!std::isfinite(c)) throw NumericalFailure("measure corruption: non-finite atom");
    }

    int dim_ = 0;
    std::vector<double> coords_;
    std::vector<double> weights_;
    bool uniform_ = true;
};

using Statistic = std::function<double(const Vec&)>;

/// m_j = sum_i w_i h_j(z_i), summed in atom order.
inline std::vector<double> moments(const EmpiricalMeasure& mu, std::span<const Statistic> stats) {
    std::vector<double> m(stats.size());
    for (std::size_t j = 0; j < stats.size(); ++j) {
        CompensatedSum acc;
        for (std::size_t i = 0; i < mu.size(); ++i) {
            const double h = stats[j](mu.atom(i));
            if (!std::isfinite(h))
                throw NumericalFailure("measure corruption: statistic " + std::to_string(j) +
                                       " is non-finite at atom " + std::to_string(i));
            acc.add(mu.weight(i) * h);
        }
        m[j] = acc.value();
    }
    return m;
}

/// Exact W2 on the line through the quantile (monotone) coupling; handles unequal weights.
inline double w2_1d(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu) {
    if (mu.dim() != 1 || nu.dim() != 1)
        throw CapabilityError("w2_1d requires one-dimensional measures; use w2_exact_small");
    auto sorted = [](const EmpiricalMeasure& m) {
        std::vector<std::pair<double, double>> v(m.size());
        for (std::size_t i = 0; i < m.size(); ++i) v[i] = {m.coord(i, 0), m.weight(i)};
        std::stable_sort(v.begin(), v.end(), [](auto& a, auto& b) { return a.first < b.first; });
        return v;
    };
    const auto a = sorted(mu);
    const auto b = sorted(nu);
    CompensatedSum cost;
    std::size_t i = 0, j = 0;
    double rem_a = a[0].second, rem_b = b[0].second;
    while (i < a.size() && j < b.size()) {
        const double mass = std::min(rem_a, rem_b);
        const double diff = a[i].first - b[j].first;
        cost.add(mass * diff * diff);
        rem_a -= mass;
        rem_b -= mass;
        // Exhausted mass tolerance absorbs rounding in the weight partition.
        if (rem_a <= 1e-15) {
            if (++i < a.size()) rem_a = a[i].second;
        }
        if (rem_b <= 1e-15) {
            if (++j < b.size()) rem_b = b[j].second;
        }
    }
    return std::sqrt(std::max(cost.value(), 0.0));
}

/// Minimum-cost perfect matching on an n x n cost matrix (Hungarian method, O(n^3)).
/// Returns assignment[row] = column.
inline std::vector<int> solve_assignment(const std::vector<std::vector<double>>& cost) {
    const int n = static_cast<int>(cost.size());
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
    std::vector<int> p(n + 1, 0), way(n + 1, 0);
    std::vector<char> used(n + 1);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::fill(minv.begin(), minv.end(), inf);
        std::fill(used.begin(), used.end(), 0);
        do {
            used[j0] = 1;
            const int i0 = p[j0];
            double delta = inf;
            int j1 = 0;
            for (int j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<int> assignment(n, -1);
    for (int j = 1; j <= n; ++j)
        if (p[j] != 0) assignment[p[j] - 1] = j - 1;
    return assignment;
}

inline constexpr std::size_t kMaxExactAtoms = 12;

/// Exact W2 between equal-size uniform measures in any dimension via optimal assignment.
inline double w2_exact_small(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu) {
    if (mu.size() != nu.size()) throw CapabilityError("w2_exact_small requires equal atom counts");
    if (mu.size() > kMaxExactAtoms)
        throw CapabilityError("w2_exact_small supports at most 12 atoms, got " + std::to_string(mu.size()));
    if (!mu.uniform() || !nu.uniform()) throw CapabilityError("w2_exact_small requires uniform weights");
    if (mu.dim() != nu.dim()) throw ConfigError("w2_exact_small: dimension mismatch");
    const std::size_t n = mu.size();
    std::vector<std::vector<double>> cost(n, std::vector<double>(n));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) cost[i][j] = (mu.atom(i) - nu.atom(j)).squaredNorm();
    const auto assignment = solve_assignment(cost);
    // Sum in row order so the result does not depend on solver internals.
    CompensatedSum total;
    for (std::size_t i = 0; i < n; ++i) total.add(cost[i][static_cast<std::size_t>(assignment[i])]);
    return std::sqrt(std::max(total.value(), 0.0) / static_cast<double>(n));
}

/// Plain rows, one atom per line: weight then coordinates, tab separated.
inline void write_rows(std::ostream& out, const EmpiricalMeasure& mu) {
    out << "weight";
    for (int k = 0; k < mu.dim(); ++k) out << "\tz" << k;
    out << '\n';
    char buf[64];
    for (std::size_t i = 0; i < mu.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.17g", mu.weight(i));
        out << buf;
        for (int k = 0; k < mu.dim(); ++k) {
            std::snprintf(buf, sizeof buf, "%.17g", mu.coord(i, k));
            out << '\t' << buf;
        }
        out << '\n';
    }
}

}  // namespace mvflow
