#pragma once

#include "mvflow/parallel.hpp"
#include "mvflow/rng.hpp"
#include "mvflow/types.hpp"

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

namespace mvflow {

/// Uniform time grid on [s, T].
class TimeGrid {
public:
    TimeGrid(double s, double T, int n_steps) : s_(s), T_(T), n_steps_(n_steps) {
        if (n_steps <= 0) throw ConfigError("time grid needs a positive step count");
        if (!(T > s)) throw ConfigError("time grid needs T > s");
    }

    double start() const { return s_; }
    double end() const { return T_; }
    int steps() const { return n_steps_; }
    int knots() const { return n_steps_ + 1; }
    double dt() const { return (T_ - s_) / n_steps_; }
    double time(int knot) const { return knot == n_steps_ ? T_ : s_ + knot * dt(); }

    /// Nearest knot to time t, clamped to the grid.
    int knot_at(double t) const {
        const double k = std::round((t - s_) / dt());
        if (k <= 0) return 0;
        if (k >= n_steps_) return n_steps_;
        return static_cast<int>(k);
    }

    TimeGrid halved() const { return TimeGrid(s_, T_, 2 * n_steps_); }

private:
    double s_;
    double T_;
    int n_steps_;
};

namespace detail {

/// Increments at refinement level L are multiples of 2^-(kQuantumBits + L). Dyadic values of
/// this size add exactly in double precision, so refined pairs reproduce the coarse increment
/// and every coarse knot value bit-for-bit through five refinement levels.
inline constexpr int kQuantumBits = 40;

inline double quantize(double v, int bits) { return std::ldexp(std::nearbyint(std::ldexp(v, bits)), -bits); }

}  // namespace detail

/// Brownian increments indexed [replica][step][driver]; every entry is a pure function of
/// (seed, level, replica, step, driver).
class BrownianPaths {
public:
    BrownianPaths(TimeGrid grid, int replicas, int drivers, std::uint64_t seed, int level,
                  std::vector<double> increments)
        : grid_(grid), replicas_(replicas), drivers_(drivers), seed_(seed), level_(level), dw_(std::move(increments)) {}

    const TimeGrid& grid() const { return grid_; }
    int replicas() const { return replicas_; }
    int drivers() const { return drivers_; }
    int steps() const { return grid_.steps(); }
    std::uint64_t seed() const { return seed_; }
    /// Number of refine_halve applications since sampling.
    int level() const { return level_; }

    double increment(int replica, int step, int driver) const { return dw_[index(replica, step, driver)]; }

    std::span<const double> step_increments(int replica, int step) const {
        return {dw_.data() + index(replica, step, 0), static_cast<std::size_t>(drivers_)};
    }

    /// W at every knot for one replica and driver (W_s = 0), accumulated in step order.
    std::vector<double> knot_values(int replica, int driver) const {
        std::vector<double> w(static_cast<std::size_t>(grid_.knots()), 0.0);
        for (int i = 0; i < steps(); ++i) w[static_cast<std::size_t>(i) + 1] = w[static_cast<std::size_t>(i)] + increment(replica, i, driver);
        return w;
    }

    std::span<const double> raw() const { return dw_; }

private:
    std::size_t index(int r, int i, int k) const {
        return (static_cast<std::size_t>(r) * static_cast<std::size_t>(steps()) + static_cast<std::size_t>(i)) *
                   static_cast<std::size_t>(drivers_) +
               static_cast<std::size_t>(k);
    }

    TimeGrid grid_;
    int replicas_;
    int drivers_;
    std::uint64_t seed_;
    int level_;
    std::vector<double> dw_;
};

/// Independent N(0, dt) increments from the counter generator keyed by (seed, replica, step, driver).
inline BrownianPaths sample_paths(const TimeGrid& grid, int replicas, int drivers, std::uint64_t seed, int threads = 1) {
    if (replicas < 1) throw ConfigError("sample_paths: need at least one replica");
    if (drivers < 1) throw ConfigError("sample_paths: need at least one driver");
    const double sd = std::sqrt(grid.dt());
    const std::size_t per_replica = static_cast<std::size_t>(grid.steps()) * static_cast<std::size_t>(drivers);
    std::vector<double> dw(per_replica * static_cast<std::size_t>(replicas));
    parallel_for(static_cast<std::size_t>(replicas), threads, [&](std::size_t r) {
        for (int i = 0; i < grid.steps(); ++i)
            for (int k = 0; k < drivers; ++k) {
                const double z = counter_normal(seed, static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(r),
                                                static_cast<std::uint32_t>(k), 0u);
                dw[r * per_replica + static_cast<std::size_t>(i) * static_cast<std::size_t>(drivers) + static_cast<std::size_t>(k)] =
                    detail::quantize(sd * z, detail::kQuantumBits);
            }
    });
    return BrownianPaths(grid, replicas, drivers, seed, 0, std::move(dw));
}

/// Brownian-bridge midpoint insertion: dW -> (dW/2 + xi, dW/2 - xi), xi ~ N(0, dt/4).
inline BrownianPaths refine_halve(const BrownianPaths& coarse, int threads = 1) {
    const TimeGrid fine_grid = coarse.grid().halved();
    const int drivers = coarse.drivers();
    const int level = coarse.level() + 1;
    const int bits = detail::kQuantumBits + level;
    const double sd = 0.5 * std::sqrt(coarse.grid().dt());
    const std::size_t per_replica = static_cast<std::size_t>(fine_grid.steps()) * static_cast<std::size_t>(drivers);
    std::vector<double> dw(per_replica * static_cast<std::size_t>(coarse.replicas()));
    parallel_for(static_cast<std::size_t>(coarse.replicas()), threads, [&](std::size_t r) {
        for (int i = 0; i < coarse.steps(); ++i)
            for (int k = 0; k < drivers; ++k) {
                const double half = 0.5 * coarse.increment(static_cast<int>(r), i, k);
                const double z = counter_normal(coarse.seed(), static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(r),
                                                static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(level));
                const double xi = detail::quantize(sd * z, bits);
                const std::size_t base = r * per_replica + static_cast<std::size_t>(2 * i) * static_cast<std::size_t>(drivers) +
                                         static_cast<std::size_t>(k);
                dw[base] = half + xi;
                dw[base + static_cast<std::size_t>(drivers)] = half - xi;
            }
    });
    return BrownianPaths(fine_grid, coarse.replicas(), drivers, coarse.seed(), level, std::move(dw));
}

}  // namespace mvflow
