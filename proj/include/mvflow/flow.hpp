#pragma once

#include "mvflow/coefficients.hpp"
#include "mvflow/grid.hpp"
#include "mvflow/parallel.hpp"
#include "mvflow/paths.hpp"
#include "mvflow/types.hpp"

#include <array>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace mvflow {

/// Largest number of Brownian drivers the stepping kernels carry on the stack.
inline constexpr int kMaxNoise = 8;

struct FlowOptions {
    /// V stops propagating once the replica's |J^{-1}|_F exceeds this threshold.
    double v_freeze_m = 10.0;
    /// |V|_F above this (or non-finite) marks V as exploded.
    double v_explosion_norm = 1e12;
    /// Abort when more than this fraction of replicas diverge.
    double max_diverged_fraction = 0.01;
    int threads = 1;
};

struct ReplicaStatus {
    bool diverged = false;
    int diverged_knot = -1;
    bool v_frozen = false;
    bool v_exploded = false;
    /// Knot at which V stopped (freeze or explosion), -1 while active.
    int v_stop_knot = -1;
};

/// M replicas started at one initial point: state X, Jacobian J = ∂_xΦ and inverse-Jacobian
/// candidate V per replica. The law of Φ_{s,t}(x) is the empirical measure of the states.
struct Ensemble {
    Vec initial_point;
    std::vector<Vec> state;
    std::vector<Mat> jacobian;
    std::vector<Mat> inv_jacobian;
    std::vector<ReplicaStatus> status;
    /// Replica r reads Brownian path path_of[r].
    std::vector<int> path_of;
    int knot = 0;
    int diverged_count = 0;

    static Ensemble start(const Vec& x, int replicas) {
        const int d = static_cast<int>(x.size());
        Ensemble e;
        e.initial_point = x;
        e.state.assign(static_cast<std::size_t>(replicas), x);
        e.jacobian.assign(static_cast<std::size_t>(replicas), identity_mat(d));
        e.inv_jacobian.assign(static_cast<std::size_t>(replicas), identity_mat(d));
        e.status.assign(static_cast<std::size_t>(replicas), {});
        e.path_of.resize(static_cast<std::size_t>(replicas));
        std::iota(e.path_of.begin(), e.path_of.end(), 0);
        return e;
    }

    std::size_t replicas() const { return state.size(); }
    int dim() const { return static_cast<int>(initial_point.size()); }

    /// Empirical law over the non-diverged replicas, in replica order.
    EmpiricalMeasure law() const {
        if (diverged_count == 0) return EmpiricalMeasure(state);
        std::vector<Vec> alive;
        for (std::size_t i = 0; i < replicas(); ++i)
            if (!status[i].diverged) alive.push_back(state[i]);
        return EmpiricalMeasure(alive);
    }

    std::vector<Mat> alive_jacobians() const {
        if (diverged_count == 0) return jacobian;
        std::vector<Mat> out;
        for (std::size_t i = 0; i < replicas(); ++i)
            if (!status[i].diverged) out.push_back(jacobian[i]);
        return out;
    }

    /// Replica average of J in fixed order.
    Mat mean_jacobian() const {
        const int d = dim();
        Mat m(d, d);
        const double n = static_cast<double>(replicas() - static_cast<std::size_t>(diverged_count));
        for (int a = 0; a < d; ++a)
            for (int b = 0; b < d; ++b) {
                CompensatedSum acc;
                for (std::size_t i = 0; i < replicas(); ++i)
                    if (!status[i].diverged) acc.add(jacobian[i](a, b));
                m(a, b) = acc.value() / n;
            }
        return m;
    }
};

/// Per-replica coefficient values F_c = V_c(X, μ) and variational coefficients
/// B_c = ∂_xV_c(X, μ) J + Ẽ[∂_μV_c(X, μ, X̃) J̃], c = 0 (drift) .. d'.
struct ReplicaTerms {
    int count = 0;
    std::array<Vec, kMaxNoise + 1> field;
    std::array<Mat, kMaxNoise + 1> variation;
};

inline void evaluate_terms(const CoefficientSet& cset, const LawView& law, const LionsPairing& pairing, const Vec& x,
                           const Mat& j, ReplicaTerms& out) {
    out.count = cset.count();
    for (int c = 0; c < out.count; ++c) {
        const auto uc = static_cast<std::size_t>(c);
        out.field[uc] = cset.value(c, x, law);
        out.variation[uc] = cset.dx(c, x, law) * j + cset.pairing(c, x, law, pairing);
    }
}

/// Euler-Maruyama state update X + F_0 dt + Σ_k F_k dW^k.
inline Vec advance_state(const Vec& x, const ReplicaTerms& t, double dt, std::span<const double> dw) {
    Vec next = x + t.field[0] * dt;
    for (int k = 1; k < t.count; ++k) next += t.field[static_cast<std::size_t>(k)] * dw[static_cast<std::size_t>(k - 1)];
    return next;
}

/// Variational update J + B_0 dt + Σ_k B_k dW^k.
inline Mat advance_jacobian(const Mat& j, const ReplicaTerms& t, double dt, std::span<const double> dw) {
    Mat next = j + t.variation[0] * dt;
    for (int k = 1; k < t.count; ++k) next += t.variation[static_cast<std::size_t>(k)] * dw[static_cast<std::size_t>(k - 1)];
    return next;
}

/// Itô form of the bilinear inverse-Jacobian equation dV = -Σ_k V A_k V ∘ dW^k. Expressed with
/// the Itô variational coefficients B_c, the Stratonovich correction is exactly
///   dV = [-V B_0 V + Σ_k V B_k V B_k V] dt - Σ_k V B_k V dW^k,
/// which needs no second derivatives of the coefficients.
inline Mat advance_inverse_jacobian(const Mat& v, const ReplicaTerms& t, double dt, std::span<const double> dw) {
    Mat drift = -(v * t.variation[0] * v);
    Mat next = v;
    for (int k = 1; k < t.count; ++k) {
        const Mat vbv = v * t.variation[static_cast<std::size_t>(k)] * v;
        drift += vbv * t.variation[static_cast<std::size_t>(k)] * v;
        next -= vbv * dw[static_cast<std::size_t>(k - 1)];
    }
    return next + drift * dt;
}

/// One frozen-snapshot step of every replica: coefficients read the step-start law.
inline void step_ensemble(Ensemble& ens, const CoefficientSet& cset, const BrownianPaths& paths, const FlowOptions& opts) {
    if (cset.dim_noise() > kMaxNoise) throw CapabilityError("at most " + std::to_string(kMaxNoise) + " Brownian drivers supported");
    if (paths.drivers() != cset.dim_noise()) throw ConfigError("path driver count differs from the coefficient noise dimension");
    if (ens.knot >= paths.steps()) throw ConfigError("ensemble already at the final knot");
    const int step = ens.knot;
    const double dt = paths.grid().dt();
    const auto snap = cset.snapshot(ens.law());
    const auto alive_j = ens.alive_jacobians();
    const auto pairing = cset.prepare_pairing(snap, alive_j);
    const LawView law = snap.view();

    std::vector<char> newly_diverged(ens.replicas(), 0);
    parallel_for(ens.replicas(), opts.threads, [&](std::size_t i) {
        auto& st = ens.status[i];
        if (st.diverged) return;
        const auto dw = paths.step_increments(ens.path_of[i], step);
        ReplicaTerms terms;
        evaluate_terms(cset, law, pairing, ens.state[i], ens.jacobian[i], terms);
        const Vec x_next = advance_state(ens.state[i], terms, dt, dw);
        const Mat j_next = advance_jacobian(ens.jacobian[i], terms, dt, dw);
        if (!all_finite(x_next) || !all_finite(j_next)) {
            newly_diverged[i] = 1;
            return;
        }
        if (!st.v_frozen && !st.v_exploded) {
            if (inverse_norm(ens.jacobian[i]) > opts.v_freeze_m) {
                st.v_frozen = true;
                st.v_stop_knot = step;
            } else {
                const Mat v_next = advance_inverse_jacobian(ens.inv_jacobian[i], terms, dt, dw);
                if (!all_finite(v_next) || frobenius(v_next) > opts.v_explosion_norm) {
                    st.v_exploded = true;
                    st.v_stop_knot = step + 1;
                } else {
                    ens.inv_jacobian[i] = v_next;
                }
            }
        }
        ens.state[i] = x_next;
        ens.jacobian[i] = j_next;
    });
    for (std::size_t i = 0; i < ens.replicas(); ++i)
        if (newly_diverged[i]) {
            ens.status[i].diverged = true;
            ens.status[i].diverged_knot = step + 1;
            ++ens.diverged_count;
        }
    ens.knot = step + 1;
    if (static_cast<double>(ens.diverged_count) > opts.max_diverged_fraction * static_cast<double>(ens.replicas()))
        throw NumericalFailure(std::to_string(ens.diverged_count) + " of " + std::to_string(ens.replicas()) +
                               " replicas diverged by knot " + std::to_string(ens.knot));
}

using EnsembleObserver = std::function<void(const Ensemble&)>;

/// Runs one initial point over every knot; the observer sees knot 0 and each later knot.
inline Ensemble simulate_ensemble(const Vec& x0, const CoefficientSet& cset, const BrownianPaths& paths, const FlowOptions& opts,
                                  const EnsembleObserver& observer = {}) {
    if (x0.size() != cset.dim_state()) throw ConfigError("initial point dimension differs from the state dimension");
    Ensemble ens = Ensemble::start(x0, paths.replicas());
    if (observer) observer(ens);
    while (ens.knot < paths.steps()) {
        step_ensemble(ens, cset, paths, opts);
        if (observer) observer(ens);
    }
    return ens;
}

/// Heun predictor-corrector on the Stratonovich form (V_0 = strat_drift); states only.
inline std::vector<Vec> simulate_states_heun(const Vec& x0, const CoefficientSet& cset, const BrownianPaths& paths,
                                             int threads = 1) {
    const std::size_t m = static_cast<std::size_t>(paths.replicas());
    const double dt = paths.grid().dt();
    std::vector<Vec> x(m, x0), pred(m);
    for (int step = 0; step < paths.steps(); ++step) {
        const auto snap = cset.snapshot(EmpiricalMeasure(x));
        parallel_for(m, threads, [&](std::size_t i) {
            const auto dw = paths.step_increments(static_cast<int>(i), step);
            Vec p = x[i] + cset.strat_drift(x[i], snap.view()) * dt;
            for (int k = 1; k <= cset.dim_noise(); ++k) p += cset.value(k, x[i], snap.view()) * dw[static_cast<std::size_t>(k - 1)];
            pred[i] = p;
        });
        const auto snap_pred = cset.snapshot(EmpiricalMeasure(pred));
        std::vector<Vec> next(m);
        parallel_for(m, threads, [&](std::size_t i) {
            const auto dw = paths.step_increments(static_cast<int>(i), step);
            Vec n = x[i] + 0.5 * (cset.strat_drift(x[i], snap.view()) + cset.strat_drift(pred[i], snap_pred.view())) * dt;
            for (int k = 1; k <= cset.dim_noise(); ++k)
                n += 0.5 * (cset.value(k, x[i], snap.view()) + cset.value(k, pred[i], snap_pred.view())) * dw[static_cast<std::size_t>(k - 1)];
            next[i] = n;
        });
        x = std::move(next);
    }
    return x;
}

/// Time-indexed snapshot of the flow on one common ("physical") Brownian path: replica 0 of
/// every grid point's ensemble reads path 0. Stores Φ, ∂_xΦ, V, the law statistics and the
/// replica-mean Jacobian at every knot and grid point.
class FlowField {
public:
    FlowField(SpatialGrid grid, TimeGrid time, int dim_noise, std::size_t stat_count)
        : grid_(std::move(grid)), time_(time), dim_noise_(dim_noise), stat_count_(stat_count) {
        const std::size_t slots = static_cast<std::size_t>(time_.knots()) * grid_.size();
        const std::size_t d = static_cast<std::size_t>(dim());
        phi_.assign(slots * d, 0.0);
        jac_.assign(slots * d * d, 0.0);
        inv_.assign(slots * d * d, 0.0);
        mean_jac_.assign(slots * d * d, 0.0);
        stats_.assign(slots * stat_count_, 0.0);
        v_stop_knot_.assign(grid_.size(), -1);
        v_exploded_.assign(grid_.size(), 0);
        diverged_.assign(grid_.size(), 0);
    }

    const SpatialGrid& grid() const { return grid_; }
    const TimeGrid& time() const { return time_; }
    int dim() const { return grid_.dim(); }
    int dim_noise() const { return dim_noise_; }
    int knots() const { return time_.knots(); }
    std::size_t points() const { return grid_.size(); }
    std::size_t stat_count() const { return stat_count_; }

    Vec phi(int knot, std::size_t p) const { return read_vec(phi_, knot, p); }
    Mat jacobian(int knot, std::size_t p) const { return read_mat(jac_, knot, p); }
    Mat inv_jacobian(int knot, std::size_t p) const { return read_mat(inv_, knot, p); }
    Mat mean_jacobian(int knot, std::size_t p) const { return read_mat(mean_jac_, knot, p); }
    std::span<const double> stats(int knot, std::size_t p) const {
        return {stats_.data() + slot(knot, p) * stat_count_, stat_count_};
    }

    /// Physical-path increments dW[step][driver].
    std::span<const double> physical_increments(int step) const {
        return {physical_dw_.data() + static_cast<std::size_t>(step) * static_cast<std::size_t>(dim_noise_),
                static_cast<std::size_t>(dim_noise_)};
    }

    int v_stop_knot(std::size_t p) const { return v_stop_knot_[p]; }
    bool v_exploded(std::size_t p) const { return v_exploded_[p] != 0; }
    int diverged(std::size_t p) const { return diverged_[p]; }
    int total_diverged() const { return std::accumulate(diverged_.begin(), diverged_.end(), 0); }

    void record(const Ensemble& ens, const LawSnapshot& law, std::size_t p) {
        const int k = ens.knot;
        write_vec(phi_, k, p, ens.state[0]);
        write_mat(jac_, k, p, ens.jacobian[0]);
        write_mat(inv_, k, p, ens.inv_jacobian[0]);
        write_mat(mean_jac_, k, p, ens.mean_jacobian());
        std::copy(law.stats.begin(), law.stats.end(), stats_.begin() + static_cast<std::ptrdiff_t>(slot(k, p) * stat_count_));
        v_stop_knot_[p] = ens.status[0].v_stop_knot;
        v_exploded_[p] = ens.status[0].v_exploded ? 1 : 0;
        diverged_[p] = ens.diverged_count;
    }

    void set_physical_increments(std::vector<double> dw) { physical_dw_ = std::move(dw); }

private:
    std::size_t slot(int knot, std::size_t p) const { return static_cast<std::size_t>(knot) * grid_.size() + p; }

    Vec read_vec(const std::vector<double>& v, int knot, std::size_t p) const {
        const int d = dim();
        Vec out(d);
        const std::size_t base = slot(knot, p) * static_cast<std::size_t>(d);
        for (int a = 0; a < d; ++a) out(a) = v[base + static_cast<std::size_t>(a)];
        return out;
    }
    Mat read_mat(const std::vector<double>& v, int knot, std::size_t p) const {
        const int d = dim();
        Mat out(d, d);
        const std::size_t base = slot(knot, p) * static_cast<std::size_t>(d * d);
        for (int a = 0; a < d; ++a)
            for (int b = 0; b < d; ++b) out(a, b) = v[base + static_cast<std::size_t>(a * d + b)];
        return out;
    }
    void write_vec(std::vector<double>& v, int knot, std::size_t p, const Vec& x) {
        const std::size_t base = slot(knot, p) * static_cast<std::size_t>(dim());
        for (int a = 0; a < dim(); ++a) v[base + static_cast<std::size_t>(a)] = x(a);
    }
    void write_mat(std::vector<double>& v, int knot, std::size_t p, const Mat& m) {
        const int d = dim();
        const std::size_t base = slot(knot, p) * static_cast<std::size_t>(d * d);
        for (int a = 0; a < d; ++a)
            for (int b = 0; b < d; ++b) v[base + static_cast<std::size_t>(a * d + b)] = m(a, b);
    }

    SpatialGrid grid_;
    TimeGrid time_;
    int dim_noise_;
    std::size_t stat_count_;
    std::vector<double> phi_, jac_, inv_, mean_jac_, stats_;
    std::vector<double> physical_dw_;
    std::vector<int> v_stop_knot_;
    std::vector<char> v_exploded_;
    std::vector<int> diverged_;
};

/// Simulates every grid point (in parallel across points) and collects the FlowField.
/// Per-point work is serial, so the result does not depend on the worker count.
inline FlowField simulate(const SpatialGrid& grid, const CoefficientSet& cset, const BrownianPaths& paths, const FlowOptions& opts) {
    if (grid.dim() != cset.dim_state()) throw ConfigError("grid dimension differs from the state dimension");
    if (paths.drivers() != cset.dim_noise()) throw ConfigError("path driver count differs from the coefficient noise dimension");
    FlowField field(grid, paths.grid(), cset.dim_noise(), cset.stat_count());
    std::vector<double> dw;
    for (int i = 0; i < paths.steps(); ++i)
        for (double v : paths.step_increments(0, i)) dw.push_back(v);
    field.set_physical_increments(std::move(dw));

    FlowOptions inner = opts;
    inner.threads = 1;
    parallel_for(grid.size(), opts.threads, [&](std::size_t p) {
        simulate_ensemble(grid.node(p), cset, paths, inner, [&](const Ensemble& ens) {
            field.record(ens, cset.snapshot(ens.law()), p);
        });
    });
    return field;
}

}  // namespace mvflow
