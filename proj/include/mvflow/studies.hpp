#pragma once

#include "mvflow/analysis.hpp"
#include "mvflow/coefficients.hpp"
#include "mvflow/flow.hpp"
#include "mvflow/oracle.hpp"
#include "mvflow/paths.hpp"
#include "mvflow/stopping.hpp"

#include <cmath>
#include <functional>
#include <optional>
#include <vector>

namespace mvflow {

/// One refinement level of the closed-form Jacobian comparison.
struct OracleLevel {
    int n_steps = 0;
    double dt = 0.0;
    std::vector<double> engine_T;
    std::vector<double> oracle_T;
    std::vector<double> abs_error;
    std::vector<Knot> rho;
    std::vector<Knot> crossing;
    /// Replica-mean engine Jacobian and its standard error at every knot.
    std::vector<MeanEstimate> engine_mean;
    MeanEstimate oracle_mean_T;
};

struct OracleStudy {
    std::vector<OracleLevel> levels;
    OrderFit order;
};

/// Runs the engine from x0 on nested paths (base, then levels-1 halvings) and evaluates the
/// closed-form Jacobian on every replica's own path. With `independent_mean` the oracle uses
/// E[J] ≡ 1 (f = id); otherwise it consumes the engine's replica-mean series.
inline OracleStudy oracle_study(const CoefficientSet& cset, const Vec& x0, BrownianPaths paths, int levels,
                                const FlowOptions& opts, bool independent_mean) {
    if (cset.dim_state() != 1 || cset.dim_noise() != 1) throw CapabilityError("the closed-form oracle is one-dimensional");
    OracleStudy study;
    std::vector<double> dts, medians;
    for (int level = 0; level < levels; ++level) {
        if (level > 0) paths = refine_halve(paths, opts.threads);
        const int knots = paths.grid().knots();
        const std::size_t m = static_cast<std::size_t>(paths.replicas());
        std::vector<std::vector<double>> state(m, std::vector<double>(static_cast<std::size_t>(knots)));
        std::vector<std::vector<Mat>> jac(m, std::vector<Mat>(static_cast<std::size_t>(knots)));
        OracleLevel lv;
        lv.n_steps = paths.steps();
        lv.dt = paths.grid().dt();
        const Ensemble final_ens = simulate_ensemble(x0, cset, paths, opts, [&](const Ensemble& e) {
            std::vector<double> js(m);
            for (std::size_t r = 0; r < m; ++r) {
                state[r][static_cast<std::size_t>(e.knot)] = e.state[r](0);
                jac[r][static_cast<std::size_t>(e.knot)] = e.jacobian[r];
                js[r] = e.jacobian[r](0, 0);
            }
            lv.engine_mean.push_back(mean_with_error(js));
        });
        std::vector<double> mean_series(static_cast<std::size_t>(knots), 1.0);
        if (!independent_mean)
            for (int k = 0; k < knots; ++k) mean_series[static_cast<std::size_t>(k)] = lv.engine_mean[static_cast<std::size_t>(k)].mean;
        const std::vector<double> no_stats(cset.stat_count(), 0.0);
        for (std::size_t r = 0; r < m; ++r) {
            const auto w = paths.knot_values(static_cast<int>(r), 0);
            std::vector<double> fprime(static_cast<std::size_t>(knots));
            for (int k = 0; k < knots; ++k)
                fprime[static_cast<std::size_t>(k)] =
                    cset.dx(0, make_vec({state[r][static_cast<std::size_t>(k)]}), LawView{nullptr, no_stats})(0, 0);
            const auto op = oracle::closed_form_jacobian(w, paths.grid().start(), lv.dt, fprime, mean_series);
            const double engine = final_ens.jacobian[r](0, 0);
            lv.engine_T.push_back(engine);
            lv.oracle_T.push_back(op.jacobian.back());
            lv.abs_error.push_back(std::abs(engine - op.jacobian.back()));
            const auto& st = final_ens.status[r];
            lv.rho.push_back(detect_rho(jac[r], st.v_exploded ? Knot(st.v_stop_knot) : std::nullopt));
            lv.crossing.push_back(op.crossing);
        }
        lv.oracle_mean_T = mean_with_error(lv.oracle_T);
        dts.push_back(lv.dt);
        medians.push_back(median(lv.abs_error));
        study.levels.push_back(std::move(lv));
    }
    study.order = fit_order(dts, medians);
    return study;
}

/// Cross-detector agreement between detect_rho and the closed-form crossing time.
struct StoppingAgreement {
    int paths = 0;
    int rho_fired = 0;
    int crossing_fired = 0;
    int both_fired = 0;
    /// Both fired within the tolerance.
    int agree_both = 0;
    /// Agreement counting "neither fired" as agreement.
    int agree_overall = 0;
};

inline StoppingAgreement stopping_agreement(const OracleLevel& lv, int tolerance = 2) {
    StoppingAgreement a;
    for (std::size_t r = 0; r < lv.rho.size(); ++r) {
        ++a.paths;
        const Knot rho = lv.rho[r], cr = lv.crossing[r];
        a.rho_fired += rho ? 1 : 0;
        a.crossing_fired += cr ? 1 : 0;
        if (rho && cr) {
            ++a.both_fired;
            if (std::abs(*rho - *cr) <= tolerance) {
                ++a.agree_both;
                ++a.agree_overall;
            }
        } else if (!rho && !cr) {
            ++a.agree_overall;
        }
    }
    return a;
}

struct ConvergenceLevel {
    int n_steps = 0;
    double dt = 0.0;
    std::vector<double> state_error;
    std::vector<double> jacobian_error;
};

struct ConvergenceStudy {
    std::vector<ConvergenceLevel> levels;
    OrderFit state_order;
    OrderFit jacobian_order;
};

/// Exact (X_T, J_T) for one replica given its Brownian knot values per driver.
using ClosedForm = std::function<std::pair<Vec, Mat>(const Vec& x0, const std::vector<std::vector<double>>& w, double horizon)>;

/// Pathwise strong-error study on nested refined paths. Without a closed form, each level is
/// compared with the finest level (which is then excluded from the order fit).
inline ConvergenceStudy convergence_study(const CoefficientSet& cset, const Vec& x0, BrownianPaths paths, int levels,
                                          const FlowOptions& opts, const ClosedForm& exact = {}) {
    if (levels < 3) throw ConfigError("convergence study needs at least 3 levels");
    std::vector<Ensemble> finals;
    std::vector<BrownianPaths> all;
    for (int level = 0; level < levels; ++level) {
        if (level > 0) paths = refine_halve(paths, opts.threads);
        finals.push_back(simulate_ensemble(x0, cset, paths, opts));
        all.push_back(paths);
    }
    ConvergenceStudy study;
    const int compared = exact ? levels : levels - 1;
    const std::size_t m = finals.front().replicas();
    std::vector<double> dts, xs, js;
    for (int level = 0; level < compared; ++level) {
        const auto& ens = finals[static_cast<std::size_t>(level)];
        ConvergenceLevel lv;
        lv.n_steps = all[static_cast<std::size_t>(level)].steps();
        lv.dt = all[static_cast<std::size_t>(level)].grid().dt();
        for (std::size_t r = 0; r < m; ++r) {
            Vec ref_x;
            Mat ref_j;
            if (exact) {
                std::vector<std::vector<double>> w;
                for (int k = 0; k < cset.dim_noise(); ++k) w.push_back(all.back().knot_values(static_cast<int>(r), k));
                std::tie(ref_x, ref_j) = exact(x0, w, all.back().grid().end() - all.back().grid().start());
            } else {
                ref_x = finals.back().state[r];
                ref_j = finals.back().jacobian[r];
            }
            lv.state_error.push_back((ens.state[r] - ref_x).norm());
            lv.jacobian_error.push_back(frobenius(ens.jacobian[r] - ref_j));
        }
        dts.push_back(lv.dt);
        xs.push_back(mean_with_error(lv.state_error).mean);
        js.push_back(mean_with_error(lv.jacobian_error).mean);
        study.levels.push_back(std::move(lv));
    }
    study.state_order = fit_order(dts, xs);
    study.jacobian_order = fit_order(dts, js);
    return study;
}

}  // namespace mvflow
