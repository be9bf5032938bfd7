#pragma once

#include "mvflow/analysis.hpp"
#include "mvflow/config.hpp"
#include "mvflow/flow.hpp"
#include "mvflow/inverse.hpp"
#include "mvflow/measure.hpp"
#include "mvflow/oracle.hpp"
#include "mvflow/paths.hpp"
#include "mvflow/rng.hpp"
#include "mvflow/stopping.hpp"
#include "mvflow/studies.hpp"

#include <openssl/sha.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#ifndef MVFLOW_VERSION
#define MVFLOW_VERSION "0.0.0"
#endif

namespace mvflow::run {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitNumerical = 2;

inline std::string sha256_hex(std::string_view data) {
    unsigned char digest[SHA256_DIGEST_LENGTH];
    SHA256(reinterpret_cast<const unsigned char*>(data.data()), data.size(), digest);
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(2 * SHA256_DIGEST_LENGTH);
    for (unsigned char c : digest) {
        out.push_back(hex[c >> 4]);
        out.push_back(hex[c & 15]);
    }
    return out;
}

inline std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}
inline std::string fmt(int v) { return std::to_string(v); }
inline std::string fmt(std::size_t v) { return std::to_string(v); }
inline std::string fmt(Knot k) { return knot_text(k); }
inline std::string fmt(const std::string& s) { return s; }
inline std::string fmt(const char* s) { return s; }
inline std::string fmt(bool b) { return b ? "1" : "0"; }

/// Tab-separated table with a header row.
class Table {
public:
    explicit Table(std::vector<std::string> header) : header_(std::move(header)) {}

    template <class... Ts>
    void row(const Ts&... values) {
        std::vector<std::string> r;
        (append(r, values), ...);
        add(std::move(r));
    }

    void add(std::vector<std::string> r) {
        if (r.size() != header_.size())
            throw std::logic_error("table row has " + std::to_string(r.size()) + " cells, header has " + std::to_string(header_.size()));
        rows_.push_back(std::move(r));
    }

    std::string str() const {
        std::string out;
        const auto line = [&out](const std::vector<std::string>& cells) {
            for (std::size_t i = 0; i < cells.size(); ++i) {
                if (i) out.push_back('\t');
                out += cells[i];
            }
            out.push_back('\n');
        };
        line(header_);
        for (const auto& r : rows_) line(r);
        return out;
    }

private:
    template <class T>
    static void append(std::vector<std::string>& r, const T& v) {
        if constexpr (std::is_same_v<T, std::vector<std::string>>)
            r.insert(r.end(), v.begin(), v.end());
        else
            r.push_back(fmt(v));
    }

    std::vector<std::string> header_;
    std::vector<std::vector<std::string>> rows_;
};

struct OutputFile {
    std::string name;
    std::size_t bytes = 0;
    std::string sha256;
};

/// Output directory that records every file it writes with its digest.
class OutputDir {
public:
    explicit OutputDir(fs::path root) : root_(std::move(root)) {}

    const fs::path& root() const { return root_; }
    const std::vector<OutputFile>& files() const { return files_; }

    void write(const std::string& name, const std::string& content) {
        fs::create_directories(root_);
        std::ofstream out(root_ / name, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + (root_ / name).string());
        out << content;
        out.close();
        files_.push_back({name, content.size(), sha256_hex(content)});
    }

    void write(const std::string& name, const Table& t) { write(name, t.str()); }

private:
    fs::path root_;
    std::vector<OutputFile> files_;
};

struct RunOptions {
    std::string command;
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    int threads = 1;
};

/// Per-module error counters reported in the manifest.
using ErrorCounts = std::map<std::string, long>;

struct Context {
    const SimConfig& cfg;
    const CoefficientSet& cset;
    OutputDir& out;
    ErrorCounts& errors;
    int threads;
    std::ostream& log;

    FlowOptions flow_options() const {
        FlowOptions o;
        o.v_freeze_m = cfg.v_freeze_m;
        o.threads = threads;
        return o;
    }
};

namespace detail {

inline std::vector<std::string> axis_names(const std::string& prefix, int d) {
    std::vector<std::string> out;
    for (int a = 0; a < d; ++a) out.push_back(prefix + std::to_string(a));
    return out;
}

inline std::vector<std::string> matrix_names(const std::string& prefix, int d) {
    std::vector<std::string> out;
    for (int a = 0; a < d; ++a)
        for (int b = 0; b < d; ++b) out.push_back(prefix + std::to_string(a) + std::to_string(b));
    return out;
}

inline std::vector<std::string> cells(const Vec& v) {
    std::vector<std::string> out;
    for (int a = 0; a < v.size(); ++a) out.push_back(fmt(v(a)));
    return out;
}

inline std::vector<std::string> cells(const Mat& m) {
    std::vector<std::string> out;
    for (int a = 0; a < m.rows(); ++a)
        for (int b = 0; b < m.cols(); ++b) out.push_back(fmt(m(a, b)));
    return out;
}

inline std::vector<std::string> concat(std::initializer_list<std::vector<std::string>> parts) {
    std::vector<std::string> out;
    for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
    return out;
}

inline std::string threshold_label(double v) {
    std::ostringstream s;
    s << v;
    return s.str();
}

/// Knots written to time-series tables: every output_every-th knot plus the last.
inline std::vector<int> output_knots(int knots, int every) {
    std::vector<int> out;
    for (int k = 0; k < knots; k += every) out.push_back(k);
    if (out.back() != knots - 1) out.push_back(knots - 1);
    return out;
}

inline FlowField run_flow(const Context& ctx) {
    const auto paths = sample_paths(ctx.cfg.time_grid(), ctx.cfg.replicas, ctx.cset.dim_noise(), ctx.cfg.seed, ctx.threads);
    FlowField field = simulate(ctx.cfg.spatial_grid(), ctx.cset, paths, ctx.flow_options());
    long exploded = 0;
    for (std::size_t p = 0; p < field.points(); ++p) exploded += field.v_exploded(p) ? 1 : 0;
    ctx.errors["flow.diverged_replicas"] += field.total_diverged();
    ctx.errors["flow.v_exploded_points"] += exploded;
    return field;
}

inline void write_physical_path(const Context& ctx, const FlowField& field) {
    Table t(concat({{"knot", "t"}, axis_names("W", field.dim_noise())}));
    std::vector<double> w(static_cast<std::size_t>(field.dim_noise()), 0.0);
    for (int k = 0; k < field.knots(); ++k) {
        std::vector<std::string> r{fmt(k), fmt(field.time().time(k))};
        for (double v : w) r.push_back(fmt(v));
        t.add(r);
        if (k + 1 < field.knots()) {
            const auto dw = field.physical_increments(k);
            for (std::size_t j = 0; j < w.size(); ++j) w[j] += dw[j];
        }
    }
    ctx.out.write("physical_path.tsv", t);
}

inline StoppingAnalysis run_stopping(const Context& ctx, const FlowField& field) {
    auto analysis = analyze_stopping(field, ctx.cset, ctx.cfg.m_ladder, ctx.cfg.n_ladder, ctx.threads);
    long failed = 0, tau_hit = 0;
    for (const auto& rec : analysis.records) {
        failed += rec.tau_bar ? 1 : 0;
        tau_hit += rec.tau ? 1 : 0;
    }
    ctx.errors["inverse.failed_trajectories"] += failed;
    ctx.errors["stopping.tau_hit_points"] += tau_hit;
    return analysis;
}

}  // namespace detail

inline void cmd_simulate(Context& ctx) {
    using namespace detail;
    const FlowField field = run_flow(ctx);
    const int d = field.dim();
    std::vector<std::string> stat_names;
    for (std::size_t j = 0; j < field.stat_count(); ++j) stat_names.push_back("m" + std::to_string(j));
    Table t(concat({{"point"}, axis_names("x", d), {"knot", "t"}, axis_names("phi", d), matrix_names("J", d), matrix_names("V", d),
                    {"det_J"}, matrix_names("meanJ", d), stat_names, {"invertible", "v_stopped", "v_exploded"}}));
    const auto knots = output_knots(field.knots(), ctx.cfg.output_every);
    for (std::size_t p = 0; p < field.points(); ++p) {
        const Vec x = field.grid().node(p);
        for (int k : knots) {
            const Mat j = field.jacobian(k, p);
            std::vector<std::string> stats;
            for (double v : field.stats(k, p)) stats.push_back(fmt(v));
            const int stop = field.v_stop_knot(p);
            t.add(concat({{fmt(p)}, cells(x), {fmt(k), fmt(field.time().time(k))}, cells(field.phi(k, p)), cells(j),
                          cells(field.inv_jacobian(k, p)), {fmt(j.determinant())}, cells(field.mean_jacobian(k, p)), stats,
                          {fmt(is_invertible(j)), fmt(stop >= 0 && k >= stop), fmt(field.v_exploded(p) && k >= stop)}}));
        }
    }
    ctx.out.write("timeseries.tsv", t);
    write_physical_path(ctx, field);

    // Law of Φ_{s,T}(x) at the grid point closest to the box centre.
    const auto& grid = field.grid();
    std::array<int, kMaxDim> mid{};
    for (int a = 0; a < d; ++a) mid[static_cast<std::size_t>(a)] = (grid.points(a) - 1) / 2;
    const auto paths = sample_paths(ctx.cfg.time_grid(), ctx.cfg.replicas, ctx.cset.dim_noise(), ctx.cfg.seed, ctx.threads);
    const Ensemble ens = simulate_ensemble(grid.node(grid.flat_index(mid)), ctx.cset, paths, ctx.flow_options());
    std::ostringstream law;
    write_rows(law, ens.law());
    ctx.out.write("law_T.tsv", law.str());
}

inline void cmd_invert(Context& ctx) {
    using namespace detail;
    const FlowField field = run_flow(ctx);
    const auto analysis = run_stopping(ctx, field);
    const int d = field.dim();
    std::vector<std::string> tb;
    for (double m : analysis.m_ladder) tb.push_back("tau_bar_m" + threshold_label(m));
    Table t(concat({{"point"}, axis_names("x", d), tb, {"tau_bar", "tau_bar_prime", "tau", "left_residual", "right_residual", "reason"}}));
    for (std::size_t p = 0; p < field.points(); ++p) {
        const auto& rec = analysis.records[p];
        std::vector<std::string> hits;
        for (Knot k : rec.tau_bar_m) hits.push_back(fmt(k));
        const auto& res = analysis.residuals.points[p];
        const std::string reason = analysis.trajectories[p].reason.empty() ? "-" : analysis.trajectories[p].reason;
        t.add(concat({{fmt(p)}, cells(field.grid().node(p)), hits,
                      {fmt(rec.tau_bar), fmt(rec.tau_bar_prime), fmt(rec.tau), fmt(res.left), fmt(res.right), reason}}));
    }
    ctx.out.write("inverse.tsv", t);

    Table psi(concat({{"point", "knot", "t"}, axis_names("psi", d), {"alive"}}));
    for (std::size_t p = 0; p < field.points(); ++p)
        for (int k : output_knots(field.knots(), ctx.cfg.output_every)) {
            const auto& tr = analysis.trajectories[p];
            psi.add(concat({{fmt(p), fmt(k), fmt(field.time().time(k))}, cells(tr.psi[static_cast<std::size_t>(k)]), {fmt(tr.alive(k))}}));
        }
    ctx.out.write("psi.tsv", psi);

    Table s({"max_left_residual", "max_right_residual", "points", "tau_bar_hit", "tau_hit"});
    long tb_hit = 0, tau_hit = 0;
    for (const auto& rec : analysis.records) {
        tb_hit += rec.tau_bar ? 1 : 0;
        tau_hit += rec.tau ? 1 : 0;
    }
    s.row(analysis.residuals.max_left, analysis.residuals.max_right, field.points(), fmt(static_cast<int>(tb_hit)),
          fmt(static_cast<int>(tau_hit)));
    ctx.out.write("inverse_summary.tsv", s);
    write_physical_path(ctx, field);
}

inline void cmd_domain(Context& ctx) {
    using namespace detail;
    const FlowField field = run_flow(ctx);
    const auto analysis = run_stopping(ctx, field);
    const int d = field.dim();
    std::vector<std::string> cols = concat({{"point"}, axis_names("x", d), {"rho"}});
    for (double m : analysis.m_ladder) cols.push_back("theta_m" + threshold_label(m));
    for (double n : analysis.n_ladder) cols.push_back("tau_n" + threshold_label(n));
    for (double m : analysis.m_ladder) cols.push_back("tau_bar_m" + threshold_label(m));
    for (const char* c : {"tau_bar", "tau_bar_prime", "tau"}) cols.push_back(c);
    Table t(cols);
    for (std::size_t p = 0; p < field.points(); ++p) {
        const auto& rec = analysis.records[p];
        std::vector<std::string> r = concat({{fmt(p)}, cells(field.grid().node(p)), {fmt(rec.rho)}});
        for (Knot k : rec.theta_m) r.push_back(fmt(k));
        for (Knot k : rec.tau_n) r.push_back(fmt(k));
        for (Knot k : rec.tau_bar_m) r.push_back(fmt(k));
        for (Knot k : {rec.tau_bar, rec.tau_bar_prime, rec.tau}) r.push_back(fmt(k));
        t.add(r);
    }
    ctx.out.write("stopping.tsv", t);

    std::vector<double> times = ctx.cfg.domain_times;
    if (times.empty()) times = {ctx.cfg.s, 0.5 * (ctx.cfg.s + ctx.cfg.T), ctx.cfg.T};
    std::sort(times.begin(), times.end());
    Table summary({"index", "t", "knot", "cardinality", "subset_of_previous"});
    std::optional<std::vector<char>> previous;
    long violations = 0;
    for (std::size_t i = 0; i < times.size(); ++i) {
        const int knot = field.time().knot_at(times[i]);
        const auto est = estimate_domain(field, analysis.records, knot);
        const bool subset = !previous || mask_subset(est.mask, *previous);
        violations += subset ? 0 : 1;
        summary.row(i, est.time, knot, est.cardinality(), subset);

        // Raster: axis 0 runs along a line, axis 1 (if any) down the rows.
        const auto& g = field.grid();
        const int rows = d >= 2 ? g.points(1) : 1;
        const std::size_t per_row = static_cast<std::size_t>(g.points(0));
        std::string raster;
        for (int row = rows - 1; row >= 0; --row) {
            for (std::size_t c = 0; c < per_row; ++c) {
                std::array<int, kMaxDim> idx{};
                idx[0] = static_cast<int>(c);
                if (d >= 2) idx[1] = row;
                raster.push_back(est.mask[g.flat_index(idx)] ? '1' : '0');
            }
            raster.push_back('\n');
        }
        ctx.out.write("mask_" + std::to_string(i) + ".txt", raster);
        Table img(axis_names("phi", d));
        for (const Vec& y : est.image) img.add(cells(y));
        ctx.out.write("image_" + std::to_string(i) + ".tsv", img);
        previous = est.mask;
    }
    ctx.out.write("domain_summary.tsv", summary);
    ctx.errors["stopping.mask_monotonicity_violations"] += violations;
    if (violations > 0) throw NumericalFailure("domain masks are not monotone in t");
}

/// Closed form for measure-free scalar linear flows dX = aX dt + Σ_k (c_k + d_k X) dW^k with c = 0.
inline std::optional<ClosedForm> linear_closed_form(const SimConfig& cfg) {
    double a = 0.0;
    std::vector<double> dk;
    if (cfg.family.name == "custom" && cfg.family.key == "geometric") {
        const auto it = cfg.family.params.find("b");
        dk.push_back(it == cfg.family.params.end() ? 0.5 : it->second);
    } else if (cfg.family.name == "custom" && cfg.family.key == "zero") {
        dk.push_back(0.0);
    } else if (cfg.family.name == "moment_linear" && cfg.grid.lo.size() == 1) {
        const auto& f = cfg.family;
        const bool no_b = f.B.empty() || f.B.front().front() == 0.0;
        bool no_c = true;
        for (double c : f.C[0]) no_c = no_c && c == 0.0;
        if (!no_b || !no_c) return std::nullopt;
        a = f.A[0][0];
        for (std::size_t k = 0; k < f.C[0].size(); ++k) dk.push_back(f.D.empty() ? 0.0 : f.D[k][0][0]);
    } else {
        return std::nullopt;
    }
    return ClosedForm([a, dk](const Vec& x0, const std::vector<std::vector<double>>& w, double horizon) {
        double expo = a * horizon;
        for (std::size_t k = 0; k < dk.size(); ++k) expo += dk[k] * w[k].back() - 0.5 * dk[k] * dk[k] * horizon;
        Mat j(1, 1);
        j(0, 0) = std::exp(expo);
        return std::make_pair(Vec(x0 * j(0, 0)), j);
    });
}

inline void write_order_row(Table& t, const std::string& quantity, const OrderFit& f) {
    t.row(quantity, to_string(f.status), f.fit.slope, f.fit.std_error, f.fit.points);
}

inline void cmd_converge(Context& ctx) {
    const auto& cc = ctx.cfg.converge;
    std::optional<ClosedForm> exact;
    if (cc.reference == "closed_form") {
        exact = linear_closed_form(ctx.cfg);
        if (!exact) throw ConfigError("converge.reference: closed_form is available for measure-free scalar linear families only");
    }
    const TimeGrid base(ctx.cfg.s, ctx.cfg.T, cc.base_steps);
    const auto paths = sample_paths(base, cc.replicas, ctx.cset.dim_noise(), ctx.cfg.seed, ctx.threads);
    const auto study = convergence_study(ctx.cset, ctx.cfg.converge_point(), paths, cc.levels, ctx.flow_options(), exact ? *exact : ClosedForm{});
    Table t({"level", "n_steps", "dt", "state_error_mean", "state_error_median", "jacobian_error_mean", "jacobian_error_median"});
    for (std::size_t l = 0; l < study.levels.size(); ++l) {
        const auto& lv = study.levels[l];
        t.row(l, lv.n_steps, lv.dt, mean_with_error(lv.state_error).mean, median(lv.state_error), mean_with_error(lv.jacobian_error).mean,
              median(lv.jacobian_error));
    }
    ctx.out.write("convergence.tsv", t);
    Table o({"quantity", "status", "order", "std_error", "points"});
    write_order_row(o, "state", study.state_order);
    write_order_row(o, "jacobian", study.jacobian_order);
    ctx.out.write("convergence_order.tsv", o);
}

inline void cmd_oracle_check(Context& ctx) {
    if (ctx.cfg.family.name != "centered") throw ConfigError("family.name: oracle-check requires the centered family");
    const auto& oc = ctx.cfg.oracle;
    const TimeGrid base(ctx.cfg.s, ctx.cfg.T, oc.base_steps);
    const auto paths = sample_paths(base, oc.replicas, 1, ctx.cfg.seed, ctx.threads);
    const bool identity = ctx.cfg.family.f == "identity";
    const auto study = oracle_study(ctx.cset, make_vec({oc.x0[0]}), paths, oc.levels, ctx.flow_options(), identity);

    Table lv_t({"level", "n_steps", "dt", "median_abs_error", "mean_abs_error", "max_abs_error", "engine_mean_J_T", "engine_se_J_T",
                "oracle_mean_J_T", "oracle_se_J_T", "max_mean_J_deviation_in_se"});
    Table rep({"level", "replica", "J_engine_T", "J_oracle_T", "abs_error", "rho_knot", "crossing_knot"});
    Table stop({"level", "paths", "rho_fired", "crossing_fired", "both_fired", "agree_within_2", "agreement_fraction_both",
                "agreement_fraction_overall"});
    for (std::size_t l = 0; l < study.levels.size(); ++l) {
        const auto& lv = study.levels[l];
        double worst = 0.0;
        for (const auto& e : lv.engine_mean) {
            const double dev = std::abs(e.mean - 1.0);
            worst = std::max(worst, e.std_error > 0.0 ? dev / e.std_error : (dev == 0.0 ? 0.0 : std::numeric_limits<double>::infinity()));
        }
        const auto& last = lv.engine_mean.back();
        lv_t.row(l, lv.n_steps, lv.dt, median(lv.abs_error), mean_with_error(lv.abs_error).mean,
                 *std::max_element(lv.abs_error.begin(), lv.abs_error.end()), last.mean, last.std_error, lv.oracle_mean_T.mean,
                 lv.oracle_mean_T.std_error, worst);
        for (std::size_t r = 0; r < lv.abs_error.size(); ++r)
            rep.row(l, r, lv.engine_T[r], lv.oracle_T[r], lv.abs_error[r], lv.rho[r], lv.crossing[r]);
        const auto a = stopping_agreement(lv);
        const double frac_both = a.both_fired ? static_cast<double>(a.agree_both) / a.both_fired : std::numeric_limits<double>::quiet_NaN();
        stop.row(l, a.paths, a.rho_fired, a.crossing_fired, a.both_fired, a.agree_both, frac_both,
                 static_cast<double>(a.agree_overall) / a.paths);
    }
    ctx.out.write("oracle_levels.tsv", lv_t);
    ctx.out.write("oracle_replicas.tsv", rep);
    ctx.out.write("oracle_stopping.tsv", stop);
    Table o({"quantity", "status", "order", "std_error", "points"});
    write_order_row(o, "median_abs_error", study.order);
    ctx.out.write("oracle_order.tsv", o);
}

inline void cmd_w2_check(Context& ctx) {
    const auto& wc = ctx.cfg.w2;
    const std::uint64_t seed = ctx.cfg.seed;
    Table t({"instance", "atoms", "w2_1d", "w2_exact_small", "abs_diff"});
    double worst = 0.0;
    long mismatches = 0;
    for (int i = 0; i < wc.instances; ++i) {
        const auto ui = static_cast<std::uint32_t>(i);
        const int n = 1 + static_cast<int>(counter_uniform(seed, ui, 0, 0, 101) * wc.max_atoms) % wc.max_atoms;
        std::vector<double> a, b;
        for (int k = 0; k < n; ++k) {
            a.push_back(counter_normal(seed, ui, static_cast<std::uint32_t>(k), 0, 102));
            b.push_back(1.5 * counter_normal(seed, ui, static_cast<std::uint32_t>(k), 1, 102) + 0.5);
        }
        const auto mu = EmpiricalMeasure::from_scalars(a), nu = EmpiricalMeasure::from_scalars(b);
        const double w1 = w2_1d(mu, nu), w2 = w2_exact_small(mu, nu);
        const double diff = std::abs(w1 - w2);
        worst = std::max(worst, diff);
        mismatches += diff > 1e-12 ? 1 : 0;
        t.row(i, n, w1, w2, diff);
    }
    ctx.out.write("w2.tsv", t);
    Table s({"instances", "max_abs_diff", "mismatches_above_1e-12"});
    s.row(wc.instances, worst, fmt(static_cast<int>(mismatches)));
    ctx.out.write("w2_summary.tsv", s);
    ctx.errors["measure.w2_mismatches"] += mismatches;
    if (mismatches > 0) throw NumericalFailure(std::to_string(mismatches) + " W2 instances disagree beyond 1e-12");
}

inline void cmd_probe_assumption(Context& ctx) {
    const auto& pc = ctx.cfg.probe;
    const SpatialGrid grid = ctx.cfg.spatial_grid();
    const int d = grid.dim();
    std::vector<Vec> points;
    const std::size_t stride = std::max<std::size_t>(1, grid.size() / static_cast<std::size_t>(pc.points));
    for (std::size_t p = 0; p < grid.size() && static_cast<int>(points.size()) < pc.points; p += stride) points.push_back(grid.node(p));
    std::vector<EmpiricalMeasure> measures;
    for (int q = 0; q < pc.measures; ++q) {
        std::vector<Vec> atoms;
        for (int i = 0; i < pc.atoms; ++i) {
            Vec z(d);
            for (int a = 0; a < d; ++a)
                z(a) = 0.5 * q + (0.5 + 0.25 * q) * counter_normal(ctx.cfg.seed, static_cast<std::uint32_t>(q), static_cast<std::uint32_t>(i),
                                                                   static_cast<std::uint32_t>(a), 201);
            atoms.push_back(z);
        }
        measures.push_back(EmpiricalMeasure(atoms));
    }
    const auto report = probe_assumption(ctx.cset, points, measures);
    Table t({"coefficient", "sup_dx", "sup_dmu", "lip_dx", "lip_dmu"});
    for (std::size_t c = 0; c < report.coefficients.size(); ++c) {
        const auto& p = report.coefficients[c];
        t.row(c == 0 ? std::string("drift") : "diffusion" + std::to_string(c), p.sup_dx, p.sup_dmu, p.lip_dx, p.lip_dmu);
    }
    ctx.out.write("probe.tsv", t);
    Table s({"declared_bound", "estimated_bound", "violated", "matrix_norm"});
    s.row(report.declared_bound, report.estimated_bound, report.violated, report.matrix_norm);
    ctx.out.write("probe_summary.tsv", s);
    if (report.violated)
        ctx.log << "warning: estimated bound " << report.estimated_bound << " exceeds declared K = " << report.declared_bound << '\n';

    Table l({"eps", "max_discrepancy"});
    const Vec x = points[points.size() / 2];
    for (double eps : {1e-2, 1e-3, 1e-4}) {
        const auto r = verify_lions_derivative(ctx.cset, measures.front(), x, [d](const Vec&) { return Vec(Vec::Ones(d)); }, eps);
        l.row(eps, r.max_discrepancy);
    }
    ctx.out.write("lions.tsv", l);
    ctx.errors["coefficients.assumption_violations"] += report.violated ? 1 : 0;
}

inline const std::map<std::string, void (*)(Context&)>& commands() {
    static const std::map<std::string, void (*)(Context&)> table = {
        {"simulate", &cmd_simulate},   {"invert", &cmd_invert},         {"domain", &cmd_domain},
        {"converge", &cmd_converge},   {"oracle-check", &cmd_oracle_check}, {"w2-check", &cmd_w2_check},
        {"probe-assumption", &cmd_probe_assumption},
    };
    return table;
}

/// Executes one subcommand and writes its tables plus manifest.json. Returns the exit code.
inline int run(const RunOptions& opts, std::ostream& log) {
    const auto start = std::chrono::steady_clock::now();
    const auto cmd = commands().find(opts.command);
    if (cmd == commands().end()) {
        log << "error: unknown subcommand '" << opts.command << "'\n";
        return kExitValidation;
    }
    SimConfig cfg;
    try {
        cfg = opts.config_path.empty() ? parse_config(json::object()) : load_config(opts.config_path);
        if (opts.seed) cfg.seed = *opts.seed;
        if (opts.out) cfg.output_dir = *opts.out;
        if (opts.threads < 1) throw ConfigError("--threads: must be at least 1");
    } catch (const ConfigError& e) {
        log << "validation error: " << e.what() << '\n';
        return kExitValidation;
    }

    OutputDir out(cfg.output_dir);
    ErrorCounts errors;
    std::string status = "ok", message;
    int code = kExitOk;
    try {
        const CoefficientSet cset = build_family(cfg);
        Context ctx{cfg, cset, out, errors, opts.threads, log};
        cmd->second(ctx);
    } catch (const ConfigError& e) {
        status = "validation_error";
        message = e.what();
        code = kExitValidation;
    } catch (const CapabilityError& e) {
        status = "validation_error";
        message = e.what();
        code = kExitValidation;
    } catch (const NumericalFailure& e) {
        status = "numerical_failure";
        message = e.what();
        code = kExitNumerical;
    }
    if (code != kExitOk) log << status << ": " << message << '\n';

    json files = json::array();
    for (const auto& f : out.files()) files.push_back({{"name", f.name}, {"bytes", f.bytes}, {"sha256", f.sha256}});
    json err = json::object();
    for (const auto& [k, v] : errors) err[k] = v;
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const json manifest = {{"artifact", "mvflow"},
                           {"version", MVFLOW_VERSION},
                           {"command", opts.command},
                           {"status", status},
                           {"message", message},
                           {"seed", cfg.seed},
                           {"threads", opts.threads},
                           {"config", to_json(cfg)},
                           {"error_counts", err},
                           {"wall_clock_seconds", wall},
                           {"files", files}};
    try {
        fs::create_directories(cfg.output_dir);
        std::ofstream mf(fs::path(cfg.output_dir) / "manifest.json", std::ios::trunc);
        mf << manifest.dump(2) << '\n';
    } catch (const std::exception& e) {
        log << "error: cannot write manifest: " << e.what() << '\n';
        if (code == kExitOk) code = kExitValidation;
    }
    return code;
}

}  // namespace mvflow::run
