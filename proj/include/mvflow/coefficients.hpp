#pragma once

#include "mvflow/measure.hpp"
#include "mvflow/types.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mvflow {

enum class Convention { ito, stratonovich_converted };

/// How a coefficient family reads its measure argument.
enum class LawDependence {
    none,     ///< measure-free
    moments,  ///< only through finitely many statistics m_j = ∫ h_j dμ
    general,  ///< arbitrary; evaluators need the atoms
};

/// The measure argument handed to evaluators. Moment-form families read `stats`;
/// general families read `measure`. Interpolated law fields carry stats only.
struct LawView {
    const EmpiricalMeasure* measure = nullptr;
    std::span<const double> stats;

    const EmpiricalMeasure& atoms() const {
        if (measure == nullptr) throw CapabilityError("coefficient needs the full measure, but only moment statistics are available");
        return *measure;
    }
};

using FieldFn = std::function<Vec(const Vec& x, const LawView& law)>;
using JacobianFn = std::function<Mat(const Vec& x, const LawView& law)>;
/// ∂_μ V(x, μ, y) as a d x d matrix: row = output component, column = direction of y.
using LionsFn = std::function<Mat(const Vec& x, const LawView& law, const Vec& y)>;

/// One coefficient V_k with its spatial and Lions derivatives.
struct Coefficient {
    FieldFn value;
    JacobianFn dx;
    LionsFn dmu;
};

/// A statistic h with its gradient, for moment-form coefficients.
struct MomentStatistic {
    std::function<double(const Vec&)> h;
    std::function<Vec(const Vec&)> grad;
};

/// Outer function v(x, m) of a moment-form coefficient and its partial derivatives.
struct MomentOuter {
    std::function<Vec(const Vec& x, std::span<const double> m)> value;
    std::function<Mat(const Vec& x, std::span<const double> m)> dx;
    /// ∂v/∂m_j as a d-vector.
    std::function<Vec(const Vec& x, std::span<const double> m, std::size_t j)> dm;
};

struct MomentFormSpec {
    int dim_state = 1;
    int dim_noise = 1;
    std::vector<MomentStatistic> stats;
    MomentOuter drift;
    std::vector<MomentOuter> diffusion;
    double lipschitz_bound = 1.0;
};

/// Owning law snapshot: the atoms plus the family's statistics evaluated on them.
struct LawSnapshot {
    EmpiricalMeasure measure;
    std::vector<double> stats;

    LawView view() const { return {&measure, stats}; }
};

/// Per-step precomputation for the replica average (1/M) Σ_j ∂_μV(x, μ, X_j) J_j.
struct LionsPairing {
    /// Moment route: row j is Σ_i w_i ∇h_j(X_i)^T J_i, stored as a d-vector.
    std::vector<Vec> moment_rows;
    /// General route: the atoms and their Jacobians.
    const EmpiricalMeasure* atoms = nullptr;
    std::span<const Mat> jacobians;
};

/// Drift/diffusion family V_0..V_{d'} in canonical Itô form. Evaluators are pure and may be
/// called concurrently.
class CoefficientSet {
public:
    CoefficientSet(int dim_state, int dim_noise, std::vector<Coefficient> components, double lipschitz_bound,
                   LawDependence dependence)
        : dim_state_(dim_state),
          dim_noise_(dim_noise),
          components_(std::move(components)),
          lipschitz_bound_(lipschitz_bound),
          dependence_(dependence) {
        if (dim_state < 1 || dim_state > kMaxDim)
            throw ConfigError("state dimension must be in [1, " + std::to_string(kMaxDim) + "]");
        if (dim_noise < 1) throw ConfigError("noise dimension must be positive");
        if (static_cast<int>(components_.size()) != dim_noise + 1)
            throw ConfigError("expected " + std::to_string(dim_noise + 1) + " coefficients (drift + diffusions), got " +
                              std::to_string(components_.size()));
        if (!(lipschitz_bound > 0.0)) throw ConfigError("lipschitz bound K must be positive");
        for (auto& c : components_) {
            if (!c.value || !c.dx) throw ConfigError("every coefficient needs a value and a spatial derivative");
            if (!c.dmu) {
                if (dependence_ != LawDependence::none)
                    throw ConfigError("measure-dependent coefficients need a Lions derivative evaluator");
                const int d = dim_state_;
                c.dmu = [d](const Vec&, const LawView&, const Vec&) { return zero_mat(d); };
            }
        }
    }

    int dim_state() const { return dim_state_; }
    int dim_noise() const { return dim_noise_; }
    /// Number of coefficients, drift included.
    int count() const { return dim_noise_ + 1; }
    double lipschitz_bound() const { return lipschitz_bound_; }
    Convention convention() const { return convention_; }
    LawDependence law_dependence() const { return dependence_; }
    std::size_t stat_count() const { return stats_.size(); }

    /// Coefficient c: 0 is the drift, 1..d' the diffusions.
    const Coefficient& component(int c) const { return components_[static_cast<std::size_t>(c)]; }

    Vec value(int c, const Vec& x, const LawView& law) const { return components_[static_cast<std::size_t>(c)].value(x, law); }
    Mat dx(int c, const Vec& x, const LawView& law) const { return components_[static_cast<std::size_t>(c)].dx(x, law); }
    Mat dmu(int c, const Vec& x, const LawView& law, const Vec& y) const {
        return components_[static_cast<std::size_t>(c)].dmu(x, law, y);
    }

    LawSnapshot snapshot(EmpiricalMeasure mu) const {
        LawSnapshot snap{std::move(mu), {}};
        if (dependence_ == LawDependence::moments) {
            std::vector<Statistic> hs;
            hs.reserve(stats_.size());
            for (const auto& s : stats_) hs.push_back(s.h);
            snap.stats = moments(snap.measure, hs);
        }
        return snap;
    }

    /// Statistics vector for a measure (empty unless moment form).
    std::vector<double> statistics(const EmpiricalMeasure& mu) const { return snapshot(mu).stats; }

    LionsPairing prepare_pairing(const LawSnapshot& law, std::span<const Mat> jacobians) const {
        LionsPairing p;
        if (dependence_ == LawDependence::moments) {
            p.moment_rows.reserve(stats_.size());
            for (const auto& s : stats_) {
                Vec row(dim_state_);
                for (int e = 0; e < dim_state_; ++e) {
                    CompensatedSum acc;
                    for (std::size_t i = 0; i < law.measure.size(); ++i) {
                        const Vec g = s.grad(law.measure.atom(i));
                        double dot = 0.0;
                        for (int a = 0; a < dim_state_; ++a) dot += g(a) * jacobians[i](a, e);
                        acc.add(law.measure.weight(i) * dot);
                    }
                    row(e) = acc.value();
                }
                p.moment_rows.push_back(row);
            }
        } else if (dependence_ == LawDependence::general) {
            p.atoms = &law.measure;
            p.jacobians = jacobians;
        }
        return p;
    }

    /// Replica-averaged Lions term Ẽ[∂_μ V_c(x, μ, X̃) · J̃] for coefficient c.
    Mat pairing(int c, const Vec& x, const LawView& law, const LionsPairing& p) const {
        Mat out = zero_mat(dim_state_);
        if (dependence_ == LawDependence::moments) {
            const auto& dm = moment_dm_[static_cast<std::size_t>(c)];
            for (std::size_t j = 0; j < p.moment_rows.size(); ++j) out += dm(x, law.stats, j) * p.moment_rows[j].transpose();
        } else if (dependence_ == LawDependence::general) {
            const auto& atoms = *p.atoms;
            for (std::size_t i = 0; i < atoms.size(); ++i)
                out += atoms.weight(i) * (component(c).dmu(x, law, atoms.atom(i)) * p.jacobians[i]);
        }
        return out;
    }

    /// The Stratonovich drift V_0 = drift - 1/2 Σ_k ∂_x V_k V_k (the retained raw V_0 for converted sets).
    Vec strat_drift(const Vec& x, const LawView& law) const {
        if (raw_drift_) return raw_drift_->value(x, law);
        Vec v = value(0, x, law);
        for (int k = 1; k <= dim_noise_; ++k) v -= 0.5 * dx(k, x, law) * value(k, x, law);
        return v;
    }

    /// Raw Stratonovich V_0 retained by strat_to_ito.
    const std::optional<Coefficient>& raw_drift() const { return raw_drift_; }

    const std::vector<MomentStatistic>& moment_statistics() const { return stats_; }

    /// Evaluators against a measure, for probing outside the engine.
    Vec value_at(int c, const Vec& x, const EmpiricalMeasure& mu) const {
        const auto snap = snapshot(mu);
        return value(c, x, snap.view());
    }
    Mat dx_at(int c, const Vec& x, const EmpiricalMeasure& mu) const {
        const auto snap = snapshot(mu);
        return dx(c, x, snap.view());
    }
    Mat dmu_at(int c, const Vec& x, const EmpiricalMeasure& mu, const Vec& y) const {
        const auto snap = snapshot(mu);
        return dmu(c, x, snap.view(), y);
    }

    /// Evaluates every coefficient once at (0, δ_0) and checks output shapes.
    void validate_dimensions() const {
        const Vec origin = zero_vec(dim_state_);
        const auto snap = snapshot(EmpiricalMeasure::dirac(origin));
        for (int c = 0; c < count(); ++c) {
            const Vec v = value(c, origin, snap.view());
            const Mat j = dx(c, origin, snap.view());
            const Mat l = dmu(c, origin, snap.view(), origin);
            const std::string name = c == 0 ? "drift" : "diffusion[" + std::to_string(c) + "]";
            if (v.size() != dim_state_)
                throw ConfigError(name + " returns dimension " + std::to_string(v.size()) + ", expected " + std::to_string(dim_state_));
            if (j.rows() != dim_state_ || j.cols() != dim_state_) throw ConfigError(name + " spatial derivative has the wrong shape");
            if (l.rows() != dim_state_ || l.cols() != dim_state_) throw ConfigError(name + " Lions derivative has the wrong shape");
        }
    }

private:
    friend CoefficientSet make_moment_coeffs(const MomentFormSpec& spec);
    friend CoefficientSet strat_to_ito(const CoefficientSet& raw);

    int dim_state_;
    int dim_noise_;
    std::vector<Coefficient> components_;
    double lipschitz_bound_;
    LawDependence dependence_;
    Convention convention_ = Convention::ito;
    std::optional<Coefficient> raw_drift_;
    std::vector<MomentStatistic> stats_;
    std::vector<std::function<Vec(const Vec&, std::span<const double>, std::size_t)>> moment_dm_;
};

/// General (user-supplied) coefficients; dmu evaluators are required unless measure-free.
inline CoefficientSet make_general_coeffs(int dim_state, int dim_noise, std::vector<Coefficient> components,
                                          double lipschitz_bound, LawDependence dependence = LawDependence::general) {
    CoefficientSet set(dim_state, dim_noise, std::move(components), lipschitz_bound, dependence);
    set.validate_dimensions();
    return set;
}

/// Builds analytic Lions derivatives by the chain rule ∂_μ[v(x, ∫h dμ)](y) = Σ_j ∂_{m_j} v ⊗ ∇h_j(y).
inline CoefficientSet make_moment_coeffs(const MomentFormSpec& spec) {
    if (static_cast<int>(spec.diffusion.size()) != spec.dim_noise)
        throw ConfigError("moment-form spec lists " + std::to_string(spec.diffusion.size()) + " diffusions for noise dimension " +
                          std::to_string(spec.dim_noise));
    std::vector<const MomentOuter*> outers{&spec.drift};
    for (const auto& o : spec.diffusion) outers.push_back(&o);

    const auto stats = std::make_shared<const std::vector<MomentStatistic>>(spec.stats);
    const int d = spec.dim_state;
    std::vector<Coefficient> comps;
    for (const MomentOuter* outer : outers) {
        if (!outer->value || !outer->dx) throw ConfigError("moment-form outer function needs value and dx");
        if (!stats->empty() && !outer->dm) throw ConfigError("moment-form outer function needs dm when statistics are present");
        Coefficient c;
        c.value = [f = outer->value](const Vec& x, const LawView& law) { return f(x, law.stats); };
        c.dx = [f = outer->dx](const Vec& x, const LawView& law) { return f(x, law.stats); };
        c.dmu = [dm = outer->dm, stats, d](const Vec& x, const LawView& law, const Vec& y) {
            Mat out = zero_mat(d);
            for (std::size_t j = 0; j < stats->size(); ++j) out += dm(x, law.stats, j) * (*stats)[j].grad(y).transpose();
            return out;
        };
        comps.push_back(std::move(c));
    }
    const LawDependence dep = spec.stats.empty() ? LawDependence::none : LawDependence::moments;
    CoefficientSet set(spec.dim_state, spec.dim_noise, std::move(comps), spec.lipschitz_bound, dep);
    set.stats_ = spec.stats;
    for (const MomentOuter* outer : outers) set.moment_dm_.push_back(outer->dm);
    set.validate_dimensions();
    return set;
}

namespace detail {

/// Central-difference step for second-order terms: 1e-5 * scale.
inline double fd_step(const Vec& x) { return 1e-5 * std::max(1.0, x.norm()); }

/// Directional derivative of a matrix-valued map along `dir` by central differences.
template <class F>
Mat directional_fd(F&& f, const Vec& x, const Vec& dir) {
    const double n = dir.norm();
    if (n == 0.0) return Mat(f(x) * 0.0);
    const double h = fd_step(x) / n;
    return (f(Vec(x + h * dir)) - f(Vec(x - h * dir))) / (2.0 * h);
}

template <class F>
Vec directional_fd_vec(F&& f, const Vec& x, const Vec& dir) {
    const double n = dir.norm();
    if (n == 0.0) return Vec(f(x) * 0.0);
    const double h = fd_step(x) / n;
    return (f(Vec(x + h * dir)) - f(Vec(x - h * dir))) / (2.0 * h);
}

}  // namespace detail

/// Converts a Stratonovich family (raw.component(0) is the Stratonovich V_0) to Itô form with
/// drift V_0' = V_0 + 1/2 Σ_k ∂_x V_k V_k. Derivatives of the correction use analytic first
/// derivatives plus central differences of them along V_k (second-order terms).
inline CoefficientSet strat_to_ito(const CoefficientSet& raw) {
    raw.validate_dimensions();
    const int d = raw.dim_state();
    const int dn = raw.dim_noise();
    auto base = std::make_shared<const CoefficientSet>(raw);

    Coefficient drift;
    drift.value = [base, dn](const Vec& x, const LawView& law) {
        Vec v = base->value(0, x, law);
        for (int k = 1; k <= dn; ++k) v += 0.5 * base->dx(k, x, law) * base->value(k, x, law);
        return v;
    };
    drift.dx = [base, dn](const Vec& x, const LawView& law) {
        Mat m = base->dx(0, x, law);
        for (int k = 1; k <= dn; ++k) {
            const Vec vk = base->value(k, x, law);
            const Mat jk = base->dx(k, x, law);
            // Σ_b ∂_b(∂_e V^a) V^b: derivative of ∂_x V_k along V_k.
            const Mat second = detail::directional_fd([&](const Vec& y) { return base->dx(k, y, law); }, x, vk);
            m += 0.5 * (second + jk * jk);
        }
        return m;
    };
    drift.dmu = [base, dn](const Vec& x, const LawView& law, const Vec& y) {
        Mat m = base->dmu(0, x, law, y);
        for (int k = 1; k <= dn; ++k) {
            const Vec vk = base->value(k, x, law);
            const Mat jk = base->dx(k, x, law);
            const Mat second = detail::directional_fd([&](const Vec& z) { return base->dmu(k, z, law, y); }, x, vk);
            m += 0.5 * (second + jk * base->dmu(k, x, law, y));
        }
        return m;
    };

    std::vector<Coefficient> comps{drift};
    for (int k = 1; k <= dn; ++k) comps.push_back(raw.component(k));
    CoefficientSet out(d, dn, std::move(comps), raw.lipschitz_bound(), raw.law_dependence());
    out.convention_ = Convention::stratonovich_converted;
    out.raw_drift_ = raw.component(0);
    if (raw.law_dependence() == LawDependence::moments) {
        out.stats_ = raw.stats_;
        out.moment_dm_ = raw.moment_dm_;
        out.moment_dm_[0] = [base, dn](const Vec& x, std::span<const double> m, std::size_t j) {
            const LawView law{nullptr, m};
            Vec v = base->moment_dm_[0](x, m, j);
            for (int k = 1; k <= dn; ++k) {
                const Vec vk = base->value(k, x, law);
                const Mat jk = base->dx(k, x, law);
                const auto& dmk = base->moment_dm_[static_cast<std::size_t>(k)];
                const Vec second = detail::directional_fd_vec([&](const Vec& z) { return dmk(z, m, j); }, x, vk);
                v += 0.5 * (second + jk * dmk(x, m, j));
            }
            return v;
        };
    }
    out.validate_dimensions();
    return out;
}

struct LionsProbeReport {
    /// |difference quotient - lift pairing| per coefficient.
    std::vector<double> discrepancy;
    double max_discrepancy = 0.0;
};

/// Compares [V(x, μ_ε) - V(x, μ)]/ε, where μ_ε shifts atom z_i by ε g(z_i), against the
/// lift pairing Σ_i w_i ∂_μV(x, μ, z_i) g(z_i).
inline LionsProbeReport verify_lions_derivative(const CoefficientSet& cset, const EmpiricalMeasure& mu, const Vec& x,
                                                const std::function<Vec(const Vec&)>& direction, double eps) {
    if (mu.size() < 2) throw ConfigError("verify_lions_derivative needs at least two atoms");
    if (!(eps > 0.0)) throw ConfigError("verify_lions_derivative needs a positive step");
    std::vector<Vec> shifted;
    std::vector<Vec> dirs;
    for (std::size_t i = 0; i < mu.size(); ++i) {
        const Vec z = mu.atom(i);
        const Vec g = direction(z);
        if (!g.allFinite()) throw NumericalFailure("lions probe: non-finite direction at atom " + std::to_string(i));
        dirs.push_back(g);
        shifted.push_back(z + eps * g);
    }
    std::vector<double> weights(mu.weights().begin(), mu.weights().end());
    const EmpiricalMeasure mu_eps = mu.uniform() ? EmpiricalMeasure(shifted) : EmpiricalMeasure(shifted, weights);
    const auto snap = cset.snapshot(mu);
    const auto snap_eps = cset.snapshot(mu_eps);

    LionsProbeReport report;
    for (int c = 0; c < cset.count(); ++c) {
        const Vec base = cset.value(c, x, snap.view());
        const Vec moved = cset.value(c, x, snap_eps.view());
        if (!base.allFinite() || !moved.allFinite())
            throw NumericalFailure("lions probe: coefficient " + std::to_string(c) + " is non-finite");
        const Vec quotient = (moved - base) / eps;
        Vec lift = zero_vec(cset.dim_state());
        for (std::size_t i = 0; i < mu.size(); ++i) {
            const Mat l = cset.dmu(c, x, snap.view(), mu.atom(i));
            if (!l.allFinite())
                throw NumericalFailure("lions probe: Lions derivative of coefficient " + std::to_string(c) +
                                       " is non-finite at atom " + std::to_string(i));
            lift += mu.weight(i) * (l * dirs[i]);
        }
        const double disc = (quotient - lift).norm();
        report.discrepancy.push_back(disc);
        report.max_discrepancy = std::max(report.max_discrepancy, disc);
    }
    return report;
}

struct CoefficientProbe {
    double sup_dx = 0.0;        ///< max |∂_x V_c|_F
    double sup_dmu = 0.0;       ///< max |∂_μ V_c|_F
    double lip_dx = 0.0;        ///< max |∂_xV - ∂_xV'| / (|x-x'| + W2)
    double lip_dmu = 0.0;       ///< max |∂_μV - ∂_μV'| / (|x-x'| + W2 + |v-v'|)
};

struct AssumptionReport {
    std::vector<CoefficientProbe> coefficients;
    double declared_bound = 0.0;
    double estimated_bound = 0.0;
    bool violated = false;
    std::string matrix_norm = "frobenius";
};

namespace detail {

inline double probe_w2(const EmpiricalMeasure& a, const EmpiricalMeasure& b) {
    if (a.dim() == 1) return w2_1d(a, b);
    if (a.size() == b.size() && a.size() <= kMaxExactAtoms && a.uniform() && b.uniform()) return w2_exact_small(a, b);
    return std::numeric_limits<double>::quiet_NaN();
}

}  // namespace detail

/// Probe-based estimates of the coefficient bound and Lipschitz constants.
/// Reports rather than throws; `violated` is set when any estimate exceeds the declared K.
inline AssumptionReport probe_assumption(const CoefficientSet& cset, std::span<const Vec> points,
                                         std::span<const EmpiricalMeasure> measures, std::size_t max_atom_probes = 8) {
    if (points.empty() || measures.empty()) throw ConfigError("probe_assumption needs nonempty probe sets");
    const std::size_t nq = measures.size();
    std::vector<std::vector<double>> w2(nq, std::vector<double>(nq, 0.0));
    for (std::size_t a = 0; a < nq; ++a)
        for (std::size_t b = a + 1; b < nq; ++b) w2[a][b] = w2[b][a] = detail::probe_w2(measures[a], measures[b]);

    std::vector<LawSnapshot> snaps;
    for (const auto& m : measures) snaps.push_back(cset.snapshot(m));

    // Lions-derivative atoms: a strided subset of the probe points.
    std::vector<Vec> vs;
    const std::size_t stride = std::max<std::size_t>(1, points.size() / max_atom_probes);
    for (std::size_t i = 0; i < points.size() && vs.size() < max_atom_probes; i += stride) vs.push_back(points[i]);

    AssumptionReport report;
    report.declared_bound = cset.lipschitz_bound();
    for (int c = 0; c < cset.count(); ++c) {
        CoefficientProbe probe;
        struct Sample {
            std::size_t p, q;
            Mat m;
        };
        std::vector<Sample> dxs;
        struct LionsSample {
            std::size_t p, q, v;
            Mat m;
        };
        std::vector<LionsSample> dmus;
        for (std::size_t p = 0; p < points.size(); ++p)
            for (std::size_t q = 0; q < nq; ++q) {
                const Mat jx = cset.dx(c, points[p], snaps[q].view());
                probe.sup_dx = std::max(probe.sup_dx, frobenius(jx));
                dxs.push_back({p, q, jx});
                for (std::size_t v = 0; v < vs.size(); ++v) {
                    const Mat jm = cset.dmu(c, points[p], snaps[q].view(), vs[v]);
                    probe.sup_dmu = std::max(probe.sup_dmu, frobenius(jm));
                    dmus.push_back({p, q, v, jm});
                }
            }
        for (std::size_t a = 0; a < dxs.size(); ++a)
            for (std::size_t b = a + 1; b < dxs.size(); ++b) {
                const double w = w2[dxs[a].q][dxs[b].q];
                if (std::isnan(w)) continue;
                const double dist = (points[dxs[a].p] - points[dxs[b].p]).norm() + w;
                if (dist <= 0.0) continue;
                probe.lip_dx = std::max(probe.lip_dx, frobenius(dxs[a].m - dxs[b].m) / dist);
            }
        for (std::size_t a = 0; a < dmus.size(); ++a)
            for (std::size_t b = a + 1; b < dmus.size(); ++b) {
                const double w = w2[dmus[a].q][dmus[b].q];
                if (std::isnan(w)) continue;
                const double dist = (points[dmus[a].p] - points[dmus[b].p]).norm() + w + (vs[dmus[a].v] - vs[dmus[b].v]).norm();
                if (dist <= 0.0) continue;
                probe.lip_dmu = std::max(probe.lip_dmu, frobenius(dmus[a].m - dmus[b].m) / dist);
            }
        report.estimated_bound = std::max({report.estimated_bound, probe.sup_dx, probe.sup_dmu, probe.lip_dx, probe.lip_dmu});
        report.coefficients.push_back(probe);
    }
    report.violated = report.estimated_bound > report.declared_bound;
    return report;
}

}  // namespace mvflow
