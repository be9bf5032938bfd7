#include "mvflow/coefficients.hpp"
#include "mvflow/families.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace mvflow;
namespace fam = mvflow::families;

namespace {

Mat scalar_mat(double v) {
    Mat m(1, 1);
    m(0, 0) = v;
    return m;
}

Coefficient constant(double v) {
    return {[v](const Vec&, const LawView&) { return make_vec({v}); }, [](const Vec&, const LawView&) { return scalar_mat(0.0); },
            [](const Vec&, const LawView&, const Vec&) { return scalar_mat(0.0); }};
}

LawSnapshot snap_of(const CoefficientSet& c, std::initializer_list<double> atoms) {
    return c.snapshot(EmpiricalMeasure::from_scalars(std::vector<double>(atoms)));
}

/// V(x, μ) = (∫z dμ)², a general (atom-reading) coefficient.
CoefficientSet mean_squared() {
    Coefficient v;
    v.value = [](const Vec&, const LawView& law) {
        const double m = law.atoms().mean()(0);
        return make_vec({m * m});
    };
    v.dx = [](const Vec&, const LawView&) { return scalar_mat(0.0); };
    v.dmu = [](const Vec&, const LawView& law, const Vec&) { return scalar_mat(2.0 * law.atoms().mean()(0)); };
    return make_general_coeffs(1, 1, {v, constant(0.0)}, 10.0);
}

}  // namespace

TEST(StratToIto, ConstantDiffusionHasNoCorrection) {
    const auto raw = make_general_coeffs(1, 1, {constant(0.0), constant(0.7)}, 1.0, LawDependence::none);
    const auto ito = strat_to_ito(raw);
    const auto s = snap_of(ito, {0.0});
    EXPECT_EQ(ito.value(0, make_vec({1.3}), s.view())(0), 0.0);
    EXPECT_EQ(ito.convention(), Convention::stratonovich_converted);
}

TEST(StratToIto, LinearDiffusionGivesHalfX) {
    Coefficient v1{[](const Vec& x, const LawView&) { return Vec(x); }, [](const Vec&, const LawView&) { return scalar_mat(1.0); }, {}};
    const auto ito = strat_to_ito(make_general_coeffs(1, 1, {constant(0.0), v1}, 1.0, LawDependence::none));
    const auto s = snap_of(ito, {0.0});
    for (double x : {-2.0, 0.5, 3.0}) EXPECT_DOUBLE_EQ(ito.value(0, make_vec({x}), s.view())(0), 0.5 * x);
    EXPECT_NEAR(ito.dx(0, make_vec({0.5}), s.view())(0, 0), 0.5, 1e-9);
}

TEST(StratToIto, MeanFieldSineSpotCheck) {
    const auto ito = fam::sin_stratonovich();
    const auto s = ito.snapshot(EmpiricalMeasure::dirac(make_vec({1.0})));
    EXPECT_NEAR(ito.value(0, make_vec({0.0}), s.view())(0), 1.0, 1e-15);
    for (double x : {-1.0, 0.3, 2.0}) {
        const double expected = 1.0 + 0.5 * std::cos(x) * std::sin(x);
        EXPECT_NEAR(ito.value(0, make_vec({x}), s.view())(0), expected, 1e-14);
        // Correction derivative d/dx [½ sin cos] = ½ cos 2x against central differences of the value.
        const double h = 1e-6;
        const double fd = (ito.value(0, make_vec({x + h}), s.view())(0) - ito.value(0, make_vec({x - h}), s.view())(0)) / (2 * h);
        EXPECT_NEAR(ito.dx(0, make_vec({x}), s.view())(0, 0), fd, 1e-7);
        EXPECT_NEAR(ito.dx(0, make_vec({x}), s.view())(0, 0), 0.5 * std::cos(2 * x), 1e-8);
    }
    EXPECT_NEAR(ito.strat_drift(make_vec({0.4}), s.view())(0), 1.0, 1e-15);
}

TEST(MomentCoeffs, CenteredDerivativesFromChainRule) {
    const auto tanh_set = fam::centered(fam::CenteredDrift::tanh_a, 2.0);
    const auto s = snap_of(tanh_set, {0.0, 1.0, 3.0});
    const Vec x = make_vec({0.4});
    for (double y : {-5.0, 0.0, 7.0}) {
        EXPECT_EQ(tanh_set.dmu(1, x, s.view(), make_vec({y}))(0, 0), -1.0);
        EXPECT_EQ(tanh_set.dmu(0, x, s.view(), make_vec({y}))(0, 0), -1.0);
    }
    const double t = std::tanh(0.8);
    EXPECT_NEAR(tanh_set.dx(0, x, s.view())(0, 0), 2.0 * (1.0 - t * t), 1e-15);
    EXPECT_NEAR(tanh_set.value(1, x, s.view())(0), 0.4 - 4.0 / 3.0, 1e-15);
    EXPECT_EQ(tanh_set.law_dependence(), LawDependence::moments);
}

TEST(MomentCoeffs, MeasureFreeOuterHasZeroLionsDerivative) {
    const auto g = fam::geometric(0.5);
    EXPECT_EQ(g.law_dependence(), LawDependence::none);
    const auto s = snap_of(g, {1.0, 2.0});
    EXPECT_EQ(g.dmu(1, make_vec({1.0}), s.view(), make_vec({3.0}))(0, 0), 0.0);
}

TEST(MomentCoeffs, RejectsInconsistentSpec) {
    auto spec = fam::centered_spec(fam::CenteredDrift::identity);
    spec.diffusion.clear();
    EXPECT_THROW(make_moment_coeffs(spec), ConfigError);
    spec = fam::centered_spec(fam::CenteredDrift::identity);
    spec.drift.dm = nullptr;
    EXPECT_THROW(make_moment_coeffs(spec), ConfigError);
}

TEST(GeneralCoeffs, MeasureDependentNeedsLionsDerivative) {
    Coefficient c = constant(1.0);
    c.dmu = nullptr;
    EXPECT_THROW(make_general_coeffs(1, 1, {c, constant(0.0)}, 1.0, LawDependence::general), ConfigError);
    EXPECT_THROW(make_general_coeffs(1, 2, {c, constant(0.0)}, 1.0, LawDependence::none), ConfigError);
}

TEST(Pairing, MomentRouteMatchesGeneralRoute) {
    const auto moment = fam::mf_sine();
    std::vector<Coefficient> comps;
    for (int c = 0; c < moment.count(); ++c) comps.push_back(moment.component(c));
    // Rebuild the same coefficients as a general family that reads the atoms.
    for (auto& c : comps) {
        c.value = [f = c.value](const Vec& x, const LawView& law) {
            const std::vector<double> m{law.atoms().mean()(0)};
            return f(x, LawView{nullptr, m});
        };
        c.dmu = [f = c.dmu](const Vec& x, const LawView& law, const Vec& y) {
            const std::vector<double> m{law.atoms().mean()(0)};
            return f(x, LawView{nullptr, m}, y);
        };
    }
    const auto general = make_general_coeffs(1, 1, comps, 1.0);
    const std::vector<double> atoms{-0.5, 0.2, 0.9, 1.4};
    const std::vector<Mat> jacs{scalar_mat(1.1), scalar_mat(0.7), scalar_mat(-0.2), scalar_mat(2.0)};
    const auto sm = moment.snapshot(EmpiricalMeasure::from_scalars(atoms));
    const auto sg = general.snapshot(EmpiricalMeasure::from_scalars(atoms));
    const auto pm = moment.prepare_pairing(sm, jacs);
    const auto pg = general.prepare_pairing(sg, jacs);
    for (int c = 0; c < 2; ++c) {
        const Vec x = make_vec({0.3});
        EXPECT_NEAR(moment.pairing(c, x, sm.view(), pm)(0, 0), general.pairing(c, x, sg.view(), pg)(0, 0), 1e-14);
    }
}

TEST(LionsProbe, LinearFunctionalIsExact) {
    const auto set = fam::centered(fam::CenteredDrift::identity);
    const auto mu = EmpiricalMeasure::from_scalars(std::vector<double>{-1.0, 0.5, 2.0});
    const auto r = verify_lions_derivative(set, mu, make_vec({0.3}), [](const Vec&) { return make_vec({1.0}); }, 1e-3);
    EXPECT_LE(r.max_discrepancy, 1e-12);
}

TEST(LionsProbe, SquaredMeanDecaysWithStep) {
    const auto set = mean_squared();
    const auto mu = EmpiricalMeasure::from_scalars(std::vector<double>{0.0, 2.0});
    const auto one = [](const Vec&) { return make_vec({1.0}); };
    const auto r4 = verify_lions_derivative(set, mu, make_vec({0.0}), one, 1e-4);
    const auto r3 = verify_lions_derivative(set, mu, make_vec({0.0}), one, 1e-3);
    EXPECT_LE(r4.max_discrepancy, 1e-3);
    // Difference quotient is 2 + ε exactly, so the discrepancy is O(ε).
    EXPECT_NEAR(r3.discrepancy[0] / r4.discrepancy[0], 10.0, 1e-3);
}

TEST(LionsProbe, MeasureFreeIsExactlyZero) {
    const auto set = fam::geometric(0.5);
    const auto mu = EmpiricalMeasure::from_scalars(std::vector<double>{0.0, 1.0});
    const auto r = verify_lions_derivative(set, mu, make_vec({1.0}), [](const Vec&) { return make_vec({1.0}); }, 1e-4);
    EXPECT_EQ(r.max_discrepancy, 0.0);
}

namespace {

std::vector<EmpiricalMeasure> probe_measures() {
    return {EmpiricalMeasure::from_scalars(std::vector<double>{0.0, 1.0}), EmpiricalMeasure::from_scalars(std::vector<double>{-1.0, 2.0}),
            EmpiricalMeasure::from_scalars(std::vector<double>{0.5, 0.5})};
}

std::vector<Vec> probe_points() {
    std::vector<Vec> pts;
    for (int i = 0; i <= 10; ++i) pts.push_back(make_vec({-1.0 + 0.2 * i}));
    return pts;
}

}  // namespace

TEST(ProbeAssumption, CenteredIdentityHasUnitBound) {
    const auto r = probe_assumption(fam::centered(fam::CenteredDrift::identity), probe_points(), probe_measures());
    EXPECT_DOUBLE_EQ(r.estimated_bound, 1.0);
    EXPECT_FALSE(r.violated);
    for (const auto& c : r.coefficients) {
        EXPECT_DOUBLE_EQ(c.sup_dx, 1.0);
        EXPECT_DOUBLE_EQ(c.sup_dmu, 1.0);
        EXPECT_EQ(c.lip_dx, 0.0);
    }
}

TEST(ProbeAssumption, ConstantCoefficientsAreZero) {
    const auto set = make_general_coeffs(1, 1, {constant(1.0), constant(2.0)}, 1.0, LawDependence::none);
    const auto r = probe_assumption(set, probe_points(), probe_measures());
    EXPECT_EQ(r.estimated_bound, 0.0);
}

TEST(ProbeAssumption, SineDiffusionDerivativeBounded) {
    const auto r = probe_assumption(fam::sin_stratonovich(), probe_points(), probe_measures());
    EXPECT_LE(r.coefficients[1].sup_dx, 1.0);
    EXPECT_GE(r.coefficients[1].sup_dx, std::cos(1.0));
}
