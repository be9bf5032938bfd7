#include "mvflow/analysis.hpp"
#include "mvflow/families.hpp"
#include "mvflow/oracle.hpp"
#include "mvflow/paths.hpp"
#include "mvflow/studies.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace mvflow;
namespace fam = mvflow::families;

TEST(Oracle, ZeroPathGivesExponentialGrowth) {
    const int n = 1000;
    const std::vector<double> w(n + 1, 0.0);
    const auto op = oracle::identity_jacobian(w, 0.0, 1.0 / n);
    EXPECT_NEAR(op.jacobian.back(), std::exp(0.5), 1e-12);
    EXPECT_NEAR(op.jacobian.back(), 1.6487, 5e-5);
    EXPECT_FALSE(op.crossing);
}

TEST(Oracle, InitialKnotIsOne) {
    const std::vector<double> w{0.3, 0.5, -0.1};
    const auto op = oracle::identity_jacobian(w, 2.0, 0.01);
    EXPECT_EQ(op.jacobian[0], 1.0);
    EXPECT_EQ(op.integral[0], 0.0);
    EXPECT_EQ(op.w[0], 0.0);
}

TEST(Oracle, IdentityMeanIsOne) {
    const auto paths = sample_paths(TimeGrid(0.0, 1.0, 500), 4000, 1, 13);
    std::vector<double> finals;
    for (int r = 0; r < paths.replicas(); ++r)
        finals.push_back(oracle::identity_jacobian(paths.knot_values(r, 0), 0.0, paths.grid().dt()).jacobian.back());
    const auto e = mean_with_error(finals);
    EXPECT_LE(std::abs(e.mean - 1.0), 3.0 * e.std_error);
}

TEST(Oracle, RejectsMismatchedSeries) {
    const std::vector<double> w{0.0, 0.1, 0.2}, short_series{1.0, 1.0};
    EXPECT_THROW(oracle::closed_form_jacobian(w, 0.0, 0.1, short_series, w), ConfigError);
    EXPECT_THROW(oracle::closed_form_jacobian({}, 0.0, 0.1, {}, {}), ConfigError);
}

TEST(CrossingTime, ThresholdScan) {
    const std::vector<double> series{0.0, 0.3, 0.9, 1.2};
    EXPECT_EQ(oracle::crossing_time(series, 1.0), 3);
    EXPECT_FALSE(oracle::crossing_time(series, 1.5));
    EXPECT_EQ(oracle::crossing_time(std::vector<double>{0.0, 1.0}, 1.0), 1);
}

TEST(StochasticExponential, ZeroIntegrandIsOne) {
    const std::vector<double> w{0.0, 0.4, -0.3, 0.9}, g(4, 0.0);
    for (double v : oracle::stochastic_exponential(g, w, 0.25)) EXPECT_EQ(v, 1.0);
}

TEST(StochasticExponential, UnitIntegrandIsExactInKnotValues) {
    const std::vector<double> w{0.0, 0.4, -0.3, 0.9}, g(4, 1.0);
    const auto e = oracle::stochastic_exponential(g, w, 0.25);
    for (std::size_t k = 0; k < w.size(); ++k) EXPECT_NEAR(e[k], std::exp(w[k] - 0.25 * static_cast<double>(k) / 2.0), 1e-14);
}

TEST(StochasticExponential, MartingaleMean) {
    const auto paths = sample_paths(TimeGrid(0.0, 1.0, 20), 10000, 1, 14);
    std::vector<double> finals;
    const std::vector<double> g(21, 1.0);
    for (int r = 0; r < paths.replicas(); ++r) finals.push_back(oracle::stochastic_exponential(g, paths.knot_values(r, 0), 0.05).back());
    const auto e = mean_with_error(finals);
    EXPECT_LE(std::abs(e.mean - 1.0), 3.0 * e.std_error);
}

TEST(ItoIntegral, LeftPointSums) {
    const std::vector<double> w{0.0, 1.0, 3.0, 2.0}, g{2.0, 1.0, 4.0, 9.0};
    const auto i = oracle::ito_integral(g, w);
    EXPECT_EQ(i, (std::vector<double>{0.0, 2.0, 4.0, 0.0}));
}

TEST(OracleStudy, EngineErrorShrinksUnderRefinement) {
    const auto paths = sample_paths(TimeGrid(0.0, 1.0, 100), 100, 1, 15);
    const auto study = oracle_study(fam::centered(fam::CenteredDrift::identity), make_vec({0.5}), paths, 3, FlowOptions{}, true);
    ASSERT_EQ(study.levels.size(), 3u);
    EXPECT_EQ(study.levels[2].n_steps, 400);
    EXPECT_EQ(study.order.status, OrderStatus::fitted);
    EXPECT_GT(study.order.fit.slope, 0.3);
    for (const auto& lv : study.levels)
        for (const auto& m : lv.engine_mean) EXPECT_EQ(m.mean, 1.0);
}

TEST(OracleStudy, RejectsMultiDimensionalFamilies) {
    const auto paths = sample_paths(TimeGrid(0.0, 1.0, 10), 4, 2, 15);
    EXPECT_THROW(oracle_study(fam::zero(2, 2), make_vec({0.0, 0.0}), paths, 2, FlowOptions{}, true), CapabilityError);
}

TEST(StoppingAgreement, CountsBothAndNeither) {
    OracleLevel lv;
    lv.rho = {std::nullopt, 10, 10, std::nullopt};
    lv.crossing = {std::nullopt, 11, 20, 5};
    const auto a = stopping_agreement(lv);
    EXPECT_EQ(a.paths, 4);
    EXPECT_EQ(a.rho_fired, 2);
    EXPECT_EQ(a.crossing_fired, 3);
    EXPECT_EQ(a.both_fired, 2);
    EXPECT_EQ(a.agree_both, 1);
    EXPECT_EQ(a.agree_overall, 2);
}

TEST(FitOrder, SlopeAndDegenerateCases) {
    const std::vector<double> dt{0.4, 0.2, 0.1};
    const std::vector<double> err{std::sqrt(0.4), std::sqrt(0.2), std::sqrt(0.1)};
    const auto f = fit_order(dt, err);
    EXPECT_EQ(f.status, OrderStatus::fitted);
    EXPECT_NEAR(f.fit.slope, 0.5, 1e-12);
    EXPECT_NEAR(f.fit.std_error, 0.0, 1e-12);
    EXPECT_EQ(fit_order(dt, std::vector<double>{0.0, 0.0, 0.0}).status, OrderStatus::exact);
    EXPECT_EQ(fit_order(dt, std::vector<double>{0.1, 0.0, 0.0}).status, OrderStatus::degenerate);
}
