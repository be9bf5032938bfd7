#include "mvflow/families.hpp"
#include "mvflow/stopping.hpp"

#include <Eigen/LU>
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

FlowField zero_field(int points, int steps) {
    const SpatialGrid grid(make_vec({-2.0}), make_vec({3.0}), {points});
    const auto paths = sample_paths(TimeGrid(0.0, 1.0, steps), 3, 1, 1);
    return simulate(grid, fam::zero(1, 1), paths, FlowOptions{});
}

}  // namespace

TEST(DetectRho, IdentitySeriesNeverHits) {
    const std::vector<Mat> series(50, identity_mat(2));
    EXPECT_FALSE(detect_rho(series));
}

TEST(DetectRho, SignChangeBetweenKnotsReportsLaterKnot) {
    std::vector<Mat> series;
    for (int k = 0; k < 60; ++k) series.push_back(scalar_mat(41.5 - k));
    EXPECT_EQ(detect_rho(series), 42);
}

TEST(DetectRho, ExplosionKnotWinsWhenEarlier) {
    const std::vector<Mat> series(50, identity_mat(1));
    EXPECT_EQ(detect_rho(series, 17), 17);
    std::vector<Mat> singular(50, identity_mat(1));
    singular[10] = scalar_mat(0.0);
    EXPECT_EQ(detect_rho(singular, 17), 10);
}

TEST(DetectRho, ScaleRelativeThreshold) {
    Mat tiny = identity_mat(2) * 1e-9;
    EXPECT_TRUE(is_invertible(tiny));
    Mat nearly(2, 2);
    nearly << 1.0, 1.0, 1.0, 1.0 + 1e-13;
    EXPECT_FALSE(is_invertible(nearly));
}

TEST(DetectRho, NeverFiresWhereTheDirectSolveSucceedsWithoutSignChange) {
    for (std::uint32_t trial = 0; trial < 200; ++trial) {
        const int d = 1 + static_cast<int>(trial % 3);
        std::vector<Mat> series;
        for (std::uint32_t k = 0; k < 20; ++k) {
            Mat j(d, d);
            for (int a = 0; a < d; ++a)
                for (int b = 0; b < d; ++b)
                    j(a, b) = std::round(4.0 * counter_normal(11, trial, k, static_cast<std::uint32_t>(a * d + b), 401));
            if (j.determinant() < 0.0) j.row(0) *= -1.0;
            if (k % 5 == 4) j.row(d - 1) = 2.0 * j.row(0);
            series.push_back(j);
        }
        const Knot hit = detect_rho(series);
        const Eigen::MatrixXd rhs = Eigen::MatrixXd::Ones(d, 1);
        for (int k = 0; k < static_cast<int>(series.size()); ++k) {
            const Eigen::MatrixXd j = series[static_cast<std::size_t>(k)];
            const Eigen::FullPivLU<Eigen::MatrixXd> lu(j);
            const bool solved = lu.isInvertible() && (j * lu.solve(rhs) - rhs).norm() < 1e-8;
            if (hit && *hit == k) EXPECT_FALSE(solved) << "trial " << trial << " knot " << k;
            if (!hit || k < *hit) EXPECT_TRUE(solved) << "trial " << trial << " knot " << k;
        }
    }
}

TEST(DetectTheta, ReciprocalThresholdOnStoredPath) {
    // J_t = exp(W_t - t/2) on a path whose minimum over knots is 0.2.
    std::vector<double> inv;
    const int n = 100;
    for (int k = 0; k <= n; ++k) {
        const double t = static_cast<double>(k) / n;
        const double j = std::exp(std::log(0.2) * std::sin(M_PI * t));
        inv.push_back(1.0 / j);
    }
    for (double m : {1.5, 2.0, 4.0, 4.999}) {
        const Knot hit = first_exceeding(inv, m);
        ASSERT_TRUE(hit);
        EXPECT_GT(inv[static_cast<std::size_t>(*hit)], m);
        EXPECT_LE(inv[static_cast<std::size_t>(*hit) - 1], m);
    }
    EXPECT_FALSE(first_exceeding(inv, 5.0 + 1e-9));
    EXPECT_FALSE(first_exceeding(inv, 6.0));
}

TEST(DetectTheta, ZeroCoefficientsNeverHit) {
    const auto field = zero_field(9, 20);
    for (double m : {1.0, 2.0, 10.0}) EXPECT_FALSE(detect_theta(field, m));
}

TEST(DetectTheta, MonotoneInThreshold) {
    const SpatialGrid grid(make_vec({0.5}), make_vec({2.0}), {7});
    const auto paths = sample_paths(TimeGrid(0.0, 2.0, 400), 2, 1, 31);
    const auto field = simulate(grid, fam::geometric(1.2), paths, FlowOptions{});
    Knot previous = 0;
    for (double m : {1.1, 1.5, 2.0, 3.0, 5.0}) {
        const Knot hit = detect_theta(field, m);
        if (previous && hit) EXPECT_LE(*previous, *hit);
        if (!previous) EXPECT_FALSE(hit);
        previous = hit;
    }
}

TEST(DetectTauN, ZeroCoefficientsMonitor) {
    const auto field = zero_field(11, 10);
    const auto monitor = tau_n_monitor(field);
    for (double v : monitor) EXPECT_NEAR(v, 3.0, 1e-9);
    EXPECT_EQ(detect_tau_n(field, 2.5), 0);
    EXPECT_FALSE(detect_tau_n(field, 3.5));
}

TEST(DetectTauN, AffineFlowHasVanishingHigherDerivatives) {
    fam::MomentLinearParams p;
    p.A = Mat::Zero(2, 2);
    p.A << -0.4, 0.3, 0.0, -0.2;
    p.B = Mat::Identity(2, 2) * 0.2;
    p.C = Eigen::MatrixXd::Identity(2, 2) * 0.3;
    p.D = {Mat::Identity(2, 2) * 0.2, Mat::Zero(2, 2)};
    const SpatialGrid grid(make_vec({-1.0, -1.0}), make_vec({1.0, 1.0}), {7, 8});
    const auto paths = sample_paths(TimeGrid(0.0, 1.0, 40), 3, 2, 2);
    const auto field = simulate(grid, fam::moment_linear(p), paths, FlowOptions{});
    const auto monitor = tau_n_monitor(field);
    for (int k = 0; k < field.knots(); ++k) {
        double first = 0.0;
        for (std::size_t q = 0; q < field.points(); ++q)
            first = std::max({first, field.phi(k, q).norm(), frobenius(field.jacobian(k, q))});
        EXPECT_NEAR(monitor[static_cast<std::size_t>(k)], first, 1e-8);
    }
}

TEST(DetectTauN, NeedsSevenPointsPerAxis) {
    const auto field = zero_field(6, 4);
    EXPECT_THROW(tau_n_monitor(field), CapabilityError);
}

TEST(DetectTauN, MonotoneInThreshold) {
    const auto field = zero_field(9, 5);
    Knot a = detect_tau_n(field, 1.0), b = detect_tau_n(field, 2.0), c = detect_tau_n(field, 10.0);
    EXPECT_TRUE(a && b);
    EXPECT_LE(*a, *b);
    EXPECT_FALSE(c);
}

TEST(Domain, ZeroCoefficientsGiveFullMaskAtEveryTime) {
    const auto field = zero_field(9, 20);
    std::vector<StoppingRecord> records(field.points());
    for (int k = 0; k < field.knots(); ++k) {
        const auto est = estimate_domain(field, records, k);
        EXPECT_EQ(est.cardinality(), field.points());
        EXPECT_EQ(est.image.size(), field.points());
    }
}

TEST(Domain, MasksShrinkWithTime) {
    const auto field = zero_field(9, 20);
    std::vector<StoppingRecord> records(field.points());
    for (std::size_t p = 0; p < records.size(); ++p)
        if (p % 3 != 0) records[p].tau = static_cast<int>(1 + 2 * p);
    std::vector<char> previous = estimate_domain(field, records, 0).mask;
    EXPECT_EQ(std::count(previous.begin(), previous.end(), 1), static_cast<long>(field.points()));
    for (int k = 1; k < field.knots(); ++k) {
        const auto mask = estimate_domain(field, records, k).mask;
        EXPECT_TRUE(mask_subset(mask, previous));
        previous = mask;
    }
    EXPECT_FALSE(mask_subset(estimate_domain(field, records, 0).mask, previous));
    EXPECT_THROW(estimate_domain(field, records, field.knots()), ConfigError);
}

TEST(Knots, Helpers) {
    EXPECT_EQ(earliest(std::nullopt, 4), 4);
    EXPECT_EQ(earliest(3, 4), 3);
    EXPECT_FALSE(earliest(std::nullopt, std::nullopt));
    EXPECT_TRUE(alive_at(std::nullopt, 100));
    EXPECT_TRUE(alive_at(5, 4));
    EXPECT_FALSE(alive_at(5, 5));
    EXPECT_EQ(knot_text(std::nullopt), "none");
}
