#include "mvflow/paths.hpp"
#include "mvflow/rng.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace mvflow;

TEST(Philox, KnownAnswerZero) {
    const auto out = Philox4x32::generate({0, 0, 0, 0}, {0, 0});
    EXPECT_EQ(out, (Philox4x32::Counter{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u}));
}

TEST(Philox, KnownAnswerOnes) {
    const auto out = Philox4x32::generate({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, {0xffffffffu, 0xffffffffu});
    EXPECT_EQ(out, (Philox4x32::Counter{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu}));
}

TEST(Philox, KnownAnswerPi) {
    const auto out = Philox4x32::generate({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, {0xa4093822u, 0x299f31d0u});
    EXPECT_EQ(out, (Philox4x32::Counter{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u}));
}

TEST(CounterNormal, MomentsMatchStandardNormal) {
    const int n = 20000;
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double z = counter_normal(42, static_cast<std::uint32_t>(i), 0, 0, 0);
        sum += z;
        sq += z * z;
    }
    EXPECT_NEAR(sum / n, 0.0, 4.0 / std::sqrt(n));
    EXPECT_NEAR(sq / n, 1.0, 4.0 * std::sqrt(2.0 / n));
}

TEST(SamplePaths, SameSeedIsIdentical) {
    const TimeGrid g(0.0, 1.0, 50);
    const auto a = sample_paths(g, 7, 2, 99);
    const auto b = sample_paths(g, 7, 2, 99, 3);
    ASSERT_EQ(a.raw().size(), b.raw().size());
    for (std::size_t i = 0; i < a.raw().size(); ++i) EXPECT_EQ(a.raw()[i], b.raw()[i]);
}

TEST(SamplePaths, DifferentSeedsAreUncorrelated) {
    const TimeGrid g(0.0, 1.0, 1000);
    const auto a = sample_paths(g, 10, 1, 1);
    const auto b = sample_paths(g, 10, 1, 2);
    const std::size_t n = a.raw().size();
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sab += a.raw()[i] * b.raw()[i];
        saa += a.raw()[i] * a.raw()[i];
        sbb += b.raw()[i] * b.raw()[i];
    }
    EXPECT_LE(std::abs(sab / std::sqrt(saa * sbb)), 4.0 / std::sqrt(static_cast<double>(n)));
}

TEST(SamplePaths, SingleDrawShape) {
    const auto p = sample_paths(TimeGrid(0.0, 0.25, 1), 1, 1, 5);
    EXPECT_EQ(p.raw().size(), 1u);
    EXPECT_NEAR(p.increment(0, 0, 0), 0.5 * counter_normal(5, 0, 0, 0, 0), 1e-12);
}

TEST(SamplePaths, RejectsEmptyShapes) {
    EXPECT_THROW(sample_paths(TimeGrid(0.0, 1.0, 4), 0, 1, 1), ConfigError);
    EXPECT_THROW(sample_paths(TimeGrid(0.0, 1.0, 4), 1, 0, 1), ConfigError);
}

TEST(RefineHalve, FinePairsSumToCoarseIncrement) {
    const auto coarse = sample_paths(TimeGrid(0.0, 1.0, 64), 5, 2, 11);
    const auto fine = refine_halve(coarse);
    ASSERT_EQ(fine.steps(), 128);
    for (int r = 0; r < 5; ++r)
        for (int i = 0; i < 64; ++i)
            for (int k = 0; k < 2; ++k) EXPECT_EQ(fine.increment(r, 2 * i, k) + fine.increment(r, 2 * i + 1, k), coarse.increment(r, i, k));
}

TEST(RefineHalve, FineVarianceIsHalfStep) {
    const auto coarse = sample_paths(TimeGrid(0.0, 1.0, 500), 40, 1, 3);
    const auto fine = refine_halve(coarse);
    double sq = 0.0;
    for (double v : fine.raw()) sq += v * v;
    const double n = static_cast<double>(fine.raw().size());
    const double target = fine.grid().dt();
    EXPECT_NEAR(sq / n, target, 4.0 * target * std::sqrt(2.0 / n));
}

TEST(RefineHalve, DoubleRefinementKeepsEndpoint) {
    const auto coarse = sample_paths(TimeGrid(0.0, 1.0, 2), 3, 1, 8);
    const auto fine = refine_halve(refine_halve(coarse));
    ASSERT_EQ(fine.steps(), 8);
    for (int r = 0; r < 3; ++r) EXPECT_EQ(fine.knot_values(r, 0).back(), coarse.knot_values(r, 0).back());
}

TEST(TimeGrid, KnotLookup) {
    const TimeGrid g(0.0, 1.0, 10);
    EXPECT_EQ(g.knots(), 11);
    EXPECT_EQ(g.knot_at(0.0), 0);
    EXPECT_EQ(g.knot_at(0.5), 5);
    EXPECT_EQ(g.knot_at(1.0), 10);
    EXPECT_EQ(g.time(10), 1.0);
}
