#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "bandtok/rope.hpp"
#include "test_util.hpp"

using namespace bandtok;

namespace {

std::vector<double> random_vec(std::size_t n, Rng& rng) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(-1.0, 1.0);
    return v;
}

}  // namespace

TEST(Rope, SplitAllocations) {
    const RopeConfig c = RopeConfig::split_2d(16);
    EXPECT_EQ(c.d_token, 8u);
    EXPECT_EQ(c.d_time, 4u);
    EXPECT_EQ(c.d_band, 4u);
    const RopeConfig odd = RopeConfig::split_2d(10);  // 5 pairs: 1 time, 1 band, 3 token
    EXPECT_EQ(odd.d_token + odd.d_time + odd.d_band, 10u);
    EXPECT_EQ(odd.d_time, 2u);
    const RopeConfig one = RopeConfig::one_d(8);
    EXPECT_EQ(one.d_token, 8u);
    RopeConfig bad = c;
    bad.d_band = 2;
    EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Rope, LayoutInterleavesAxes) {
    const auto layout = rope_pair_layout(RopeConfig::split_2d(16));
    ASSERT_EQ(layout.size(), 8u);
    const RopeAxis want[] = {RopeAxis::token, RopeAxis::time, RopeAxis::band, RopeAxis::token,
                             RopeAxis::time,  RopeAxis::band, RopeAxis::token, RopeAxis::token};
    for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(layout[i].axis, want[i]) << i;
    // Frequencies per axis: 1 / base^(2 rank / d_axis).
    EXPECT_DOUBLE_EQ(layout[4].inv_freq, 1.0 / std::pow(10000.0, 2.0 / 4.0));
    EXPECT_DOUBLE_EQ(layout[7].inv_freq, 1.0 / std::pow(10000.0, 6.0 / 8.0));
    RopeConfig block = RopeConfig::split_2d(16);
    block.interleaved = false;
    const auto b = rope_pair_layout(block);
    EXPECT_EQ(b[3].axis, RopeAxis::token);
    EXPECT_EQ(b[4].axis, RopeAxis::time);
    EXPECT_EQ(b[7].axis, RopeAxis::band);
}

TEST(Rope, ZeroPositionIsIdentity) {
    Rng rng(1);
    const auto v = random_vec(16, rng);
    EXPECT_EQ(rotate(v, RopePosition{}, RopeConfig::split_2d(16)), v);
}

TEST(Rope, QuarterTurnByHand) {
    RopeConfig c;
    c.head_dim = 2;
    c.d_token = 0;
    c.d_time = 2;
    c.d_band = 0;
    const std::vector<double> v{1.0, 0.0};
    // Rank 0 has inv_freq 1, so time = pi/2 is a quarter turn.
    const auto r = rotate(v, RopePosition(0.0, std::numbers::pi / 2, 0.0), c);
    EXPECT_NEAR(r[0], 0.0, 1e-15);
    EXPECT_NEAR(r[1], 1.0, 1e-15);
}

TEST(Rope, Isometry) {
    Rng rng(2);
    for (int t = 0; t < 200; ++t) {
        const std::size_t hd = 2 * (1 + rng.below(32));
        const auto v = random_vec(hd, rng);
        const RopePosition p(rng.uniform(0, 1000), rng.uniform(0, 100), rng.uniform(0, 20));
        const auto r = rotate(v, p, RopeConfig::split_2d(hd));
        EXPECT_NEAR(std::sqrt(testutil::dot(r, r)), std::sqrt(testutil::dot(v, v)), 1e-12);
    }
}

TEST(Rope, EqualPositionsGivePlainDotProduct) {
    Rng rng(3);
    const auto q = random_vec(16, rng), k = random_vec(16, rng);
    const RopePosition p(37, 5, 9);
    EXPECT_NEAR(relative_score(q, k, p, p, RopeConfig::split_2d(16)), testutil::dot(q, k), 1e-13);
}

TEST(Rope, ShiftInvariance) {
    Rng rng(4);
    for (int t = 0; t < 100; ++t) {
        const auto q = random_vec(32, rng), k = random_vec(32, rng);
        const RopeConfig c = RopeConfig::split_2d(32);
        const RopePosition pq(rng.below(300), rng.below(40), rng.below(17));
        const RopePosition pk(rng.below(300), rng.below(40), rng.below(17));
        const double dt = static_cast<double>(rng.below(500)), dm = static_cast<double>(rng.below(50)),
                     db = static_cast<double>(rng.below(17));
        const double base = relative_score(q, k, pq, pk, c);
        const double shifted = relative_score(q, k, RopePosition(pq.token + dt, pq.time + dm, pq.band + db),
                                              RopePosition(pk.token + dt, pk.time + dm, pk.band + db), c);
        EXPECT_LT(std::abs(base - shifted), 1e-10);
    }
}

TEST(Rope, AxisIndependence) {
    Rng rng(5);
    const RopeConfig c = RopeConfig::split_2d(16);
    const auto layout = rope_pair_layout(c);
    const auto q = random_vec(16, rng), k = random_vec(16, rng);
    const RopePosition a(4, 2, 1), b(4, 2, 9);
    const auto ra = rotate(q, a, c), rb = rotate(q, b, c);
    for (std::size_t i = 0; i < layout.size(); ++i) {
        if (layout[i].axis == RopeAxis::band) continue;
        EXPECT_EQ(ra[2 * i], rb[2 * i]);
        EXPECT_EQ(ra[2 * i + 1], rb[2 * i + 1]);
    }
    (void)k;
}

TEST(Rope, OneDimensionalModeMatchesTextbookRope) {
    Rng rng(6);
    for (int t = 0; t < 100; ++t) {
        const std::size_t hd = 2 * (1 + rng.below(32));
        const auto v = random_vec(hd, rng);
        const double p = static_cast<double>(rng.below(2048));
        std::vector<double> ref(hd);
        for (std::size_t i = 0; i < hd / 2; ++i) {
            const double a = p * (1.0 / std::pow(10000.0, 2.0 * static_cast<double>(i) / static_cast<double>(hd)));
            ref[2 * i] = v[2 * i] * std::cos(a) - v[2 * i + 1] * std::sin(a);
            ref[2 * i + 1] = v[2 * i] * std::sin(a) + v[2 * i + 1] * std::cos(a);
        }
        EXPECT_EQ(rotate(v, RopePosition(p, 3.0, 7.0), RopeConfig::one_d(hd)), ref);
    }
}

TEST(Rope, InverseRotationUndoes) {
    Rng rng(7);
    const RopeConfig c = RopeConfig::split_2d(16);
    const auto layout = rope_pair_layout(c);
    auto v = random_vec(16, rng);
    const auto orig = v;
    const RopePosition p(11, 3, 5);
    rotate_inplace(v, p, layout, 1.0);
    rotate_inplace(v, p, layout, -1.0);
    EXPECT_LT(testutil::max_abs_diff(v, orig), 1e-15);
    EXPECT_THROW(rotate(std::vector<double>(8), p, c), InvalidInputError);
}
