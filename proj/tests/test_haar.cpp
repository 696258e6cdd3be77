#include <gtest/gtest.h>

#include "bandtok/haar.hpp"
#include "test_util.hpp"

using namespace bandtok;

namespace {

Matrix block(double a, double b, double c, double d) {
    Matrix m(2, 2);
    m(0, 0) = a;
    m(0, 1) = b;
    m(1, 0) = c;
    m(1, 1) = d;
    return m;
}

}  // namespace

TEST(Haar, ConstantBlockHasNoDetail) {
    const PatchedSpectrogram p = haar_forward(block(1, 1, 1, 1));
    EXPECT_EQ(p.subbands(LL, 0, 0), 2.0);
    EXPECT_EQ(p.subbands(LH, 0, 0), 0.0);
    EXPECT_EQ(p.subbands(HL, 0, 0), 0.0);
    EXPECT_EQ(p.subbands(HH, 0, 0), 0.0);
}

TEST(Haar, ImpulseBlock) {
    const PatchedSpectrogram p = haar_forward(block(1, 0, 0, 0));
    for (std::size_t ch = 0; ch < 4; ++ch) EXPECT_EQ(p.subbands(ch, 0, 0), 0.5);
}

TEST(Haar, FourFormulasOnRandomBlocks) {
    Rng rng(1);
    for (int t = 0; t < 100; ++t) {
        const double a = rng.uniform(), b = rng.uniform(), c = rng.uniform(), d = rng.uniform();
        const PatchedSpectrogram p = haar_forward(block(a, b, c, d));
        EXPECT_NEAR(p.subbands(LL, 0, 0), (a + b + c + d) / 2, 1e-15);
        EXPECT_NEAR(p.subbands(LH, 0, 0), (a - b + c - d) / 2, 1e-15);
        EXPECT_NEAR(p.subbands(HL, 0, 0), (a + b - c - d) / 2, 1e-15);
        EXPECT_NEAR(p.subbands(HH, 0, 0), (a - b - c + d) / 2, 1e-15);
    }
}

TEST(Haar, InverseOfConstantCase) {
    PatchedSpectrogram p{Volume(4, 1, 1), 2, 2};
    p.subbands(LL, 0, 0) = 2.0;
    const Matrix m = haar_inverse(p);
    for (double v : m.data) EXPECT_EQ(v, 1.0);
    const Matrix z = haar_inverse(PatchedSpectrogram{Volume(4, 3, 2), 6, 4});
    for (double v : z.data) EXPECT_EQ(v, 0.0);
}

TEST(Haar, RoundtripAndEnergy) {
    Rng rng(2);
    for (auto [r, c] : {std::pair{4, 4}, std::pair{6, 6}, std::pair{2, 64}, std::pair{64, 2}, std::pair{10, 30}}) {
        const Matrix m = testutil::random_matrix(r, c, rng, -5.0, 5.0);
        const PatchedSpectrogram p = haar_forward(m);
        EXPECT_EQ(p.subbands.rows, static_cast<std::size_t>(r / 2));
        EXPECT_EQ(p.subbands.cols, static_cast<std::size_t>(c / 2));
        EXPECT_LT(testutil::max_abs_diff(haar_inverse(p).data, m.data), 1e-12);
        const double e_in = testutil::dot(m.data, m.data), e_out = testutil::dot(p.subbands.data, p.subbands.data);
        EXPECT_LT(std::abs(e_in - e_out) / e_in, 1e-12);
    }
}

TEST(Haar, OddDimensionsReplicateTheEdge) {
    Rng rng(3);
    const Matrix m = testutil::random_matrix(5, 7, rng);
    const PatchedSpectrogram p = haar_forward(m);
    EXPECT_EQ(p.subbands.rows, 3u);
    EXPECT_EQ(p.subbands.cols, 4u);
    // Last block column: b == a and d == c, so LH and HH vanish there.
    for (std::size_t r = 0; r < 3; ++r) {
        EXPECT_NEAR(p.subbands(LH, r, 3), 0.0, 1e-15);
        EXPECT_NEAR(p.subbands(HH, r, 3), 0.0, 1e-15);
    }
    const Matrix back = haar_inverse(p);
    ASSERT_EQ(back.rows, 5u);
    ASSERT_EQ(back.cols, 7u);
    EXPECT_LT(testutil::max_abs_diff(back.data, m.data), 1e-12);
}

TEST(Haar, BackwardPassesAreAdjoints) {
    Rng rng(4);
    for (auto [r, c] : {std::pair{4, 6}, std::pair{5, 7}}) {
        const Matrix x = testutil::random_matrix(r, c, rng);
        const PatchedSpectrogram p = haar_forward(x);
        const Volume gy = testutil::random_volume(4, p.subbands.rows, p.subbands.cols, rng);
        // <F x, gy> == <x, F^T gy>
        const Matrix gx = haar_forward_backward(gy, x.rows, x.cols);
        EXPECT_NEAR(testutil::dot(p.subbands.data, gy.data), testutil::dot(x.data, gx.data), 1e-12);

        const Volume s = testutil::random_volume(4, p.subbands.rows, p.subbands.cols, rng);
        const Matrix y = haar_inverse(PatchedSpectrogram{s, x.rows, x.cols});
        const Matrix gout = testutil::random_matrix(x.rows, x.cols, rng);
        const Volume gs = haar_inverse_backward(gout, s.rows, s.cols);
        EXPECT_NEAR(testutil::dot(y.data, gout.data), testutil::dot(s.data, gs.data), 1e-12);
    }
}

TEST(Haar, ScaledForwardBreaksEnergy) {
    Rng rng(5);
    const Matrix m = testutil::random_matrix(4, 4, rng);
    const PatchedSpectrogram p = detail::haar_forward_scaled(m, 0.6);
    const double ratio = testutil::dot(p.subbands.data, p.subbands.data) / testutil::dot(m.data, m.data);
    EXPECT_NEAR(ratio, 0.36 / 0.25, 1e-12);
}
