#include <gtest/gtest.h>

#include <cmath>

#include "bandtok/spectral_losses.hpp"
#include "bandtok/verify.hpp"
#include "test_util.hpp"

using namespace bandtok;

namespace {

CriticConfig small_critic() {
    CriticConfig c;
    c.channels = {2, 2, 1};
    c.kernel = 4;
    c.stride = 2;
    c.scales = {1.0, 0.5};
    return c;
}

Volume filled(std::size_t r, std::size_t c, double v) {
    Volume out(1, r, c);
    for (double& x : out.data) x = v;
    return out;
}

}  // namespace

TEST(Resize, UnitScaleIsIdentity) {
    Rng rng(1);
    const Matrix m = testutil::random_matrix(7, 5, rng);
    EXPECT_EQ(resize_bilinear(m, 1.0).data, m.data);
}

TEST(Resize, ConstantStaysConstant) {
    const Matrix m(9, 6, 2.5);
    for (double s : {0.5, 0.25, 2.0}) {
        const Matrix r = resize_bilinear(m, s);
        EXPECT_EQ(r.rows, resized_dim(9, s));
        for (double v : r.data) EXPECT_NEAR(v, 2.5, 1e-14);
    }
    EXPECT_EQ(resized_dim(9, 0.5), 5u);  // round(4.5) away from zero
    EXPECT_EQ(resized_dim(1, 0.25), 1u);
}

TEST(Resize, HalvingAveragesPairs) {
    // Half-pixel centres: dst 0 samples source 0.5, the mean of the first 2×2 block.
    Matrix m(4, 4);
    for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t c = 0; c < 4; ++c) m(r, c) = static_cast<double>(4 * r + c);
    const Matrix h = resize_bilinear(m, 0.5);
    ASSERT_EQ(h.rows, 2u);
    EXPECT_DOUBLE_EQ(h(0, 0), (0 + 1 + 4 + 5) / 4.0);
    EXPECT_DOUBLE_EQ(h(1, 1), (10 + 11 + 14 + 15) / 4.0);
    EXPECT_DOUBLE_EQ(h(0, 1), (2 + 3 + 6 + 7) / 4.0);
}

TEST(Resize, BackwardIsTheAdjoint) {
    Rng rng(2);
    for (double s : {0.5, 0.25, 0.7, 1.5}) {
        const Matrix x = testutil::random_matrix(11, 8, rng);
        const Matrix y = resize_bilinear(x, s);
        const Matrix g = testutil::random_matrix(y.rows, y.cols, rng);
        const Matrix gx = resize_bilinear_backward(g, 11, 8, s);
        EXPECT_NEAR(testutil::dot(y.data, g.data), testutil::dot(x.data, gx.data), 1e-12) << s;
    }
}

TEST(Critic, ZeroParametersScoreZero) {
    const Critic critic;
    const CriticOutput o = critic.forward(Matrix(128, 128, 1.0));
    ASSERT_EQ(o.scales.size(), 3u);
    EXPECT_TRUE(o.warnings.empty());
    EXPECT_EQ(o.scales[0].score.rows, 8u);
    EXPECT_EQ(o.scales[1].score.rows, 4u);
    EXPECT_EQ(o.scales[2].score.rows, 2u);
    EXPECT_EQ(o.scales[0].features.size(), 3u);
    for (const auto& s : o.scales)
        for (double v : s.score.data) EXPECT_EQ(v, 0.0);
}

TEST(Critic, SkipsScalesBelowTheStride) {
    Rng rng(3);
    Critic critic;
    critic.init_uniform(rng);
    const CriticOutput o = critic.forward(testutil::random_matrix(40, 128, rng));
    ASSERT_EQ(o.scales.size(), 2u);  // 40 * 0.25 = 10 < 16
    ASSERT_EQ(o.warnings.size(), 1u);
    EXPECT_NE(o.warnings[0].find("0.25"), std::string::npos);
    EXPECT_THROW(critic.forward(Matrix(8, 8)), InvalidInputError);
}

TEST(Gan, HingeAndFeatureMatchingOracle) {
    // Critic loss is zero exactly at the hinge margins.
    const std::vector<Volume> real{filled(2, 2, 1.0)}, fake{filled(2, 2, -1.0)};
    const std::vector<std::vector<Volume>> feat{{filled(3, 3, 0.5)}};
    GanLosses g = gan_losses(real, fake, feat, feat);
    EXPECT_EQ(g.critic, 0.0);
    EXPECT_EQ(g.feature_matching, 0.0);
    EXPECT_EQ(g.generator_adv, 1.0);

    // Two scales: averages across scales, FM across (scale, layer) maps.
    const std::vector<Volume> r2{filled(2, 2, 0.0), filled(1, 1, 2.0)}, f2{filled(2, 2, 0.5), filled(1, 1, -3.0)};
    const std::vector<std::vector<Volume>> fr{{filled(2, 2, 1.0), filled(1, 1, 0.0)}, {filled(1, 1, 0.0)}};
    const std::vector<std::vector<Volume>> ff{{filled(2, 2, 0.0), filled(1, 1, 2.0)}, {filled(1, 1, 0.0)}};
    g = gan_losses(r2, f2, fr, ff);
    // scale 0: relu(1-0) + relu(1+0.5) = 2.5; scale 1: relu(-1) + relu(-2) = 0.
    EXPECT_DOUBLE_EQ(g.critic, (2.5 + 0.0) / 2.0);
    EXPECT_DOUBLE_EQ(g.generator_adv, (-0.5 + 3.0) / 2.0);
    EXPECT_DOUBLE_EQ(g.feature_matching, (1.0 + 2.0 + 0.0) / 3.0);
}

TEST(CompositeLoss, WeightedSumOfTerms) {
    const LossWeights w;
    EXPECT_EQ(w.rec, 5.0);
    EXPECT_EQ(w.perc, 1.0);
    EXPECT_EQ(w.adv, 1.0);
    EXPECT_EQ(w.fm, 5.0);
    EXPECT_EQ(w.commit, 2.5);

    const Critic zero;
    const Matrix x(128, 128, 0.0);
    const CriticOutput co = zero.forward(x);
    LossBreakdown b = composite_loss(x, x, 0.0, co, co, w);
    EXPECT_EQ(b.total, 0.0);

    // Unit terms: |x - x_hat| = 1 everywhere, perceptual 1, commitment 1, adv 1 via
    // hand-made critic outputs, FM 1.
    CriticOutput real, fake;
    real.scales.push_back({0, filled(2, 2, 0.0), {filled(2, 2, 0.0)}});
    fake.scales.push_back({0, filled(2, 2, -1.0), {filled(2, 2, 1.0)}});
    const Matrix xh(4, 4, 1.0);
    b = composite_loss(Matrix(4, 4), xh, 1.0, real, fake, w, [](const Matrix&, const Matrix&) { return 1.0; });
    EXPECT_EQ(b.rec, 1.0);
    EXPECT_EQ(b.perc, 1.0);
    EXPECT_EQ(b.adv, 1.0);
    EXPECT_EQ(b.fm, 1.0);
    EXPECT_EQ(b.commit, 1.0);
    EXPECT_DOUBLE_EQ(b.total, 14.5);

    // Linear in each weight.
    LossWeights w2 = w;
    w2.rec = 10.0;
    EXPECT_DOUBLE_EQ(composite_loss(Matrix(4, 4), xh, 1.0, real, fake, w2).total -
                         composite_loss(Matrix(4, 4), xh, 1.0, real, fake, w).total,
                     5.0);
    LossWeights bad = w;
    bad.fm = -1.0;
    EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(CompositeLoss, GeneratorGradientIncludesReconstruction) {
    const Critic zero(small_critic());
    Matrix x(16, 16, 0.0), xh(16, 16, 0.5);
    xh(0, 0) = -0.5;
    const auto g = generator_loss_and_grad(x, xh, 0.0, zero, LossWeights{});
    EXPECT_DOUBLE_EQ(g.d_x_hat(1, 1), 5.0 / 256.0);
    EXPECT_DOUBLE_EQ(g.d_x_hat(0, 0), -5.0 / 256.0);
    EXPECT_DOUBLE_EQ(g.loss.rec, 0.5);
}

TEST(CompositeLoss, GradientsMatchFiniteDifferences) {
    Rng rng(4);
    const auto s = verify::composite_gradient_check(rng);
    EXPECT_GT(s.checked, 100u);
    EXPECT_LT(s.max_rel_error, 1e-4) << s.worst;
}

TEST(CompositeLoss, CriticLossOnZeroCriticIsTwo) {
    const Critic zero(small_critic());
    Rng rng(5);
    const auto r = critic_loss_and_grad(testutil::random_matrix(16, 16, rng), testutil::random_matrix(16, 16, rng), zero);
    EXPECT_DOUBLE_EQ(r.loss, 2.0);  // relu(1 - 0) + relu(1 + 0)
    EXPECT_TRUE(r.d_critic.same_layout(zero.params()));
}
