#include <gtest/gtest.h>

#include <cmath>

#include "bandtok/haar.hpp"
#include "bandtok/latent_codec.hpp"
#include "test_util.hpp"

using namespace bandtok;

namespace {

CodecConfig tiny_config() {
    CodecConfig c;
    c.layers = {{4, 3, 2}, {3, 3, 2}};
    return c;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6}); }

}  // namespace

TEST(LatentCodec, ReferenceGeometry) {
    const LatentCodec codec;
    const LatentGrid z = codec.encode(Matrix(80, 128));
    EXPECT_EQ(z.frames(), 10u);
    EXPECT_EQ(z.bands(), 16u);
    EXPECT_EQ(z.channels(), codec.config().latent_channels());
    EXPECT_EQ(codec.encode(Matrix(87, 128)).frames(), 11u);
}

TEST(LatentCodec, ZeroParamsZeroInputGiveZeroLatent) {
    const LatentCodec codec;
    for (double v : codec.encode(Matrix(16, 32)).values.data) EXPECT_EQ(v, 0.0);
}

TEST(LatentCodec, DecodeRestoresInputShape) {
    Rng rng(1);
    LatentCodec codec;
    codec.init_uniform(rng);
    for (auto [t, f] : {std::pair{87, 128}, std::pair{80, 128}, std::pair{13, 64}, std::pair{1, 8}}) {
        const Matrix x = testutil::random_matrix(t, f, rng, -8.0, 0.0);
        const LatentGrid z = codec.encode(x);
        EXPECT_EQ(z.frames(), (static_cast<std::size_t>(t) + 7) / 8);
        const LogMelSpectrogram y = codec.decode(z);
        EXPECT_EQ(y.values.rows, static_cast<std::size_t>(t));
        EXPECT_EQ(y.values.cols, static_cast<std::size_t>(f));
        EXPECT_EQ(y.n_mels, f);
    }
}

TEST(LatentCodec, DecodeClampsAtTheFloor) {
    LatentCodec codec;
    LatentGrid z{Volume(codec.config().latent_channels(), 2, 4), 0, 0};
    const LogMelSpectrogram y = codec.decode(z);
    EXPECT_EQ(y.values.rows, 16u);
    EXPECT_EQ(y.values.cols, 32u);
    for (double v : y.values.data) EXPECT_EQ(v, 0.0);  // raw output 0 is above the floor
    // A strongly negative LL bias on the output layer puts every pixel at -50,
    // below the floor. Detail subbands stay zero so nothing cancels.
    codec.params().get("codec.dec1.bias").values[LL] = -100.0;
    for (double v : codec.decode(z).values.data) EXPECT_EQ(v, std::log(1e-5));
}

TEST(LatentCodec, RejectsBadGeometry) {
    CodecConfig c;
    c.layers = {{8, 3, 2}};
    EXPECT_THROW(LatentCodec{c}, ConfigError);
    c.layers.clear();
    EXPECT_THROW(LatentCodec{c}, ConfigError);
    c.layers = {{8, 3, 4}};
    EXPECT_NO_THROW(LatentCodec{c});
    const LatentCodec codec;
    EXPECT_THROW(codec.encode(Matrix(16, 30)), ConfigError);  // F must divide by 8
}

TEST(LatentCodec, AdoptsParameterSet) {
    Rng rng(2);
    LatentCodec a(tiny_config());
    a.init_uniform(rng);
    const LatentCodec b(tiny_config(), a.params());
    const Matrix x = testutil::random_matrix(16, 16, rng);
    EXPECT_EQ(a.encode(x).values.data, b.encode(x).values.data);
    EXPECT_THROW(LatentCodec(CodecConfig{}, a.params()), std::exception);
}

TEST(LatentCodec, EncoderGradientMatchesFiniteDifferences) {
    Rng rng(3);
    LatentCodec codec(tiny_config());
    codec.init_uniform(rng);
    for (auto& p : codec.params())
        if (p.name.ends_with("bias"))
            for (double& v : p.values) v = rng.uniform(-0.2, 0.2);
    Matrix x = testutil::random_matrix(16, 24, rng);
    LatentCodec::EncodeCache cache;
    const LatentGrid z = codec.encode(x, &cache);
    const Volume h = testutil::random_volume(z.values.channels, z.values.rows, z.values.cols, rng);
    auto loss = [&] { return testutil::dot(codec.encode(x).values.data, h.data); };
    ParamSet grads = codec.params().zeros_like();
    const Matrix gx = codec.encode_backward(cache, h, grads);

    const double eps = 1e-5;
    double worst = 0.0;
    for (std::size_t t = 0; t < codec.params().count(); ++t)
        for (std::size_t i = 0; i < codec.params()[t].size(); ++i) {
            double& v = codec.params()[t].values[i];
            const double s = v;
            v = s + eps;
            const double lp = loss();
            v = s - eps;
            const double lm = loss();
            v = s;
            worst = std::max(worst, rel_err(grads[t].values[i], (lp - lm) / (2 * eps)));
        }
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        const double s = x.data[i];
        x.data[i] = s + eps;
        const double lp = loss();
        x.data[i] = s - eps;
        const double lm = loss();
        x.data[i] = s;
        worst = std::max(worst, rel_err(gx.data[i], (lp - lm) / (2 * eps)));
    }
    EXPECT_LT(worst, 1e-4);
}

TEST(LatentCodec, DecoderGradientMatchesFiniteDifferences) {
    Rng rng(4);
    LatentCodec codec(tiny_config());
    codec.init_uniform(rng);
    Volume z = testutil::random_volume(3, 2, 3, rng);
    LatentCodec::DecodeCache cache;
    const Matrix y = codec.decode_raw(z, 13, 24, &cache);
    ASSERT_EQ(y.rows, 13u);
    const Matrix g = testutil::random_matrix(13, 24, rng);
    auto loss = [&] { return testutil::dot(codec.decode_raw(z, 13, 24).data, g.data); };
    ParamSet grads = codec.params().zeros_like();
    const Volume gz = codec.decode_backward(cache, g, grads);

    const double eps = 1e-5;
    double worst = 0.0;
    for (std::size_t t = 0; t < codec.params().count(); ++t)
        for (std::size_t i = 0; i < codec.params()[t].size(); ++i) {
            double& v = codec.params()[t].values[i];
            const double s = v;
            v = s + eps;
            const double lp = loss();
            v = s - eps;
            const double lm = loss();
            v = s;
            worst = std::max(worst, rel_err(grads[t].values[i], (lp - lm) / (2 * eps)));
        }
    for (std::size_t i = 0; i < z.data.size(); ++i) {
        const double s = z.data[i];
        z.data[i] = s + eps;
        const double lp = loss();
        z.data[i] = s - eps;
        const double lm = loss();
        z.data[i] = s;
        worst = std::max(worst, rel_err(gz.data[i], (lp - lm) / (2 * eps)));
    }
    EXPECT_LT(worst, 1e-4);
}
