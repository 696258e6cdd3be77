#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "bandtok/micro_lm.hpp"
#include "bandtok/verify.hpp"
#include "test_util.hpp"

using namespace bandtok;

namespace {

MicroLmConfig tiny(bool segment_time = false) {
    MicroLmConfig c;
    c.vocab = VocabLayout{0, 2, 5};
    c.bands = 3;
    c.d_model = 8;
    c.n_layers = 1;
    c.n_heads = 1;
    c.d_hidden = 12;
    c.rope = RopeConfig::one_d(8);
    c.use_segment_time = segment_time;
    return c;
}

TokenGrid grid(std::size_t frames, std::size_t bands, std::uint32_t k, Rng& rng) {
    TokenGrid g;
    g.frames = frames;
    g.bands = bands;
    g.codebook_size = k;
    g.indices.resize(frames * bands);
    for (auto& v : g.indices) v = static_cast<std::uint32_t>(rng.below(k));
    return g;
}

// Naive single-layer, single-head forward with textbook 1D rotary embedding.
Matrix oracle_forward(const MicroLm& lm, const PositionedSequence& seq) {
    const auto& P = lm.params();
    const std::size_t d = lm.config().d_model, V = lm.config().vocab.total(), h = lm.config().d_hidden;
    const std::size_t L = seq.size();
    auto v = [&](const char* n) { return P.get(n).values; };
    const auto emb = v("lm.embed"), wq = v("lm.l0.wq"), wk = v("lm.l0.wk"), wv = v("lm.l0.wv"), wo = v("lm.l0.wo");
    const auto g1 = v("lm.l0.attn_norm"), g2 = v("lm.l0.ffn_norm"), gf = v("lm.final_norm");
    const auto w1 = v("lm.l0.w1"), b1 = v("lm.l0.b1"), w2 = v("lm.l0.w2"), b2 = v("lm.l0.b2");
    const auto out = v("lm.out"), ob = v("lm.out_bias");
    const double eps = lm.config().norm_eps;
    auto norm = [&](const std::vector<double>& x, const std::vector<double>& g) {
        double s = 0.0;
        for (double e : x) s += e * e;
        const double r = std::sqrt(s / static_cast<double>(x.size()) + eps);
        std::vector<double> y(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] / r * g[i];
        return y;
    };
    auto mat = [](const std::vector<double>& w, const std::vector<double>& x, std::size_t rows) {
        std::vector<double> y(rows, 0.0);
        for (std::size_t o = 0; o < rows; ++o)
            for (std::size_t i = 0; i < x.size(); ++i) y[o] += w[o * x.size() + i] * x[i];
        return y;
    };
    auto rope = [&](std::vector<double> x, double p) {
        for (std::size_t i = 0; i < d / 2; ++i) {
            const double a = p / std::pow(10000.0, 2.0 * static_cast<double>(i) / static_cast<double>(d));
            const double x0 = x[2 * i], x1 = x[2 * i + 1];
            x[2 * i] = x0 * std::cos(a) - x1 * std::sin(a);
            x[2 * i + 1] = x0 * std::sin(a) + x1 * std::cos(a);
        }
        return x;
    };
    std::vector<std::vector<double>> x(L), q(L), k(L), val(L);
    for (std::size_t t = 0; t < L; ++t) {
        x[t].assign(emb.begin() + static_cast<std::ptrdiff_t>(seq.tokens[t] * d),
                    emb.begin() + static_cast<std::ptrdiff_t>((seq.tokens[t] + 1) * d));
        const auto n = norm(x[t], g1);
        const double pos = static_cast<double>(seq.positions[t].token);
        q[t] = rope(mat(wq, n, d), pos);
        k[t] = rope(mat(wk, n, d), pos);
        val[t] = mat(wv, n, d);
    }
    Matrix logits(L, V);
    for (std::size_t t = 0; t < L; ++t) {
        std::vector<double> s(t + 1);
        double m = -1e300, z = 0.0;
        for (std::size_t j = 0; j <= t; ++j) {
            s[j] = testutil::dot(q[t], k[j]) / std::sqrt(static_cast<double>(d));
            m = std::max(m, s[j]);
        }
        for (double& e : s) z += (e = std::exp(e - m));
        std::vector<double> o(d, 0.0);
        for (std::size_t j = 0; j <= t; ++j)
            for (std::size_t e = 0; e < d; ++e) o[e] += s[j] / z * val[j][e];
        auto x1 = x[t];
        const auto ao = mat(wo, o, d);
        for (std::size_t e = 0; e < d; ++e) x1[e] += ao[e];
        auto hh = mat(w1, norm(x1, g2), h);
        for (std::size_t e = 0; e < h; ++e) {
            const double u = hh[e] + b1[e];
            hh[e] = 0.5 * u * (1.0 + std::tanh(std::sqrt(2.0 / std::numbers::pi) * (u + 0.044715 * u * u * u)));
        }
        const auto f = mat(w2, hh, d);
        for (std::size_t e = 0; e < d; ++e) x1[e] += f[e] + b2[e];
        const auto lg = mat(out, norm(x1, gf), V);
        for (std::size_t c = 0; c < V; ++c) logits(t, c) = lg[c] + ob[c];
    }
    return logits;
}

void randomize(MicroLm& lm, Rng& rng) {
    lm.init(rng);
    for (auto& p : lm.params())
        for (double& v : p.values) v += rng.uniform(-0.1, 0.1);
}

}  // namespace

TEST(MicroLm, ForwardMatchesNaiveOracle) {
    Rng rng(1);
    MicroLm lm(tiny());
    randomize(lm, rng);
    const auto seq = make_lm_sequence(0, grid(3, 3, 5, rng), lm.config().vocab);
    const Matrix got = lm.forward(seq, ConditioningPrefix{});
    const Matrix want = oracle_forward(lm, seq);
    ASSERT_EQ(got.rows, want.rows);
    EXPECT_LT(testutil::max_abs_diff(got.data, want.data), 1e-10);
}

TEST(MicroLm, Causality) {
    Rng rng(2);
    MicroLmConfig c = tiny();
    c.n_layers = 2;
    c.n_heads = 2;
    c.rope = RopeConfig::split_2d(4);
    MicroLm lm(c);
    randomize(lm, rng);
    const auto g = grid(4, 3, 5, rng);
    auto seq = make_lm_sequence(0, g, c.vocab);
    const Matrix a = lm.forward(seq, {});
    const std::size_t j = 6;
    seq.tokens[j] = 2 + (seq.tokens[j] - 2 + 1) % 5;
    const Matrix b = lm.forward(seq, {});
    for (std::size_t i = 0; i < j; ++i)
        for (std::size_t v = 0; v < a.cols; ++v) EXPECT_EQ(a(i, v), b(i, v)) << i;
    double diff = 0.0;
    for (std::size_t v = 0; v < a.cols; ++v) diff += std::abs(a(j, v) - b(j, v));
    EXPECT_GT(diff, 0.0);
}

TEST(MicroLm, NullPrefixChangesLogits) {
    Rng rng(3);
    MicroLmConfig c = tiny(true);
    MicroLm lm(c);
    randomize(lm, rng);
    ConditioningPrefix p;
    p.embeddings = testutil::random_matrix(2, 8, rng);
    p.segment_start_s = 3.0;
    p.track_duration_s = 30.0;
    const auto seq = make_lm_sequence(4, grid(2, 3, 5, rng), c.vocab);
    const Matrix cond = lm.forward(seq, p);
    p.null_flag = true;
    const Matrix rows = lm.prefix_rows(p);
    ASSERT_EQ(rows.rows, 4u);
    for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t e = 0; e < 8; ++e) EXPECT_EQ(rows(r, e), lm.params().get("lm.null").values[e]);
    EXPECT_GT(testutil::max_abs_diff(cond.data, lm.forward(seq, p).data), 1e-6);
}

TEST(MicroLm, GradientsMatchFiniteDifferences) {
    Rng rng(4);
    const auto s = verify::lm_gradient_check(rng);
    EXPECT_GT(s.checked, 100u);
    EXPECT_LT(s.max_rel_error, 1e-4) << s.worst;
}

TEST(MicroLm, UnusedEmbeddingRowsGetNoGradient) {
    Rng rng(5);
    MicroLm lm(tiny());
    randomize(lm, rng);
    TokenGrid g{{0, 1, 0, 1, 0, 1}, 2, 3, 5, 0.0};  // codes 2..4 never appear
    const auto seq = make_lm_sequence(0, g, lm.config().vocab);
    ParamSet grads = lm.params().zeros_like();
    lm_loss_and_grad(lm, seq, Matrix(0, 8), false, &grads);
    const auto& ge = grads.get("lm.embed").values;
    for (std::uint32_t tok : {1u, 4u, 5u, 6u})
        for (std::size_t e = 0; e < 8; ++e) EXPECT_EQ(ge[tok * 8 + e], 0.0) << tok;
    for (double v : grads.get("lm.null").values) EXPECT_EQ(v, 0.0);
}

TEST(MicroLm, UniformModelHasLogVocabNll) {
    MicroLm lm(tiny());  // zero output projection and bias
    Rng rng(6);
    const auto seq = make_lm_sequence(0, grid(3, 3, 5, rng), lm.config().vocab);
    for (double v : teacher_forced_nll(lm, seq, {})) EXPECT_NEAR(v, std::log(7.0), 1e-12);
    const std::vector<double> nll{std::log(7.0), std::log(7.0)};
    EXPECT_NEAR(perplexity(nll), 7.0, 1e-12);
}

TEST(MicroLm, NllMatchesSoftmaxOracle) {
    Rng rng(7);
    MicroLm lm(tiny());
    randomize(lm, rng);
    const auto seq = make_lm_sequence(0, grid(2, 3, 5, rng), lm.config().vocab);
    const Matrix lg = lm.forward(seq, {});
    const auto nll = teacher_forced_nll(lm, seq, {});
    double mean = 0.0;
    for (std::size_t i = 1; i < seq.size(); ++i) {
        double z = 0.0;
        for (std::size_t v = 0; v < lg.cols; ++v) z += std::exp(lg(i - 1, v));
        const double want = -std::log(std::exp(lg(i - 1, seq.tokens[i])) / z);
        EXPECT_NEAR(nll[i - 1], want, 1e-12);
        mean += want;
    }
    mean /= static_cast<double>(seq.size() - 1);
    EXPECT_NEAR(lm_loss_and_grad(lm, seq, Matrix(0, 8), false, nullptr), mean, 1e-12);
}

TEST(MicroLm, CfgMixExamples) {
    const std::vector<double> c{1.0, 0.0}, u{0.0, 1.0};
    EXPECT_EQ(cfg_mix(c, u, 2.0), (std::vector<double>{2.0, -1.0}));
    EXPECT_EQ(cfg_mix(c, u, 1.0), c);
    EXPECT_EQ(cfg_mix(c, u, 0.0), u);
    const std::vector<double> c2{1.0, -1.0}, u2{0.0, 0.0};
    EXPECT_EQ(cfg_mix(c2, u2, 2.0), (std::vector<double>{2.0, -2.0}));
    EXPECT_THROW(cfg_mix(c, std::vector<double>{1.0}, 1.0), InvalidInputError);
}

TEST(MicroLm, CfgIdentitiesOnRandomPairs) {
    Rng rng(8);
    const auto s = verify::cfg_identities(500, rng);
    EXPECT_EQ(s.w1_mismatch, 0u);
    EXPECT_EQ(s.w0_mismatch, 0u);
    EXPECT_EQ(s.argmax_mismatch, 0u);
}

TEST(MicroLm, SampleToken) {
    Rng rng(9);
    const std::vector<double> lg{0.1, 3.0, -2.0, 2.9};
    SamplerConfig greedy;
    greedy.temperature = 0.0;
    EXPECT_EQ(sample_token(lg, greedy, rng), 1u);
    SamplerConfig top2;
    top2.top_k = 2;
    for (int i = 0; i < 500; ++i) {
        const auto t = sample_token(lg, top2, rng);
        EXPECT_TRUE(t == 1 || t == 3);
    }
    SamplerConfig top1;
    top1.top_k = 1;
    EXPECT_EQ(sample_token(lg, top1, rng), 1u);
    // Frequencies follow the softmax.
    SamplerConfig full;
    full.top_k.reset();
    const std::vector<double> two{0.0, std::log(3.0)};
    std::size_t ones = 0;
    for (int i = 0; i < 20000; ++i) ones += sample_token(two, full, rng);
    EXPECT_NEAR(static_cast<double>(ones) / 20000.0, 0.75, 0.015);
    SamplerConfig bad;
    bad.top_k = 0;
    EXPECT_THROW(sample_token(lg, bad, rng), InvalidInputError);
    EXPECT_THROW(sample_token(std::vector<double>{}, greedy, rng), InvalidInputError);
}

TEST(MicroLm, SampleIsDeterministicPerSeed) {
    Rng rng(10);
    MicroLm lm(tiny(true));
    randomize(lm, rng);
    ConditioningPrefix p;
    p.embeddings = testutil::random_matrix(1, 8, rng);
    p.track_duration_s = 10.0;
    SamplerConfig sc;
    sc.guidance_scale = 2.0;
    sc.seed = 42;
    const TokenGrid a = sample(lm, p, sc, 3), b = sample(lm, p, sc, 3);
    EXPECT_EQ(a, b);
    EXPECT_EQ(a.frames, 3u);
    EXPECT_EQ(a.bands, 3u);
    EXPECT_NO_THROW(a.validate());
}

TEST(MicroLm, SegmentTimeEncoding) {
    const Matrix z = encode_segment_time(0.0, 5.0, 4);
    EXPECT_EQ(z(0, 0), 0.0);
    EXPECT_EQ(z(0, 1), 1.0);
    EXPECT_EQ(z(0, 2), 0.0);
    EXPECT_EQ(z(0, 3), 1.0);
    const Matrix one = encode_segment_time(1.0, 2.0, 2, 1.0, 1.0);
    EXPECT_DOUBLE_EQ(one(0, 0), std::sin(1.0));
    EXPECT_DOUBLE_EQ(one(0, 1), std::cos(1.0));
    EXPECT_DOUBLE_EQ(one(1, 0), std::sin(2.0));
    // Distinct starts give distinct rows.
    const Matrix a = encode_segment_time(1.0, 60.0, 16), b = encode_segment_time(1.5, 60.0, 16);
    double diff = 0.0;
    for (std::size_t e = 0; e < 16; ++e) diff += std::abs(a(0, e) - b(0, e));
    EXPECT_GT(diff, 1e-3);
    EXPECT_THROW(encode_segment_time(-1.0, 5.0, 4), InvalidInputError);
    EXPECT_THROW(encode_segment_time(6.0, 5.0, 4), InvalidInputError);
    EXPECT_THROW(encode_segment_time(1.0, 5.0, 3), InvalidInputError);
}

TEST(MicroLm, ConfigValidation) {
    MicroLmConfig c = tiny();
    c.rope = RopeConfig::one_d(4);
    EXPECT_THROW(MicroLm{c}, ConfigError);
    c = tiny();
    c.n_heads = 3;
    EXPECT_THROW(MicroLm{c}, ConfigError);
}

TEST(MicroLm, TrainingReducesNll) {
    Rng rng(11);
    MicroLm lm(tiny());
    lm.init(rng);
    std::vector<LmExample> corpus;
    for (std::size_t i = 0; i < 8; ++i) {
        TokenGrid g{{0, 1, 2, 1, 2, 3, 2, 3, 4}, 3, 3, 5, 0.0};
        for (auto& v : g.indices) v = (v + static_cast<std::uint32_t>(i)) % 5;
        corpus.push_back({make_lm_sequence(0, g, lm.config().vocab), {}});
    }
    const double before = corpus_nll(lm, corpus);
    LmTrainConfig tc;
    tc.steps = 60;
    tc.adam.lr = 1e-2;
    tc.adam.schedule.warmup = 0.0;
    const auto log = train_lm(lm, corpus, tc);
    ASSERT_EQ(log.size(), 60u);
    EXPECT_NEAR(log.front().nll, before, 1e-9 + 0.5 * before);  // step 0 may see null dropout
    EXPECT_LT(corpus_nll(lm, corpus), 0.5 * before);
}
