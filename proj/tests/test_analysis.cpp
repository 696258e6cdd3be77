#include <gtest/gtest.h>

#include <cmath>

#include "bandtok/analysis.hpp"
#include "bandtok/pipeline.hpp"
#include "bandtok/verify.hpp"
#include "test_util.hpp"

using namespace bandtok;

TEST(Entropy, MatchesHandValues) {
    EXPECT_DOUBLE_EQ(entropy_from_counts({5, 5}), std::log(2.0));
    EXPECT_EQ(entropy_from_counts({7}), 0.0);
    EXPECT_EQ(entropy_from_counts({0, 3, 0}), 0.0);
    const double want = -(0.5 * std::log(0.5) + 2 * 0.25 * std::log(0.25));
    EXPECT_NEAR(entropy_from_counts({2, 1, 1}), want, 1e-15);
    const std::vector<std::uint32_t> a{0, 0, 1, 1}, b{0, 1, 0, 1};
    EXPECT_NEAR(column_entropy(a), std::log(2.0), 1e-15);
    EXPECT_NEAR(joint_entropy(a, b), std::log(4.0), 1e-15);
}

TEST(Nmi, IdenticalColumnsGiveExactlyOne) {
    const std::vector<std::uint32_t> a{3, 1, 4, 1, 5, 9, 2, 6, 5, 3};
    EXPECT_EQ(nmi_pair(a, a), 1.0);
    // Injective relabelling keeps full information.
    std::vector<std::uint32_t> f(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) f[i] = 100 - a[i] * 7;
    EXPECT_NEAR(nmi_pair(a, f), 1.0, 1e-12);
    const std::vector<std::uint32_t> flat(10, 4);
    EXPECT_EQ(nmi_pair(a, flat), 0.0);
}

TEST(Nmi, MatrixProperties) {
    Rng rng(1);
    const auto s = verify::nmi_properties(20000, rng);
    EXPECT_EQ(s.identical, 1.0);
    EXPECT_LT(s.independent, 0.01);
    EXPECT_EQ(s.max_asymmetry, 0.0);
    EXPECT_EQ(s.range_violation, 0.0);
}

TEST(Nmi, DegenerateColumnsAndLabels) {
    // Two axes; axis 1 constant.
    const std::vector<std::uint32_t> samples{0, 7, 1, 7, 2, 7, 0, 7};
    const NmiMatrix m = nmi(samples, 2, {"x", "y"});
    EXPECT_EQ(m.values(0, 0), 1.0);
    EXPECT_EQ(m.values(1, 1), 1.0);
    EXPECT_EQ(m.values(0, 1), 0.0);
    EXPECT_EQ(m.labels[1], "y");
    EXPECT_THROW(nmi(samples, 3), InvalidInputError);
}

TEST(Nmi, BandNmiOnCopyCorpus) {
    Rng rng(2);
    const auto grids = synthetic_copy_corpus(40, 8, 4, 16, 0, 2, rng);
    const NmiMatrix m = band_nmi(grids);
    ASSERT_EQ(m.values.rows, 4u);
    EXPECT_EQ(m.labels[0], "band0");
    double best = 0.0;
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j)
            if (i != j) best = std::max(best, m.values(i, j));
    EXPECT_NEAR(best, 1.0, 1e-12);  // the copied pair
}

TEST(Profile, Normalization) {
    const std::vector<double> raw{2.0, 4.0, 6.0};
    EXPECT_EQ(normalize_profile(raw), (std::vector<double>{0.0, 0.5, 1.0}));
    const std::vector<double> flat{3.0, 3.0, 3.0 * (1 + 1e-12)};
    EXPECT_EQ(normalize_profile(flat), (std::vector<double>{0.0, 0.0, 0.0}));
}

TEST(Usage, Statistics) {
    const std::vector<std::uint32_t> uni{0, 1, 2, 3, 0, 1, 2, 3};
    UsageStats u = usage_stats(uni, 4);
    EXPECT_NEAR(u.perplexity, 4.0, 1e-12);
    EXPECT_EQ(u.dead, 0u);
    const std::vector<std::uint32_t> same(10, 2);
    u = usage_stats(same, 4);
    EXPECT_NEAR(u.perplexity, 1.0, 1e-15);
    EXPECT_EQ(u.dead, 3u);
    EXPECT_EQ(u.counts, (std::vector<std::uint64_t>{0, 0, 10, 0}));
    EXPECT_THROW(usage_stats(same, 2), InvalidInputError);
}

TEST(Ppl, UniformModelGivesVocabularySize) {
    MicroLmConfig c;
    c.vocab = VocabLayout{0, 2, 6};
    c.bands = 3;
    c.d_model = 8;
    c.n_heads = 1;
    c.n_layers = 1;
    c.d_hidden = 8;
    c.rope = RopeConfig::split_2d(8);
    c.use_segment_time = false;
    const MicroLm lm(c);  // zero output layer: uniform over 8 ids
    Rng rng(3);
    const auto corpus = synthetic_band_corpus(5, 3, 3, 6, rng);
    const PplProfile p = ppl_profile(lm, corpus);
    ASSERT_EQ(p.raw_ppl.size(), 3u);
    for (double v : p.raw_ppl) EXPECT_NEAR(v, 8.0, 1e-10);
    for (double v : p.normalized) EXPECT_EQ(v, 0.0);
    EXPECT_EQ(ppl_profile(lm, corpus).raw_ppl, p.raw_ppl);
}

TEST(Ppl, CopiedBandIsEasiest) {
    // Held-out grids from the same generator, so memorizing the training set does not help.
    Rng rng(4);
    const auto train = synthetic_copy_corpus(48, 4, 4, 8, 0, 2, rng);
    const auto held_out = synthetic_copy_corpus(32, 4, 4, 8, 0, 2, rng);
    RunConfig cfg;
    cfg.lm_train.steps = 200;
    cfg.lm_train.adam.lr = 1e-2;
    cfg.lm_train.adam.schedule.warmup = 0.0;
    const MicroLm lm = train_lm_on_grids(train, cfg, 5);
    const PplProfile p = ppl_profile(lm, held_out, make_prefix("", cfg.lm.caption_rows, cfg.lm.d_model, 0.0, 1.0));
    ASSERT_EQ(p.raw_ppl.size(), 4u);
    const auto lo = static_cast<std::size_t>(std::min_element(p.raw_ppl.begin(), p.raw_ppl.end()) - p.raw_ppl.begin());
    EXPECT_EQ(lo, 2u);  // the copied band
    EXPECT_EQ(p.normalized[lo], 0.0);
    EXPECT_LT(p.raw_ppl[lo], 0.5 * *std::max_element(p.raw_ppl.begin(), p.raw_ppl.end()));
}

TEST(Render, CsvAndJson) {
    Matrix m(2, 2);
    m(0, 0) = 1.0;
    m(0, 1) = 0.25;
    m(1, 0) = 0.25;
    m(1, 1) = 1.0;
    const std::string csv = matrix_to_csv(m, {"a", "b"});
    EXPECT_NE(csv.find("a"), std::string::npos);
    EXPECT_NE(csv.find("0.25"), std::string::npos);
    const auto j = nmi_to_json(NmiMatrix{m, {"a", "b"}});
    EXPECT_EQ(j.dump().find("nan"), std::string::npos);
    EXPECT_FALSE(render_heat_table(m, {"a", "b"}).empty());
}
