#include <gtest/gtest.h>

#include <cstdio>
#include <string>

#include "bandtok/token_grid.hpp"
#include "test_util.hpp"

using namespace bandtok;

TEST(TokenGrid, FlattenBandFirst) {
    const TokenGrid g{{5, 7, 1, 3}, 2, 2, 8, 0.0};
    EXPECT_EQ(flatten_band_first(g), (std::vector<std::uint32_t>{5, 7, 1, 3}));
    const TokenGrid one{{9}, 1, 1, 10, 0.0};
    EXPECT_EQ(flatten_band_first(one), (std::vector<std::uint32_t>{9}));
}

TEST(TokenGrid, Unflatten) {
    const std::vector<std::uint32_t> seq{5, 7, 1, 3};
    const TokenGrid g = unflatten(seq, 2);
    EXPECT_EQ(g.frames, 2u);
    EXPECT_EQ(g.at(0, 0), 5u);
    EXPECT_EQ(g.at(0, 1), 7u);
    EXPECT_EQ(g.at(1, 0), 1u);
    EXPECT_EQ(g.at(1, 1), 3u);
    const std::vector<std::uint32_t> five{1, 2, 3, 4, 5};
    EXPECT_THROW(unflatten(five, 2), InvalidInputError);
    EXPECT_THROW(unflatten(seq, 0), InvalidInputError);
}

TEST(TokenGrid, RoundTripFuzz) {
    Rng rng(1);
    for (int t = 0; t < 1000; ++t) {
        TokenGrid g;
        g.frames = 1 + rng.below(20);
        g.bands = 1 + rng.below(20);
        g.codebook_size = 1 + static_cast<std::uint32_t>(rng.below(100));
        g.indices.resize(g.frames * g.bands);
        for (auto& v : g.indices) v = static_cast<std::uint32_t>(rng.below(g.codebook_size));
        const auto seq = flatten_band_first(g);
        for (std::size_t f = 0; f < g.frames; ++f)
            for (std::size_t b = 0; b < g.bands; ++b) ASSERT_EQ(seq[f * g.bands + b], g.at(f, b));
        ASSERT_EQ(unflatten(seq, g.bands, g.codebook_size), g);
    }
}

TEST(TokenGrid, ValidateRejectsOutOfRangeCodes) {
    TokenGrid g{{0, 4}, 1, 2, 4, 0.0};
    EXPECT_THROW(g.validate(), InvalidInputError);
    g.indices[1] = 3;
    EXPECT_NO_THROW(g.validate());
    g.frames = 2;
    EXPECT_THROW(g.validate(), InvalidInputError);
}

TEST(TokenGrid, PositionsInterleavedPattern) {
    const auto p = assign_positions(2, 2, 3);
    ASSERT_EQ(p.size(), 8u);
    const std::int64_t time[] = {0, 1, 2, 2, 2, 3, 3, 3};
    const std::int64_t band[] = {0, 0, 1, 2, 3, 1, 2, 3};
    for (std::size_t i = 0; i < 8; ++i) {
        EXPECT_EQ(p[i].token, static_cast<std::int64_t>(i));
        EXPECT_EQ(p[i].time, time[i]);
        EXPECT_EQ(p[i].band, band[i]);
    }
}

TEST(TokenGrid, PositionsEdgeCases) {
    const auto single = assign_positions(0, 1, 1);
    ASSERT_EQ(single.size(), 1u);
    EXPECT_EQ(single[0], (PositionTriple{0, 0, 1}));
    for (const auto& p : assign_positions(5, 0, 4)) EXPECT_EQ(p.band, 0);
    EXPECT_EQ(assign_positions(5, 0, 4).size(), 5u);
}

TEST(TokenGrid, LatentFrameRate) {
    EXPECT_NEAR(latent_frame_rate(), 44100.0 / 512.0 / 8.0, 1e-12);
    char buf[16];
    std::snprintf(buf, sizeof buf, "%.2f", latent_frame_rate());
    EXPECT_EQ(std::string(buf), "10.77");
}

TEST(TokenGrid, LmSequenceLayout) {
    const VocabLayout vocab{0, 2, 10};
    EXPECT_EQ(vocab.total(), 12u);
    EXPECT_EQ(vocab.bos(), 0u);
    EXPECT_EQ(vocab.audio_offset(), 2u);
    const TokenGrid g{{5, 7, 1, 3, 0, 9}, 2, 3, 10, 0.0};
    const PositionedSequence s = make_lm_sequence(4, g, vocab);
    EXPECT_EQ(s.tokens, (std::vector<std::uint32_t>{0, 7, 9, 3, 5, 2, 11}));
    ASSERT_EQ(s.positions.size(), 7u);
    EXPECT_EQ(s.prefix_rows, 4u);
    EXPECT_EQ(s.bands, 3u);
    // BOS sits at the first text-like slot after the prefix rows.
    EXPECT_EQ(s.positions[0], (PositionTriple{4, 4, 0}));
    EXPECT_EQ(s.positions[1], (PositionTriple{5, 5, 1}));
    EXPECT_EQ(s.positions[3], (PositionTriple{7, 5, 3}));
    EXPECT_EQ(s.positions[4], (PositionTriple{8, 6, 1}));
    EXPECT_EQ(s.kinds[0], TokenKind::special);
    EXPECT_EQ(s.kinds[6], TokenKind::audio);
}
