#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace bandtok {

// Latent frame rate for the default frontend: 44100 / 512 / 8 ≈ 10.77 Hz.
double latent_frame_rate(int sample_rate_hz = 44100, int hop = 512, int downsample = 8);

// T' × B grid of code indices; band 0 is the lowest Mel band.
struct TokenGrid {
    std::vector<std::uint32_t> indices;  // row-major (frame, band)
    std::size_t frames = 0;
    std::size_t bands = 0;
    std::uint32_t codebook_size = 0;
    double frame_rate_hz = 0.0;

    std::uint32_t at(std::size_t t, std::size_t b) const { return indices[t * bands + b]; }
    // Throws InvalidInputError when an index is >= codebook_size or the shape is inconsistent.
    void validate() const;

    bool operator==(const TokenGrid&) const = default;
};

// Element t*B + b of the output is indices[t, b].
std::vector<std::uint32_t> flatten_band_first(const TokenGrid& g);
TokenGrid unflatten(std::span<const std::uint32_t> seq, std::size_t bands, std::uint32_t codebook_size = 0,
                    double frame_rate_hz = 0.0);

enum class TokenKind : std::uint8_t { text, special, audio };

struct PositionTriple {
    std::int64_t token = 0;
    std::int64_t time = 0;
    std::int64_t band = 0;

    bool operator==(const PositionTriple&) const = default;
};

// Text-like tokens: (i, i, 0). Audio frame f, band b (0-based):
// (text_len + f*B + b, text_len + f, b + 1).
std::vector<PositionTriple> assign_positions(std::size_t text_len, std::size_t frames, std::size_t bands);

// Unified LM vocabulary: [text | special | audio].
struct VocabLayout {
    std::uint32_t text_size = 0;
    std::uint32_t special_size = 2;
    std::uint32_t audio_size = 0;

    static constexpr std::uint32_t kBosAudio = 0;  // special ids, relative to special_offset()
    static constexpr std::uint32_t kEndAudio = 1;

    std::uint32_t special_offset() const { return text_size; }
    std::uint32_t audio_offset() const { return text_size + special_size; }
    std::uint32_t total() const { return text_size + special_size + audio_size; }
    std::uint32_t bos() const { return special_offset() + kBosAudio; }

    bool operator==(const VocabLayout&) const = default;
};

// Token stream for the LM. Positions already account for `prefix_rows`
// conditioning embeddings that precede the tokens (they occupy text-like
// positions 0..prefix_rows-1).
struct PositionedSequence {
    std::vector<std::uint32_t> tokens;
    std::vector<PositionTriple> positions;
    std::vector<TokenKind> kinds;
    std::size_t prefix_rows = 0;
    std::size_t bands = 0;

    std::size_t size() const { return tokens.size(); }
};

// [BOS] followed by the band-first flattened grid (audio ids shifted into the
// unified vocabulary).
PositionedSequence make_lm_sequence(std::size_t prefix_rows, const TokenGrid& grid, const VocabLayout& vocab);

// Prefix rows + BOS + `frames` audio frames; used while sampling.
PositionedSequence make_lm_sequence(std::size_t prefix_rows, std::span<const std::uint32_t> audio_codes,
                                    std::size_t bands, const VocabLayout& vocab);

}  // namespace bandtok
