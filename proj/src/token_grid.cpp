#include "bandtok/token_grid.hpp"

#include <string>

#include "bandtok/common.hpp"

namespace bandtok {

double latent_frame_rate(int sample_rate_hz, int hop, int downsample) {
    return static_cast<double>(sample_rate_hz) / hop / downsample;
}

void TokenGrid::validate() const {
    if (bands == 0) throw InvalidInputError("token grid: band count must be positive");
    if (indices.size() != frames * bands) throw InvalidInputError("token grid: index count does not match shape");
    if (codebook_size == 0) return;
    for (auto i : indices)
        if (i >= codebook_size)
            throw InvalidInputError("token grid: index " + std::to_string(i) + " >= codebook size " +
                                    std::to_string(codebook_size));
}

std::vector<std::uint32_t> flatten_band_first(const TokenGrid& g) {
    std::vector<std::uint32_t> out(g.frames * g.bands);
    for (std::size_t t = 0; t < g.frames; ++t)
        for (std::size_t b = 0; b < g.bands; ++b) out[t * g.bands + b] = g.at(t, b);
    return out;
}

TokenGrid unflatten(std::span<const std::uint32_t> seq, std::size_t bands, std::uint32_t codebook_size,
                    double frame_rate_hz) {
    if (bands == 0) throw InvalidInputError("unflatten: band count must be positive");
    if (seq.size() % bands != 0)
        throw InvalidInputError("unflatten: length " + std::to_string(seq.size()) + " is not divisible by " +
                                std::to_string(bands) + " bands");
    TokenGrid g;
    g.bands = bands;
    g.frames = seq.size() / bands;
    g.codebook_size = codebook_size;
    g.frame_rate_hz = frame_rate_hz;
    g.indices.assign(seq.begin(), seq.end());
    g.validate();
    return g;
}

std::vector<PositionTriple> assign_positions(std::size_t text_len, std::size_t frames, std::size_t bands) {
    if (bands == 0) throw InvalidInputError("assign_positions: band count must be positive");
    std::vector<PositionTriple> pos;
    pos.reserve(text_len + frames * bands);
    for (std::size_t i = 0; i < text_len; ++i) {
        const auto p = static_cast<std::int64_t>(i);
        pos.push_back({p, p, 0});
    }
    const auto base = static_cast<std::int64_t>(text_len);
    for (std::size_t f = 0; f < frames; ++f)
        for (std::size_t b = 0; b < bands; ++b)
            pos.push_back({static_cast<std::int64_t>(pos.size()), base + static_cast<std::int64_t>(f),
                           static_cast<std::int64_t>(b) + 1});
    return pos;
}

PositionedSequence make_lm_sequence(std::size_t prefix_rows, std::span<const std::uint32_t> audio_codes,
                                    std::size_t bands, const VocabLayout& vocab) {
    if (bands == 0) throw InvalidInputError("make_lm_sequence: band count must be positive");
    const std::size_t frames = ceil_div(audio_codes.size(), bands);
    // Text-like span: prefix rows plus the BOS token.
    auto all = assign_positions(prefix_rows + 1, frames, bands);
    PositionedSequence s;
    s.prefix_rows = prefix_rows;
    s.bands = bands;
    s.tokens.push_back(vocab.bos());
    s.kinds.push_back(TokenKind::special);
    for (auto code : audio_codes) {
        if (code >= vocab.audio_size) throw InvalidInputError("make_lm_sequence: audio code out of range");
        s.tokens.push_back(vocab.audio_offset() + code);
        s.kinds.push_back(TokenKind::audio);
    }
    s.positions.assign(all.begin() + static_cast<std::ptrdiff_t>(prefix_rows),
                       all.begin() + static_cast<std::ptrdiff_t>(prefix_rows + s.tokens.size()));
    return s;
}

PositionedSequence make_lm_sequence(std::size_t prefix_rows, const TokenGrid& grid, const VocabLayout& vocab) {
    grid.validate();
    const auto flat = flatten_band_first(grid);
    return make_lm_sequence(prefix_rows, flat, grid.bands, vocab);
}

}  // namespace bandtok
