#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "bandtok/token_grid.hpp"

namespace bandtok {

enum class RopeAxis : std::uint8_t { token = 0, time = 1, band = 2 };

// Multi-axis rotary embedding. The head dimension is split into feature pairs;
// each pair belongs to one axis and rotates by position[axis] * inv_freq with
// inv_freq = 1 / base^(2*rank/d_axis), rank being the pair's index within its axis.
//
// Interleaved layout assigns pairs round-robin token, time, band, token, ...
// skipping axes whose allocation is exhausted. Block layout assigns all token
// pairs first, then time, then band.
struct RopeConfig {
    std::size_t head_dim = 16;
    std::size_t d_token = 8;
    std::size_t d_time = 4;
    std::size_t d_band = 4;
    double base_theta = 10000.0;
    bool interleaved = true;

    // (1/2, 1/4, 1/4) of the pairs, token axis receiving the remainder.
    static RopeConfig split_2d(std::size_t head_dim, double base_theta = 10000.0);
    // Everything on the token axis: standard 1D RoPE over the global index.
    static RopeConfig one_d(std::size_t head_dim, double base_theta = 10000.0);

    void validate() const;
    bool operator==(const RopeConfig&) const = default;
};

struct RopePosition {
    double token = 0.0;
    double time = 0.0;
    double band = 0.0;

    RopePosition() = default;
    RopePosition(double tok, double tim, double bnd) : token(tok), time(tim), band(bnd) {}
    RopePosition(const PositionTriple& p)  // NOLINT(google-explicit-constructor)
        : token(static_cast<double>(p.token)), time(static_cast<double>(p.time)), band(static_cast<double>(p.band)) {}

    double on(RopeAxis a) const { return a == RopeAxis::token ? token : a == RopeAxis::time ? time : band; }
};

struct RopePair {
    RopeAxis axis;
    std::size_t rank;
    double inv_freq;
};

// Axis, rank and frequency of every feature pair (head_dim / 2 entries).
std::vector<RopePair> rope_pair_layout(const RopeConfig& cfg);

std::vector<double> rotate(std::span<const double> v, const RopePosition& pos, const RopeConfig& cfg);

// In-place variants over a precomputed layout. `sign` = -1 applies the inverse
// (transpose) rotation, used by backpropagation.
void rotate_inplace(std::span<double> v, const RopePosition& pos, std::span<const RopePair> layout, double sign = 1.0);

double relative_score(std::span<const double> q, std::span<const double> k, const RopePosition& pq,
                      const RopePosition& pk, const RopeConfig& cfg);

}  // namespace bandtok
