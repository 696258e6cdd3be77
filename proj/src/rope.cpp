#include "bandtok/rope.hpp"

#include <cmath>
#include <string>

#include "bandtok/common.hpp"

namespace bandtok {

RopeConfig RopeConfig::split_2d(std::size_t head_dim, double base_theta) {
    const std::size_t pairs = head_dim / 2;
    const std::size_t quarter = pairs / 4;
    RopeConfig c;
    c.head_dim = head_dim;
    c.d_time = 2 * quarter;
    c.d_band = 2 * quarter;
    c.d_token = 2 * (pairs - 2 * quarter);
    c.base_theta = base_theta;
    return c;
}

RopeConfig RopeConfig::one_d(std::size_t head_dim, double base_theta) {
    RopeConfig c;
    c.head_dim = head_dim;
    c.d_token = head_dim;
    c.d_time = 0;
    c.d_band = 0;
    c.base_theta = base_theta;
    return c;
}

void RopeConfig::validate() const {
    if (head_dim == 0 || head_dim % 2 != 0) throw ConfigError("rope: head_dim must be even and positive");
    if (d_token % 2 || d_time % 2 || d_band % 2) throw ConfigError("rope: axis allocations must be even");
    if (d_token + d_time + d_band != head_dim)
        throw ConfigError("rope: axis allocation " + std::to_string(d_token) + "+" + std::to_string(d_time) + "+" +
                          std::to_string(d_band) + " does not sum to head_dim " + std::to_string(head_dim));
    if (!(base_theta > 0.0)) throw ConfigError("rope: base_theta must be positive");
}

std::vector<RopePair> rope_pair_layout(const RopeConfig& cfg) {
    cfg.validate();
    const std::size_t dims[3] = {cfg.d_token, cfg.d_time, cfg.d_band};
    std::size_t used[3] = {0, 0, 0};
    auto make = [&](std::size_t a) {
        const std::size_t rank = used[a]++;
        const double inv_freq = 1.0 / std::pow(cfg.base_theta, (2.0 * static_cast<double>(rank)) /
                                                                  static_cast<double>(dims[a]));
        return RopePair{static_cast<RopeAxis>(a), rank, inv_freq};
    };
    std::vector<RopePair> layout;
    const std::size_t pairs = cfg.head_dim / 2;
    layout.reserve(pairs);
    if (cfg.interleaved) {
        std::size_t a = 0;
        while (layout.size() < pairs) {
            if (2 * used[a] < dims[a]) layout.push_back(make(a));
            a = (a + 1) % 3;
        }
    } else {
        for (std::size_t a = 0; a < 3; ++a)
            while (2 * used[a] < dims[a]) layout.push_back(make(a));
    }
    return layout;
}

void rotate_inplace(std::span<double> v, const RopePosition& pos, std::span<const RopePair> layout, double sign) {
    for (std::size_t i = 0; i < layout.size(); ++i) {
        const double angle = sign * pos.on(layout[i].axis) * layout[i].inv_freq;
        const double c = std::cos(angle), s = std::sin(angle);
        const double x = v[2 * i], y = v[2 * i + 1];
        v[2 * i] = x * c - y * s;
        v[2 * i + 1] = x * s + y * c;
    }
}

std::vector<double> rotate(std::span<const double> v, const RopePosition& pos, const RopeConfig& cfg) {
    if (v.size() != cfg.head_dim)
        throw InvalidInputError("rotate: vector length " + std::to_string(v.size()) + " != head_dim " +
                                std::to_string(cfg.head_dim));
    const auto layout = rope_pair_layout(cfg);
    std::vector<double> out(v.begin(), v.end());
    rotate_inplace(out, pos, layout);
    return out;
}

double relative_score(std::span<const double> q, std::span<const double> k, const RopePosition& pq,
                      const RopePosition& pk, const RopeConfig& cfg) {
    if (q.size() != k.size()) throw InvalidInputError("relative_score: length mismatch");
    const auto rq = rotate(q, pq, cfg);
    const auto rk = rotate(k, pk, cfg);
    double s = 0.0;
    for (std::size_t i = 0; i < rq.size(); ++i) s += rq[i] * rk[i];
    return s;
}

}  // namespace bandtok
