#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "bandtok/rng.hpp"

namespace bandtok {

struct Param {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<double> values;

    std::size_t size() const { return values.size(); }
};

// Ordered collection of named tensors. Models address their tensors by the
// index returned from add(); the order is part of the checkpoint layout.
class ParamSet {
public:
    std::size_t add(std::string name, std::vector<std::size_t> shape, double fill = 0.0);

    Param& operator[](std::size_t i) { return params_[i]; }
    const Param& operator[](std::size_t i) const { return params_[i]; }

    std::size_t count() const { return params_.size(); }
    std::size_t total_size() const;

    std::optional<std::size_t> find(const std::string& name) const;
    const Param& get(const std::string& name) const;
    Param& get(const std::string& name);

    // Same names and shapes, all values zero.
    ParamSet zeros_like() const;
    void fill(double v);
    bool same_layout(const ParamSet& other) const;

    // Uniform in [-s, s] with s = 1/sqrt(fan_in).
    void init_uniform(std::size_t index, std::size_t fan_in, Rng& rng);

    void add_scaled(const ParamSet& other, double scale);
    double l2_norm() const;
    bool all_finite() const;

    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

private:
    std::vector<Param> params_;
};

}  // namespace bandtok
