#include "bandtok/params.hpp"

#include <cmath>
#include <functional>
#include <numeric>

#include "bandtok/common.hpp"

namespace bandtok {

std::size_t ParamSet::add(std::string name, std::vector<std::size_t> shape, double fill) {
    if (find(name)) throw ConfigError("duplicate parameter name: " + name);
    const std::size_t n = std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
    params_.push_back(Param{std::move(name), std::move(shape), std::vector<double>(n, fill)});
    return params_.size() - 1;
}

std::size_t ParamSet::total_size() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.size();
    return n;
}

std::optional<std::size_t> ParamSet::find(const std::string& name) const {
    for (std::size_t i = 0; i < params_.size(); ++i)
        if (params_[i].name == name) return i;
    return std::nullopt;
}

const Param& ParamSet::get(const std::string& name) const {
    auto i = find(name);
    if (!i) throw FormatError("missing parameter tensor: " + name);
    return params_[*i];
}

Param& ParamSet::get(const std::string& name) {
    auto i = find(name);
    if (!i) throw FormatError("missing parameter tensor: " + name);
    return params_[*i];
}

ParamSet ParamSet::zeros_like() const {
    ParamSet out = *this;
    out.fill(0.0);
    return out;
}

void ParamSet::fill(double v) {
    for (auto& p : params_) std::fill(p.values.begin(), p.values.end(), v);
}

bool ParamSet::same_layout(const ParamSet& other) const {
    if (params_.size() != other.params_.size()) return false;
    for (std::size_t i = 0; i < params_.size(); ++i)
        if (params_[i].name != other.params_[i].name || params_[i].shape != other.params_[i].shape) return false;
    return true;
}

void ParamSet::init_uniform(std::size_t index, std::size_t fan_in, Rng& rng) {
    const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& v : params_[index].values) v = rng.uniform(-s, s);
}

void ParamSet::add_scaled(const ParamSet& other, double scale) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& dst = params_[i].values;
        const auto& src = other.params_[i].values;
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += scale * src[j];
    }
}

double ParamSet::l2_norm() const {
    double s = 0.0;
    for (const auto& p : params_)
        for (double v : p.values) s += v * v;
    return std::sqrt(s);
}

bool ParamSet::all_finite() const {
    for (const auto& p : params_)
        for (double v : p.values)
            if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace bandtok
