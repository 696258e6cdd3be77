#include "bandtok/optim.hpp"

#include <algorithm>
#include <cmath>

#include "bandtok/common.hpp"

namespace bandtok {

double InverseLrSchedule::lr_at(double base_lr, std::size_t step) const {
    const double s = static_cast<double>(step);
    const double warm = 1.0 - std::pow(warmup, s + 1.0);
    const double decay = std::pow(1.0 + s / inv_gamma, -power);
    return warm * std::max(min_lr, base_lr * decay);
}

Adam::Adam(const ParamSet& layout, AdamConfig cfg)
    : cfg_(cfg), m_(layout.zeros_like()), v_(layout.zeros_like()) {}

void Adam::step(ParamSet& params, const ParamSet& grads) {
    if (!params.same_layout(m_) || !grads.same_layout(m_))
        throw InvalidInputError("Adam::step: parameter layout changed");
    const double lr = cfg_.schedule.lr_at(cfg_.lr, step_);
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (std::size_t i = 0; i < params.count(); ++i) {
        auto& p = params[i].values;
        const auto& g = grads[i].values;
        auto& m = m_[i].values;
        auto& v = v_[i].values;
        for (std::size_t j = 0; j < p.size(); ++j) {
            m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
            v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            if (cfg_.weight_decay != 0.0) p[j] -= lr * cfg_.weight_decay * p[j];
            p[j] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

}  // namespace bandtok
