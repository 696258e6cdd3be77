#pragma once

#include <cstddef>

#include "bandtok/params.hpp"

namespace bandtok {

// Inverse-power decay with exponential warmup:
//   factor(step) = (1 - warmup^(step+1)) * max(min_lr, lr * (1 + step/inv_gamma)^-power)
struct InverseLrSchedule {
    double inv_gamma = 1.0e6;
    double power = 0.5;
    double warmup = 0.999;
    double min_lr = 0.0;

    double lr_at(double base_lr, std::size_t step) const;
};

struct AdamConfig {
    double lr = 5e-5;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    double weight_decay = 0.0;  // decoupled (AdamW) when nonzero
    InverseLrSchedule schedule{};
};

class Adam {
public:
    Adam(const ParamSet& layout, AdamConfig cfg);

    // One update; `grads` must share the layout of `params`.
    void step(ParamSet& params, const ParamSet& grads);

    std::size_t steps_taken() const { return step_; }
    const AdamConfig& config() const { return cfg_; }

private:
    AdamConfig cfg_;
    ParamSet m_;
    ParamSet v_;
    std::size_t step_ = 0;
};

}  // namespace bandtok
