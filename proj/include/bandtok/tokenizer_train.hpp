#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "bandtok/common.hpp"
#include "bandtok/latent_codec.hpp"
#include "bandtok/optim.hpp"
#include "bandtok/rng.hpp"
#include "bandtok/spectral_losses.hpp"
#include "bandtok/vq.hpp"

namespace bandtok {

inline AdamConfig tokenizer_adam_defaults() {
    AdamConfig a;
    a.lr = 2e-4;
    a.beta1 = 0.8;
    a.beta2 = 0.99;
    a.schedule = InverseLrSchedule{200000.0, 0.5, 0.999, 0.0};
    return a;
}

struct TokenizerTrainConfig {
    std::size_t steps = 200;
    std::size_t batch_size = 1;     // spectrograms per step, cycling through the corpus
    bool multi_scale_critic = true;  // false keeps only the first critic scale
    bool codebook_loss = false;      // true trains codes by gradient instead of EMA
    double codebook_loss_weight = 1.0;
    AdamConfig generator_adam = tokenizer_adam_defaults();
    AdamConfig critic_adam = tokenizer_adam_defaults();
    LossWeights weights{};
    std::uint64_t seed = 0;
};

struct TokenizerStepLog {
    std::size_t step = 0;
    LossBreakdown loss;  // batch mean; total includes the codebook-loss term when enabled
    double critic_loss = 0.0;
    double perplexity = 1.0;
};

// Codes drawn from distinct latent cells of the given spectrograms (random
// codes fill any shortfall).
Codebook init_codebook_from_data(const LatentCodec& codec, const std::vector<Matrix>& mels, std::size_t k,
                                 const CodebookConfig& cfg, Rng& rng);

// Critic matching the ablation switch: the configured scales, or only the first.
CriticConfig effective_critic_config(const CriticConfig& base, bool multi_scale);

// Desk-scale composite-loss training: codec and critic by Adam, codebook by EMA
// (or by the codebook loss when cfg.codebook_loss).
std::vector<TokenizerStepLog> train_tokenizer(LatentCodec& codec, Codebook& codebook, Critic& critic,
                                              const std::vector<Matrix>& mels, const TokenizerTrainConfig& cfg,
                                              const std::function<void(const TokenizerStepLog&)>& on_step = {});

}  // namespace bandtok
