#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "bandtok/dsp.hpp"
#include "bandtok/latent_codec.hpp"
#include "bandtok/micro_lm.hpp"
#include "bandtok/spectral_losses.hpp"
#include "bandtok/tokenizer_train.hpp"
#include "bandtok/vq.hpp"

namespace bandtok {

enum class RopeMode { two_d, one_d };

struct RopeSection {
    RopeMode mode = RopeMode::two_d;
    double base_theta = 10000.0;
    bool interleaved = true;
    bool operator==(const RopeSection&) const = default;
};

struct LmSection {
    std::size_t d_model = 32;
    std::size_t n_layers = 2;
    std::size_t n_heads = 2;
    std::size_t d_hidden = 64;
    double norm_eps = 1e-6;
    bool use_segment_time = true;
    double null_prefix_prob = 0.1;
    double time_freq_lo = 1e-2;
    double time_freq_hi = 1e2;
    std::size_t caption_rows = 4;  // rows of the stand-in text embedding
    bool operator==(const LmSection&) const = default;
};

struct LmTrainSection {
    std::size_t steps = 300;
    AdamConfig adam{};
};

struct TokenizerTrainSection {
    std::size_t steps = 200;
    std::size_t batch_size = 1;
    bool multi_scale_critic = true;
    bool codebook_loss = false;
    double codebook_loss_weight = 1.0;
    AdamConfig generator_adam = tokenizer_adam_defaults();
    AdamConfig critic_adam = tokenizer_adam_defaults();
    std::size_t segment_frames = 64;  // training crop length in Mel frames
};

struct SamplerSection {
    double guidance_scale = 1.0;
    double temperature = 1.0;
    std::optional<std::size_t> top_k = 64;
    std::size_t max_frames = 11;
    bool operator==(const SamplerSection&) const = default;
};

struct CodebookSection {
    CodebookConfig book{};
    std::size_t residual_depth = 4;
    bool operator==(const CodebookSection&) const = default;
};

struct RunConfig {
    std::uint64_t seed = 0;
    FrontendConfig frontend{};
    CodecConfig codec{};
    CodebookSection codebook{};
    RopeSection rope{};
    LmSection lm{};
    LmTrainSection lm_train{};
    LossWeights loss{};
    CriticConfig critic{};
    TokenizerTrainSection tokenizer_train{};
    SamplerSection sampler{};

    // Field-wise equality through the serialized form.
    bool operator==(const RunConfig&) const;

    // Model configuration for an audio vocabulary of `audio_size` codes and `bands` tokens per frame.
    MicroLmConfig lm_config(std::uint32_t audio_size, std::size_t bands) const;
    TokenizerTrainConfig tokenizer_train_config() const;
};

nlohmann::json to_json(const RunConfig& c);
// Missing keys keep their defaults; unknown keys and wrong types throw ConfigError.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
std::string serialize_run_config(const RunConfig& c);

}  // namespace bandtok
