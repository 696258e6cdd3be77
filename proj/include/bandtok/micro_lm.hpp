#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "bandtok/common.hpp"
#include "bandtok/optim.hpp"
#include "bandtok/params.hpp"
#include "bandtok/rng.hpp"
#include "bandtok/rope.hpp"
#include "bandtok/token_grid.hpp"

namespace bandtok {

// Decoder-only transformer: pre-RMSNorm blocks of multi-head causal attention
// (with multi-axis RoPE on queries and keys) and a GELU feed-forward layer.
// Conditioning embeddings are prepended to the token stream as extra rows.
struct MicroLmConfig {
    VocabLayout vocab{0, 2, 64};
    std::size_t bands = 16;      // tokens per audio frame
    std::size_t d_model = 32;
    std::size_t n_layers = 2;
    std::size_t n_heads = 2;
    std::size_t d_hidden = 64;
    RopeConfig rope = RopeConfig::split_2d(16);
    double norm_eps = 1e-6;
    bool use_segment_time = true;
    double null_prefix_prob = 0.1;  // CFG condition dropout during training
    double time_freq_lo = 1e-2;     // segment-time sinusoid frequency range (rad/s)
    double time_freq_hi = 1e2;

    std::size_t head_dim() const { return n_heads ? d_model / n_heads : 0; }
    void validate() const;
    bool operator==(const MicroLmConfig&) const = default;
};

// Stand-in for text-encoder output plus the numerical segment-time conditions.
struct ConditioningPrefix {
    Matrix embeddings;  // P × d_model
    double segment_start_s = 0.0;
    double track_duration_s = 1.0;
    bool null_flag = false;
};

// Sinusoidal encoding of start and duration: row 0 encodes start_s, row 1
// duration_s. Each row is [sin(w_0 x), cos(w_0 x), sin(w_1 x), ...] with d/2
// frequencies geometrically spaced over [freq_lo, freq_hi] (a single frequency
// uses their geometric mean).
Matrix encode_segment_time(double start_s, double duration_s, std::size_t d, double freq_lo = 1e-2,
                           double freq_hi = 1e2);

class MicroLm {
public:
    struct LayerCache {
        Matrix x, n1, q, k, v;       // q and k are post-rotation
        std::vector<Matrix> attn;    // per head, N × N (row i valid for j <= i)
        Matrix o, x1, n2, h, g;
    };
    struct Cache {
        std::size_t prefix = 0;
        std::size_t n = 0;
        std::vector<std::uint32_t> tokens;
        std::vector<RopePosition> positions;
        bool null_prefix = false;
        std::vector<LayerCache> layers;
        Matrix x_final, n_final;
    };

    explicit MicroLm(MicroLmConfig cfg = {});
    MicroLm(MicroLmConfig cfg, const ParamSet& params);

    void init(Rng& rng);

    const MicroLmConfig& config() const { return cfg_; }
    const ParamSet& params() const { return params_; }
    ParamSet& params() { return params_; }

    // Rows prepended to the token stream (near-null rows when prefix.null_flag).
    Matrix prefix_rows(const ConditioningPrefix& prefix) const;

    // L × V logits; row i scores the token at position i+1.
    Matrix forward(const PositionedSequence& seq, const ConditioningPrefix& prefix, Cache* cache = nullptr) const;
    Matrix forward_rows(const PositionedSequence& seq, const Matrix& prefix_rows, bool null_prefix,
                        Cache* cache = nullptr) const;

    // Accumulates d(loss)/d(params) into `grads` given d(loss)/d(logits).
    void backward(const Cache& cache, const Matrix& dlogits, ParamSet& grads) const;

private:
    struct LayerIdx {
        std::size_t attn_norm, wq, wk, wv, wo, ffn_norm, w1, b1, w2, b2;
    };

    void build_layout();

    MicroLmConfig cfg_;
    ParamSet params_;
    std::size_t embed_ = 0, null_ = 0, final_norm_ = 0, out_ = 0, out_bias_ = 0;
    std::vector<LayerIdx> layers_;
    std::vector<RopePair> rope_layout_;
};

// nll[i-1] = -log softmax(logits[i-1])[token[i]] for i = 1..L-1.
std::vector<double> teacher_forced_nll(const MicroLm& lm, const PositionedSequence& seq,
                                       const ConditioningPrefix& prefix);
double perplexity(std::span<const double> nll);

// w*cond + (1-w)*uncond, algebraically uncond + w*(cond - uncond). This form
// returns cond exactly at w = 1 and uncond exactly at w = 0.
std::vector<double> cfg_mix(std::span<const double> cond, std::span<const double> uncond, double w);

struct SamplerConfig {
    double guidance_scale = 1.0;
    double temperature = 1.0;  // 0 selects greedy argmax decoding
    std::optional<std::size_t> top_k = 64;
    std::uint64_t seed = 0;
};

// Draws one index from `logits` (temperature, optional top-k, inverse CDF in index order).
std::size_t sample_token(std::span<const double> logits, const SamplerConfig& cfg, Rng& rng);

// Autoregressive band-first generation of max_frames × bands audio tokens with
// two forward passes per step (conditional and near-null prefix).
TokenGrid sample(const MicroLm& lm, const ConditioningPrefix& prefix, const SamplerConfig& cfg,
                 std::size_t max_frames, double frame_rate_hz = 0.0);

struct LmExample {
    PositionedSequence seq;
    ConditioningPrefix prefix;
};

struct LmTrainConfig {
    std::size_t steps = 300;
    AdamConfig adam{};
    std::uint64_t seed = 0;
};

struct LmStepLog {
    std::size_t step;
    double nll;        // mean teacher-forced NLL before the update
    double grad_norm;
};

// Mean NLL over positions 1..L-1 of one sequence; accumulates its gradient
// scaled by `grad_scale` into grads when given.
double lm_loss_and_grad(const MicroLm& lm, const PositionedSequence& seq, const Matrix& prefix_rows, bool null_prefix,
                        ParamSet* grads, double grad_scale = 1.0);

// Full-batch Adam over the corpus. Returns the per-step log.
std::vector<LmStepLog> train_lm(MicroLm& lm, const std::vector<LmExample>& corpus, const LmTrainConfig& cfg,
                                const std::function<void(const LmStepLog&)>& on_step = {});

// Mean teacher-forced NLL over a corpus (conditional prefixes, no dropout).
double corpus_nll(const MicroLm& lm, const std::vector<LmExample>& corpus);

}  // namespace bandtok
