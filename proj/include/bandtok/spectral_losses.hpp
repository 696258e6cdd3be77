#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "bandtok/common.hpp"
#include "bandtok/dsp.hpp"
#include "bandtok/kernels.hpp"
#include "bandtok/params.hpp"
#include "bandtok/rng.hpp"
#include "bandtok/vq.hpp"

namespace bandtok {

struct LossWeights {
    double rec = 5.0;
    double perc = 1.0;
    double adv = 1.0;
    double fm = 5.0;
    double commit = 2.5;

    void validate() const;
    bool operator==(const LossWeights&) const = default;
};

// Bilinear resize with half-pixel centres (source = (dst + 0.5) / scale - 0.5,
// clamped to the edge). Output dims are max(1, round(dim * scale)).
Matrix resize_bilinear(const Matrix& m, double scale);
// Adjoint of resize_bilinear for an input of shape rows × cols.
Matrix resize_bilinear_backward(const Matrix& grad_out, std::size_t rows, std::size_t cols, double scale);
std::size_t resized_dim(std::size_t dim, double scale);

// PatchGAN stack shared by every scale (independent weights per scale).
struct CriticConfig {
    std::vector<std::size_t> channels{16, 32, 64, 1};  // last entry is the score map
    std::size_t kernel = 4;
    std::size_t stride = 2;
    double leaky_slope = 0.2;
    std::vector<double> scales{1.0, 0.5, 0.25};

    std::size_t total_stride() const;
    void validate() const;
    bool operator==(const CriticConfig&) const = default;
};

struct CriticScaleOutput {
    std::size_t scale_index = 0;
    Volume score;                  // 1 × r × c patch decisions
    std::vector<Volume> features;  // activations of every layer before the score layer
};

struct CriticOutput {
    std::vector<CriticScaleOutput> scales;  // active scales only, in config order
    std::vector<std::string> warnings;      // one record per skipped scale
};

class Critic {
public:
    struct ScaleCache {
        std::size_t scale_index = 0;
        std::vector<Volume> inputs;   // input of each conv layer
        std::vector<Volume> preacts;  // conv output before the activation
    };
    struct Cache {
        std::size_t rows = 0, cols = 0;
        std::vector<ScaleCache> scales;
    };

    explicit Critic(CriticConfig cfg = {});
    Critic(CriticConfig cfg, const ParamSet& params);

    void init_uniform(Rng& rng);

    const CriticConfig& config() const { return cfg_; }
    const ParamSet& params() const { return params_; }
    ParamSet& params() { return params_; }

    // A scale is skipped when either resized dimension is below total_stride().
    bool scale_active(std::size_t rows, std::size_t cols, std::size_t scale_index) const;

    CriticOutput forward(const Matrix& m, Cache* cache = nullptr) const;

    // d_scores[s] / d_features[s][l] are gradients w.r.t. the outputs of active
    // scale s (d_features may be empty). Accumulates parameter gradients and
    // returns the gradient w.r.t. the input matrix.
    Matrix backward(const Cache& cache, const std::vector<Volume>& d_scores,
                    const std::vector<std::vector<Volume>>& d_features, ParamSet& grads) const;

private:
    kernels::ConvGeometry geometry(std::size_t layer) const;

    CriticConfig cfg_;
    ParamSet params_;
    std::vector<std::vector<std::size_t>> w_, b_;  // [scale][layer] parameter indices
};

struct GanLosses {
    double generator_adv = 0.0;  // -mean D(fake)
    double critic = 0.0;         // mean relu(1 - D(real)) + mean relu(1 + D(fake))
    double feature_matching = 0.0;
};

// Per-scale terms are averaged over scales; L_fm averages the per-map mean L1
// over every (scale, layer) pair.
GanLosses gan_losses(const std::vector<Volume>& real_scores, const std::vector<Volume>& fake_scores,
                     const std::vector<std::vector<Volume>>& real_features,
                     const std::vector<std::vector<Volume>>& fake_features);
GanLosses gan_losses(const CriticOutput& real, const CriticOutput& fake);

// Perceptual plug-in: returns the unweighted perceptual distance. The default
// (empty function) contributes 0.
using PerceptualFn = std::function<double(const Matrix& x, const Matrix& x_hat)>;

struct LossBreakdown {
    double rec = 0.0;  // mean |x - x_hat|
    double perc = 0.0;
    double adv = 0.0;
    double fm = 0.0;
    double commit = 0.0;
    double codebook = 0.0;  // codebook-loss ablation term (0 with EMA codebooks)
    double total = 0.0;
};

LossBreakdown composite_loss(const LogMelSpectrogram& x, const LogMelSpectrogram& x_hat, const QuantizationResult& q,
                             const CriticOutput& critic_real, const CriticOutput& critic_fake, const LossWeights& w,
                             const PerceptualFn& perceptual = {});
LossBreakdown composite_loss(const Matrix& x, const Matrix& x_hat, double commitment_loss,
                             const CriticOutput& critic_real, const CriticOutput& critic_fake, const LossWeights& w,
                             const PerceptualFn& perceptual = {});

struct GeneratorLossGrad {
    LossBreakdown loss;
    Matrix d_x_hat;
    ParamSet d_critic;  // empty unless requested
};

// Composite loss with the critic evaluated on x and x_hat, and its gradient
// w.r.t. x_hat (and optionally the critic parameters, through both the real and
// the fake branch). The perceptual plug-in contributes no gradient.
GeneratorLossGrad generator_loss_and_grad(const Matrix& x, const Matrix& x_hat, double commitment_loss,
                                          const Critic& critic, const LossWeights& w, bool want_critic_grads = false,
                                          const PerceptualFn& perceptual = {});

struct CriticLossGrad {
    double loss = 0.0;
    ParamSet d_critic;
};

// Hinge critic loss on (x real, x_hat fake) and its parameter gradient.
CriticLossGrad critic_loss_and_grad(const Matrix& x, const Matrix& x_hat, const Critic& critic);

}  // namespace bandtok
