#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "bandtok/common.hpp"
#include "bandtok/latent_codec.hpp"
#include "bandtok/params.hpp"
#include "bandtok/rng.hpp"

namespace bandtok {

struct CodebookConfig {
    std::size_t size = 8192;  // K
    double decay = 0.99;      // EMA gamma
    double laplace_eps = 1e-5;
    double dead_threshold = 1e-3;   // smoothed cluster size below which a code counts as dead
    std::size_t dead_patience = 200;  // consecutive dead updates before reseeding
    bool use_ema = true;      // false: codes are trained by a codebook loss instead

    bool operator==(const CodebookConfig&) const = default;
};

// K × C codebook with EMA statistics. After every ema_update,
// codes[i] = ema_embed_sum[i] / smoothed_cluster_size(i).
struct Codebook {
    Matrix codes;                          // K × C
    std::vector<double> ema_cluster_size;  // K
    Matrix ema_embed_sum;                  // K × C
    double decay = 0.99;
    double laplace_eps = 1e-5;
    double dead_threshold = 1e-3;
    std::size_t dead_patience = 200;
    std::vector<std::uint64_t> usage_count;  // K
    std::vector<std::size_t> dead_streak;    // K
    // Residual layers pin code 0 to the zero vector so a layer can never
    // increase the residual energy.
    bool pinned_zero = false;

    // Statistics start as (cluster size 1, embed sum = code) so codes are
    // consistent with the invariant before the first update.
    static Codebook from_codes(Matrix codes, const CodebookConfig& cfg = {});
    static Codebook random(std::size_t k, std::size_t dim, Rng& rng, double scale = 1.0,
                           const CodebookConfig& cfg = {});

    std::size_t size() const { return codes.rows; }
    std::size_t dim() const { return codes.cols; }

    void reset_statistics_to_zero();
    double smoothed_cluster_size(std::size_t i) const;
    void pin_zero_code();
};

struct QuantizationResult {
    std::vector<std::uint32_t> indices;  // rows × cols, row-major (frame, band)
    std::size_t rows = 0;
    std::size_t cols = 0;
    Volume quantized;                    // C × rows × cols
    double commitment_loss = 0.0;        // mean squared (z - quantized), unweighted
    double perplexity = 1.0;

    std::uint32_t index(std::size_t r, std::size_t c) const { return indices[r * cols + c]; }
};

// Per-cell vectors (row = frame*cols + band) of a C × T' × F' volume, and back.
Matrix cells_of(const Volume& z);
Volume volume_from_cells(const Matrix& cells, std::size_t channels, std::size_t rows, std::size_t cols);

QuantizationResult quantize(const Volume& z, const Codebook& cb);
inline QuantizationResult quantize(const LatentGrid& z, const Codebook& cb) { return quantize(z.values, cb); }

// EMA statistics update with Laplace-smoothed normalisation and dead-code
// reseeding from the current batch. `reseed_rng` may be null to disable reseeding.
void ema_update(Codebook& cb, const Volume& z, const std::vector<std::uint32_t>& indices, Rng* reseed_rng = nullptr);

// Adds per-code counts to usage_count without touching the statistics.
void record_usage(Codebook& cb, const std::vector<std::uint32_t>& indices);

// Layer 0 quantizes z; layer l quantizes z - sum_{j<l} quantized_j.
// Layers l >= 1 must have a pinned zero code.
std::vector<QuantizationResult> residual_quantize(const Volume& z, const std::vector<Codebook>& books,
                                                  std::size_t depth);

// Builds `depth` random books for residual quantization (layers >= 1 pinned).
std::vector<Codebook> make_residual_codebooks(std::size_t depth, std::size_t k, std::size_t dim, Rng& rng,
                                              double scale = 1.0, const CodebookConfig& cfg = {});

// Straight-through estimator: the forward value is the quantized grid, and the
// backward pass hands the upstream gradient to z unchanged.
LatentGrid straight_through(const LatentGrid& z, const QuantizationResult& q);
Volume straight_through_backward(const Volume& grad_out);

// d(commitment_loss)/dz.
Volume commitment_grad(const Volume& z, const QuantizationResult& q);

// Gradient of mean (sg(z) - codes[idx])^2 w.r.t. the codes, for the codebook-loss ablation.
Matrix codebook_loss_grad(const Volume& z, const QuantizationResult& q, std::size_t k);

double index_perplexity(const std::vector<std::uint32_t>& indices, std::size_t k);

// BPRM round trip: tensors "<prefix>.codes", ".ema_cluster_size", ".ema_embed_sum".
void append_codebook_tensors(ParamSet& out, const Codebook& cb, const std::string& prefix = "codebook");
Codebook codebook_from_tensors(const ParamSet& in, const CodebookConfig& cfg, const std::string& prefix = "codebook");

}  // namespace bandtok
