#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "bandtok/common.hpp"
#include "bandtok/dsp.hpp"
#include "bandtok/kernels.hpp"
#include "bandtok/params.hpp"
#include "bandtok/rng.hpp"

namespace bandtok {

// Total downsampling per axis between the Mel input and the latent grid.
inline constexpr std::size_t kLatentDownsample = 8;

// C × T' × F' latent grid. T' = ceil(T/8), F' = F/8.
struct LatentGrid {
    Volume values;
    std::size_t source_frames = 0;  // T of the spectrogram that produced it (0 if unknown)
    std::size_t source_bins = 0;

    std::size_t channels() const { return values.channels; }
    std::size_t frames() const { return values.rows; }
    std::size_t bands() const { return values.cols; }
};

struct CodecLayerSpec {
    std::size_t channels = 8;  // output channels of this encoder layer
    std::size_t kernel = 3;
    std::size_t stride = 2;

    bool operator==(const CodecLayerSpec&) const = default;
};

// Encoder: Haar patch (x2, 4 channels) then the listed strided convolutions;
// the last layer's channel count is the latent width C. The decoder mirrors it
// with nearest upsampling + stride-1 convolutions and ends in the inverse Haar.
struct CodecConfig {
    std::vector<CodecLayerSpec> layers{{16, 3, 2}, {8, 3, 2}};
    double leaky_slope = 0.2;

    std::size_t latent_channels() const { return layers.empty() ? 0 : layers.back().channels; }
    // Throws ConfigError unless 2 · Π stride == 8.
    void validate() const;

    bool operator==(const CodecConfig&) const = default;
};

class LatentCodec {
public:
    struct EncodeCache {
        std::size_t rows = 0, cols = 0;
        std::vector<Volume> inputs;       // input of each conv layer
        std::vector<Volume> preacts;      // conv outputs before activation
    };
    struct DecodeCache {
        std::size_t out_rows = 0, out_cols = 0;
        std::vector<Volume> inputs;       // upsampled input of each conv layer
        std::vector<Volume> preacts;
    };

    explicit LatentCodec(CodecConfig cfg = {});

    // Adopts an existing parameter set (e.g. from a checkpoint); layout must match.
    LatentCodec(CodecConfig cfg, ParamSet params);

    void init_uniform(Rng& rng);

    const CodecConfig& config() const { return cfg_; }
    const ParamSet& params() const { return params_; }
    ParamSet& params() { return params_; }

    LatentGrid encode(const LogMelSpectrogram& x) const;
    LatentGrid encode(const Matrix& mel, EncodeCache* cache = nullptr) const;

    // Decoded log-Mel, floored at log(floor_epsilon). Rows are cropped to
    // z.source_frames when known, else T'·8.
    LogMelSpectrogram decode(const LatentGrid& z, const FrontendConfig& frontend = {}) const;

    // Raw decoder output (no floor), rows × cols.
    Matrix decode_raw(const Volume& z, std::size_t out_rows, std::size_t out_cols, DecodeCache* cache = nullptr) const;

    // Backward passes accumulate parameter gradients into `grads` (same layout as params()).
    Matrix encode_backward(const EncodeCache& cache, const Volume& grad_latent, ParamSet& grads) const;
    Volume decode_backward(const DecodeCache& cache, const Matrix& grad_out, ParamSet& grads) const;

private:
    void build_layout();
    kernels::ConvGeometry enc_geometry(std::size_t i) const;
    kernels::ConvGeometry dec_geometry(std::size_t j) const;
    std::size_t enc_in_channels(std::size_t i) const;

    CodecConfig cfg_;
    ParamSet params_;
    std::vector<std::size_t> enc_w_, enc_b_, dec_w_, dec_b_;
};

}  // namespace bandtok
