#include "bandtok/latent_codec.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "bandtok/haar.hpp"

namespace bandtok {

namespace {

void leaky_inplace(Volume& v, double slope) {
    for (double& x : v.data) x = x > 0.0 ? x : slope * x;
}

void leaky_backward_inplace(Volume& grad, const Volume& preact, double slope) {
    for (std::size_t i = 0; i < grad.data.size(); ++i)
        if (!(preact.data[i] > 0.0)) grad.data[i] *= slope;
}

}  // namespace

void CodecConfig::validate() const {
    if (layers.empty()) throw ConfigError("codec: at least one encoder layer is required");
    std::size_t total = 2;  // Haar patch
    for (const auto& l : layers) {
        if (l.channels == 0 || l.kernel == 0 || l.stride == 0)
            throw ConfigError("codec: layer channels, kernel and stride must be positive");
        total *= l.stride;
    }
    if (total != kLatentDownsample)
        throw ConfigError("codec: Haar patch times encoder strides must equal 8, got " + std::to_string(total));
}

LatentCodec::LatentCodec(CodecConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    build_layout();
}

LatentCodec::LatentCodec(CodecConfig cfg, ParamSet params) : LatentCodec(std::move(cfg)) {
    for (std::size_t i = 0; i < params_.count(); ++i) {
        const Param& src = params.get(params_[i].name);
        if (src.shape != params_[i].shape) throw FormatError("codec: tensor shape mismatch for " + src.name);
        params_[i].values = src.values;
    }
}

std::size_t LatentCodec::enc_in_channels(std::size_t i) const { return i == 0 ? 4 : cfg_.layers[i - 1].channels; }

kernels::ConvGeometry LatentCodec::enc_geometry(std::size_t i) const {
    const auto& l = cfg_.layers[i];
    return {enc_in_channels(i), l.channels, l.kernel, l.stride};
}

kernels::ConvGeometry LatentCodec::dec_geometry(std::size_t j) const {
    const std::size_t i = cfg_.layers.size() - 1 - j;
    const auto& l = cfg_.layers[i];
    return {l.channels, enc_in_channels(i), l.kernel, 1};
}

void LatentCodec::build_layout() {
    const std::size_t n = cfg_.layers.size();
    for (std::size_t i = 0; i < n; ++i) {
        const auto g = enc_geometry(i);
        enc_w_.push_back(params_.add("codec.enc" + std::to_string(i) + ".weight",
                                     {g.out_channels, g.in_channels, g.kernel, g.kernel}));
        enc_b_.push_back(params_.add("codec.enc" + std::to_string(i) + ".bias", {g.out_channels}));
    }
    for (std::size_t j = 0; j < n; ++j) {
        const auto g = dec_geometry(j);
        dec_w_.push_back(params_.add("codec.dec" + std::to_string(j) + ".weight",
                                     {g.out_channels, g.in_channels, g.kernel, g.kernel}));
        dec_b_.push_back(params_.add("codec.dec" + std::to_string(j) + ".bias", {g.out_channels}));
    }
}

void LatentCodec::init_uniform(Rng& rng) {
    for (std::size_t i = 0; i < enc_w_.size(); ++i) {
        const auto g = enc_geometry(i);
        const std::size_t fan_in = g.in_channels * g.kernel * g.kernel;
        params_.init_uniform(enc_w_[i], fan_in, rng);
        params_.init_uniform(enc_b_[i], fan_in, rng);
    }
    for (std::size_t j = 0; j < dec_w_.size(); ++j) {
        const auto g = dec_geometry(j);
        const std::size_t fan_in = g.in_channels * g.kernel * g.kernel;
        params_.init_uniform(dec_w_[j], fan_in, rng);
        params_.init_uniform(dec_b_[j], fan_in, rng);
    }
}

LatentGrid LatentCodec::encode(const LogMelSpectrogram& x) const {
    if (x.values.cols == 0 || x.values.cols % kLatentDownsample != 0)
        throw ConfigError("encode: Mel bin count must be a positive multiple of 8, got " +
                          std::to_string(x.values.cols));
    return encode(x.values, nullptr);
}

LatentGrid LatentCodec::encode(const Matrix& mel, EncodeCache* cache) const {
    if (mel.empty()) throw InvalidInputError("encode: empty spectrogram");
    if (mel.cols % kLatentDownsample != 0)
        throw ConfigError("encode: Mel bin count must be a multiple of 8, got " + std::to_string(mel.cols));
    Volume h = haar_forward(mel).subbands;
    if (cache) {
        cache->rows = mel.rows;
        cache->cols = mel.cols;
        cache->inputs.clear();
        cache->preacts.clear();
    }
    const std::size_t n = cfg_.layers.size();
    for (std::size_t i = 0; i < n; ++i) {
        const auto g = enc_geometry(i);
        Volume a = kernels::conv2d_forward(h, params_[enc_w_[i]].values, params_[enc_b_[i]].values, g);
        if (cache) {
            cache->inputs.push_back(std::move(h));
            cache->preacts.push_back(a);
        }
        if (i + 1 < n) leaky_inplace(a, cfg_.leaky_slope);
        h = std::move(a);
    }
    return LatentGrid{std::move(h), mel.rows, mel.cols};
}

Matrix LatentCodec::encode_backward(const EncodeCache& cache, const Volume& grad_latent, ParamSet& grads) const {
    const std::size_t n = cfg_.layers.size();
    Volume g = grad_latent;
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t i = n - 1 - k;
        if (i + 1 < n) leaky_backward_inplace(g, cache.preacts[i], cfg_.leaky_slope);
        Volume gx;
        kernels::conv2d_backward(cache.inputs[i], params_[enc_w_[i]].values, enc_geometry(i), g, gx,
                                 grads[enc_w_[i]].values, grads[enc_b_[i]].values);
        g = std::move(gx);
    }
    return haar_forward_backward(g, cache.rows, cache.cols);
}

Matrix LatentCodec::decode_raw(const Volume& z, std::size_t out_rows, std::size_t out_cols, DecodeCache* cache) const {
    if (z.channels != cfg_.latent_channels())
        throw ConfigError("decode: latent has " + std::to_string(z.channels) + " channels, codec expects " +
                          std::to_string(cfg_.latent_channels()));
    if (out_rows > z.rows * kLatentDownsample || out_cols > z.cols * kLatentDownsample)
        throw InvalidInputError("decode: requested output larger than the latent grid supports");
    if (cache) {
        cache->out_rows = out_rows;
        cache->out_cols = out_cols;
        cache->inputs.clear();
        cache->preacts.clear();
    }
    const std::size_t n = cfg_.layers.size();
    Volume h = z;
    for (std::size_t j = 0; j < n; ++j) {
        const std::size_t stride = cfg_.layers[n - 1 - j].stride;
        Volume u = kernels::upsample_nearest(h, stride);
        Volume a = kernels::conv2d_forward(u, params_[dec_w_[j]].values, params_[dec_b_[j]].values, dec_geometry(j));
        if (cache) {
            cache->inputs.push_back(std::move(u));
            cache->preacts.push_back(a);
        }
        if (j + 1 < n) leaky_inplace(a, cfg_.leaky_slope);
        h = std::move(a);
    }
    const Matrix full = haar_inverse_full(h);
    if (full.rows == out_rows && full.cols == out_cols) return full;
    Matrix out(out_rows, out_cols);
    for (std::size_t r = 0; r < out_rows; ++r)
        for (std::size_t c = 0; c < out_cols; ++c) out(r, c) = full(r, c);
    return out;
}

Volume LatentCodec::decode_backward(const DecodeCache& cache, const Matrix& grad_out, ParamSet& grads) const {
    const std::size_t n = cfg_.layers.size();
    const Volume& last = cache.preacts.back();
    Volume g = haar_inverse_backward(grad_out, last.rows, last.cols);
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t j = n - 1 - k;
        if (j + 1 < n) leaky_backward_inplace(g, cache.preacts[j], cfg_.leaky_slope);
        Volume gu;
        kernels::conv2d_backward(cache.inputs[j], params_[dec_w_[j]].values, dec_geometry(j), g, gu,
                                 grads[dec_w_[j]].values, grads[dec_b_[j]].values);
        g = kernels::upsample_nearest_backward(gu, cfg_.layers[n - 1 - j].stride);
    }
    return g;
}

LogMelSpectrogram LatentCodec::decode(const LatentGrid& z, const FrontendConfig& frontend) const {
    const std::size_t rows = z.source_frames ? z.source_frames : z.frames() * kLatentDownsample;
    const std::size_t cols = z.bands() * kLatentDownsample;
    Matrix m = decode_raw(z.values, rows, cols);
    const double floor = std::log(frontend.floor_epsilon);
    for (double& v : m.data) v = std::max(v, floor);
    LogMelSpectrogram out;
    out.values = std::move(m);
    out.n_mels = static_cast<int>(cols);
    out.hop_samples = frontend.hop;
    out.win_samples = frontend.n_fft;
    out.sample_rate_hz = frontend.sample_rate_hz;
    return out;
}

}  // namespace bandtok
