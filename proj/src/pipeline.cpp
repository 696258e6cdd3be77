#include "bandtok/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include <json.hpp>

#include "bandtok/formats.hpp"
#include "bandtok/tokenizer_train.hpp"

namespace bandtok {

namespace {

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

Volume unfold_bands(const Volume& folded, std::size_t channels, std::size_t bands) {
    Volume z(channels, folded.rows, bands);
    for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t t = 0; t < folded.rows; ++t)
            for (std::size_t b = 0; b < bands; ++b) z(c, t, b) = folded(c * bands + b, t, 0);
    return z;
}

}  // namespace

ParamSet tokenizer_to_params(const TokenizerModel& m) {
    ParamSet p;
    const auto& layers = m.codec.config().layers;
    auto& meta = p[p.add("meta.codec_layers", {layers.size(), 3})].values;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        meta[3 * i] = static_cast<double>(layers[i].channels);
        meta[3 * i + 1] = static_cast<double>(layers[i].kernel);
        meta[3 * i + 2] = static_cast<double>(layers[i].stride);
    }
    for (const auto& t : m.codec.params()) p[p.add(t.name, t.shape)].values = t.values;
    append_codebook_tensors(p, m.codebook, "codebook");
    for (std::size_t l = 0; l < m.residual.size(); ++l)
        append_codebook_tensors(p, m.residual[l], "residual" + std::to_string(l));
    return p;
}

TokenizerModel tokenizer_from_params(const ParamSet& p, const RunConfig& cfg) {
    const Param& meta = p.get("meta.codec_layers");
    if (meta.shape.size() != 2 || meta.shape[1] != 3) throw FormatError("checkpoint: meta.codec_layers must be n x 3");
    CodecConfig cc = cfg.codec;
    cc.layers.clear();
    for (std::size_t i = 0; i < meta.shape[0]; ++i)
        cc.layers.push_back({static_cast<std::size_t>(meta.values[3 * i]), static_cast<std::size_t>(meta.values[3 * i + 1]),
                             static_cast<std::size_t>(meta.values[3 * i + 2])});
    try {
        cc.validate();
    } catch (const ConfigError& e) {
        throw FormatError(std::string("checkpoint: ") + e.what());
    }
    TokenizerModel m{LatentCodec(cc, p), codebook_from_tensors(p, cfg.codebook.book, "codebook"), {}};
    if (m.codebook.dim() != cc.latent_channels())
        throw FormatError("checkpoint: codebook width does not match the codec latent channels");
    for (std::size_t l = 0; p.find("residual" + std::to_string(l) + ".codes"); ++l) {
        m.residual.push_back(codebook_from_tensors(p, cfg.codebook.book, "residual" + std::to_string(l)));
        if (l > 0) m.residual.back().pin_zero_code();
    }
    return m;
}

void save_tokenizer(const std::filesystem::path& path, const TokenizerModel& m) {
    write_bprm(path, tokenizer_to_params(m));
}

TokenizerModel load_tokenizer(const std::filesystem::path& path, const RunConfig& cfg) {
    return tokenizer_from_params(read_bprm(path), cfg);
}

ParamSet lm_to_params(const MicroLm& lm) {
    ParamSet p;
    auto& meta = p[p.add("meta.lm", {2})].values;
    meta[0] = lm.config().vocab.audio_size;
    meta[1] = static_cast<double>(lm.config().bands);
    for (const auto& t : lm.params()) p[p.add(t.name, t.shape)].values = t.values;
    return p;
}

MicroLm lm_from_params(const ParamSet& p, const RunConfig& cfg) {
    const Param& meta = p.get("meta.lm");
    if (meta.values.size() != 2) throw FormatError("checkpoint: meta.lm must hold [audio_size, bands]");
    MicroLmConfig mc;
    try {
        mc = cfg.lm_config(static_cast<std::uint32_t>(meta.values[0]), static_cast<std::size_t>(meta.values[1]));
    } catch (const ConfigError& e) {
        throw FormatError(std::string("checkpoint: ") + e.what());
    }
    return MicroLm(mc, p);
}

void save_lm(const std::filesystem::path& path, const MicroLm& lm) { write_bprm(path, lm_to_params(lm)); }

MicroLm load_lm(const std::filesystem::path& path, const RunConfig& cfg) { return lm_from_params(read_bprm(path), cfg); }

Waveform synth_toy_waveform(Rng& rng, double seconds, int sample_rate_hz) {
    const auto n = static_cast<std::size_t>(std::llround(seconds * sample_rate_hz));
    Waveform w;
    w.sample_rate_hz = sample_rate_hz;
    w.samples.assign(n, 0.0);
    const std::size_t notes = 2 + rng.below(3);
    const double sr = sample_rate_hz;
    for (std::size_t k = 0; k < notes; ++k) {
        const double f0 = 110.0 * std::pow(2.0, rng.uniform(0.0, 3.0));
        const double start = rng.uniform(0.0, 0.6) * seconds;
        const double decay = rng.uniform(2.0, 8.0);
        const double amp = rng.uniform(0.1, 0.3);
        const std::size_t harmonics = 1 + rng.below(5);
        for (std::size_t i = static_cast<std::size_t>(start * sr); i < n; ++i) {
            const double t = static_cast<double>(i) / sr - start;
            const double env = amp * std::exp(-decay * t);
            double s = 0.0;
            for (std::size_t h = 1; h <= harmonics; ++h)
                s += std::sin(2.0 * std::numbers::pi * f0 * static_cast<double>(h) * t) / static_cast<double>(h);
            w.samples[i] += env * s;
        }
    }
    for (auto& s : w.samples) s = std::clamp(s + 0.003 * rng.normal(), -1.0, 1.0);
    return w;
}

std::vector<Matrix> synth_toy_mels(std::size_t count, std::size_t frames, const FrontendConfig& fe, Rng& rng) {
    if (frames == 0) throw ConfigError("synth_toy_mels: frame count must be positive");
    std::vector<Matrix> out;
    const double seconds = static_cast<double>(frames * static_cast<std::size_t>(fe.hop)) / fe.sample_rate_hz;
    for (std::size_t i = 0; i < count; ++i) {
        Rng r = rng.split(i);
        const Waveform w = synth_toy_waveform(r, seconds, fe.sample_rate_hz);
        LogMelSpectrogram m = compute_log_mel(w, fe);
        Matrix crop(frames, m.values.cols);
        for (std::size_t t = 0; t < frames; ++t)
            for (std::size_t f = 0; f < crop.cols; ++f) crop(t, f) = m.values(std::min(t, m.values.rows - 1), f);
        out.push_back(std::move(crop));
    }
    return out;
}

Matrix caption_embedding(const std::string& text, std::size_t rows, std::size_t d) {
    Rng rng(fnv1a(text));
    Matrix m(rows, d);
    for (double& v : m.data) v = rng.uniform(-1.0, 1.0);
    return m;
}

ConditioningPrefix make_prefix(const std::string& caption, std::size_t rows, std::size_t d, double segment_start_s,
                               double track_duration_s, bool null_flag) {
    return {caption_embedding(caption, rows, d), segment_start_s, track_duration_s, null_flag};
}

std::vector<TokenGrid> synthetic_band_corpus(std::size_t n, std::size_t frames, std::size_t bands, std::uint32_t k,
                                             Rng& rng) {
    std::vector<TokenGrid> out;
    for (std::size_t i = 0; i < n; ++i) {
        TokenGrid g{std::vector<std::uint32_t>(frames * bands), frames, bands, k, 0.0};
        const auto offset = rng.below(k);
        for (std::size_t t = 0; t < frames; ++t)
            for (std::size_t b = 0; b < bands; ++b) g.indices[t * bands + b] = static_cast<std::uint32_t>((offset + t + b) % k);
        out.push_back(std::move(g));
    }
    return out;
}

std::vector<TokenGrid> synthetic_copy_corpus(std::size_t n, std::size_t frames, std::size_t bands, std::uint32_t k,
                                             std::size_t src_band, std::size_t dst_band, Rng& rng) {
    if (src_band >= bands || dst_band >= bands) throw InvalidInputError("synthetic_copy_corpus: band out of range");
    std::vector<TokenGrid> out;
    for (std::size_t i = 0; i < n; ++i) {
        TokenGrid g{std::vector<std::uint32_t>(frames * bands), frames, bands, k, 0.0};
        for (std::size_t t = 0; t < frames; ++t) {
            for (std::size_t b = 0; b < bands; ++b) g.indices[t * bands + b] = static_cast<std::uint32_t>(rng.below(k));
            g.indices[t * bands + dst_band] = g.indices[t * bands + src_band];
        }
        out.push_back(std::move(g));
    }
    return out;
}

std::vector<LmExample> make_lm_examples(const std::vector<TokenGrid>& grids, const MicroLm& lm,
                                        const ConditioningPrefix& prefix) {
    const std::size_t P = lm.prefix_rows(prefix).rows;
    std::vector<LmExample> out;
    for (const auto& g : grids) out.push_back({make_lm_sequence(P, g, lm.config().vocab), prefix});
    return out;
}

TokenGrid tokenize_mel(const TokenizerModel& m, const LogMelSpectrogram& mel, QuantizerMode mode, double* perplexity) {
    const LatentGrid z = m.codec.encode(mel);
    const double rate = static_cast<double>(mel.sample_rate_hz) / mel.hop_samples / kLatentDownsample;
    if (mode == QuantizerMode::band) {
        const QuantizationResult q = quantize(z, m.codebook);
        if (perplexity) *perplexity = q.perplexity;
        return TokenGrid{q.indices, q.rows, q.cols, static_cast<std::uint32_t>(m.codebook.size()), rate};
    }
    if (m.residual.empty()) throw ConfigError("tokenize: checkpoint has no residual codebooks");
    const auto layers = residual_quantize(fold_bands(z.values), m.residual, m.residual.size());
    if (perplexity) *perplexity = layers.front().perplexity;
    return residual_grid(layers, static_cast<std::uint32_t>(m.residual.front().size()), rate);
}

LogMelSpectrogram detokenize_grid(const TokenizerModel& m, const TokenGrid& g, QuantizerMode mode,
                                  const FrontendConfig& fe) {
    g.validate();
    const std::size_t C = m.codec.config().latent_channels();
    LatentGrid z;
    if (mode == QuantizerMode::band) {
        if (g.codebook_size != 0 && g.codebook_size != m.codebook.size())
            throw FormatError("detokenize: token grid codebook size " + std::to_string(g.codebook_size) +
                              " != checkpoint codebook size " + std::to_string(m.codebook.size()));
        z.values = Volume(C, g.frames, g.bands);
        for (std::size_t t = 0; t < g.frames; ++t)
            for (std::size_t b = 0; b < g.bands; ++b) {
                const auto code = g.at(t, b);
                if (code >= m.codebook.size()) throw InvalidInputError("detokenize: code out of range");
                for (std::size_t c = 0; c < C; ++c) z.values(c, t, b) = m.codebook.codes(code, c);
            }
    } else {
        if (g.bands != m.residual.size())
            throw FormatError("detokenize: grid has " + std::to_string(g.bands) + " layers, checkpoint has " +
                              std::to_string(m.residual.size()));
        const std::size_t width = m.residual.front().dim();
        if (width % C != 0) throw FormatError("detokenize: residual width is not a multiple of the latent channels");
        Volume folded(width, g.frames, 1);
        for (std::size_t t = 0; t < g.frames; ++t)
            for (std::size_t l = 0; l < g.bands; ++l) {
                const auto code = g.at(t, l);
                if (code >= m.residual[l].size()) throw InvalidInputError("detokenize: code out of range");
                for (std::size_t c = 0; c < width; ++c) folded(c, t, 0) += m.residual[l].codes(code, c);
            }
        z.values = unfold_bands(folded, C, width / C);
    }
    return m.codec.decode(z, fe);
}

std::vector<Codebook> fit_residual_codebooks(const LatentCodec& codec, const std::vector<Matrix>& mels,
                                             std::size_t depth, std::size_t k, const CodebookConfig& cfg, Rng& rng,
                                             std::size_t passes) {
    if (depth == 0 || k == 0) throw ConfigError("residual codebooks: depth and size must be positive");
    std::vector<Volume> folded;
    for (const auto& m : mels) folded.push_back(fold_bands(codec.encode(m).values));
    const std::size_t width = folded.front().channels;
    std::vector<Volume> residual = folded;
    std::vector<Codebook> books;
    for (std::size_t l = 0; l < depth; ++l) {
        // Seed codes from residual vectors of the data.
        std::vector<std::pair<std::size_t, std::size_t>> cells;
        for (std::size_t i = 0; i < residual.size(); ++i)
            for (std::size_t t = 0; t < residual[i].rows; ++t) cells.emplace_back(i, t);
        Matrix codes(k, width);
        for (std::size_t j = 0; j < k; ++j) {
            const auto [i, t] = cells[rng.below(cells.size())];
            for (std::size_t c = 0; c < width; ++c) codes(j, c) = residual[i](c, t, 0) + 1e-3 * rng.normal();
        }
        Codebook cb = Codebook::from_codes(std::move(codes), cfg);
        if (l > 0) cb.pin_zero_code();
        for (std::size_t p = 0; p < passes; ++p)
            for (const auto& r : residual) {
                const auto q = quantize(r, cb);
                ema_update(cb, r, q.indices, nullptr);
            }
        for (auto& r : residual) {
            const auto q = quantize(r, cb);
            for (std::size_t i = 0; i < r.data.size(); ++i) r.data[i] -= q.quantized.data[i];
        }
        books.push_back(std::move(cb));
    }
    return books;
}

TokenizerModel train_tokenizer_model(const std::vector<Matrix>& mels, const RunConfig& cfg,
                                     const std::function<void(const TokenizerStepLog&)>& on_step) {
    if (mels.empty()) throw InvalidInputError("train_tokenizer: empty corpus");
    // Fixed-length training crops keep every critic scale active and bound the step cost.
    std::vector<Matrix> crops;
    const std::size_t seg = cfg.tokenizer_train.segment_frames;
    for (const auto& m : mels) {
        if (seg == 0 || m.rows <= seg) {
            crops.push_back(m);
            continue;
        }
        for (std::size_t s = 0; s + seg <= m.rows; s += seg) {
            Matrix c(seg, m.cols);
            std::copy(m.data.begin() + static_cast<std::ptrdiff_t>(s * m.cols),
                      m.data.begin() + static_cast<std::ptrdiff_t>((s + seg) * m.cols), c.data.begin());
            crops.push_back(std::move(c));
        }
    }
    const Rng root(cfg.seed);
    Rng init = root.split(1);
    LatentCodec codec(cfg.codec);
    codec.init_uniform(init);
    Critic critic(effective_critic_config(cfg.critic, cfg.tokenizer_train.multi_scale_critic));
    critic.init_uniform(init);
    Rng cb_rng = root.split(2);
    Codebook cb = init_codebook_from_data(codec, crops, cfg.codebook.book.size, cfg.codebook.book, cb_rng);
    train_tokenizer(codec, cb, critic, crops, cfg.tokenizer_train_config(), on_step);
    Rng rv_rng = root.split(3);
    auto residual = fit_residual_codebooks(codec, crops, cfg.codebook.residual_depth, cfg.codebook.book.size,
                                           cfg.codebook.book, rv_rng);
    return TokenizerModel{std::move(codec), std::move(cb), std::move(residual)};
}

MicroLm train_lm_on_grids(const std::vector<TokenGrid>& grids, const RunConfig& cfg, std::uint64_t seed,
                          const std::function<void(const LmStepLog&)>& on_step) {
    if (grids.empty()) throw InvalidInputError("train_lm: empty corpus");
    MicroLm lm(cfg.lm_config(grids.front().codebook_size, grids.front().bands));
    Rng init = Rng(seed).split(11);
    lm.init(init);
    const auto prefix = make_prefix("", cfg.lm.caption_rows, cfg.lm.d_model, 0.0, 1.0);
    const auto examples = make_lm_examples(grids, lm, prefix);
    LmTrainConfig tc{cfg.lm_train.steps, cfg.lm_train.adam, seed};
    train_lm(lm, examples, tc, on_step);
    return lm;
}

double mean_off_diagonal(const Matrix& m) {
    if (m.rows < 2) return 0.0;
    double s = 0.0;
    for (std::size_t i = 0; i < m.rows; ++i)
        for (std::size_t j = 0; j < m.cols; ++j)
            if (i != j) s += m(i, j);
    return s / static_cast<double>(m.rows * (m.rows - 1));
}

GeometryReport compare_geometry(const TokenizerModel& model, const std::vector<Matrix>& mels, const RunConfig& cfg) {
    if (mels.empty()) throw InvalidInputError("compare_geometry: empty corpus");
    std::vector<TokenGrid> band, residual;
    for (const auto& m : mels) {
        LogMelSpectrogram lm;
        lm.values = m;
        lm.n_mels = static_cast<int>(m.cols);
        lm.hop_samples = cfg.frontend.hop;
        lm.win_samples = cfg.frontend.n_fft;
        lm.sample_rate_hz = cfg.frontend.sample_rate_hz;
        band.push_back(tokenize_mel(model, lm, QuantizerMode::band));
        residual.push_back(tokenize_mel(model, lm, QuantizerMode::residual));
    }
    GeometryReport r;
    r.band_nmi = band_nmi(band, 0, "band");
    r.residual_nmi = band_nmi(residual, 0, "layer");
    r.band_mean_offdiag = mean_off_diagonal(r.band_nmi.values);
    r.residual_mean_offdiag = mean_off_diagonal(r.residual_nmi.values);
    const MicroLm band_lm = train_lm_on_grids(band, cfg, Rng(cfg.seed).split(21).next_u64());
    const MicroLm res_lm = train_lm_on_grids(residual, cfg, Rng(cfg.seed).split(22).next_u64());
    const auto prefix = make_prefix("", cfg.lm.caption_rows, cfg.lm.d_model, 0.0, 1.0);
    r.band_ppl = ppl_profile(band_lm, band, prefix, "band");
    r.residual_ppl = ppl_profile(res_lm, residual, prefix, "layer");
    return r;
}

std::string to_jsonl(const LmStepLog& e) {
    return nlohmann::json{{"step", e.step}, {"nll", e.nll}, {"grad_norm", e.grad_norm}}.dump();
}

std::string to_jsonl(const TokenizerStepLog& e) {
    return nlohmann::json{{"step", e.step},
                          {"total", e.loss.total},
                          {"rec", e.loss.rec},
                          {"perc", e.loss.perc},
                          {"adv", e.loss.adv},
                          {"fm", e.loss.fm},
                          {"commit", e.loss.commit},
                          {"codebook", e.loss.codebook},
                          {"critic", e.critic_loss},
                          {"perplexity", e.perplexity}}
        .dump();
}

}  // namespace bandtok
