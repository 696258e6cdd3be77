#pragma once

// End-to-end glue shared by the command-line tool and the acceptance suite:
// checkpoints, synthetic corpora, tokenize/detokenize and the geometry harness.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "bandtok/analysis.hpp"
#include "bandtok/config.hpp"
#include "bandtok/dsp.hpp"
#include "bandtok/latent_codec.hpp"
#include "bandtok/micro_lm.hpp"
#include "bandtok/token_grid.hpp"
#include "bandtok/vq.hpp"

namespace bandtok {

enum class QuantizerMode { band, residual };

struct TokenizerModel {
    LatentCodec codec;
    Codebook codebook;               // band-wise, width C
    std::vector<Codebook> residual;  // 1D mode over folded frames, width C·F' (may be empty)
};

// Tensors: codec.*, codebook.*, residual<l>.*, and meta.codec_layers (n × 3:
// channels, kernel, stride). Everything else comes from the run config.
ParamSet tokenizer_to_params(const TokenizerModel& m);
TokenizerModel tokenizer_from_params(const ParamSet& p, const RunConfig& cfg);
void save_tokenizer(const std::filesystem::path& path, const TokenizerModel& m);
TokenizerModel load_tokenizer(const std::filesystem::path& path, const RunConfig& cfg);

// Tensors: lm.* plus meta.lm = [audio_size, bands].
ParamSet lm_to_params(const MicroLm& lm);
MicroLm lm_from_params(const ParamSet& p, const RunConfig& cfg);
void save_lm(const std::filesystem::path& path, const MicroLm& lm);
MicroLm load_lm(const std::filesystem::path& path, const RunConfig& cfg);

// Deterministic toy music: a few harmonic notes with decaying envelopes plus a little noise.
Waveform synth_toy_waveform(Rng& rng, double seconds, int sample_rate_hz = 44100);
// Log-Mel crops of `frames` rows from synthesized clips.
std::vector<Matrix> synth_toy_mels(std::size_t count, std::size_t frames, const FrontendConfig& fe, Rng& rng);

// Stand-in text encoder: a deterministic rows × d embedding seeded by a hash of the text.
Matrix caption_embedding(const std::string& text, std::size_t rows, std::size_t d);
ConditioningPrefix make_prefix(const std::string& caption, std::size_t rows, std::size_t d, double segment_start_s,
                               double track_duration_s, bool null_flag = false);

// Codes follow (offset + t + b) mod K with a random per-grid offset: a
// band-token corpus whose tokens are predictable from the previous one.
std::vector<TokenGrid> synthetic_band_corpus(std::size_t n, std::size_t frames, std::size_t bands, std::uint32_t k,
                                             Rng& rng);
// Uniform random bands except `dst_band`, which copies `src_band`.
std::vector<TokenGrid> synthetic_copy_corpus(std::size_t n, std::size_t frames, std::size_t bands, std::uint32_t k,
                                             std::size_t src_band, std::size_t dst_band, Rng& rng);

std::vector<LmExample> make_lm_examples(const std::vector<TokenGrid>& grids, const MicroLm& lm,
                                        const ConditioningPrefix& prefix);

// Band mode: T'×F' grid. Residual mode: T'×D grid of layer indices over folded frames.
TokenGrid tokenize_mel(const TokenizerModel& m, const LogMelSpectrogram& mel, QuantizerMode mode,
                       double* perplexity = nullptr);
LogMelSpectrogram detokenize_grid(const TokenizerModel& m, const TokenGrid& g, QuantizerMode mode,
                                  const FrontendConfig& fe);

// Residual books fitted to folded latents with a few EMA passes (layers >= 1 pin a zero code).
std::vector<Codebook> fit_residual_codebooks(const LatentCodec& codec, const std::vector<Matrix>& mels,
                                             std::size_t depth, std::size_t k, const CodebookConfig& cfg, Rng& rng,
                                             std::size_t passes = 10);

// Trains codec, codebook and critic from scratch on `mels` and fits residual books.
TokenizerModel train_tokenizer_model(const std::vector<Matrix>& mels, const RunConfig& cfg,
                                     const std::function<void(const TokenizerStepLog&)>& on_step = {});

MicroLm train_lm_on_grids(const std::vector<TokenGrid>& grids, const RunConfig& cfg, std::uint64_t seed,
                          const std::function<void(const LmStepLog&)>& on_step = {});

struct GeometryReport {
    NmiMatrix band_nmi;
    NmiMatrix residual_nmi;
    PplProfile band_ppl;
    PplProfile residual_ppl;
    double band_mean_offdiag = 0.0;
    double residual_mean_offdiag = 0.0;
};

double mean_off_diagonal(const Matrix& m);

// Tokenizes `mels` both ways, measures NMI and trains one small LM per geometry for the PPL profiles.
GeometryReport compare_geometry(const TokenizerModel& model, const std::vector<Matrix>& mels, const RunConfig& cfg);

std::string to_jsonl(const LmStepLog& e);
std::string to_jsonl(const TokenizerStepLog& e);

}  // namespace bandtok
