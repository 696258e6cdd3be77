#include "bandtok/cli.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "bandtok/analysis.hpp"
#include "bandtok/config.hpp"
#include "bandtok/formats.hpp"
#include "bandtok/pipeline.hpp"
#include "bandtok/verify.hpp"

namespace bandtok {

namespace {

namespace fs = std::filesystem;

struct GlobalOptions {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> rope;
    std::string quantizer = "band";
};

RunConfig resolve_config(const GlobalOptions& g) {
    RunConfig cfg = g.config_path.empty() ? RunConfig{} : load_run_config(g.config_path);
    if (g.seed) cfg.seed = *g.seed;
    if (g.rope) cfg.rope.mode = *g.rope == "1d" ? RopeMode::one_d : RopeMode::two_d;
    return cfg;
}

QuantizerMode quantizer_mode(const GlobalOptions& g) {
    return g.quantizer == "residual" ? QuantizerMode::residual : QuantizerMode::band;
}

bool has_ext(const fs::path& p, const char* ext) { return p.extension() == ext; }

// WAV is run through the frontend; BMEL is taken as-is.
LogMelSpectrogram load_mel(const fs::path& p, const FrontendConfig& fe) {
    if (has_ext(p, ".bmel")) return read_bmel(p);
    return compute_log_mel(read_wav(p), fe);
}

class JsonlLog {
public:
    explicit JsonlLog(const std::string& path) {
        if (path.empty()) return;
        file_.open(path);
        if (!file_) throw IoError("cannot open log file " + path);
    }
    void line(const std::string& s) {
        if (file_.is_open()) file_ << s << '\n';
    }

private:
    std::ofstream file_;
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path);
    f << text;
}

ConditioningPrefix default_prefix(const RunConfig& cfg) {
    return make_prefix("", cfg.lm.caption_rows, cfg.lm.d_model, 0.0, 1.0);
}

std::vector<Matrix> training_mels(const std::vector<std::string>& inputs, std::size_t clips, std::size_t frames,
                                  const RunConfig& cfg) {
    std::vector<Matrix> mels;
    for (const auto& in : inputs) mels.push_back(load_mel(in, cfg.frontend).values);
    if (mels.empty()) {
        Rng rng = Rng(cfg.seed).split(0xda7a);
        mels = synth_toy_mels(clips, frames, cfg.frontend, rng);
    }
    return mels;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Band-split spectrogram tokenizer and token-LM toolkit", "bandtok"};
    app.require_subcommand(1);
    GlobalOptions g;
    app.add_option("--config", g.config_path, "JSON run configuration")->check(CLI::ExistingFile);
    app.add_option("--seed", g.seed, "Override the configured seed");
    app.add_option("--rope", g.rope, "Positional mode of the LM")->check(CLI::IsMember({"1d", "2d"}));
    app.add_option("--quantizer", g.quantizer, "Token geometry")->check(CLI::IsMember({"band", "residual"}));

    std::function<int()> action;

    // tokenize
    std::string in_path, ckpt_path, out_path;
    auto* tok = app.add_subcommand("tokenize", "WAV or BMEL to BTOK");
    tok->add_option("input", in_path)->required();
    tok->add_option("--checkpoint", ckpt_path)->required();
    tok->add_option("--output,-o", out_path)->required();
    tok->callback([&] {
        action = [&] {
            const RunConfig cfg = resolve_config(g);
            if (!fs::exists(in_path)) throw IoError("input file not found: " + in_path);
            const TokenizerModel model = load_tokenizer(ckpt_path, cfg);
            const LogMelSpectrogram mel = load_mel(in_path, cfg.frontend);
            double ppl = 0.0;
            const TokenGrid grid = tokenize_mel(model, mel, quantizer_mode(g), &ppl);
            write_btok(out_path, grid);
            out << "frames " << grid.frames << "\nbands " << grid.bands << "\nframe_rate_hz "
                << fmt("%.4f", grid.frame_rate_hz) << "\ncodebook_perplexity " << fmt("%.4f", ppl) << '\n';
            return int{kExitOk};
        };
    });

    // detokenize
    auto* detok = app.add_subcommand("detokenize", "BTOK to BMEL");
    detok->add_option("input", in_path)->required();
    detok->add_option("--checkpoint", ckpt_path)->required();
    detok->add_option("--output,-o", out_path)->required();
    std::string reference_path;
    detok->add_option("--reference", reference_path, "Original WAV/BMEL; reports the Mel distance");
    detok->callback([&] {
        action = [&] {
            const RunConfig cfg = resolve_config(g);
            const TokenGrid grid = read_btok(in_path);
            const TokenizerModel model = load_tokenizer(ckpt_path, cfg);
            const LogMelSpectrogram mel = detokenize_grid(model, grid, quantizer_mode(g), cfg.frontend);
            write_bmel(out_path, mel);
            out << "mel_shape " << mel.values.rows << "x" << mel.values.cols << '\n';
            if (!reference_path.empty()) {
                LogMelSpectrogram ref = load_mel(reference_path, cfg.frontend);
                Matrix crop(std::min(ref.values.rows, mel.values.rows), mel.values.cols);
                if (ref.values.cols != mel.values.cols) throw InvalidInputError("reference has a different Mel width");
                Matrix rec = crop;
                for (std::size_t i = 0; i < crop.data.size(); ++i) {
                    crop.data[i] = ref.values.data[i];
                    rec.data[i] = mel.values.data[i];
                }
                out << "mel_distance " << fmt("%.6f", mel_distance(crop, rec)) << '\n';
            }
            return int{kExitOk};
        };
    });

    // train-tokenizer
    std::vector<std::string> inputs;
    std::string log_path;
    std::optional<std::size_t> steps;
    std::size_t clips = 8, frames = 0;
    bool no_ms = false, codebook_loss = false;
    auto* tt = app.add_subcommand("train-tokenizer", "Desk-scale tokenizer training (synthetic clips by default)");
    tt->add_option("inputs", inputs, "WAV/BMEL training files");
    tt->add_option("--output,-o", out_path)->required();
    tt->add_option("--steps", steps);
    tt->add_option("--clips", clips, "Synthetic clip count when no inputs are given");
    tt->add_option("--frames", frames, "Synthetic clip length in Mel frames (default: segment_frames)");
    tt->add_flag("--no-ms-patchgan", no_ms, "Single-scale critic");
    tt->add_flag("--codebook-loss", codebook_loss, "Train codes with a codebook loss instead of EMA");
    tt->add_option("--log", log_path, "JSON-lines loss log");
    tt->callback([&] {
        action = [&] {
            RunConfig cfg = resolve_config(g);
            if (steps) cfg.tokenizer_train.steps = *steps;
            if (no_ms) cfg.tokenizer_train.multi_scale_critic = false;
            if (codebook_loss) cfg.tokenizer_train.codebook_loss = true;
            const auto mels = training_mels(inputs, clips, frames ? frames : cfg.tokenizer_train.segment_frames, cfg);
            JsonlLog log(log_path);
            TokenizerStepLog first{}, last{};
            const TokenizerModel model = train_tokenizer_model(mels, cfg, [&](const TokenizerStepLog& e) {
                if (e.step == 0) first = e;
                last = e;
                log.line(to_jsonl(e));
            });
            save_tokenizer(out_path, model);
            out << "steps " << cfg.tokenizer_train.steps << "\ninitial_loss " << fmt("%.6f", first.loss.total)
                << "\nfinal_loss " << fmt("%.6f", last.loss.total) << "\nfinal_perplexity "
                << fmt("%.3f", last.perplexity) << '\n';
            return int{kExitOk};
        };
    });

    // train-lm
    std::size_t sequences = 64, syn_frames = 4, syn_bands = 4;
    std::uint32_t syn_k = 16;
    auto* tl = app.add_subcommand("train-lm", "Train the token LM on BTOK files or a synthetic band corpus");
    tl->add_option("inputs", inputs, "BTOK corpus");
    tl->add_option("--output,-o", out_path)->required();
    tl->add_option("--steps", steps);
    tl->add_option("--sequences", sequences, "Synthetic corpus size");
    tl->add_option("--synthetic-frames", syn_frames);
    tl->add_option("--synthetic-bands", syn_bands);
    tl->add_option("--synthetic-k", syn_k);
    tl->add_option("--log", log_path, "JSON-lines loss log");
    tl->callback([&] {
        action = [&] {
            RunConfig cfg = resolve_config(g);
            if (steps) cfg.lm_train.steps = *steps;
            std::vector<TokenGrid> grids;
            for (const auto& p : inputs) grids.push_back(read_btok(p));
            if (grids.empty()) {
                Rng rng = Rng(cfg.seed).split(0xc0de);
                grids = synthetic_band_corpus(sequences, syn_frames, syn_bands, syn_k, rng);
            }
            for (const auto& gr : grids)
                if (gr.bands != grids.front().bands || gr.codebook_size != grids.front().codebook_size)
                    throw InvalidInputError("train-lm: corpus grids disagree on bands or codebook size");
            JsonlLog log(log_path);
            double first = 0.0, last = 0.0;
            const MicroLm lm = train_lm_on_grids(grids, cfg, cfg.seed, [&](const LmStepLog& e) {
                if (e.step == 0) first = e.nll;
                last = e.nll;
                log.line(to_jsonl(e));
            });
            save_lm(out_path, lm);
            out << "steps " << cfg.lm_train.steps << "\ninitial_nll " << fmt("%.6f", first) << "\nfinal_nll "
                << fmt("%.6f", last) << "\nlog_vocab " << fmt("%.6f", std::log(lm.config().vocab.total())) << '\n';
            return int{kExitOk};
        };
    });

    // generate
    std::string caption;
    std::optional<double> cfg_scale, temperature, seg_start, track_dur;
    std::optional<std::size_t> top_k, gen_frames;
    auto* gen = app.add_subcommand("generate", "Sample a token grid with classifier-free guidance");
    gen->add_option("--checkpoint", ckpt_path)->required();
    gen->add_option("--output,-o", out_path)->required();
    gen->add_option("--caption", caption);
    gen->add_option("--cfg-scale", cfg_scale);
    gen->add_option("--temperature", temperature);
    gen->add_option("--top-k", top_k, "0 disables top-k filtering");
    gen->add_option("--segment-start", seg_start, "Seconds");
    gen->add_option("--track-duration", track_dur, "Seconds");
    gen->add_option("--frames", gen_frames);
    gen->callback([&] {
        action = [&] {
            RunConfig cfg = resolve_config(g);
            if (cfg_scale) cfg.sampler.guidance_scale = *cfg_scale;
            if (temperature) cfg.sampler.temperature = *temperature;
            if (top_k) cfg.sampler.top_k = *top_k == 0 ? std::nullopt : std::optional<std::size_t>(*top_k);
            if (gen_frames) cfg.sampler.max_frames = *gen_frames;
            const MicroLm lm = load_lm(ckpt_path, cfg);
            const ConditioningPrefix prefix = make_prefix(caption, cfg.lm.caption_rows, cfg.lm.d_model,
                                                          seg_start.value_or(0.0), track_dur.value_or(1.0));
            const SamplerConfig sc{cfg.sampler.guidance_scale, cfg.sampler.temperature, cfg.sampler.top_k,
                                   Rng(cfg.seed).split(0x5a3d).next_u64()};
            const double rate = latent_frame_rate(cfg.frontend.sample_rate_hz, cfg.frontend.hop,
                                                  static_cast<int>(kLatentDownsample));
            const TokenGrid grid = sample(lm, prefix, sc, cfg.sampler.max_frames, rate);
            write_btok(out_path, grid);
            out << "frames " << grid.frames << "\nbands " << grid.bands << '\n';
            return int{kExitOk};
        };
    });

    // analyze-nmi
    std::size_t offset = 0;
    std::string csv_path, json_path;
    auto* an = app.add_subcommand("analyze-nmi", "Pairwise NMI across the token axes of BTOK files");
    an->add_option("inputs", inputs)->required();
    an->add_option("--offset", offset, "Frame offset between paired axes");
    an->add_option("--csv", csv_path);
    an->add_option("--json", json_path);
    an->callback([&] {
        action = [&] {
            std::vector<TokenGrid> grids;
            for (const auto& p : inputs) grids.push_back(read_btok(p));
            const NmiMatrix m = band_nmi(grids, offset, g.quantizer == "residual" ? "layer" : "band");
            out << render_heat_table(m.values, m.labels) << "mean_offdiag " << fmt("%.6f", mean_off_diagonal(m.values))
                << '\n';
            if (!csv_path.empty()) write_text(csv_path, matrix_to_csv(m.values, m.labels));
            if (!json_path.empty()) write_text(json_path, nmi_to_json(m).dump(2));
            return int{kExitOk};
        };
    });

    // analyze-ppl
    std::string axis = "band";
    auto* ap = app.add_subcommand("analyze-ppl", "Per-axis teacher-forced perplexity profile");
    ap->add_option("inputs", inputs)->required();
    ap->add_option("--checkpoint", ckpt_path)->required();
    ap->add_option("--axis", axis)->check(CLI::IsMember({"band", "layer"}));
    ap->add_option("--csv", csv_path);
    ap->add_option("--json", json_path);
    ap->callback([&] {
        action = [&] {
            const RunConfig cfg = resolve_config(g);
            std::vector<TokenGrid> grids;
            for (const auto& p : inputs) grids.push_back(read_btok(p));
            const MicroLm lm = load_lm(ckpt_path, cfg);
            const PplProfile p = ppl_profile(lm, grids, default_prefix(cfg), axis);
            out << render_profile(p);
            if (!csv_path.empty()) write_text(csv_path, ppl_to_csv(p));
            if (!json_path.empty()) write_text(json_path, ppl_to_json(p).dump(2));
            return int{kExitOk};
        };
    });

    // compare-geometry
    auto* cg = app.add_subcommand("compare-geometry", "Band vs residual token geometry (NMI and PPL profiles)");
    cg->add_option("inputs", inputs, "WAV/BMEL files (synthetic clips by default)");
    cg->add_option("--checkpoint", ckpt_path, "Tokenizer; trained from scratch when omitted");
    cg->add_option("--clips", clips);
    cg->add_option("--frames", frames);
    cg->add_option("--json", json_path);
    cg->callback([&] {
        action = [&] {
            const RunConfig cfg = resolve_config(g);
            const auto mels = training_mels(inputs, clips, frames ? frames : cfg.tokenizer_train.segment_frames, cfg);
            const TokenizerModel model =
                ckpt_path.empty() ? train_tokenizer_model(mels, cfg) : load_tokenizer(ckpt_path, cfg);
            const GeometryReport r = compare_geometry(model, mels, cfg);
            out << "band NMI\n"
                << render_heat_table(r.band_nmi.values, r.band_nmi.labels) << "residual NMI\n"
                << render_heat_table(r.residual_nmi.values, r.residual_nmi.labels) << "band PPL\n"
                << render_profile(r.band_ppl) << "residual PPL\n"
                << render_profile(r.residual_ppl) << "band_mean_offdiag_nmi " << fmt("%.6f", r.band_mean_offdiag)
                << "\nresidual_mean_offdiag_nmi " << fmt("%.6f", r.residual_mean_offdiag) << '\n';
            if (!json_path.empty()) {
                nlohmann::json j{{"band_nmi", nmi_to_json(r.band_nmi)},
                                 {"residual_nmi", nmi_to_json(r.residual_nmi)},
                                 {"band_ppl", ppl_to_json(r.band_ppl)},
                                 {"residual_ppl", ppl_to_json(r.residual_ppl)},
                                 {"band_mean_offdiag_nmi", r.band_mean_offdiag},
                                 {"residual_mean_offdiag_nmi", r.residual_mean_offdiag}};
                write_text(json_path, j.dump(2));
            }
            return int{kExitOk};
        };
    });

    // verify
    std::string fault;
    auto* ver = app.add_subcommand("verify", "Run the invariant suite");
    ver->add_option("--inject-fault", fault, "Test hook")->check(CLI::IsMember({"haar-normalization"}));
    ver->callback([&] {
        action = [&] {
            const RunConfig cfg = resolve_config(g);
            const auto checks = verify::run_all({cfg.seed, fault, {}});
            out << verify::format_report(checks);
            for (const auto& c : checks)
                if (!c.passed) return int{kExitVerify};
            return int{kExitOk};
        };
    });

    std::vector<const char*> argv{"bandtok"};
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << '\n';
        return kExitInvalidInput;
    }

    try {
        return action ? action() : int{kExitInvalidInput};
    } catch (const FormatError& e) {
        err << "format error: " << e.what() << '\n';
        return kExitFormat;
    } catch (const IoError& e) {
        err << "io error: " << e.what() << '\n';
        return kExitInvalidInput;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return kExitInvalidInput;
    } catch (const InvalidInputError& e) {
        err << "invalid input: " << e.what() << '\n';
        return kExitInvalidInput;
    }
}

}  // namespace bandtok
