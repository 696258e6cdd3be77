// Acceptance gate: one PASS/FAIL line per criterion, tolerances pinned here.
// Exit status is nonzero when any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "bandtok/cli.hpp"
#include "bandtok/formats.hpp"
#include "bandtok/pipeline.hpp"
#include "bandtok/token_grid.hpp"
#include "bandtok/tokenizer_train.hpp"
#include "bandtok/verify.hpp"

using namespace bandtok;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
    bool pass = false;
    std::string detail;
};

int failures = 0;

void criterion(int n, double time_limit_s, const std::function<Outcome()>& body) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
        o = body();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    const bool in_time = time_limit_s <= 0.0 || secs < time_limit_s;
    const bool ok = o.pass && in_time;
    if (!ok) ++failures;
    std::printf("criterion %2d: %s  %s  time=%.2fs", n, ok ? "PASS" : "FAIL", o.detail.c_str(), secs);
    if (time_limit_s > 0.0) std::printf(" (limit %.0fs)", time_limit_s);
    std::printf("\n");
    std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

Outcome lm_sanity() {
    RunConfig cfg;
    cfg.lm.d_model = 32;
    cfg.lm.n_layers = 2;
    cfg.lm.n_heads = 2;
    cfg.lm.d_hidden = 64;
    cfg.lm.caption_rows = 0;
    cfg.lm_train.steps = 300;
    cfg.lm_train.adam.lr = 1e-2;
    cfg.lm_train.adam.schedule.warmup = 0.0;
    Rng rng(0xa11);
    const auto grids = synthetic_band_corpus(64, 4, 4, 16, rng);
    const MicroLm lm = train_lm_on_grids(grids, cfg, 1);
    const auto examples = make_lm_examples(grids, lm, make_prefix("", 0, cfg.lm.d_model, 0.0, 1.0));
    const double nll = corpus_nll(lm, examples);
    const double log_v = std::log(static_cast<double>(lm.config().vocab.total()));
    return {nll <= 0.5 * log_v, fmt("lm nll=%.4f <= 0.5*log V=%.4f (V=%u)", nll, 0.5 * log_v, lm.config().vocab.total())};
}

Outcome tokenizer_ablations() {
    RunConfig base;
    base.frontend.n_mels = 64;
    base.codebook.book.size = 32;
    base.codebook.residual_depth = 1;
    base.tokenizer_train.steps = 200;
    base.tokenizer_train.segment_frames = 64;
    Rng rng(0xab1);
    const auto mels = synth_toy_mels(4, 64, base.frontend, rng);
    std::string detail;
    bool all = true;
    for (const bool ms : {true, false})
        for (const bool ema : {true, false}) {
            RunConfig c = base;
            c.tokenizer_train.multi_scale_critic = ms;
            c.codebook.book.use_ema = ema;
            std::vector<double> totals;
            train_tokenizer_model(mels, c, [&](const TokenizerStepLog& s) { totals.push_back(s.loss.total); });
            // Decreased: mean of the last 10 steps below the step-0 loss.
            double tail = 0.0;
            bool finite = totals.size() == 200;
            for (double v : totals) finite = finite && std::isfinite(v);
            for (std::size_t i = totals.size() - 10; i < totals.size(); ++i) tail += totals[i] / 10.0;
            const bool ok = finite && tail < totals.front();
            all = all && ok;
            detail += fmt(" [%s,%s %.3f->%.3f]", ms ? "ms" : "single", ema ? "ema" : "cbloss", totals.front(), tail);
        }
    return {all, "ablations" + detail};
}

}  // namespace

int main() {
    const Rng root(20240601);
    const auto scratch = fs::temp_directory_path() / "bandtok_acceptance";
    fs::create_directories(scratch);

    criterion(1, 5.0, [&] {
        Rng r = root.split(1);
        const auto s = verify::haar_property(1000, 64, r);
        return Outcome{s.max_roundtrip_error < 1e-12 && s.max_energy_rel_error < 1e-10,
                       fmt("haar roundtrip=%.2e (<1e-12) energy=%.2e (<1e-10)", s.max_roundtrip_error,
                           s.max_energy_rel_error)};
    });
    criterion(2, 0.0, [&] {
        const auto g = verify::latent_geometry();
        return Outcome{g.latent_bands == 16 && g.frame_rate_2dp == "10.77",
                       fmt("F'=%zu (==16) frame_rate=%s (==10.77)", g.latent_bands, g.frame_rate_2dp.c_str())};
    });
    criterion(3, 10.0, [&] {
        Rng r = root.split(3);
        const auto m = verify::vq_oracle_mismatches(10000, 64, 8, r);
        return Outcome{m == 0, fmt("vq mismatches=%zu/10000 (==0)", m)};
    });
    criterion(4, 5.0, [&] {
        Rng r = root.split(4);
        const auto s = verify::ema_fixed_point(500, 0.99, 100, 400, r);
        const bool ok = s.max_deviation < 1e-2 && s.decay_ratio >= 0.985 && s.decay_ratio <= 0.995;
        return Outcome{ok, fmt("ema deviation=%.2e (<1e-2) ratio=%.5f (in [0.985,0.995])", s.max_deviation,
                               s.decay_ratio)};
    });
    criterion(5, 0.0, [&] {
        Rng r = root.split(5);
        const auto v = verify::residual_violations(1000, r);
        return Outcome{v == 0, fmt("residual violations=%zu (==0)", v)};
    });
    criterion(6, 0.0, [&] {
        Rng r = root.split(6);
        const double inv = verify::rope_invariance(1000, 64, r);
        Rng r2 = root.split(60);
        const auto mm = verify::rope_1d_mismatches(1000, r2);
        return Outcome{inv < 1e-10 && mm == 0, fmt("rope shift error=%.2e (<1e-10) 1d mismatches=%zu (==0)", inv, mm)};
    });
    criterion(7, 0.0, [&] {
        const bool ok = verify::positions_match_example();
        return Outcome{ok, "assign_positions(2,2,3) pattern exact"};
    });
    criterion(8, 60.0, [&] {
        Rng r = root.split(8);
        const auto a = verify::lm_gradient_check(r);
        Rng r2 = root.split(80);
        const auto b = verify::composite_gradient_check(r2);
        return Outcome{a.max_rel_error < 1e-4 && b.max_rel_error < 1e-4,
                       fmt("lm rel=%.2e (%zu params) composite rel=%.2e (%zu params) (<1e-4)", a.max_rel_error,
                           a.checked, b.max_rel_error, b.checked)};
    });
    criterion(9, 0.0, [&] {
        Rng r = root.split(9);
        const auto s = verify::cfg_identities(10000, r);
        return Outcome{s.w1_mismatch == 0 && s.w0_mismatch == 0 && s.argmax_mismatch == 0,
                       fmt("cfg w1=%zu w0=%zu argmax=%zu mismatches of 10000 (==0)", s.w1_mismatch, s.w0_mismatch,
                           s.argmax_mismatch)};
    });
    criterion(10, 300.0, [&] {
        const Outcome a = lm_sanity();
        const Outcome b = tokenizer_ablations();
        return Outcome{a.pass && b.pass, a.detail + "; " + b.detail};
    });
    criterion(11, 0.0, [&] {
        Rng r = root.split(11);
        const auto s = verify::nmi_properties(100000, r);
        const bool ok = s.identical == 1.0 && s.independent < 0.01 && s.max_asymmetry <= 1e-9 && s.range_violation <= 1e-9;
        return Outcome{ok, fmt("nmi identical=%.17g (==1) independent=%.2e (<0.01) asym=%.1e range=%.1e (<=1e-9)",
                               s.identical, s.independent, s.max_asymmetry, s.range_violation)};
    });
    criterion(12, 0.0, [&] {
        Rng r = root.split(12);
        const auto f = verify::format_roundtrip_failures(1000, scratch.string(), r);
        Rng r2 = root.split(120);
        const auto u = verify::flatten_failures(1000, r2);
        return Outcome{f == 0 && u == 0, fmt("format roundtrip failures=%zu flatten failures=%zu (==0)", f, u)};
    });
    criterion(13, 0.0, [&] {
        const std::string lm = (scratch / "lm.bprm").string();
        std::ostringstream out, err;
        const std::vector<std::string> common{"--seed", "7"};
        auto call = [&](std::vector<std::string> args) {
            args.insert(args.begin(), common.begin(), common.end());
            return run_cli(args, out, err);
        };
        if (call({"train-lm", "-o", lm, "--steps", "20"}) != 0) return Outcome{false, "train-lm failed: " + err.str()};
        for (const char* name : {"a.btok", "b.btok"})
            if (call({"generate", "--checkpoint", lm, "--caption", "ambient pad", "--cfg-scale", "3", "--frames", "4", "-o",
                      (scratch / name).string()}) != 0)
                return Outcome{false, "generate failed: " + err.str()};
        const auto a = read_file_bytes(scratch / "a.btok"), b = read_file_bytes(scratch / "b.btok");
        return Outcome{a == b, fmt("generate twice: %zu vs %zu bytes, identical=%s", a.size(), b.size(),
                                   a == b ? "yes" : "no")};
    });

    fs::remove_all(scratch);
    std::printf("%s\n", failures == 0 ? "acceptance: all criteria passed"
                                      : fmt("acceptance: %d criterion(s) failed", failures).c_str());
    return failures == 0 ? 0 : 1;
}
