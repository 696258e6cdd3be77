#include "bandtok/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <limits>
#include <sstream>

#include "bandtok/analysis.hpp"
#include "bandtok/formats.hpp"
#include "bandtok/haar.hpp"
#include "bandtok/latent_codec.hpp"
#include "bandtok/micro_lm.hpp"
#include "bandtok/rope.hpp"
#include "bandtok/spectral_losses.hpp"
#include "bandtok/token_grid.hpp"
#include "bandtok/vq.hpp"

namespace bandtok::verify {

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Matrix m(r, c);
    for (double& v : m.data) v = rng.uniform(lo, hi);
    return m;
}

double sq_norm(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return s;
}

TokenGrid random_grid(Rng& rng, std::size_t max_frames, std::size_t max_bands) {
    TokenGrid g;
    g.frames = 1 + rng.below(max_frames);
    g.bands = 1 + rng.below(max_bands);
    g.codebook_size = static_cast<std::uint32_t>(1 + rng.below(8192));
    g.frame_rate_hz = static_cast<float>(rng.uniform(1.0, 50.0));
    g.indices.resize(g.frames * g.bands);
    for (auto& v : g.indices) v = static_cast<std::uint32_t>(rng.below(g.codebook_size));
    return g;
}

double rel_error(double a, double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6}); }

void fd_compare(std::vector<double>& values, const std::vector<double>& analytic, const std::string& name,
                const std::function<double()>& loss, GradStats& st) {
    constexpr double h = 1e-5;
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double saved = values[i];
        values[i] = saved + h;
        const double lp = loss();
        values[i] = saved - h;
        const double lm = loss();
        values[i] = saved;
        const double e = rel_error(analytic[i], (lp - lm) / (2.0 * h));
        ++st.checked;
        if (e > st.max_rel_error || !std::isfinite(e)) {
            st.max_rel_error = std::isfinite(e) ? e : std::numeric_limits<double>::infinity();
            st.worst = name + "[" + std::to_string(i) + "]";
        }
    }
}

}  // namespace

HaarStats haar_property(std::size_t trials, std::size_t max_dim, Rng& rng, double block_scale) {
    HaarStats st;
    const std::size_t half = std::max<std::size_t>(1, max_dim / 2);
    for (std::size_t t = 0; t < trials; ++t) {
        const std::size_t r = 2 * (1 + rng.below(half)), c = 2 * (1 + rng.below(half));
        const Matrix m = random_matrix(r, c, rng, -10.0, 10.0);
        const PatchedSpectrogram p = detail::haar_forward_scaled(m, block_scale);
        const Matrix back = haar_inverse(p);
        for (std::size_t i = 0; i < m.data.size(); ++i)
            st.max_roundtrip_error = std::max(st.max_roundtrip_error, std::abs(back.data[i] - m.data[i]));
        const double e_in = sq_norm(m.data), e_out = sq_norm(p.subbands.data);
        st.max_energy_rel_error = std::max(st.max_energy_rel_error, std::abs(e_out - e_in) / e_in);
    }
    return st;
}

std::size_t vq_oracle_mismatches(std::size_t cells, std::size_t max_k, std::size_t max_c, Rng& rng) {
    std::size_t mismatches = 0, done = 0;
    while (done < cells) {
        const std::size_t k = 1 + rng.below(max_k), c = 1 + rng.below(max_c);
        const std::size_t rows = 1 + rng.below(10), cols = 1 + rng.below(10);
        Matrix codes = random_matrix(k, c, rng);
        // Duplicate a code now and then so ties are exercised.
        if (k > 1 && rng.below(4) == 0)
            for (std::size_t j = 0; j < c; ++j) codes(k - 1, j) = codes(0, j);
        const Codebook cb = Codebook::from_codes(codes);
        Volume z(c, rows, cols);
        for (double& v : z.data) v = rng.uniform(-1.2, 1.2);
        const QuantizationResult q = quantize(z, cb);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t col = 0; col < cols; ++col) {
                std::size_t best = 0;
                double best_d = std::numeric_limits<double>::infinity();
                for (std::size_t i = 0; i < k; ++i) {
                    double d = 0.0;
                    for (std::size_t j = 0; j < c; ++j) d += (z(j, r, col) - codes(i, j)) * (z(j, r, col) - codes(i, j));
                    if (d < best_d) {
                        best_d = d;
                        best = i;
                    }
                }
                if (q.index(r, col) != best) ++mismatches;
            }
        done += rows * cols;
    }
    return mismatches;
}

EmaStats ema_fixed_point(std::size_t updates, double decay, std::size_t ratio_from, std::size_t ratio_to, Rng& rng) {
    constexpr std::size_t K = 8, C = 4, N = 64;
    CodebookConfig cfg;
    cfg.decay = decay;
    Codebook cb = Codebook::random(K, C, rng, 1.0, cfg);
    Volume z(C, N, 1);
    for (double& v : z.data) v = rng.normal();
    std::vector<std::uint32_t> idx(N);
    for (std::size_t i = 0; i < N; ++i) idx[i] = static_cast<std::uint32_t>(i % K);

    // Fixed point: sums of assigned vectors over Laplace-smoothed counts.
    std::vector<double> n(K, 0.0);
    Matrix sums(K, C);
    for (std::size_t i = 0; i < N; ++i) {
        n[idx[i]] += 1.0;
        for (std::size_t c = 0; c < C; ++c) sums(idx[i], c) += z(c, i, 0);
    }
    Matrix target(K, C);
    for (std::size_t k = 0; k < K; ++k) {
        const double sm = (n[k] + cfg.laplace_eps) / (static_cast<double>(N) + K * cfg.laplace_eps) * N;
        for (std::size_t c = 0; c < C; ++c) target(k, c) = sums(k, c) / sm;
    }
    auto deviation = [&] {
        double frob = 0.0, mx = 0.0;
        for (std::size_t i = 0; i < K * C; ++i) {
            const double d = cb.codes.data[i] - target.data[i];
            frob += d * d;
            mx = std::max(mx, std::abs(d));
        }
        return std::pair{std::sqrt(frob), mx};
    };
    EmaStats st;
    double d_from = 0.0, d_to = 0.0;
    for (std::size_t s = 1; s <= updates; ++s) {
        ema_update(cb, z, idx, nullptr);
        if (s == ratio_from) d_from = deviation().first;
        if (s == ratio_to) d_to = deviation().first;
    }
    st.max_deviation = deviation().second;
    if (ratio_to > ratio_from && d_from > 0.0)
        st.decay_ratio = std::pow(d_to / d_from, 1.0 / static_cast<double>(ratio_to - ratio_from));
    return st;
}

std::size_t residual_violations(std::size_t inputs, Rng& rng) {
    constexpr std::size_t depth = 4, K = 16, C = 8;
    std::size_t violations = 0;
    const std::size_t batch = 50;
    for (std::size_t done = 0; done < inputs; done += batch) {
        auto books = make_residual_codebooks(depth, K, C, rng, 1.0);
        const std::size_t n = std::min(batch, inputs - done);
        Volume z(C, n, 1);
        for (double& v : z.data) v = rng.normal();
        const auto layers = residual_quantize(z, books, depth);
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<double> r(C);
            for (std::size_t c = 0; c < C; ++c) r[c] = z(c, i, 0);
            double prev = std::numeric_limits<double>::infinity();
            for (std::size_t l = 0; l < depth; ++l) {
                for (std::size_t c = 0; c < C; ++c) r[c] -= books[l].codes(layers[l].indices[i], c);
                const double e = sq_norm(r);
                if (e > prev) ++violations;
                prev = e;
            }
        }
    }
    return violations;
}

double rope_invariance(std::size_t trials, std::size_t max_head_dim, Rng& rng) {
    double worst = 0.0;
    for (std::size_t t = 0; t < trials; ++t) {
        const std::size_t hd = 2 * (1 + rng.below(max_head_dim / 2));
        RopeConfig cfg = rng.below(2) ? RopeConfig::split_2d(hd) : RopeConfig::one_d(hd);
        cfg.interleaved = rng.below(2) == 0;
        std::vector<double> q(hd), k(hd);
        for (auto& v : q) v = rng.uniform(-1.0, 1.0);
        for (auto& v : k) v = rng.uniform(-1.0, 1.0);
        auto pos = [&] {
            return RopePosition(static_cast<double>(rng.below(512)), static_cast<double>(rng.below(64)),
                                static_cast<double>(rng.below(17)));
        };
        const RopePosition pq = pos(), pk = pos(), d = pos();
        const RopePosition pq2(pq.token + d.token, pq.time + d.time, pq.band + d.band);
        const RopePosition pk2(pk.token + d.token, pk.time + d.time, pk.band + d.band);
        worst = std::max(worst, std::abs(relative_score(q, k, pq2, pk2, cfg) - relative_score(q, k, pq, pk, cfg)));
    }
    return worst;
}

std::size_t rope_1d_mismatches(std::size_t trials, Rng& rng) {
    std::size_t bad = 0;
    for (std::size_t t = 0; t < trials; ++t) {
        const std::size_t hd = 2 * (1 + rng.below(32));
        const double base = rng.below(2) ? 10000.0 : 500.0;
        std::vector<double> v(hd);
        for (auto& x : v) x = rng.uniform(-1.0, 1.0);
        const double p = static_cast<double>(rng.below(4096));
        // Textbook rotary embedding over adjacent pairs.
        std::vector<double> ref(hd);
        for (std::size_t i = 0; i < hd / 2; ++i) {
            const double theta = 1.0 / std::pow(base, (2.0 * static_cast<double>(i)) / static_cast<double>(hd));
            const double a = p * theta;
            ref[2 * i] = v[2 * i] * std::cos(a) - v[2 * i + 1] * std::sin(a);
            ref[2 * i + 1] = v[2 * i] * std::sin(a) + v[2 * i + 1] * std::cos(a);
        }
        const RopePosition pos(p, static_cast<double>(rng.below(100)), static_cast<double>(rng.below(17)));
        if (rotate(v, pos, RopeConfig::one_d(hd, base)) != ref) ++bad;
    }
    return bad;
}

bool positions_match_example() {
    const auto p = assign_positions(2, 2, 3);
    const std::vector<std::int64_t> time{0, 1, 2, 2, 2, 3, 3, 3}, band{0, 0, 1, 2, 3, 1, 2, 3};
    if (p.size() != time.size()) return false;
    for (std::size_t i = 0; i < p.size(); ++i)
        if (p[i].time != time[i] || p[i].band != band[i] || p[i].token != static_cast<std::int64_t>(i)) return false;
    return true;
}

GradStats lm_gradient_check(Rng& rng) {
    MicroLmConfig cfg;
    cfg.vocab = VocabLayout{0, 2, 5};
    cfg.bands = 3;
    cfg.d_model = 16;
    cfg.n_layers = 2;
    cfg.n_heads = 2;
    cfg.d_hidden = 24;
    cfg.rope = RopeConfig::split_2d(8);
    MicroLm lm(cfg);
    Rng init = rng.split(1);
    lm.init(init);
    // Nonzero null vector and norm gains so every tensor has a generic gradient.
    for (auto& p : lm.params())
        if (p.name == "lm.null" || p.name.ends_with("norm"))
            for (auto& v : p.values) v += rng.uniform(-0.5, 0.5);
    for (auto& p : lm.params())
        if (p.name.ends_with("b1") || p.name.ends_with("b2") || p.name.ends_with("out_bias"))
            for (auto& v : p.values) v = rng.uniform(-0.1, 0.1);

    TokenGrid g{std::vector<std::uint32_t>(9), 3, 3, 5, 0.0};
    for (auto& v : g.indices) v = static_cast<std::uint32_t>(rng.below(5));
    ConditioningPrefix prefix{random_matrix(2, cfg.d_model, rng), 3.5, 30.0, false};
    const Matrix rows = lm.prefix_rows(prefix);
    const PositionedSequence seq = make_lm_sequence(rows.rows, g, cfg.vocab);

    GradStats st;
    for (bool null_prefix : {false, true}) {
        // Null rows are broadcast copies of lm.null, so they are rebuilt for every evaluation.
        ConditioningPrefix pf = prefix;
        pf.null_flag = null_prefix;
        ParamSet grads = lm.params().zeros_like();
        lm_loss_and_grad(lm, seq, lm.prefix_rows(pf), null_prefix, &grads);
        auto loss = [&] { return lm_loss_and_grad(lm, seq, lm.prefix_rows(pf), null_prefix, nullptr); };
        for (std::size_t i = 0; i < lm.params().count(); ++i)
            fd_compare(lm.params()[i].values, grads[i].values, lm.params()[i].name, loss, st);
    }
    return st;
}

GradStats composite_gradient_check(Rng& rng) {
    CriticConfig cc;
    cc.channels = {2, 2, 1};
    cc.kernel = 4;
    cc.stride = 2;
    cc.scales = {1.0, 0.5};
    Critic critic(cc);
    Rng init = rng.split(2);
    critic.init_uniform(init);
    const Matrix x = random_matrix(16, 16, rng, -4.0, 0.0);
    Matrix x_hat = random_matrix(16, 16, rng, -4.0, 0.0);
    const double commit = 0.3;
    const LossWeights w;

    const GeneratorLossGrad g = generator_loss_and_grad(x, x_hat, commit, critic, w, true);
    auto loss = [&] { return generator_loss_and_grad(x, x_hat, commit, critic, w).loss.total; };
    GradStats st;
    fd_compare(x_hat.data, g.d_x_hat.data, "x_hat", loss, st);
    for (std::size_t i = 0; i < critic.params().count(); ++i)
        fd_compare(critic.params()[i].values, g.d_critic[i].values, critic.params()[i].name, loss, st);

    // Critic hinge loss gradient as well.
    const CriticLossGrad cl = critic_loss_and_grad(x, x_hat, critic);
    auto closs = [&] { return critic_loss_and_grad(x, x_hat, critic).loss; };
    for (std::size_t i = 0; i < critic.params().count(); ++i)
        fd_compare(critic.params()[i].values, cl.d_critic[i].values, "hinge:" + critic.params()[i].name, closs, st);
    return st;
}

CfgStats cfg_identities(std::size_t pairs, Rng& rng) {
    CfgStats st;
    for (std::size_t t = 0; t < pairs; ++t) {
        const std::size_t v = 2 + rng.below(63);
        std::vector<double> c(v), u(v);
        for (auto& x : c) x = 5.0 * rng.normal();
        for (auto& x : u) x = 5.0 * rng.normal();
        const auto m1 = cfg_mix(c, u, 1.0);
        const auto m0 = cfg_mix(c, u, 0.0);
        if (m1 != c) ++st.w1_mismatch;
        if (m0 != u) ++st.w0_mismatch;
        if (std::max_element(m1.begin(), m1.end()) - m1.begin() != std::max_element(c.begin(), c.end()) - c.begin())
            ++st.argmax_mismatch;
    }
    return st;
}

std::size_t flatten_failures(std::size_t trials, Rng& rng) {
    std::size_t bad = 0;
    for (std::size_t t = 0; t < trials; ++t) {
        const TokenGrid g = random_grid(rng, 24, 32);
        const auto seq = flatten_band_first(g);
        bool ok = seq.size() == g.frames * g.bands;
        for (std::size_t f = 0; ok && f < g.frames; ++f)
            for (std::size_t b = 0; b < g.bands; ++b) ok = ok && seq[f * g.bands + b] == g.at(f, b);
        const TokenGrid back = unflatten(seq, g.bands, g.codebook_size, g.frame_rate_hz);
        ok = ok && back == g && flatten_band_first(back) == seq;
        if (!ok) ++bad;
    }
    return bad;
}

std::size_t format_roundtrip_failures(std::size_t trials, const std::string& dir, Rng& rng) {
    namespace fs = std::filesystem;
    std::size_t bad = 0;
    const fs::path d(dir);
    for (std::size_t t = 0; t < trials; ++t) {
        const TokenGrid g = random_grid(rng, 16, 24);
        const Bytes b1 = encode_btok(g);
        if (encode_btok(decode_btok(b1)) != b1 || decode_btok(b1) != g) ++bad;

        LogMelSpectrogram m;
        m.values = random_matrix(1 + rng.below(20), 8 * (1 + rng.below(4)), rng, -11.0, 2.0);
        m.n_mels = static_cast<int>(m.values.cols);
        const Bytes m1 = encode_bmel(m);
        if (encode_bmel(decode_bmel(m1)) != m1) ++bad;

        ParamSet p;
        p[p.add("a.weight", {2, 3})].values = random_matrix(2, 3, rng).data;
        p[p.add("b", {4})].values = random_matrix(1, 4, rng).data;
        const Bytes p1 = encode_bprm(p);
        if (encode_bprm(decode_bprm(p1)) != p1) ++bad;

        if (t < 10) {
            const fs::path ft = d / "rt.btok", fm = d / "rt.bmel";
            write_btok(ft, g);
            const Bytes a = read_file_bytes(ft);
            write_btok(ft, read_btok(ft));
            if (read_file_bytes(ft) != a) ++bad;
            write_bmel(fm, m);
            const Bytes c = read_file_bytes(fm);
            write_bmel(fm, read_bmel(fm));
            if (read_file_bytes(fm) != c) ++bad;
        }
    }
    return bad;
}

NmiStats nmi_properties(std::size_t independent_samples, Rng& rng) {
    NmiStats st;
    {
        const std::size_t n = 2000;
        std::vector<std::uint32_t> s(2 * n);
        for (std::size_t i = 0; i < n; ++i) s[2 * i] = s[2 * i + 1] = static_cast<std::uint32_t>(rng.below(11));
        st.identical = nmi(s, 2).values(0, 1);
    }
    {
        std::vector<std::uint32_t> s(2 * independent_samples);
        for (auto& v : s) v = static_cast<std::uint32_t>(rng.below(2));
        st.independent = nmi(s, 2).values(0, 1);
    }
    {
        const std::size_t n = 3000, a = 6;
        std::vector<std::uint32_t> s(n * a);
        for (std::size_t i = 0; i < n; ++i) {
            const auto base = static_cast<std::uint32_t>(rng.below(7));
            for (std::size_t j = 0; j < a; ++j)
                s[i * a + j] = rng.below(j + 2) == 0 ? base : static_cast<std::uint32_t>(rng.below(3 + j));
        }
        s[0] = 1;  // keep every column non-constant
        const NmiMatrix m = nmi(s, a);
        for (std::size_t i = 0; i < a; ++i)
            for (std::size_t j = 0; j < a; ++j) {
                const double v = m.values(i, j);
                st.max_asymmetry = std::max(st.max_asymmetry, std::abs(v - m.values(j, i)));
                st.range_violation = std::max({st.range_violation, -v, v - 1.0});
            }
    }
    return st;
}

GeometryStats latent_geometry() {
    const LatentCodec codec;
    const FrontendConfig fe;
    const Matrix mel(87, static_cast<std::size_t>(fe.n_mels), -5.0);
    GeometryStats st;
    st.latent_bands = codec.encode(mel).bands();
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", latent_frame_rate(fe.sample_rate_hz, fe.hop, 8));
    st.frame_rate_2dp = buf;
    return st;
}

std::vector<Check> run_all(const Options& opt) {
    namespace fs = std::filesystem;
    const Rng root(opt.seed);
    std::vector<Check> out;
    auto add = [&](std::string name, bool ok, double measured, double tol, std::string detail = {}) {
        out.push_back({std::move(name), ok, measured, tol, std::move(detail)});
    };

    {
        Rng r = root.split(1);
        const double scale = opt.inject_fault == "haar-normalization" ? 0.5 * 1.01 : 0.5;
        const HaarStats h = haar_property(1000, 64, r, scale);
        add("haar_roundtrip", h.max_roundtrip_error < 1e-12, h.max_roundtrip_error, 1e-12);
        add("haar_energy_conservation", h.max_energy_rel_error < 1e-10, h.max_energy_rel_error, 1e-10);
    }
    {
        const GeometryStats g = latent_geometry();
        add("latent_bands", g.latent_bands == 16, static_cast<double>(g.latent_bands), 0.0);
        add("latent_frame_rate", g.frame_rate_2dp == "10.77", std::stod(g.frame_rate_2dp), 0.005);
    }
    {
        Rng r = root.split(3);
        const auto mm = vq_oracle_mismatches(10000, 64, 8, r);
        add("vq_oracle", mm == 0, static_cast<double>(mm), 0.0);
    }
    {
        Rng r = root.split(4);
        const EmaStats e = ema_fixed_point(500, 0.99, 100, 400, r);
        add("ema_fixed_point", e.max_deviation < 1e-2, e.max_deviation, 1e-2);
        add("ema_decay_ratio", e.decay_ratio >= 0.985 && e.decay_ratio <= 0.995, e.decay_ratio, 0.005);
    }
    {
        Rng r = root.split(5);
        const auto v = residual_violations(1000, r);
        add("residual_monotonic", v == 0, static_cast<double>(v), 0.0);
    }
    {
        Rng r = root.split(6);
        const double inv = rope_invariance(1000, 64, r);
        add("rope_relative_invariance", inv < 1e-10, inv, 1e-10);
        const auto mm = rope_1d_mismatches(1000, r);
        add("rope_1d_reference", mm == 0, static_cast<double>(mm), 0.0);
    }
    add("position_pattern", positions_match_example(), 0.0, 0.0);
    {
        Rng r = root.split(8);
        const GradStats g = lm_gradient_check(r);
        add("lm_gradient", g.max_rel_error < 1e-4, g.max_rel_error, 1e-4, "worst " + g.worst);
        Rng r2 = root.split(9);
        const GradStats c = composite_gradient_check(r2);
        add("composite_loss_gradient", c.max_rel_error < 1e-4, c.max_rel_error, 1e-4, "worst " + c.worst);
    }
    {
        Rng r = root.split(10);
        const CfgStats c = cfg_identities(10000, r);
        const auto total = c.w0_mismatch + c.w1_mismatch + c.argmax_mismatch;
        add("cfg_identities", total == 0, static_cast<double>(total), 0.0);
    }
    {
        Rng r = root.split(11);
        const auto f = flatten_failures(1000, r);
        add("flatten_bijection", f == 0, static_cast<double>(f), 0.0);
    }
    {
        Rng r = root.split(12);
        fs::path dir = opt.scratch_dir;
        bool made = false;
        if (dir.empty()) {
            std::string tmpl = (fs::temp_directory_path() / "bandtok-verify-XXXXXX").string();
            if (!mkdtemp(tmpl.data())) throw IoError("cannot create a scratch directory under " + tmpl);
            dir = tmpl;
            made = true;
        }
        const auto f = format_roundtrip_failures(100, dir.string(), r);
        if (made) fs::remove_all(dir);
        add("format_roundtrip", f == 0, static_cast<double>(f), 0.0);
    }
    {
        Rng r = root.split(13);
        const NmiStats n = nmi_properties(100000, r);
        add("nmi_identical", n.identical == 1.0, n.identical, 0.0);
        add("nmi_independent", n.independent < 0.01, n.independent, 0.01);
        add("nmi_symmetric_range", n.max_asymmetry <= 1e-12 && n.range_violation <= 1e-9,
            std::max(n.max_asymmetry, n.range_violation), 1e-9);
    }
    return out;
}

std::string format_report(const std::vector<Check>& checks) {
    std::ostringstream os;
    std::size_t failed = 0;
    for (const auto& c : checks) {
        char buf[256];
        std::snprintf(buf, sizeof buf, "%-4s %-28s measured=%-12.4g tol=%-10.3g", c.passed ? "PASS" : "FAIL",
                      c.name.c_str(), c.measured, c.tolerance);
        os << buf;
        if (!c.detail.empty()) os << ' ' << c.detail;
        os << '\n';
        failed += c.passed ? 0 : 1;
    }
    os << (failed ? std::to_string(failed) + " check(s) failed" : std::string("all checks passed")) << '\n';
    return os.str();
}

}  // namespace bandtok::verify
