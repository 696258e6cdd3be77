#include "bandtok/micro_lm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <string>

namespace bandtok {

namespace {

// y = x · Wᵀ (+ b); W is out × in, row-major.
Matrix linear(const Matrix& x, const std::vector<double>& w, const std::vector<double>* b, std::size_t out) {
    const std::size_t in = x.cols;
    Matrix y(x.rows, out);
    for (std::size_t r = 0; r < x.rows; ++r) {
        const double* xr = &x.data[r * in];
        for (std::size_t o = 0; o < out; ++o) {
            const double* wo = &w[o * in];
            double s = b ? (*b)[o] : 0.0;
            for (std::size_t i = 0; i < in; ++i) s += wo[i] * xr[i];
            y(r, o) = s;
        }
    }
    return y;
}

// dW += dyᵀ x, db += Σ dy, dx += dy · W.
void linear_backward(const Matrix& x, const std::vector<double>& w, const Matrix& dy, std::vector<double>& dw,
                     std::vector<double>* db, Matrix* dx) {
    const std::size_t in = x.cols, out = dy.cols;
    for (std::size_t r = 0; r < x.rows; ++r) {
        const double* xr = &x.data[r * in];
        for (std::size_t o = 0; o < out; ++o) {
            const double g = dy(r, o);
            if (g == 0.0) continue;
            double* dwo = &dw[o * in];
            for (std::size_t i = 0; i < in; ++i) dwo[i] += g * xr[i];
            if (db) (*db)[o] += g;
            if (dx) {
                const double* wo = &w[o * in];
                double* dxr = &dx->data[r * in];
                for (std::size_t i = 0; i < in; ++i) dxr[i] += g * wo[i];
            }
        }
    }
}

double rms(const double* x, std::size_t d, double eps) {
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) s += x[i] * x[i];
    return std::sqrt(s / static_cast<double>(d) + eps);
}

Matrix rmsnorm(const Matrix& x, const std::vector<double>& g, double eps) {
    Matrix n(x.rows, x.cols);
    for (std::size_t r = 0; r < x.rows; ++r) {
        const double* xr = &x.data[r * x.cols];
        const double inv = 1.0 / rms(xr, x.cols, eps);
        for (std::size_t c = 0; c < x.cols; ++c) n(r, c) = xr[c] * inv * g[c];
    }
    return n;
}

void rmsnorm_backward(const Matrix& x, const std::vector<double>& g, double eps, const Matrix& dn,
                      std::vector<double>& dg, Matrix& dx) {
    const std::size_t d = x.cols;
    for (std::size_t r = 0; r < x.rows; ++r) {
        const double* xr = &x.data[r * d];
        const double* dnr = &dn.data[r * d];
        const double rr = rms(xr, d, eps);
        const double inv = 1.0 / rr;
        double dot = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            dg[c] += dnr[c] * xr[c] * inv;
            dot += g[c] * dnr[c] * xr[c];
        }
        const double k = dot / (static_cast<double>(d) * rr * rr * rr);
        for (std::size_t c = 0; c < d; ++c) dx(r, c) += g[c] * dnr[c] * inv - xr[c] * k;
    }
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

double gelu(double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + 0.044715 * x * x * x))); }

double gelu_grad(double x) {
    const double t = std::tanh(kGeluC * (x + 0.044715 * x * x * x));
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
}

void add_into(Matrix& dst, const Matrix& src) {
    for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

double log_sum_exp(const double* v, std::size_t n) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) m = std::max(m, v[i]);
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += std::exp(v[i] - m);
    return m + std::log(s);
}

}  // namespace

void MicroLmConfig::validate() const {
    if (vocab.total() == 0) throw ConfigError("micro_lm: empty vocabulary");
    if (vocab.special_size <= VocabLayout::kEndAudio) throw ConfigError("micro_lm: vocabulary needs BOS/END specials");
    if (bands == 0) throw ConfigError("micro_lm: bands must be positive");
    if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0)
        throw ConfigError("micro_lm: d_model must be a positive multiple of n_heads");
    if (d_hidden == 0) throw ConfigError("micro_lm: d_hidden must be positive");
    if (rope.head_dim != head_dim())
        throw ConfigError("micro_lm: rope head_dim " + std::to_string(rope.head_dim) + " != d_model/n_heads " +
                          std::to_string(head_dim()));
    rope.validate();
    if (use_segment_time && d_model % 2 != 0) throw ConfigError("micro_lm: segment-time encoding needs even d_model");
    if (!(null_prefix_prob >= 0.0 && null_prefix_prob <= 1.0))
        throw ConfigError("micro_lm: null_prefix_prob must lie in [0, 1]");
    if (!(norm_eps > 0.0)) throw ConfigError("micro_lm: norm_eps must be positive");
    if (!(time_freq_lo > 0.0 && time_freq_hi >= time_freq_lo)) throw ConfigError("micro_lm: bad frequency range");
}

Matrix encode_segment_time(double start_s, double duration_s, std::size_t d, double freq_lo, double freq_hi) {
    if (!(start_s >= 0.0)) throw InvalidInputError("encode_segment_time: start must be nonnegative");
    if (start_s > duration_s)
        throw InvalidInputError("encode_segment_time: start " + std::to_string(start_s) + " s exceeds duration " +
                                std::to_string(duration_s) + " s");
    if (d == 0 || d % 2 != 0) throw InvalidInputError("encode_segment_time: dimension must be even and positive");
    const std::size_t n = d / 2;
    std::vector<double> freq(n);
    for (std::size_t k = 0; k < n; ++k)
        freq[k] = n == 1 ? std::sqrt(freq_lo * freq_hi)
                         : freq_lo * std::pow(freq_hi / freq_lo, static_cast<double>(k) / static_cast<double>(n - 1));
    Matrix m(2, d);
    const double xs[2] = {start_s, duration_s};
    for (std::size_t r = 0; r < 2; ++r)
        for (std::size_t k = 0; k < n; ++k) {
            m(r, 2 * k) = std::sin(freq[k] * xs[r]);
            m(r, 2 * k + 1) = std::cos(freq[k] * xs[r]);
        }
    return m;
}

MicroLm::MicroLm(MicroLmConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    build_layout();
}

MicroLm::MicroLm(MicroLmConfig cfg, const ParamSet& params) : MicroLm(std::move(cfg)) {
    for (auto& p : params_) {
        const Param& src = params.get(p.name);
        if (src.shape != p.shape) throw FormatError("micro_lm: tensor " + p.name + " has unexpected shape");
        p.values = src.values;
    }
}

void MicroLm::build_layout() {
    const std::size_t d = cfg_.d_model, V = cfg_.vocab.total(), h = cfg_.d_hidden;
    embed_ = params_.add("lm.embed", {V, d});
    null_ = params_.add("lm.null", {d});
    layers_.clear();
    for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
        const std::string p = "lm.l" + std::to_string(l) + ".";
        LayerIdx li{};
        li.attn_norm = params_.add(p + "attn_norm", {d}, 1.0);
        li.wq = params_.add(p + "wq", {d, d});
        li.wk = params_.add(p + "wk", {d, d});
        li.wv = params_.add(p + "wv", {d, d});
        li.wo = params_.add(p + "wo", {d, d});
        li.ffn_norm = params_.add(p + "ffn_norm", {d}, 1.0);
        li.w1 = params_.add(p + "w1", {h, d});
        li.b1 = params_.add(p + "b1", {h});
        li.w2 = params_.add(p + "w2", {d, h});
        li.b2 = params_.add(p + "b2", {d});
        layers_.push_back(li);
    }
    final_norm_ = params_.add("lm.final_norm", {d}, 1.0);
    out_ = params_.add("lm.out", {V, d});
    out_bias_ = params_.add("lm.out_bias", {V});
    rope_layout_ = rope_pair_layout(cfg_.rope);
}

void MicroLm::init(Rng& rng) {
    const std::size_t d = cfg_.d_model;
    params_.init_uniform(embed_, d, rng);
    std::fill(params_[null_].values.begin(), params_[null_].values.end(), 0.0);
    for (const auto& li : layers_) {
        for (auto i : {li.wq, li.wk, li.wv, li.wo, li.w1}) params_.init_uniform(i, d, rng);
        params_.init_uniform(li.w2, cfg_.d_hidden, rng);
        for (auto i : {li.b1, li.b2}) std::fill(params_[i].values.begin(), params_[i].values.end(), 0.0);
        for (auto i : {li.attn_norm, li.ffn_norm}) std::fill(params_[i].values.begin(), params_[i].values.end(), 1.0);
    }
    std::fill(params_[final_norm_].values.begin(), params_[final_norm_].values.end(), 1.0);
    params_.init_uniform(out_, d, rng);
    std::fill(params_[out_bias_].values.begin(), params_[out_bias_].values.end(), 0.0);
}

Matrix MicroLm::prefix_rows(const ConditioningPrefix& prefix) const {
    const std::size_t d = cfg_.d_model;
    if (!prefix.embeddings.empty() && prefix.embeddings.cols != d)
        throw InvalidInputError("micro_lm: prefix embedding width " + std::to_string(prefix.embeddings.cols) +
                                " != d_model " + std::to_string(d));
    const std::size_t p = prefix.embeddings.rows;
    const std::size_t total = p + (cfg_.use_segment_time ? 2 : 0);
    Matrix rows(total, d);
    if (prefix.null_flag) {
        const auto& nv = params_[null_].values;
        for (std::size_t r = 0; r < total; ++r) std::copy(nv.begin(), nv.end(), &rows.data[r * d]);
        return rows;
    }
    std::copy(prefix.embeddings.data.begin(), prefix.embeddings.data.end(), rows.data.begin());
    if (cfg_.use_segment_time) {
        if (!(prefix.track_duration_s > 0.0))
            throw InvalidInputError("micro_lm: track duration must be positive");
        const Matrix st = encode_segment_time(prefix.segment_start_s, prefix.track_duration_s, d, cfg_.time_freq_lo,
                                              cfg_.time_freq_hi);
        std::copy(st.data.begin(), st.data.end(), rows.data.begin() + static_cast<std::ptrdiff_t>(p * d));
    }
    return rows;
}

Matrix MicroLm::forward(const PositionedSequence& seq, const ConditioningPrefix& prefix, Cache* cache) const {
    return forward_rows(seq, prefix_rows(prefix), prefix.null_flag, cache);
}

Matrix MicroLm::forward_rows(const PositionedSequence& seq, const Matrix& prefix, bool null_prefix,
                             Cache* cache) const {
    const std::size_t d = cfg_.d_model, V = cfg_.vocab.total(), H = cfg_.n_heads, hd = cfg_.head_dim();
    const std::size_t P = prefix.rows, L = seq.size(), N = P + L;
    if (L == 0) throw InvalidInputError("micro_lm: empty token sequence");
    if (P > 0 && prefix.cols != d) throw InvalidInputError("micro_lm: prefix width does not match d_model");
    if (seq.prefix_rows != P)
        throw InvalidInputError("micro_lm: sequence expects " + std::to_string(seq.prefix_rows) +
                                " prefix rows, got " + std::to_string(P));
    if (seq.positions.size() != L) throw InvalidInputError("micro_lm: positions do not match tokens");
    for (auto t : seq.tokens)
        if (t >= V)
            throw InvalidInputError("micro_lm: token id " + std::to_string(t) + " >= vocabulary " + std::to_string(V));

    Cache local;
    Cache& c = cache ? *cache : local;
    c = Cache{};
    c.prefix = P;
    c.n = N;
    c.tokens = seq.tokens;
    c.null_prefix = null_prefix;
    c.positions.resize(N);
    for (std::size_t i = 0; i < P; ++i) {
        const auto p = static_cast<double>(i);
        c.positions[i] = RopePosition(p, p, 0.0);
    }
    for (std::size_t i = 0; i < L; ++i) c.positions[P + i] = seq.positions[i];

    Matrix x(N, d);
    std::copy(prefix.data.begin(), prefix.data.end(), x.data.begin());
    const auto& emb = params_[embed_].values;
    for (std::size_t i = 0; i < L; ++i)
        std::copy_n(&emb[seq.tokens[i] * d], d, &x.data[(P + i) * d]);

    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    c.layers.resize(layers_.size());
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const LayerIdx& li = layers_[l];
        LayerCache& lc = c.layers[l];
        lc.x = x;
        lc.n1 = rmsnorm(x, params_[li.attn_norm].values, cfg_.norm_eps);
        lc.q = linear(lc.n1, params_[li.wq].values, nullptr, d);
        lc.k = linear(lc.n1, params_[li.wk].values, nullptr, d);
        lc.v = linear(lc.n1, params_[li.wv].values, nullptr, d);
        for (std::size_t i = 0; i < N; ++i)
            for (std::size_t h = 0; h < H; ++h) {
                rotate_inplace(std::span<double>(&lc.q.data[i * d + h * hd], hd), c.positions[i], rope_layout_);
                rotate_inplace(std::span<double>(&lc.k(i, h * hd), hd), c.positions[i], rope_layout_);
            }
        lc.o = Matrix(N, d);
        lc.attn.assign(H, Matrix(N, N));
        for (std::size_t h = 0; h < H; ++h) {
            Matrix& a = lc.attn[h];
            for (std::size_t i = 0; i < N; ++i) {
                const double* qi = &lc.q.data[i * d + h * hd];
                double m = -std::numeric_limits<double>::infinity();
                for (std::size_t j = 0; j <= i; ++j) {
                    const double* kj = &lc.k.data[j * d + h * hd];
                    double s = 0.0;
                    for (std::size_t e = 0; e < hd; ++e) s += qi[e] * kj[e];
                    a(i, j) = s * scale;
                    m = std::max(m, a(i, j));
                }
                double z = 0.0;
                for (std::size_t j = 0; j <= i; ++j) z += (a(i, j) = std::exp(a(i, j) - m));
                for (std::size_t j = 0; j <= i; ++j) a(i, j) /= z;
                double* oi = &lc.o(i, h * hd);
                for (std::size_t j = 0; j <= i; ++j) {
                    const double w = a(i, j);
                    const double* vj = &lc.v.data[j * d + h * hd];
                    for (std::size_t e = 0; e < hd; ++e) oi[e] += w * vj[e];
                }
            }
        }
        x = lc.x;
        add_into(x, linear(lc.o, params_[li.wo].values, nullptr, d));
        lc.x1 = x;
        lc.n2 = rmsnorm(x, params_[li.ffn_norm].values, cfg_.norm_eps);
        lc.h = linear(lc.n2, params_[li.w1].values, &params_[li.b1].values, cfg_.d_hidden);
        lc.g = lc.h;
        for (auto& v : lc.g.data) v = gelu(v);
        add_into(x, linear(lc.g, params_[li.w2].values, &params_[li.b2].values, d));
    }
    c.x_final = x;
    // Only token rows produce logits.
    Matrix tail(L, d);
    std::copy(x.data.begin() + static_cast<std::ptrdiff_t>(P * d), x.data.end(), tail.data.begin());
    c.n_final = rmsnorm(tail, params_[final_norm_].values, cfg_.norm_eps);
    return linear(c.n_final, params_[out_].values, &params_[out_bias_].values, V);
}

void MicroLm::backward(const Cache& c, const Matrix& dlogits, ParamSet& grads) const {
    const std::size_t d = cfg_.d_model, H = cfg_.n_heads, hd = cfg_.head_dim();
    const std::size_t P = c.prefix, N = c.n, L = N - P;
    if (!grads.same_layout(params_)) throw InvalidInputError("micro_lm: gradient set layout mismatch");
    if (dlogits.rows != L || dlogits.cols != cfg_.vocab.total())
        throw InvalidInputError("micro_lm: dlogits shape does not match the cached forward pass");

    Matrix dn_final(L, d);
    linear_backward(c.n_final, params_[out_].values, dlogits, grads[out_].values, &grads[out_bias_].values,
                    &dn_final);
    Matrix tail(L, d);
    std::copy(c.x_final.data.begin() + static_cast<std::ptrdiff_t>(P * d), c.x_final.data.end(), tail.data.begin());
    Matrix dtail(L, d);
    rmsnorm_backward(tail, params_[final_norm_].values, cfg_.norm_eps, dn_final, grads[final_norm_].values, dtail);
    Matrix dx(N, d);
    std::copy(dtail.data.begin(), dtail.data.end(), dx.data.begin() + static_cast<std::ptrdiff_t>(P * d));

    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    for (std::size_t l = layers_.size(); l-- > 0;) {
        const LayerIdx& li = layers_[l];
        const LayerCache& lc = c.layers[l];

        // Feed-forward branch; dx carries through the residual.
        Matrix dg(N, cfg_.d_hidden);
        linear_backward(lc.g, params_[li.w2].values, dx, grads[li.w2].values, &grads[li.b2].values, &dg);
        for (std::size_t i = 0; i < dg.data.size(); ++i) dg.data[i] *= gelu_grad(lc.h.data[i]);
        Matrix dn2(N, d);
        linear_backward(lc.n2, params_[li.w1].values, dg, grads[li.w1].values, &grads[li.b1].values, &dn2);
        rmsnorm_backward(lc.x1, params_[li.ffn_norm].values, cfg_.norm_eps, dn2, grads[li.ffn_norm].values, dx);

        // Attention branch.
        Matrix d_o(N, d);
        linear_backward(lc.o, params_[li.wo].values, dx, grads[li.wo].values, nullptr, &d_o);
        Matrix dq(N, d), dk(N, d), dv(N, d);
        std::vector<double> da(N);
        for (std::size_t h = 0; h < H; ++h) {
            const Matrix& a = lc.attn[h];
            for (std::size_t i = 0; i < N; ++i) {
                const double* doi = &d_o(i, h * hd);
                double dot = 0.0;
                for (std::size_t j = 0; j <= i; ++j) {
                    const double* vj = &lc.v.data[j * d + h * hd];
                    double* dvj = &dv(j, h * hd);
                    double s = 0.0;
                    for (std::size_t e = 0; e < hd; ++e) {
                        s += doi[e] * vj[e];
                        dvj[e] += a(i, j) * doi[e];
                    }
                    da[j] = s;
                    dot += a(i, j) * s;
                }
                const double* qi = &lc.q.data[i * d + h * hd];
                double* dqi = &dq(i, h * hd);
                for (std::size_t j = 0; j <= i; ++j) {
                    const double ds = a(i, j) * (da[j] - dot) * scale;
                    if (ds == 0.0) continue;
                    const double* kj = &lc.k.data[j * d + h * hd];
                    double* dkj = &dk(j, h * hd);
                    for (std::size_t e = 0; e < hd; ++e) {
                        dqi[e] += ds * kj[e];
                        dkj[e] += ds * qi[e];
                    }
                }
            }
        }
        for (std::size_t i = 0; i < N; ++i)
            for (std::size_t h = 0; h < H; ++h) {
                rotate_inplace(std::span<double>(&dq(i, h * hd), hd), c.positions[i], rope_layout_, -1.0);
                rotate_inplace(std::span<double>(&dk(i, h * hd), hd), c.positions[i], rope_layout_, -1.0);
            }
        Matrix dn1(N, d);
        linear_backward(lc.n1, params_[li.wq].values, dq, grads[li.wq].values, nullptr, &dn1);
        linear_backward(lc.n1, params_[li.wk].values, dk, grads[li.wk].values, nullptr, &dn1);
        linear_backward(lc.n1, params_[li.wv].values, dv, grads[li.wv].values, nullptr, &dn1);
        rmsnorm_backward(lc.x, params_[li.attn_norm].values, cfg_.norm_eps, dn1, grads[li.attn_norm].values, dx);
    }

    auto& demb = grads[embed_].values;
    for (std::size_t i = 0; i < L; ++i) {
        double* row = &demb[c.tokens[i] * d];
        for (std::size_t e = 0; e < d; ++e) row[e] += dx(P + i, e);
    }
    if (c.null_prefix) {
        auto& dnull = grads[null_].values;
        for (std::size_t i = 0; i < P; ++i)
            for (std::size_t e = 0; e < d; ++e) dnull[e] += dx(i, e);
    }
}

std::vector<double> teacher_forced_nll(const MicroLm& lm, const PositionedSequence& seq,
                                       const ConditioningPrefix& prefix) {
    if (seq.size() < 2) throw InvalidInputError("teacher_forced_nll: sequence needs at least two tokens");
    const Matrix logits = lm.forward(seq, prefix);
    const std::size_t V = logits.cols;
    std::vector<double> nll(seq.size() - 1);
    for (std::size_t i = 1; i < seq.size(); ++i) {
        const double* row = &logits.data[(i - 1) * V];
        nll[i - 1] = log_sum_exp(row, V) - row[seq.tokens[i]];
    }
    return nll;
}

double perplexity(std::span<const double> nll) {
    if (nll.empty()) throw InvalidInputError("perplexity: empty NLL sequence");
    return std::exp(std::accumulate(nll.begin(), nll.end(), 0.0) / static_cast<double>(nll.size()));
}

std::vector<double> cfg_mix(std::span<const double> cond, std::span<const double> uncond, double w) {
    if (cond.size() != uncond.size())
        throw InvalidInputError("cfg_mix: length mismatch " + std::to_string(cond.size()) + " vs " +
                                std::to_string(uncond.size()));
    std::vector<double> out(cond.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = w * cond[i] + (1.0 - w) * uncond[i];
    return out;
}

std::size_t sample_token(std::span<const double> logits, const SamplerConfig& cfg, Rng& rng) {
    const std::size_t n = logits.size();
    if (n == 0) throw InvalidInputError("sample_token: empty logits");
    if (!(cfg.temperature >= 0.0)) throw InvalidInputError("sample_token: temperature must be nonnegative");
    if (cfg.top_k && *cfg.top_k == 0) throw InvalidInputError("sample_token: top_k must be positive");
    if (cfg.temperature == 0.0)
        return static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());

    std::vector<char> keep(n, 1);
    if (cfg.top_k && *cfg.top_k < n) {
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return logits[a] > logits[b]; });
        std::fill(keep.begin(), keep.end(), 0);
        for (std::size_t i = 0; i < *cfg.top_k; ++i) keep[order[i]] = 1;
    }
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i)
        if (keep[i]) m = std::max(m, logits[i] / cfg.temperature);
    std::vector<double> p(n, 0.0);
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        if (keep[i]) z += (p[i] = std::exp(logits[i] / cfg.temperature - m));
    const double u = rng.uniform() * z;
    double acc = 0.0;
    std::size_t last = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!keep[i]) continue;
        acc += p[i];
        last = i;
        if (u < acc) return i;
    }
    return last;
}

TokenGrid sample(const MicroLm& lm, const ConditioningPrefix& prefix, const SamplerConfig& cfg,
                 std::size_t max_frames, double frame_rate_hz) {
    if (max_frames == 0) throw InvalidInputError("sample: max_frames must be at least 1");
    if (!(cfg.guidance_scale >= 0.0)) throw InvalidInputError("sample: guidance scale must be nonnegative");
    const auto& mc = lm.config();
    const std::size_t B = mc.bands, K = mc.vocab.audio_size, off = mc.vocab.audio_offset();
    if (K == 0) throw ConfigError("sample: model has no audio vocabulary");

    const Matrix cond_rows = lm.prefix_rows(prefix);
    ConditioningPrefix null_prefix = prefix;
    null_prefix.null_flag = true;
    const Matrix null_rows = lm.prefix_rows(null_prefix);

    Rng rng(cfg.seed);
    std::vector<std::uint32_t> codes;
    codes.reserve(max_frames * B);
    for (std::size_t step = 0; step < max_frames * B; ++step) {
        const auto seq = make_lm_sequence(cond_rows.rows, codes, B, mc.vocab);
        // The position of the token being predicted is implied by the sequence
        // length; logits come from the last row.
        const Matrix lc = lm.forward_rows(seq, cond_rows, prefix.null_flag);
        const Matrix lu = lm.forward_rows(seq, null_rows, true);
        const std::size_t last = seq.size() - 1;
        const std::span<const double> c(&lc.data[last * lc.cols + off], K);
        const std::span<const double> u(&lu.data[last * lu.cols + off], K);
        const auto mixed = cfg_mix(c, u, cfg.guidance_scale);
        codes.push_back(static_cast<std::uint32_t>(sample_token(mixed, cfg, rng)));
    }
    return unflatten(codes, B, static_cast<std::uint32_t>(K), frame_rate_hz);
}

double lm_loss_and_grad(const MicroLm& lm, const PositionedSequence& seq, const Matrix& prefix_rows, bool null_prefix,
                        ParamSet* grads, double grad_scale) {
    const std::size_t L = seq.size();
    if (L < 2) throw InvalidInputError("lm_loss_and_grad: sequence needs at least two tokens");
    MicroLm::Cache cache;
    const Matrix logits = lm.forward_rows(seq, prefix_rows, null_prefix, grads ? &cache : nullptr);
    const std::size_t V = logits.cols;
    const double inv = 1.0 / static_cast<double>(L - 1);
    Matrix dlogits(L, V);
    double loss = 0.0;
    for (std::size_t i = 1; i < L; ++i) {
        const double* row = &logits.data[(i - 1) * V];
        const double lse = log_sum_exp(row, V);
        loss += lse - row[seq.tokens[i]];
        if (!grads) continue;
        double* dr = &dlogits.data[(i - 1) * V];
        for (std::size_t v = 0; v < V; ++v) dr[v] = std::exp(row[v] - lse) * inv * grad_scale;
        dr[seq.tokens[i]] -= inv * grad_scale;
    }
    if (grads) lm.backward(cache, dlogits, *grads);
    return loss * inv;
}

std::vector<LmStepLog> train_lm(MicroLm& lm, const std::vector<LmExample>& corpus, const LmTrainConfig& cfg,
                                const std::function<void(const LmStepLog&)>& on_step) {
    if (corpus.empty()) throw InvalidInputError("train_lm: empty corpus");
    const std::size_t n = corpus.size();
    std::vector<Matrix> cond_rows(n), null_rows(n);
    std::vector<ConditioningPrefix> null_prefixes(n);
    for (std::size_t e = 0; e < n; ++e) {
        if (corpus[e].seq.size() < 2) throw InvalidInputError("train_lm: every sequence needs at least two tokens");
        cond_rows[e] = lm.prefix_rows(corpus[e].prefix);
        null_prefixes[e] = corpus[e].prefix;
        null_prefixes[e].null_flag = true;
    }
    Adam opt(lm.params(), cfg.adam);
    const Rng root(cfg.seed);
    std::vector<ParamSet> per(n, lm.params().zeros_like());
    std::vector<double> losses(n);
    std::vector<LmStepLog> log;
    log.reserve(cfg.steps);
    const double p_null = lm.config().null_prefix_prob;
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        const Rng step_rng = root.split(step);
        // The null vector is a parameter, so its broadcast rows change every step.
        for (std::size_t e = 0; e < n; ++e) null_rows[e] = lm.prefix_rows(null_prefixes[e]);
        const auto ni = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(dynamic)
        for (std::ptrdiff_t ei = 0; ei < ni; ++ei) {
            const auto e = static_cast<std::size_t>(ei);
            Rng r = step_rng.split(e);
            const bool use_null = corpus[e].prefix.null_flag || r.uniform() < p_null;
            per[e].fill(0.0);
            const double scale = 1.0 / static_cast<double>(n);
            losses[e] = lm_loss_and_grad(lm, corpus[e].seq, use_null ? null_rows[e] : cond_rows[e], use_null,
                                         &per[e], scale);
        }
        // Fixed-order reduction keeps the update independent of thread count.
        ParamSet grads = per[0];
        for (std::size_t e = 1; e < n; ++e) grads.add_scaled(per[e], 1.0);
        const double mean_loss = std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(n);
        const LmStepLog entry{step, mean_loss, grads.l2_norm()};
        opt.step(lm.params(), grads);
        log.push_back(entry);
        if (on_step) on_step(entry);
    }
    return log;
}

double corpus_nll(const MicroLm& lm, const std::vector<LmExample>& corpus) {
    if (corpus.empty()) throw InvalidInputError("corpus_nll: empty corpus");
    const std::size_t n = corpus.size();
    std::vector<double> sums(n);
    std::vector<std::size_t> counts(n);
    const auto ni = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t ei = 0; ei < ni; ++ei) {
        const auto e = static_cast<std::size_t>(ei);
        const auto nll = teacher_forced_nll(lm, corpus[e].seq, corpus[e].prefix);
        sums[e] = std::accumulate(nll.begin(), nll.end(), 0.0);
        counts[e] = nll.size();
    }
    const double total = std::accumulate(sums.begin(), sums.end(), 0.0);
    const auto count = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
    return total / static_cast<double>(count);
}

}  // namespace bandtok
