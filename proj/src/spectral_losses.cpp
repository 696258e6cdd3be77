#include "bandtok/spectral_losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace bandtok {

namespace {

struct Tap {
    std::size_t i0, i1;
    double w0, w1;
};

// Linear interpolation taps for one axis.
std::vector<Tap> axis_taps(std::size_t in, std::size_t out) {
    std::vector<Tap> taps(out);
    const double ratio = static_cast<double>(in) / static_cast<double>(out);
    const double hi = static_cast<double>(in - 1);
    for (std::size_t o = 0; o < out; ++o) {
        const double src = std::clamp((static_cast<double>(o) + 0.5) * ratio - 0.5, 0.0, hi);
        const auto i0 = static_cast<std::size_t>(std::floor(src));
        const std::size_t i1 = std::min(i0 + 1, in - 1);
        const double f = src - static_cast<double>(i0);
        taps[o] = {i0, i1, 1.0 - f, f};
    }
    return taps;
}

void check_scale(double scale) {
    if (!(scale > 0.0) || !std::isfinite(scale))
        throw InvalidInputError("resize_bilinear: scale must be positive, got " + std::to_string(scale));
}

void leaky_inplace(Volume& v, double slope) {
    for (auto& x : v.data)
        if (x < 0.0) x *= slope;
}

void leaky_backward_inplace(Volume& grad, const Volume& preact, double slope) {
    for (std::size_t i = 0; i < grad.data.size(); ++i)
        if (preact.data[i] < 0.0) grad.data[i] *= slope;
}

double mean_of(const Volume& v) {
    double s = 0.0;
    for (double x : v.data) s += x;
    return s / static_cast<double>(v.data.size());
}

double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

void check_gan_inputs(const std::vector<Volume>& real_scores, const std::vector<Volume>& fake_scores,
                      const std::vector<std::vector<Volume>>& real_features,
                      const std::vector<std::vector<Volume>>& fake_features) {
    if (real_scores.size() != fake_scores.size() || real_features.size() != fake_features.size())
        throw InvalidInputError("gan_losses: real/fake scale counts differ");
    if (real_scores.empty()) throw InvalidInputError("gan_losses: no critic scales");
    for (std::size_t s = 0; s < real_scores.size(); ++s)
        if (!real_scores[s].same_shape(fake_scores[s]))
            throw InvalidInputError("gan_losses: score map shapes differ at scale " + std::to_string(s));
    for (std::size_t s = 0; s < real_features.size(); ++s) {
        if (real_features[s].size() != fake_features[s].size())
            throw InvalidInputError("gan_losses: feature layer counts differ at scale " + std::to_string(s));
        for (std::size_t l = 0; l < real_features[s].size(); ++l)
            if (!real_features[s][l].same_shape(fake_features[s][l]))
                throw InvalidInputError("gan_losses: feature shapes differ");
    }
}

std::vector<Volume> scores_of(const CriticOutput& o) {
    std::vector<Volume> v;
    for (const auto& s : o.scales) v.push_back(s.score);
    return v;
}

std::vector<std::vector<Volume>> features_of(const CriticOutput& o) {
    std::vector<std::vector<Volume>> v;
    for (const auto& s : o.scales) v.push_back(s.features);
    return v;
}

std::size_t feature_map_count(const CriticOutput& o) {
    std::size_t n = 0;
    for (const auto& s : o.scales) n += s.features.size();
    return n;
}

double l1_mean(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b))
        throw InvalidInputError("composite_loss: shape mismatch " + std::to_string(a.rows) + "x" +
                                std::to_string(a.cols) + " vs " + std::to_string(b.rows) + "x" +
                                std::to_string(b.cols));
    if (a.data.empty()) throw InvalidInputError("composite_loss: empty spectrogram");
    double s = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) s += std::abs(a.data[i] - b.data[i]);
    return s / static_cast<double>(a.data.size());
}

}  // namespace

void LossWeights::validate() const {
    for (double v : {rec, perc, adv, fm, commit})
        if (!std::isfinite(v) || v < 0.0) throw ConfigError("loss weights must be finite and nonnegative");
}

std::size_t resized_dim(std::size_t dim, double scale) {
    check_scale(scale);
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(static_cast<double>(dim) * scale)));
}

Matrix resize_bilinear(const Matrix& m, double scale) {
    check_scale(scale);
    if (m.empty()) throw InvalidInputError("resize_bilinear: empty matrix");
    const std::size_t ro = resized_dim(m.rows, scale), co = resized_dim(m.cols, scale);
    if (ro == m.rows && co == m.cols) return m;
    const auto tr = axis_taps(m.rows, ro), tc = axis_taps(m.cols, co);
    Matrix out(ro, co);
    for (std::size_t r = 0; r < ro; ++r)
        for (std::size_t c = 0; c < co; ++c) {
            const Tap& a = tr[r];
            const Tap& b = tc[c];
            out(r, c) = a.w0 * (b.w0 * m(a.i0, b.i0) + b.w1 * m(a.i0, b.i1)) +
                        a.w1 * (b.w0 * m(a.i1, b.i0) + b.w1 * m(a.i1, b.i1));
        }
    return out;
}

Matrix resize_bilinear_backward(const Matrix& grad_out, std::size_t rows, std::size_t cols, double scale) {
    check_scale(scale);
    const std::size_t ro = resized_dim(rows, scale), co = resized_dim(cols, scale);
    if (grad_out.rows != ro || grad_out.cols != co)
        throw InvalidInputError("resize_bilinear_backward: gradient shape mismatch");
    if (ro == rows && co == cols) return grad_out;
    const auto tr = axis_taps(rows, ro), tc = axis_taps(cols, co);
    Matrix g(rows, cols);
    for (std::size_t r = 0; r < ro; ++r)
        for (std::size_t c = 0; c < co; ++c) {
            const Tap& a = tr[r];
            const Tap& b = tc[c];
            const double v = grad_out(r, c);
            g(a.i0, b.i0) += a.w0 * b.w0 * v;
            g(a.i0, b.i1) += a.w0 * b.w1 * v;
            g(a.i1, b.i0) += a.w1 * b.w0 * v;
            g(a.i1, b.i1) += a.w1 * b.w1 * v;
        }
    return g;
}

std::size_t CriticConfig::total_stride() const {
    std::size_t s = 1;
    for (std::size_t i = 0; i < channels.size(); ++i) s *= stride;
    return s;
}

void CriticConfig::validate() const {
    if (channels.empty()) throw ConfigError("critic: at least one layer required");
    for (auto c : channels)
        if (c == 0) throw ConfigError("critic: zero channel count");
    if (kernel == 0 || stride == 0) throw ConfigError("critic: kernel and stride must be positive");
    if (scales.empty()) throw ConfigError("critic: at least one scale required");
    for (double s : scales)
        if (!(s > 0.0 && s <= 1.0)) throw ConfigError("critic: scales must lie in (0, 1]");
    if (!(leaky_slope >= 0.0)) throw ConfigError("critic: negative leaky slope");
}

Critic::Critic(CriticConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    w_.resize(cfg_.scales.size());
    b_.resize(cfg_.scales.size());
    for (std::size_t s = 0; s < cfg_.scales.size(); ++s)
        for (std::size_t l = 0; l < cfg_.channels.size(); ++l) {
            const auto g = geometry(l);
            const std::string p = "critic.s" + std::to_string(s) + ".c" + std::to_string(l) + ".";
            w_[s].push_back(params_.add(p + "weight", {g.out_channels, g.in_channels, g.kernel, g.kernel}));
            b_[s].push_back(params_.add(p + "bias", {g.out_channels}));
        }
}

Critic::Critic(CriticConfig cfg, const ParamSet& params) : Critic(std::move(cfg)) {
    for (auto& p : params_) {
        const Param& src = params.get(p.name);
        if (src.shape != p.shape) throw FormatError("critic: tensor " + p.name + " has unexpected shape");
        p.values = src.values;
    }
}

kernels::ConvGeometry Critic::geometry(std::size_t layer) const {
    return {layer == 0 ? 1 : cfg_.channels[layer - 1], cfg_.channels[layer], cfg_.kernel, cfg_.stride};
}

void Critic::init_uniform(Rng& rng) {
    for (std::size_t s = 0; s < w_.size(); ++s)
        for (std::size_t l = 0; l < w_[s].size(); ++l) {
            const auto g = geometry(l);
            params_.init_uniform(w_[s][l], g.in_channels * g.kernel * g.kernel, rng);
            std::fill(params_[b_[s][l]].values.begin(), params_[b_[s][l]].values.end(), 0.0);
        }
}

bool Critic::scale_active(std::size_t rows, std::size_t cols, std::size_t scale_index) const {
    const double sc = cfg_.scales.at(scale_index);
    const std::size_t need = cfg_.total_stride();
    return resized_dim(rows, sc) >= need && resized_dim(cols, sc) >= need;
}

CriticOutput Critic::forward(const Matrix& m, Cache* cache) const {
    if (m.empty()) throw InvalidInputError("critic: empty input");
    CriticOutput out;
    if (cache) *cache = Cache{m.rows, m.cols, {}};
    const std::size_t n = cfg_.channels.size();
    for (std::size_t s = 0; s < cfg_.scales.size(); ++s) {
        if (!scale_active(m.rows, m.cols, s)) {
            out.warnings.push_back("critic scale " + std::to_string(cfg_.scales[s]) + " skipped: input " +
                                   std::to_string(m.rows) + "x" + std::to_string(m.cols) +
                                   " is below the stack stride " + std::to_string(cfg_.total_stride()));
            continue;
        }
        const Matrix r = resize_bilinear(m, cfg_.scales[s]);
        Volume a(1, r.rows, r.cols);
        a.data = r.data;
        CriticScaleOutput so;
        so.scale_index = s;
        ScaleCache sc;
        sc.scale_index = s;
        for (std::size_t l = 0; l < n; ++l) {
            if (cache) sc.inputs.push_back(a);
            Volume z = kernels::conv2d_forward(a, params_[w_[s][l]].values, params_[b_[s][l]].values, geometry(l));
            if (l + 1 == n) {
                so.score = z;
                if (cache) sc.preacts.push_back(std::move(z));
                break;
            }
            if (cache) sc.preacts.push_back(z);
            leaky_inplace(z, cfg_.leaky_slope);
            so.features.push_back(z);
            a = std::move(z);
        }
        out.scales.push_back(std::move(so));
        if (cache) cache->scales.push_back(std::move(sc));
    }
    if (out.scales.empty())
        throw InvalidInputError("critic: every scale skipped for a " + std::to_string(m.rows) + "x" +
                                std::to_string(m.cols) + " input");
    return out;
}

Matrix Critic::backward(const Cache& cache, const std::vector<Volume>& d_scores,
                        const std::vector<std::vector<Volume>>& d_features, ParamSet& grads) const {
    if (d_scores.size() != cache.scales.size()) throw InvalidInputError("critic backward: scale count mismatch");
    if (!d_features.empty() && d_features.size() != cache.scales.size())
        throw InvalidInputError("critic backward: feature scale count mismatch");
    const std::size_t n = cfg_.channels.size();
    Matrix d_input(cache.rows, cache.cols);
    for (std::size_t k = 0; k < cache.scales.size(); ++k) {
        const ScaleCache& sc = cache.scales[k];
        const std::size_t s = sc.scale_index;
        Volume g = d_scores[k];
        for (std::size_t l = n; l-- > 0;) {
            if (l + 1 < n) {
                if (!d_features.empty() && !d_features[k].empty()) {
                    const Volume& df = d_features[k][l];
                    for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] += df.data[i];
                }
                leaky_backward_inplace(g, sc.preacts[l], cfg_.leaky_slope);
            }
            Volume gx;
            kernels::conv2d_backward(sc.inputs[l], params_[w_[s][l]].values, geometry(l), g, gx,
                                     grads[w_[s][l]].values, grads[b_[s][l]].values);
            g = std::move(gx);
        }
        Matrix gm(g.rows, g.cols);
        gm.data = std::move(g.data);
        const Matrix back = resize_bilinear_backward(gm, cache.rows, cache.cols, cfg_.scales[s]);
        for (std::size_t i = 0; i < back.data.size(); ++i) d_input.data[i] += back.data[i];
    }
    return d_input;
}

GanLosses gan_losses(const std::vector<Volume>& real_scores, const std::vector<Volume>& fake_scores,
                     const std::vector<std::vector<Volume>>& real_features,
                     const std::vector<std::vector<Volume>>& fake_features) {
    check_gan_inputs(real_scores, fake_scores, real_features, fake_features);
    GanLosses out;
    const auto S = static_cast<double>(real_scores.size());
    for (std::size_t s = 0; s < real_scores.size(); ++s) {
        double hr = 0.0, hf = 0.0;
        for (double v : real_scores[s].data) hr += std::max(0.0, 1.0 - v);
        for (double v : fake_scores[s].data) hf += std::max(0.0, 1.0 + v);
        const auto n = static_cast<double>(real_scores[s].data.size());
        out.critic += (hr / n + hf / n) / S;
        out.generator_adv -= mean_of(fake_scores[s]) / S;
    }
    std::size_t maps = 0;
    double fm = 0.0;
    for (std::size_t s = 0; s < real_features.size(); ++s)
        for (std::size_t l = 0; l < real_features[s].size(); ++l) {
            const auto& r = real_features[s][l].data;
            const auto& f = fake_features[s][l].data;
            double acc = 0.0;
            for (std::size_t i = 0; i < r.size(); ++i) acc += std::abs(r[i] - f[i]);
            fm += acc / static_cast<double>(r.size());
            ++maps;
        }
    out.feature_matching = maps ? fm / static_cast<double>(maps) : 0.0;
    return out;
}

GanLosses gan_losses(const CriticOutput& real, const CriticOutput& fake) {
    for (std::size_t i = 0; i < std::min(real.scales.size(), fake.scales.size()); ++i)
        if (real.scales[i].scale_index != fake.scales[i].scale_index)
            throw InvalidInputError("gan_losses: real and fake critics used different scales");
    return gan_losses(scores_of(real), scores_of(fake), features_of(real), features_of(fake));
}

LossBreakdown composite_loss(const Matrix& x, const Matrix& x_hat, double commitment_loss,
                             const CriticOutput& critic_real, const CriticOutput& critic_fake, const LossWeights& w,
                             const PerceptualFn& perceptual) {
    w.validate();
    LossBreakdown b;
    b.rec = l1_mean(x, x_hat);
    b.perc = perceptual ? perceptual(x, x_hat) : 0.0;
    const GanLosses g = gan_losses(critic_real, critic_fake);
    b.adv = g.generator_adv;
    b.fm = g.feature_matching;
    b.commit = commitment_loss;
    b.total = w.rec * b.rec + w.perc * b.perc + w.adv * b.adv + w.fm * b.fm + w.commit * b.commit;
    return b;
}

LossBreakdown composite_loss(const LogMelSpectrogram& x, const LogMelSpectrogram& x_hat, const QuantizationResult& q,
                             const CriticOutput& critic_real, const CriticOutput& critic_fake, const LossWeights& w,
                             const PerceptualFn& perceptual) {
    return composite_loss(x.values, x_hat.values, q.commitment_loss, critic_real, critic_fake, w, perceptual);
}

GeneratorLossGrad generator_loss_and_grad(const Matrix& x, const Matrix& x_hat, double commitment_loss,
                                          const Critic& critic, const LossWeights& w, bool want_critic_grads,
                                          const PerceptualFn& perceptual) {
    Critic::Cache real_cache, fake_cache;
    const CriticOutput real = critic.forward(x, want_critic_grads ? &real_cache : nullptr);
    const CriticOutput fake = critic.forward(x_hat, &fake_cache);
    GeneratorLossGrad out;
    out.loss = composite_loss(x, x_hat, commitment_loss, real, fake, w, perceptual);

    // Reconstruction term.
    out.d_x_hat = Matrix(x.rows, x.cols);
    const double rec_scale = w.rec / static_cast<double>(x.data.size());
    for (std::size_t i = 0; i < x.data.size(); ++i) out.d_x_hat.data[i] = rec_scale * sign(x_hat.data[i] - x.data[i]);

    // Adversarial and feature-matching terms through the fake (and real) branch.
    const std::size_t S = fake.scales.size();
    const std::size_t maps = feature_map_count(fake);
    std::vector<Volume> d_fake_scores(S), d_real_scores(S);
    std::vector<std::vector<Volume>> d_fake_feat(S), d_real_feat(S);
    for (std::size_t s = 0; s < S; ++s) {
        const Volume& fs = fake.scales[s].score;
        d_fake_scores[s] = Volume(fs.channels, fs.rows, fs.cols, -w.adv / (static_cast<double>(S) * fs.data.size()));
        d_real_scores[s] = Volume(fs.channels, fs.rows, fs.cols);
        for (std::size_t l = 0; l < fake.scales[s].features.size(); ++l) {
            const Volume& ff = fake.scales[s].features[l];
            const Volume& rf = real.scales[s].features[l];
            const double k = w.fm / (static_cast<double>(maps) * static_cast<double>(ff.data.size()));
            Volume df(ff.channels, ff.rows, ff.cols), dr(ff.channels, ff.rows, ff.cols);
            for (std::size_t i = 0; i < ff.data.size(); ++i) {
                df.data[i] = k * sign(ff.data[i] - rf.data[i]);
                dr.data[i] = -df.data[i];
            }
            d_fake_feat[s].push_back(std::move(df));
            d_real_feat[s].push_back(std::move(dr));
        }
    }
    ParamSet scratch = critic.params().zeros_like();
    const Matrix d_adv = critic.backward(fake_cache, d_fake_scores, d_fake_feat, scratch);
    for (std::size_t i = 0; i < d_adv.data.size(); ++i) out.d_x_hat.data[i] += d_adv.data[i];
    if (want_critic_grads) {
        critic.backward(real_cache, d_real_scores, d_real_feat, scratch);
        out.d_critic = std::move(scratch);
    }
    return out;
}

CriticLossGrad critic_loss_and_grad(const Matrix& x, const Matrix& x_hat, const Critic& critic) {
    Critic::Cache real_cache, fake_cache;
    const CriticOutput real = critic.forward(x, &real_cache);
    const CriticOutput fake = critic.forward(x_hat, &fake_cache);
    CriticLossGrad out;
    out.loss = gan_losses(real, fake).critic;
    const std::size_t S = real.scales.size();
    std::vector<Volume> dr(S), df(S);
    for (std::size_t s = 0; s < S; ++s) {
        const Volume& rs = real.scales[s].score;
        const Volume& fs = fake.scales[s].score;
        const double k = 1.0 / (static_cast<double>(S) * static_cast<double>(rs.data.size()));
        dr[s] = Volume(rs.channels, rs.rows, rs.cols);
        df[s] = Volume(fs.channels, fs.rows, fs.cols);
        for (std::size_t i = 0; i < rs.data.size(); ++i) {
            if (1.0 - rs.data[i] > 0.0) dr[s].data[i] = -k;
            if (1.0 + fs.data[i] > 0.0) df[s].data[i] = k;
        }
    }
    out.d_critic = critic.params().zeros_like();
    critic.backward(real_cache, dr, {}, out.d_critic);
    critic.backward(fake_cache, df, {}, out.d_critic);
    return out;
}

}  // namespace bandtok
