#include "bandtok/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace bandtok {

namespace {

std::vector<std::uint64_t> run_lengths(std::vector<std::uint64_t> keys) {
    std::sort(keys.begin(), keys.end());
    std::vector<std::uint64_t> counts;
    for (std::size_t i = 0; i < keys.size();) {
        std::size_t j = i;
        while (j < keys.size() && keys[j] == keys[i]) ++j;
        counts.push_back(j - i);
        i = j;
    }
    return counts;
}

std::vector<std::string> default_labels(std::size_t n, const std::string& prefix) {
    std::vector<std::string> l;
    for (std::size_t i = 0; i < n; ++i) l.push_back(prefix + std::to_string(i));
    return l;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

}  // namespace

double entropy_from_counts(std::vector<std::uint64_t> counts) {
    std::sort(counts.begin(), counts.end());
    const double n = static_cast<double>(std::accumulate(counts.begin(), counts.end(), std::uint64_t{0}));
    if (n == 0.0) return 0.0;
    double s = 0.0;
    for (auto c : counts)
        if (c) s += static_cast<double>(c) * std::log(static_cast<double>(c));
    const double h = std::log(n) - s / n;
    return h < 0.0 ? 0.0 : h;
}

double column_entropy(std::span<const std::uint32_t> column) {
    return entropy_from_counts(run_lengths({column.begin(), column.end()}));
}

double joint_entropy(std::span<const std::uint32_t> a, std::span<const std::uint32_t> b) {
    if (a.size() != b.size()) throw InvalidInputError("joint_entropy: column lengths differ");
    std::vector<std::uint64_t> keys(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) keys[i] = (static_cast<std::uint64_t>(a[i]) << 32) | b[i];
    return entropy_from_counts(run_lengths(std::move(keys)));
}

double nmi_pair(std::span<const std::uint32_t> a, std::span<const std::uint32_t> b) {
    if (a.size() != b.size()) throw InvalidInputError("nmi: column lengths differ");
    if (a.size() < 2) throw InvalidInputError("nmi: at least two samples required");
    const double ha = column_entropy(a), hb = column_entropy(b);
    if (ha == 0.0 || hb == 0.0) return 0.0;
    const double mi = (ha + hb) - joint_entropy(a, b);
    const double denom = ha == hb ? ha : std::sqrt(ha * hb);
    return std::clamp(mi / denom, 0.0, 1.0);
}

NmiMatrix nmi(std::span<const std::uint32_t> samples, std::size_t axes, std::vector<std::string> labels) {
    if (axes == 0) throw InvalidInputError("nmi: zero axes");
    if (samples.size() % axes != 0) throw InvalidInputError("nmi: sample table is not N x A");
    const std::size_t n = samples.size() / axes;
    if (n < 2) throw InvalidInputError("nmi: at least two samples required, got " + std::to_string(n));
    if (labels.empty()) labels = default_labels(axes, "axis");
    if (labels.size() != axes) throw InvalidInputError("nmi: label count does not match axes");

    std::vector<std::vector<std::uint32_t>> cols(axes, std::vector<std::uint32_t>(n));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t a = 0; a < axes; ++a) cols[a][i] = samples[i * axes + a];

    NmiMatrix out{Matrix(axes, axes), std::move(labels)};
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t i = 0; i < axes; ++i)
        for (std::size_t j = i + 1; j < axes; ++j) pairs.emplace_back(i, j);
    const auto np = static_cast<std::ptrdiff_t>(pairs.size());
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t p = 0; p < np; ++p) {
        const auto [i, j] = pairs[static_cast<std::size_t>(p)];
        const double v = nmi_pair(cols[i], cols[j]);
        out.values(i, j) = v;
        out.values(j, i) = v;
    }
    for (std::size_t i = 0; i < axes; ++i) out.values(i, i) = 1.0;
    return out;
}

NmiMatrix band_nmi(const std::vector<TokenGrid>& grids, std::size_t frame_offset, const std::string& label_prefix) {
    if (grids.empty()) throw InvalidInputError("band_nmi: empty corpus");
    const std::size_t B = grids.front().bands;
    for (const auto& g : grids) {
        g.validate();
        if (g.bands != B) throw InvalidInputError("band_nmi: grids disagree on band count");
    }
    if (frame_offset == 0) {
        std::vector<std::uint32_t> table;
        for (const auto& g : grids) table.insert(table.end(), g.indices.begin(), g.indices.end());
        return nmi(table, B, default_labels(B, label_prefix));
    }
    std::vector<std::vector<std::uint32_t>> lead(B), lag(B);
    for (const auto& g : grids)
        for (std::size_t t = 0; t + frame_offset < g.frames; ++t)
            for (std::size_t b = 0; b < B; ++b) {
                lead[b].push_back(g.at(t, b));
                lag[b].push_back(g.at(t + frame_offset, b));
            }
    if (lead.front().size() < 2) throw InvalidInputError("band_nmi: too few frames for the requested offset");
    NmiMatrix out{Matrix(B, B), default_labels(B, label_prefix)};
    for (std::size_t i = 0; i < B; ++i)
        for (std::size_t j = 0; j < B; ++j) {
            const double hi = column_entropy(lead[i]), hj = column_entropy(lag[j]);
            out.values(i, j) = (hi == 0.0 || hj == 0.0) ? 0.0 : nmi_pair(lead[i], lag[j]);
        }
    return out;
}

std::vector<double> normalize_profile(std::span<const double> raw) {
    if (raw.empty()) throw InvalidInputError("normalize_profile: empty profile");
    const auto [lo, hi] = std::minmax_element(raw.begin(), raw.end());
    const double range = *hi - *lo;
    std::vector<double> out(raw.size(), 0.0);
    if (!(range > 1e-9 * std::max(std::abs(*hi), std::abs(*lo)))) return out;
    for (std::size_t i = 0; i < raw.size(); ++i) out[i] = (raw[i] - *lo) / range;
    return out;
}

PplProfile ppl_profile(const MicroLm& lm, const std::vector<TokenGrid>& corpus, const ConditioningPrefix& prefix,
                       const std::string& label_prefix) {
    if (corpus.empty()) throw InvalidInputError("ppl_profile: empty corpus");
    const std::size_t B = corpus.front().bands;
    for (const auto& g : corpus) {
        g.validate();
        if (g.bands != B) throw InvalidInputError("ppl_profile: grids disagree on axis count");
        if (g.frames == 0) throw InvalidInputError("ppl_profile: empty grid");
    }
    const std::size_t P = lm.prefix_rows(prefix).rows;
    const auto n = static_cast<std::ptrdiff_t>(corpus.size());
    std::vector<std::vector<double>> sums(corpus.size(), std::vector<double>(B, 0.0));
    std::vector<std::vector<std::size_t>> counts(corpus.size(), std::vector<std::size_t>(B, 0));
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t gi = 0; gi < n; ++gi) {
        const auto g = static_cast<std::size_t>(gi);
        const auto seq = make_lm_sequence(P, corpus[g], lm.config().vocab);
        const auto nll = teacher_forced_nll(lm, seq, prefix);
        // nll[k] scores tokens[k + 1], i.e. audio token k of the flattened grid.
        for (std::size_t k = 0; k < nll.size(); ++k) {
            sums[g][k % B] += nll[k];
            ++counts[g][k % B];
        }
    }
    PplProfile p;
    p.raw_ppl.resize(B);
    for (std::size_t a = 0; a < B; ++a) {
        double s = 0.0;
        std::size_t c = 0;
        for (std::size_t g = 0; g < corpus.size(); ++g) {
            s += sums[g][a];
            c += counts[g][a];
        }
        p.raw_ppl[a] = std::exp(s / static_cast<double>(c));
    }
    p.normalized = normalize_profile(p.raw_ppl);
    p.labels = default_labels(B, label_prefix);
    return p;
}

UsageStats usage_stats(std::span<const std::uint32_t> indices, std::size_t k) {
    if (k == 0) throw InvalidInputError("usage_stats: codebook size must be positive");
    UsageStats u;
    u.counts.assign(k, 0);
    for (auto i : indices) {
        if (i >= k)
            throw InvalidInputError("usage_stats: index " + std::to_string(i) + " >= K = " + std::to_string(k));
        ++u.counts[i];
    }
    u.dead = static_cast<std::size_t>(std::count(u.counts.begin(), u.counts.end(), 0));
    u.perplexity = index_perplexity(std::vector<std::uint32_t>(indices.begin(), indices.end()), k);
    return u;
}

Volume fold_bands(const Volume& z) {
    Volume out(z.channels * z.cols, z.rows, 1);
    for (std::size_t c = 0; c < z.channels; ++c)
        for (std::size_t t = 0; t < z.rows; ++t)
            for (std::size_t b = 0; b < z.cols; ++b) out(c * z.cols + b, t, 0) = z(c, t, b);
    return out;
}

TokenGrid residual_grid(const std::vector<QuantizationResult>& layers, std::uint32_t codebook_size,
                        double frame_rate_hz) {
    if (layers.empty()) throw InvalidInputError("residual_grid: no layers");
    const std::size_t T = layers.front().rows * layers.front().cols;
    TokenGrid g;
    g.frames = T;
    g.bands = layers.size();
    g.codebook_size = codebook_size;
    g.frame_rate_hz = frame_rate_hz;
    g.indices.resize(T * layers.size());
    for (std::size_t l = 0; l < layers.size(); ++l) {
        if (layers[l].indices.size() != T) throw InvalidInputError("residual_grid: layer shapes differ");
        for (std::size_t t = 0; t < T; ++t) g.indices[t * layers.size() + l] = layers[l].indices[t];
    }
    g.validate();
    return g;
}

std::string matrix_to_csv(const Matrix& m, const std::vector<std::string>& labels) {
    std::ostringstream os;
    os << "axis";
    for (const auto& l : labels) os << ',' << l;
    os << '\n';
    for (std::size_t i = 0; i < m.rows; ++i) {
        os << (i < labels.size() ? labels[i] : std::to_string(i));
        for (std::size_t j = 0; j < m.cols; ++j) os << ',' << fmt(m(i, j));
        os << '\n';
    }
    return os.str();
}

nlohmann::json nmi_to_json(const NmiMatrix& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t i = 0; i < m.values.rows; ++i) {
        nlohmann::json r = nlohmann::json::array();
        for (std::size_t j = 0; j < m.values.cols; ++j) r.push_back(m.values(i, j));
        rows.push_back(r);
    }
    return {{"labels", m.labels}, {"nmi", rows}};
}

std::string ppl_to_csv(const PplProfile& p) {
    std::ostringstream os;
    os << "axis,raw_ppl,normalized\n";
    for (std::size_t i = 0; i < p.raw_ppl.size(); ++i)
        os << (i < p.labels.size() ? p.labels[i] : std::to_string(i)) << ',' << fmt(p.raw_ppl[i]) << ','
           << fmt(p.normalized[i]) << '\n';
    return os.str();
}

nlohmann::json ppl_to_json(const PplProfile& p) {
    return {{"labels", p.labels}, {"raw_ppl", p.raw_ppl}, {"normalized", p.normalized}};
}

std::string render_heat_table(const Matrix& m, const std::vector<std::string>& labels) {
    static constexpr char kRamp[] = " .:-=+*#%@";
    std::size_t w = 4;
    for (const auto& l : labels) w = std::max(w, l.size());
    std::ostringstream os;
    os << std::string(w + 1, ' ');
    for (std::size_t j = 0; j < m.cols; ++j) os << (j % 10);
    os << '\n';
    for (std::size_t i = 0; i < m.rows; ++i) {
        const std::string l = i < labels.size() ? labels[i] : std::to_string(i);
        os << l << std::string(w + 1 - l.size(), ' ');
        for (std::size_t j = 0; j < m.cols; ++j) {
            const double v = std::clamp(m(i, j), 0.0, 1.0);
            os << kRamp[std::min<std::size_t>(9, static_cast<std::size_t>(v * 10.0))];
        }
        os << "  ";
        for (std::size_t j = 0; j < m.cols; ++j) {
            char buf[16];
            std::snprintf(buf, sizeof buf, "%5.2f", m(i, j));
            os << buf << (j + 1 < m.cols ? " " : "");
        }
        os << '\n';
    }
    return os.str();
}

std::string render_profile(const PplProfile& p) {
    std::ostringstream os;
    for (std::size_t i = 0; i < p.raw_ppl.size(); ++i) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%-8s %10.4f  %5.3f ", i < p.labels.size() ? p.labels[i].c_str() : "?",
                      p.raw_ppl[i], p.normalized[i]);
        os << buf << std::string(static_cast<std::size_t>(std::lround(p.normalized[i] * 30.0)), '#') << '\n';
    }
    return os.str();
}

}  // namespace bandtok
