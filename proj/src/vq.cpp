#include "bandtok/vq.hpp"

#include <cmath>
#include <string>

#include "bandtok/kernels.hpp"

namespace bandtok {

Codebook Codebook::from_codes(Matrix codes, const CodebookConfig& cfg) {
    if (codes.rows == 0 || codes.cols == 0) throw ConfigError("codebook: K and C must be positive");
    Codebook cb;
    cb.ema_embed_sum = codes;
    cb.codes = std::move(codes);
    cb.ema_cluster_size.assign(cb.codes.rows, 1.0);
    cb.decay = cfg.decay;
    cb.laplace_eps = cfg.laplace_eps;
    cb.dead_threshold = cfg.dead_threshold;
    cb.dead_patience = cfg.dead_patience;
    cb.usage_count.assign(cb.codes.rows, 0);
    cb.dead_streak.assign(cb.codes.rows, 0);
    return cb;
}

Codebook Codebook::random(std::size_t k, std::size_t dim, Rng& rng, double scale, const CodebookConfig& cfg) {
    Matrix codes(k, dim);
    for (double& v : codes.data) v = rng.uniform(-scale, scale);
    return from_codes(std::move(codes), cfg);
}

void Codebook::reset_statistics_to_zero() {
    std::fill(ema_cluster_size.begin(), ema_cluster_size.end(), 0.0);
    std::fill(ema_embed_sum.data.begin(), ema_embed_sum.data.end(), 0.0);
}

double Codebook::smoothed_cluster_size(std::size_t i) const {
    double total = 0.0;
    for (double v : ema_cluster_size) total += v;
    const double k = static_cast<double>(size());
    return (ema_cluster_size[i] + laplace_eps) / (total + k * laplace_eps) * total;
}

void Codebook::pin_zero_code() {
    pinned_zero = true;
    for (std::size_t c = 0; c < dim(); ++c) {
        codes(0, c) = 0.0;
        ema_embed_sum(0, c) = 0.0;
    }
}

Matrix cells_of(const Volume& z) {
    Matrix cells(z.rows * z.cols, z.channels);
    for (std::size_t ch = 0; ch < z.channels; ++ch)
        for (std::size_t r = 0; r < z.rows; ++r)
            for (std::size_t c = 0; c < z.cols; ++c) cells(r * z.cols + c, ch) = z(ch, r, c);
    return cells;
}

Volume volume_from_cells(const Matrix& cells, std::size_t channels, std::size_t rows, std::size_t cols) {
    Volume z(channels, rows, cols);
    for (std::size_t ch = 0; ch < channels; ++ch)
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) z(ch, r, c) = cells(r * cols + c, ch);
    return z;
}

double index_perplexity(const std::vector<std::uint32_t>& indices, std::size_t k) {
    if (indices.empty() || k == 0) return 1.0;
    std::vector<std::uint64_t> counts(k, 0);
    for (auto i : indices) ++counts[i];
    const double n = static_cast<double>(indices.size());
    double h = 0.0;
    for (auto c : counts) {
        if (c == 0) continue;
        const double p = static_cast<double>(c) / n;
        h -= p * std::log(p);
    }
    return std::min(std::max(std::exp(h), 1.0), static_cast<double>(k));
}

QuantizationResult quantize(const Volume& z, const Codebook& cb) {
    if (z.channels != cb.dim())
        throw InvalidInputError("quantize: latent has " + std::to_string(z.channels) + " channels, codebook has " +
                                std::to_string(cb.dim()));
    const Matrix cells = cells_of(z);
    QuantizationResult q;
    q.rows = z.rows;
    q.cols = z.cols;
    std::vector<double> dist;
    q.indices = kernels::nearest_codes(cells, cb.codes, &dist);
    Matrix chosen(cells.rows, cells.cols);
    for (std::size_t i = 0; i < cells.rows; ++i)
        for (std::size_t ch = 0; ch < cells.cols; ++ch) chosen(i, ch) = cb.codes(q.indices[i], ch);
    q.quantized = volume_from_cells(chosen, z.channels, z.rows, z.cols);
    double sq = 0.0;
    for (double d : dist) sq += d;
    q.commitment_loss = z.data.empty() ? 0.0 : sq / static_cast<double>(z.data.size());
    q.perplexity = index_perplexity(q.indices, cb.size());
    return q;
}

void record_usage(Codebook& cb, const std::vector<std::uint32_t>& indices) {
    for (auto i : indices) {
        if (i >= cb.size()) throw InvalidInputError("record_usage: index out of range");
        ++cb.usage_count[i];
    }
}

void ema_update(Codebook& cb, const Volume& z, const std::vector<std::uint32_t>& indices, Rng* reseed_rng) {
    const std::size_t k = cb.size(), dim = cb.dim();
    if (z.channels != dim) throw InvalidInputError("ema_update: channel mismatch");
    const Matrix cells = cells_of(z);
    if (indices.size() != cells.rows) throw InvalidInputError("ema_update: index count does not match the grid");

    std::vector<double> counts(k, 0.0);
    Matrix sums(k, dim);
    for (std::size_t i = 0; i < cells.rows; ++i) {
        const auto code = indices[i];
        if (code >= k) throw InvalidInputError("ema_update: index out of range");
        counts[code] += 1.0;
        for (std::size_t c = 0; c < dim; ++c) sums(code, c) += cells(i, c);
    }
    record_usage(cb, indices);

    const double g = cb.decay;
    for (std::size_t i = 0; i < k; ++i) {
        cb.ema_cluster_size[i] = g * cb.ema_cluster_size[i] + (1.0 - g) * counts[i];
        for (std::size_t c = 0; c < dim; ++c)
            cb.ema_embed_sum(i, c) = g * cb.ema_embed_sum(i, c) + (1.0 - g) * sums(i, c);
    }

    if (reseed_rng && cb.dead_patience > 0) {
        for (std::size_t i = 0; i < k; ++i) {
            if (cb.pinned_zero && i == 0) continue;
            if (cb.smoothed_cluster_size(i) < cb.dead_threshold) {
                if (++cb.dead_streak[i] >= cb.dead_patience) {
                    const std::size_t src = reseed_rng->below(cells.rows);
                    cb.ema_cluster_size[i] = 1.0;
                    for (std::size_t c = 0; c < dim; ++c) cb.ema_embed_sum(i, c) = cells(src, c);
                    cb.dead_streak[i] = 0;
                }
            } else {
                cb.dead_streak[i] = 0;
            }
        }
    }
    if (cb.pinned_zero)
        for (std::size_t c = 0; c < dim; ++c) cb.ema_embed_sum(0, c) = 0.0;

    double total = 0.0;
    for (double v : cb.ema_cluster_size) total += v;
    const double denom = total + static_cast<double>(k) * cb.laplace_eps;
    for (std::size_t i = 0; i < k; ++i) {
        const double smoothed = (cb.ema_cluster_size[i] + cb.laplace_eps) / denom * total;
        if (smoothed <= 0.0) continue;
        for (std::size_t c = 0; c < dim; ++c) cb.codes(i, c) = cb.ema_embed_sum(i, c) / smoothed;
    }
}

std::vector<QuantizationResult> residual_quantize(const Volume& z, const std::vector<Codebook>& books,
                                                  std::size_t depth) {
    if (books.empty()) throw ConfigError("residual_quantize: no codebooks");
    if (depth != books.size()) throw ConfigError("residual_quantize: depth must equal the number of codebooks");
    for (std::size_t l = 1; l < books.size(); ++l)
        if (!books[l].pinned_zero) throw ConfigError("residual_quantize: layers after the first need a pinned zero code");
    std::vector<QuantizationResult> out;
    out.reserve(depth);
    Volume residual = z;
    for (std::size_t l = 0; l < depth; ++l) {
        QuantizationResult q = quantize(residual, books[l]);
        for (std::size_t i = 0; i < residual.data.size(); ++i) residual.data[i] -= q.quantized.data[i];
        out.push_back(std::move(q));
    }
    return out;
}

std::vector<Codebook> make_residual_codebooks(std::size_t depth, std::size_t k, std::size_t dim, Rng& rng,
                                              double scale, const CodebookConfig& cfg) {
    std::vector<Codebook> books;
    for (std::size_t l = 0; l < depth; ++l) {
        // Later layers refine smaller residuals.
        const double s = scale / static_cast<double>(1u << std::min<std::size_t>(l, 20));
        books.push_back(Codebook::random(k, dim, rng, s, cfg));
        if (l > 0) books.back().pin_zero_code();
    }
    return books;
}

LatentGrid straight_through(const LatentGrid& z, const QuantizationResult& q) {
    if (!z.values.same_shape(q.quantized)) throw InvalidInputError("straight_through: shape mismatch");
    return LatentGrid{q.quantized, z.source_frames, z.source_bins};
}

Volume straight_through_backward(const Volume& grad_out) { return grad_out; }

Volume commitment_grad(const Volume& z, const QuantizationResult& q) {
    if (!z.same_shape(q.quantized)) throw InvalidInputError("commitment_grad: shape mismatch");
    Volume g(z.channels, z.rows, z.cols);
    const double scale = 2.0 / static_cast<double>(z.data.size());
    for (std::size_t i = 0; i < z.data.size(); ++i) g.data[i] = scale * (z.data[i] - q.quantized.data[i]);
    return g;
}

Matrix codebook_loss_grad(const Volume& z, const QuantizationResult& q, std::size_t k) {
    if (!z.same_shape(q.quantized)) throw InvalidInputError("codebook_loss_grad: shape mismatch");
    Matrix g(k, z.channels);
    const double scale = 2.0 / static_cast<double>(z.data.size());
    for (std::size_t r = 0; r < z.rows; ++r)
        for (std::size_t c = 0; c < z.cols; ++c) {
            const auto code = q.index(r, c);
            for (std::size_t ch = 0; ch < z.channels; ++ch)
                g(code, ch) += scale * (q.quantized(ch, r, c) - z(ch, r, c));
        }
    return g;
}

void append_codebook_tensors(ParamSet& out, const Codebook& cb, const std::string& prefix) {
    const std::size_t k = cb.size(), c = cb.dim();
    out[out.add(prefix + ".codes", {k, c})].values = cb.codes.data;
    out[out.add(prefix + ".ema_cluster_size", {k})].values = cb.ema_cluster_size;
    out[out.add(prefix + ".ema_embed_sum", {k, c})].values = cb.ema_embed_sum.data;
}

Codebook codebook_from_tensors(const ParamSet& in, const CodebookConfig& cfg, const std::string& prefix) {
    const Param& codes = in.get(prefix + ".codes");
    if (codes.shape.size() != 2) throw FormatError("codebook: codes tensor must be rank 2");
    const std::size_t k = codes.shape[0], c = codes.shape[1];
    Matrix m(k, c);
    m.data = codes.values;
    Codebook cb = Codebook::from_codes(std::move(m), cfg);
    const Param& size = in.get(prefix + ".ema_cluster_size");
    const Param& sum = in.get(prefix + ".ema_embed_sum");
    if (size.values.size() != k || sum.values.size() != k * c) throw FormatError("codebook: EMA tensor shape mismatch");
    cb.ema_cluster_size = size.values;
    cb.ema_embed_sum.data = sum.values;
    return cb;
}

}  // namespace bandtok
