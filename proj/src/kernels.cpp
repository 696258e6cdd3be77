#include "bandtok/kernels.hpp"

#include <limits>
#include <utility>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace bandtok::kernels {

namespace {

void check_conv_args(const Volume& x, std::span<const double> weight, std::size_t bias_size,
                     const ConvGeometry& g) {
    if (x.channels != g.in_channels) throw InvalidInputError("conv2d: input channel mismatch");
    if (weight.size() != g.weight_size()) throw InvalidInputError("conv2d: weight size mismatch");
    if (bias_size != g.out_channels) throw InvalidInputError("conv2d: bias size mismatch");
    if (g.stride == 0 || g.kernel == 0) throw ConfigError("conv2d: zero stride or kernel");
}

inline std::size_t widx(const ConvGeometry& g, std::size_t co, std::size_t ci, std::size_t kh, std::size_t kw) {
    return ((co * g.in_channels + ci) * g.kernel + kh) * g.kernel + kw;
}

}  // namespace

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

Volume conv2d_forward(const Volume& x, std::span<const double> weight, std::span<const double> bias,
                      const ConvGeometry& g) {
    check_conv_args(x, weight, bias.size(), g);
    const std::size_t ho = g.out_dim(x.rows), wo = g.out_dim(x.cols);
    const auto pad = static_cast<std::ptrdiff_t>(g.pad());
    const auto s = static_cast<std::ptrdiff_t>(g.stride);
    const auto h = static_cast<std::ptrdiff_t>(x.rows), w = static_cast<std::ptrdiff_t>(x.cols);
    Volume out(g.out_channels, ho, wo);
    const auto n_out = static_cast<std::ptrdiff_t>(g.out_channels * ho);

#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t job = 0; job < n_out; ++job) {
        const auto co = static_cast<std::size_t>(job) / ho;
        const auto orow = static_cast<std::ptrdiff_t>(static_cast<std::size_t>(job) % ho);
        for (std::size_t ocol = 0; ocol < wo; ++ocol) {
            double acc = bias[co];
            for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
                for (std::size_t kh = 0; kh < g.kernel; ++kh) {
                    const std::ptrdiff_t r = orow * s + static_cast<std::ptrdiff_t>(kh) - pad;
                    if (r < 0 || r >= h) continue;
                    for (std::size_t kw = 0; kw < g.kernel; ++kw) {
                        const std::ptrdiff_t c =
                            static_cast<std::ptrdiff_t>(ocol) * s + static_cast<std::ptrdiff_t>(kw) - pad;
                        if (c < 0 || c >= w) continue;
                        acc += weight[widx(g, co, ci, kh, kw)] *
                               x(ci, static_cast<std::size_t>(r), static_cast<std::size_t>(c));
                    }
                }
            }
            out(co, static_cast<std::size_t>(orow), ocol) = acc;
        }
    }
    return out;
}

void conv2d_backward(const Volume& x, std::span<const double> weight, const ConvGeometry& g,
                     const Volume& grad_out, Volume& grad_x, std::span<double> grad_weight,
                     std::span<double> grad_bias) {
    check_conv_args(x, weight, grad_bias.size(), g);
    const std::size_t ho = g.out_dim(x.rows), wo = g.out_dim(x.cols);
    if (grad_out.channels != g.out_channels || grad_out.rows != ho || grad_out.cols != wo)
        throw InvalidInputError("conv2d_backward: gradient shape mismatch");
    if (grad_weight.size() != g.weight_size()) throw InvalidInputError("conv2d_backward: grad weight size");
    const auto pad = static_cast<std::ptrdiff_t>(g.pad());
    const auto s = static_cast<std::ptrdiff_t>(g.stride);
    const auto h = static_cast<std::ptrdiff_t>(x.rows), w = static_cast<std::ptrdiff_t>(x.cols);
    const auto sho = static_cast<std::ptrdiff_t>(ho), swo = static_cast<std::ptrdiff_t>(wo);

    grad_x = Volume(x.channels, x.rows, x.cols);
    // (tap, output index) pairs that reach each input column; only taps with
    // k = (i + pad) mod s land on the stride lattice.
    const auto lattice = [&](std::ptrdiff_t i, std::ptrdiff_t n_out) {
        std::vector<std::pair<std::size_t, std::size_t>> taps;
        const std::ptrdiff_t ip = i + pad, k = static_cast<std::ptrdiff_t>(g.kernel);
        for (std::ptrdiff_t t = ip % s; t < k && t <= ip; t += s)
            if ((ip - t) / s < n_out) taps.emplace_back(static_cast<std::size_t>(t), static_cast<std::size_t>((ip - t) / s));
        return taps;
    };
    std::vector<std::vector<std::pair<std::size_t, std::size_t>>> col_taps(x.cols);
    for (std::ptrdiff_t c = 0; c < w; ++c) col_taps[static_cast<std::size_t>(c)] = lattice(c, swo);
    const auto n_in = static_cast<std::ptrdiff_t>(x.channels * x.rows);

#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t job = 0; job < n_in; ++job) {
        const auto ci = static_cast<std::size_t>(job) / x.rows;
        const auto r = static_cast<std::size_t>(job) % x.rows;
        const auto row_taps = lattice(static_cast<std::ptrdiff_t>(r), sho);
        double* gxr = &grad_x.data[(ci * x.rows + r) * x.cols];
        for (std::size_t co = 0; co < g.out_channels; ++co)
            for (const auto& [kh, orow] : row_taps) {
                const double* go = &grad_out.data[(co * ho + orow) * wo];
                const double* wr = &weight[widx(g, co, ci, kh, 0)];
                for (std::size_t c = 0; c < x.cols; ++c) {
                    double acc = 0.0;
                    for (const auto& [kw, ocol] : col_taps[c]) acc += go[ocol] * wr[kw];
                    gxr[c] += acc;
                }
            }
    }

    const auto n_co = static_cast<std::ptrdiff_t>(g.out_channels);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t sco = 0; sco < n_co; ++sco) {
        const auto co = static_cast<std::size_t>(sco);
        double bsum = 0.0;
        for (std::size_t orow = 0; orow < ho; ++orow)
            for (std::size_t ocol = 0; ocol < wo; ++ocol) bsum += grad_out(co, orow, ocol);
        grad_bias[co] += bsum;
        for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
            for (std::size_t kh = 0; kh < g.kernel; ++kh) {
                for (std::size_t kw = 0; kw < g.kernel; ++kw) {
                    // Output columns whose tap stays inside the input.
                    const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(kw) - pad;
                    const std::ptrdiff_t lo = off < 0 ? (-off + s - 1) / s : 0;
                    const std::ptrdiff_t last = w - 1 - off;  // floor division needs last >= 0
                    const std::ptrdiff_t hi = last < 0 ? 0 : std::min(swo, last / s + 1);
                    double acc = 0.0;
                    for (std::ptrdiff_t orow = 0; orow < sho; ++orow) {
                        const std::ptrdiff_t r = orow * s + static_cast<std::ptrdiff_t>(kh) - pad;
                        if (r < 0 || r >= h) continue;
                        const double* go = &grad_out.data[(co * ho + static_cast<std::size_t>(orow)) * wo];
                        const double* xr = &x.data[(ci * x.rows + static_cast<std::size_t>(r)) * x.cols];
                        for (std::ptrdiff_t ocol = lo; ocol < hi; ++ocol) acc += go[ocol] * xr[ocol * s + off];
                    }
                    grad_weight[widx(g, co, ci, kh, kw)] += acc;
                }
            }
        }
    }
}

Volume upsample_nearest(const Volume& x, std::size_t factor) {
    Volume out(x.channels, x.rows * factor, x.cols * factor);
    for (std::size_t ch = 0; ch < out.channels; ++ch)
        for (std::size_t r = 0; r < out.rows; ++r)
            for (std::size_t c = 0; c < out.cols; ++c) out(ch, r, c) = x(ch, r / factor, c / factor);
    return out;
}

Volume upsample_nearest_backward(const Volume& grad_out, std::size_t factor) {
    Volume g(grad_out.channels, grad_out.rows / factor, grad_out.cols / factor);
    for (std::size_t ch = 0; ch < grad_out.channels; ++ch)
        for (std::size_t r = 0; r < grad_out.rows; ++r)
            for (std::size_t c = 0; c < grad_out.cols; ++c) g(ch, r / factor, c / factor) += grad_out(ch, r, c);
    return g;
}

Matrix matmul_bt(const Matrix& a, const Matrix& b) {
    if (a.cols != b.cols) throw InvalidInputError("matmul_bt: inner dimension mismatch");
    Matrix c(a.rows, b.rows);
    const auto n = static_cast<std::ptrdiff_t>(a.rows);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t si = 0; si < n; ++si) {
        const auto i = static_cast<std::size_t>(si);
        const double* ar = &a.data[i * a.cols];
        for (std::size_t j = 0; j < b.rows; ++j) {
            const double* br = &b.data[j * b.cols];
            double acc = 0.0;
            for (std::size_t k = 0; k < a.cols; ++k) acc += ar[k] * br[k];
            c(i, j) = acc;
        }
    }
    return c;
}

std::vector<std::uint32_t> nearest_codes(const Matrix& vectors, const Matrix& codes, std::vector<double>* distances) {
    if (vectors.cols != codes.cols) throw InvalidInputError("nearest_codes: dimension mismatch");
    if (codes.rows == 0) throw InvalidInputError("nearest_codes: empty codebook");
    std::vector<std::uint32_t> idx(vectors.rows);
    std::vector<double> best_d(vectors.rows);
    const auto n = static_cast<std::ptrdiff_t>(vectors.rows);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t si = 0; si < n; ++si) {
        const auto i = static_cast<std::size_t>(si);
        const double* v = &vectors.data[i * vectors.cols];
        double best = std::numeric_limits<double>::infinity();
        std::uint32_t arg = 0;
        for (std::size_t k = 0; k < codes.rows; ++k) {
            const double* c = &codes.data[k * codes.cols];
            double d = 0.0;
            for (std::size_t j = 0; j < codes.cols; ++j) {
                const double diff = v[j] - c[j];
                d += diff * diff;
            }
            if (d < best) {
                best = d;
                arg = static_cast<std::uint32_t>(k);
            }
        }
        idx[i] = arg;
        best_d[i] = best;
    }
    if (distances) *distances = std::move(best_d);
    return idx;
}

namespace reference {

// Scatter formulation: each output contribution is pushed from the weight's
// point of view. Independent of the gather loops above.
Volume conv2d_forward(const Volume& x, std::span<const double> weight, std::span<const double> bias,
                      const ConvGeometry& g) {
    check_conv_args(x, weight, bias.size(), g);
    const std::size_t ho = g.out_dim(x.rows), wo = g.out_dim(x.cols);
    Volume out(g.out_channels, ho, wo);
    for (std::size_t co = 0; co < g.out_channels; ++co)
        for (std::size_t orow = 0; orow < ho; ++orow)
            for (std::size_t ocol = 0; ocol < wo; ++ocol) out(co, orow, ocol) = bias[co];
    const long pad = static_cast<long>(g.pad());
    for (std::size_t co = 0; co < g.out_channels; ++co)
        for (std::size_t ci = 0; ci < g.in_channels; ++ci)
            for (std::size_t kh = 0; kh < g.kernel; ++kh)
                for (std::size_t kw = 0; kw < g.kernel; ++kw) {
                    const double wv = weight[widx(g, co, ci, kh, kw)];
                    for (std::size_t orow = 0; orow < ho; ++orow) {
                        const long r = static_cast<long>(orow * g.stride + kh) - pad;
                        if (r < 0 || r >= static_cast<long>(x.rows)) continue;
                        for (std::size_t ocol = 0; ocol < wo; ++ocol) {
                            const long c = static_cast<long>(ocol * g.stride + kw) - pad;
                            if (c < 0 || c >= static_cast<long>(x.cols)) continue;
                            out(co, orow, ocol) += wv * x(ci, static_cast<std::size_t>(r), static_cast<std::size_t>(c));
                        }
                    }
                }
    return out;
}

void conv2d_backward(const Volume& x, std::span<const double> weight, const ConvGeometry& g,
                     const Volume& grad_out, Volume& grad_x, std::span<double> grad_weight,
                     std::span<double> grad_bias) {
    check_conv_args(x, weight, grad_bias.size(), g);
    const std::size_t ho = g.out_dim(x.rows), wo = g.out_dim(x.cols);
    if (grad_out.channels != g.out_channels || grad_out.rows != ho || grad_out.cols != wo)
        throw InvalidInputError("conv2d_backward: gradient shape mismatch");
    grad_x = Volume(x.channels, x.rows, x.cols);
    const long pad = static_cast<long>(g.pad());
    for (std::size_t co = 0; co < g.out_channels; ++co)
        for (std::size_t orow = 0; orow < ho; ++orow)
            for (std::size_t ocol = 0; ocol < wo; ++ocol) {
                const double go = grad_out(co, orow, ocol);
                grad_bias[co] += go;
                for (std::size_t ci = 0; ci < g.in_channels; ++ci)
                    for (std::size_t kh = 0; kh < g.kernel; ++kh) {
                        const long r = static_cast<long>(orow * g.stride + kh) - pad;
                        if (r < 0 || r >= static_cast<long>(x.rows)) continue;
                        for (std::size_t kw = 0; kw < g.kernel; ++kw) {
                            const long c = static_cast<long>(ocol * g.stride + kw) - pad;
                            if (c < 0 || c >= static_cast<long>(x.cols)) continue;
                            const auto ur = static_cast<std::size_t>(r), uc = static_cast<std::size_t>(c);
                            grad_weight[widx(g, co, ci, kh, kw)] += go * x(ci, ur, uc);
                            grad_x(ci, ur, uc) += go * weight[widx(g, co, ci, kh, kw)];
                        }
                    }
            }
}

Matrix matmul_bt(const Matrix& a, const Matrix& b) {
    if (a.cols != b.cols) throw InvalidInputError("matmul_bt: inner dimension mismatch");
    Matrix c(a.rows, b.rows);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < b.rows; ++j)
            for (std::size_t k = 0; k < a.cols; ++k) c(i, j) += a(i, k) * b(j, k);
    return c;
}

std::vector<std::uint32_t> nearest_codes(const Matrix& vectors, const Matrix& codes, std::vector<double>* distances) {
    if (vectors.cols != codes.cols) throw InvalidInputError("nearest_codes: dimension mismatch");
    if (codes.rows == 0) throw InvalidInputError("nearest_codes: empty codebook");
    std::vector<std::uint32_t> idx(vectors.rows, 0);
    std::vector<double> best(vectors.rows, std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < vectors.rows; ++i)
        for (std::size_t k = 0; k < codes.rows; ++k) {
            double d = 0.0;
            for (std::size_t j = 0; j < codes.cols; ++j) {
                const double diff = vectors(i, j) - codes(k, j);
                d += diff * diff;
            }
            if (d < best[i]) {
                best[i] = d;
                idx[i] = static_cast<std::uint32_t>(k);
            }
        }
    if (distances) *distances = std::move(best);
    return idx;
}

}  // namespace reference

}  // namespace bandtok::kernels
