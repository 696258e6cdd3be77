#include "bandtok/haar.hpp"

#include <algorithm>

namespace bandtok {

namespace detail {

PatchedSpectrogram haar_forward_scaled(const Matrix& m, double scale) {
    if (m.empty()) throw InvalidInputError("haar_forward: empty matrix");
    const std::size_t hr = ceil_div(m.rows, 2), hc = ceil_div(m.cols, 2);
    PatchedSpectrogram p{Volume(4, hr, hc), m.rows, m.cols};
    auto at = [&](std::size_t r, std::size_t c) { return m(std::min(r, m.rows - 1), std::min(c, m.cols - 1)); };
    for (std::size_t i = 0; i < hr; ++i) {
        for (std::size_t j = 0; j < hc; ++j) {
            const double a = at(2 * i, 2 * j), b = at(2 * i, 2 * j + 1);
            const double c = at(2 * i + 1, 2 * j), d = at(2 * i + 1, 2 * j + 1);
            p.subbands(LL, i, j) = scale * (a + b + c + d);
            p.subbands(LH, i, j) = scale * (a - b + c - d);
            p.subbands(HL, i, j) = scale * (a + b - c - d);
            p.subbands(HH, i, j) = scale * (a - b - c + d);
        }
    }
    return p;
}

}  // namespace detail

PatchedSpectrogram haar_forward(const Matrix& m) { return detail::haar_forward_scaled(m, 0.5); }

Matrix haar_inverse_full(const Volume& s) {
    if (s.channels != 4) throw InvalidInputError("haar_inverse: expected 4 subband channels");
    Matrix out(2 * s.rows, 2 * s.cols);
    for (std::size_t i = 0; i < s.rows; ++i) {
        for (std::size_t j = 0; j < s.cols; ++j) {
            const double ll = s(LL, i, j), lh = s(LH, i, j), hl = s(HL, i, j), hh = s(HH, i, j);
            out(2 * i, 2 * j) = 0.5 * (ll + lh + hl + hh);
            out(2 * i, 2 * j + 1) = 0.5 * (ll - lh + hl - hh);
            out(2 * i + 1, 2 * j) = 0.5 * (ll + lh - hl - hh);
            out(2 * i + 1, 2 * j + 1) = 0.5 * (ll - lh - hl + hh);
        }
    }
    return out;
}

Matrix haar_inverse(const PatchedSpectrogram& p) {
    const Volume& s = p.subbands;
    if (s.channels != 4 || s.data.size() != 4 * s.rows * s.cols)
        throw InvalidInputError("haar_inverse: inconsistent subband shapes");
    if (p.original_rows == 0 || p.original_cols == 0 || ceil_div(p.original_rows, 2) != s.rows ||
        ceil_div(p.original_cols, 2) != s.cols)
        throw InvalidInputError("haar_inverse: original shape does not match subbands");
    const Matrix full = haar_inverse_full(s);
    if (full.rows == p.original_rows && full.cols == p.original_cols) return full;
    Matrix out(p.original_rows, p.original_cols);
    for (std::size_t r = 0; r < out.rows; ++r)
        for (std::size_t c = 0; c < out.cols; ++c) out(r, c) = full(r, c);
    return out;
}

Matrix haar_forward_backward(const Volume& g, std::size_t rows, std::size_t cols) {
    // The forward map is orthonormal on the padded grid, so its adjoint is the
    // inverse; replicated edge entries then fold back onto the last row/column.
    const Matrix full = haar_inverse_full(g);
    Matrix out(rows, cols);
    for (std::size_t r = 0; r < full.rows; ++r)
        for (std::size_t c = 0; c < full.cols; ++c) out(std::min(r, rows - 1), std::min(c, cols - 1)) += full(r, c);
    return out;
}

Volume haar_inverse_backward(const Matrix& grad_out, std::size_t sub_rows, std::size_t sub_cols) {
    // Adjoint of (crop ∘ inverse): zero-pad the gradient, then apply the forward transform.
    Matrix padded(2 * sub_rows, 2 * sub_cols);
    for (std::size_t r = 0; r < grad_out.rows; ++r)
        for (std::size_t c = 0; c < grad_out.cols; ++c) padded(r, c) = grad_out(r, c);
    return detail::haar_forward_scaled(padded, 0.5).subbands;
}

}  // namespace bandtok
