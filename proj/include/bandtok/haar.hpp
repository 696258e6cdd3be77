#pragma once

#include <cstddef>

#include "bandtok/common.hpp"

namespace bandtok {

// One level of the orthonormal 2D Haar transform (patch size 2). Channel order
// is [LL, LH, HL, HH]; for a block [[a, b], [c, d]]:
//   LL = (a+b+c+d)/2   LH = (a-b+c-d)/2   HL = (a+b-c-d)/2   HH = (a-b-c+d)/2
struct PatchedSpectrogram {
    Volume subbands;  // 4 × ceil(T/2) × ceil(F/2)
    std::size_t original_rows = 0;
    std::size_t original_cols = 0;
};

enum HaarBand : std::size_t { LL = 0, LH = 1, HL = 2, HH = 3 };

// Odd dimensions are edge-replicated (last row/column) before the transform.
PatchedSpectrogram haar_forward(const Matrix& m);
Matrix haar_inverse(const PatchedSpectrogram& p);

// Inverse without the final crop: 2·rows × 2·cols of the subband grid.
Matrix haar_inverse_full(const Volume& subbands);

// Gradient of haar_forward w.r.t. its input (accumulates replicated edges).
Matrix haar_forward_backward(const Volume& grad_subbands, std::size_t rows, std::size_t cols);
// Gradient of haar_inverse (with crop) w.r.t. the subbands.
Volume haar_inverse_backward(const Matrix& grad_out, std::size_t sub_rows, std::size_t sub_cols);

namespace detail {
// Forward transform with an arbitrary block scale (0.5 is orthonormal). Used by
// the self-check harness to inject a normalisation fault.
PatchedSpectrogram haar_forward_scaled(const Matrix& m, double scale);
}  // namespace detail

}  // namespace bandtok
