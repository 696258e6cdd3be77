#pragma once

// Data-parallel inner loops shared by the codec, the critics, the quantizer and
// the Mel frontend. Each kernel has an OpenMP implementation (bandtok::kernels)
// and a plain serial one (bandtok::kernels::reference) that the tests and the
// benchmark compare against. The parallel versions split work over independent
// output elements only, so results do not depend on the thread count.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "bandtok/common.hpp"

namespace bandtok::kernels {

// 2D convolution with implicit zero padding. Output size per axis is
// ceil(in / stride); the window for output o starts at o*stride - (kernel-1)/2.
// Weight layout: [out][in][kernel][kernel]; bias: [out].
struct ConvGeometry {
    std::size_t in_channels = 1;
    std::size_t out_channels = 1;
    std::size_t kernel = 3;
    std::size_t stride = 1;

    std::size_t pad() const { return (kernel - 1) / 2; }
    std::size_t out_dim(std::size_t in) const { return ceil_div(in, stride); }
    std::size_t weight_size() const { return out_channels * in_channels * kernel * kernel; }
};

Volume conv2d_forward(const Volume& x, std::span<const double> weight, std::span<const double> bias,
                      const ConvGeometry& g);

// grad_x is overwritten; grad_weight and grad_bias are accumulated into.
void conv2d_backward(const Volume& x, std::span<const double> weight, const ConvGeometry& g,
                     const Volume& grad_out, Volume& grad_x, std::span<double> grad_weight,
                     std::span<double> grad_bias);

Volume upsample_nearest(const Volume& x, std::size_t factor);
Volume upsample_nearest_backward(const Volume& grad_out, std::size_t factor);

// C = A * B^T.
Matrix matmul_bt(const Matrix& a, const Matrix& b);

// Index of the nearest row of `codes` for every row of `vectors` under squared
// Euclidean distance; ties resolve to the lowest index. Optionally reports the
// winning squared distances.
std::vector<std::uint32_t> nearest_codes(const Matrix& vectors, const Matrix& codes,
                                         std::vector<double>* distances = nullptr);

namespace reference {

Volume conv2d_forward(const Volume& x, std::span<const double> weight, std::span<const double> bias,
                      const ConvGeometry& g);
void conv2d_backward(const Volume& x, std::span<const double> weight, const ConvGeometry& g,
                     const Volume& grad_out, Volume& grad_x, std::span<double> grad_weight,
                     std::span<double> grad_bias);
Matrix matmul_bt(const Matrix& a, const Matrix& b);
std::vector<std::uint32_t> nearest_codes(const Matrix& vectors, const Matrix& codes,
                                         std::vector<double>* distances = nullptr);

}  // namespace reference

int max_threads();

}  // namespace bandtok::kernels
