#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "bandtok/common.hpp"
#include "bandtok/micro_lm.hpp"
#include "bandtok/token_grid.hpp"
#include "bandtok/vq.hpp"

namespace bandtok {

// Plug-in entropy (nats) of the empirical distribution given by `counts`.
// Counts are sorted before summation so equal multisets give bitwise-equal results.
double entropy_from_counts(std::vector<std::uint64_t> counts);
double column_entropy(std::span<const std::uint32_t> column);
double joint_entropy(std::span<const std::uint32_t> a, std::span<const std::uint32_t> b);

// I(a;b) / sqrt(H(a) H(b)), clamped to [0, 1]. A zero-entropy column gives 0.
double nmi_pair(std::span<const std::uint32_t> a, std::span<const std::uint32_t> b);

struct NmiMatrix {
    Matrix values;  // A × A
    std::vector<std::string> labels;
};

// `samples` is N × A row-major. Degenerate (constant) columns get 1 on the
// diagonal and 0 elsewhere.
NmiMatrix nmi(std::span<const std::uint32_t> samples, std::size_t axes, std::vector<std::string> labels = {});

// Within-frame band NMI pooled over all frames of all grids. With a nonzero
// frame_offset, entry (i, j) pairs band i at frame t with band j at frame t + offset
// (the matrix is then not symmetric in general).
NmiMatrix band_nmi(const std::vector<TokenGrid>& grids, std::size_t frame_offset = 0,
                   const std::string& label_prefix = "band");

struct PplProfile {
    std::vector<double> raw_ppl;
    std::vector<double> normalized;
    std::vector<std::string> labels;
};

// Min-max normalisation; a flat profile (range within 1e-9 relative) maps to zeros.
std::vector<double> normalize_profile(std::span<const double> raw);

// raw_ppl[a] = exp(mean teacher-forced NLL over the positions of axis a), where
// the axis of an audio token is its column in the flattened grid. Grids carry
// bands (band axis) or residual layers (layer axis) as their columns.
PplProfile ppl_profile(const MicroLm& lm, const std::vector<TokenGrid>& corpus, const ConditioningPrefix& prefix = {},
                       const std::string& label_prefix = "band");

struct UsageStats {
    std::vector<std::uint64_t> counts;
    double perplexity = 1.0;
    std::size_t dead = 0;
};

UsageStats usage_stats(std::span<const std::uint32_t> indices, std::size_t k);

// Folds the band axis into channels: C × T' × F' becomes (C·F') × T' × 1, the
// single-vector-per-frame latent that residual (1D) quantization consumes.
Volume fold_bands(const Volume& z);

// Residual layer indices as a T' × D grid (layer l in column l).
TokenGrid residual_grid(const std::vector<QuantizationResult>& layers, std::uint32_t codebook_size,
                        double frame_rate_hz = 0.0);

std::string matrix_to_csv(const Matrix& m, const std::vector<std::string>& labels);
nlohmann::json nmi_to_json(const NmiMatrix& m);
std::string ppl_to_csv(const PplProfile& p);
nlohmann::json ppl_to_json(const PplProfile& p);
// Values in [0, 1] rendered with a 10-level character ramp plus the numbers.
std::string render_heat_table(const Matrix& m, const std::vector<std::string>& labels);
std::string render_profile(const PplProfile& p);

}  // namespace bandtok
