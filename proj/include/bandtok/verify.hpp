#pragma once

// Self-check harness. Every property is a small function returning the
// measured quantity, so the acceptance suite and `bandtok verify` share code
// but apply their own thresholds and timing.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "bandtok/rng.hpp"

namespace bandtok::verify {

struct HaarStats {
    double max_roundtrip_error = 0.0;
    double max_energy_rel_error = 0.0;
};
// Random even-dimension matrices up to max_dim × max_dim. `block_scale` other
// than 0.5 injects a normalisation fault into the forward transform.
HaarStats haar_property(std::size_t trials, std::size_t max_dim, Rng& rng, double block_scale = 0.5);

// Cells whose quantized index differs from an exhaustive lowest-index nearest scan.
std::size_t vq_oracle_mismatches(std::size_t cells, std::size_t max_k, std::size_t max_c, Rng& rng);

struct EmaStats {
    double max_deviation = 0.0;  // after the last update, vs the smoothed cluster mean
    double decay_ratio = 0.0;    // per-step geometric ratio fitted between two checkpoints
};
EmaStats ema_fixed_point(std::size_t updates, double decay, std::size_t ratio_from, std::size_t ratio_to, Rng& rng);

// Count of (input, layer) pairs where the residual L2 grows.
std::size_t residual_violations(std::size_t inputs, Rng& rng);

double rope_invariance(std::size_t trials, std::size_t max_head_dim, Rng& rng);
// Number of trials where the 1D mode differs bitwise from a textbook 1D rotary embedding.
std::size_t rope_1d_mismatches(std::size_t trials, Rng& rng);

bool positions_match_example();

struct GradStats {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    std::string worst;  // parameter name of the worst entry
};
// Central differences (step 1e-5); relative error |a - n| / max(|a|, |n|, 1e-6).
GradStats lm_gradient_check(Rng& rng);
GradStats composite_gradient_check(Rng& rng);

struct CfgStats {
    std::size_t w1_mismatch = 0;
    std::size_t w0_mismatch = 0;
    std::size_t argmax_mismatch = 0;
};
CfgStats cfg_identities(std::size_t pairs, Rng& rng);

std::size_t flatten_failures(std::size_t trials, Rng& rng);

// Encode → decode → encode of BTOK, BMEL and BPRM (in memory and through files in `dir`).
std::size_t format_roundtrip_failures(std::size_t trials, const std::string& dir, Rng& rng);

struct NmiStats {
    double identical = 0.0;
    double independent = 0.0;
    double max_asymmetry = 0.0;
    double range_violation = 0.0;  // how far any entry leaves [0, 1]
};
NmiStats nmi_properties(std::size_t independent_samples, Rng& rng);

struct GeometryStats {
    std::size_t latent_bands = 0;
    std::string frame_rate_2dp;
};
GeometryStats latent_geometry();

struct Check {
    std::string name;
    bool passed = false;
    double measured = 0.0;
    double tolerance = 0.0;
    std::string detail;
};

struct Options {
    std::uint64_t seed = 0;
    std::string inject_fault;  // "" or "haar-normalization"
    std::string scratch_dir;   // for file round trips; a temp directory when empty
};

std::vector<Check> run_all(const Options& opt);
std::string format_report(const std::vector<Check>& checks);

}  // namespace bandtok::verify
