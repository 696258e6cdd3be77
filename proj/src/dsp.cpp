#include "bandtok/dsp.hpp"

#include "bandtok/kernels.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <map>
#include <mutex>
#include <numbers>

namespace bandtok {

namespace {

// FFTW's planner is not thread-safe; execution with new-array calls is.
// Plans are created once per size and kept for the process lifetime.
fftw_plan r2c_plan(int n) {
    static std::mutex mu;
    static std::map<int, fftw_plan> plans;
    std::lock_guard lock(mu);
    auto it = plans.find(n);
    if (it != plans.end()) return it->second;
    double* in = fftw_alloc_real(static_cast<std::size_t>(n));
    fftw_complex* out = fftw_alloc_complex(static_cast<std::size_t>(n / 2 + 1));
    fftw_plan p = fftw_plan_dft_r2c_1d(n, in, out, FFTW_ESTIMATE | FFTW_UNALIGNED);
    fftw_free(in);
    fftw_free(out);
    plans.emplace(n, p);
    return p;
}

std::ptrdiff_t reflect_index(std::ptrdiff_t i, std::ptrdiff_t n) {
    if (n == 1) return 0;
    const std::ptrdiff_t period = 2 * (n - 1);
    i %= period;
    if (i < 0) i += period;
    return i >= n ? period - i : i;
}

// Shared STFT core: calls `emit(frame, bins)` with the complex spectrum of each frame.
template <class Emit>
void stft_frames(const std::vector<double>& samples, int n_fft, int hop, Emit&& emit) {
    const auto n = static_cast<std::ptrdiff_t>(samples.size());
    const auto frames = static_cast<std::ptrdiff_t>(ceil_div(samples.size(), static_cast<std::size_t>(hop)));
    const auto window = periodic_hann(static_cast<std::size_t>(n_fft));
    const fftw_plan plan = r2c_plan(n_fft);
    const std::ptrdiff_t half = n_fft / 2;

#pragma omp parallel
    {
        std::vector<double> buf(static_cast<std::size_t>(n_fft));
        std::vector<std::complex<double>> spec(static_cast<std::size_t>(n_fft / 2 + 1));
#pragma omp for schedule(static)
        for (std::ptrdiff_t t = 0; t < frames; ++t) {
            const std::ptrdiff_t start = t * hop - half;
            for (std::ptrdiff_t j = 0; j < n_fft; ++j)
                buf[static_cast<std::size_t>(j)] =
                    samples[static_cast<std::size_t>(reflect_index(start + j, n))] * window[static_cast<std::size_t>(j)];
            fftw_execute_dft_r2c(plan, buf.data(), reinterpret_cast<fftw_complex*>(spec.data()));
            emit(static_cast<std::size_t>(t), spec);
        }
    }
}

void check_frame_params(int n_fft, int hop) {
    if (n_fft <= 0 || hop <= 0) throw ConfigError("STFT window and hop must be positive");
    if (n_fft < hop) throw ConfigError("STFT window must be at least the hop length");
}

}  // namespace

double hz_to_mel(double hz, MelScale scale) {
    if (scale == MelScale::htk) return 2595.0 * std::log10(1.0 + hz / 700.0);
    constexpr double f_sp = 200.0 / 3.0;
    constexpr double min_log_hz = 1000.0;
    constexpr double min_log_mel = min_log_hz / f_sp;
    const double logstep = std::log(6.4) / 27.0;
    if (hz >= min_log_hz) return min_log_mel + std::log(hz / min_log_hz) / logstep;
    return hz / f_sp;
}

double mel_to_hz(double mel, MelScale scale) {
    if (scale == MelScale::htk) return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
    constexpr double f_sp = 200.0 / 3.0;
    constexpr double min_log_hz = 1000.0;
    constexpr double min_log_mel = min_log_hz / f_sp;
    const double logstep = std::log(6.4) / 27.0;
    if (mel >= min_log_mel) return min_log_hz * std::exp(logstep * (mel - min_log_mel));
    return f_sp * mel;
}

static std::vector<double> mel_points_hz(int n_mels, int sample_rate_hz, double fmin_hz, double fmax_hz,
                                         MelScale scale) {
    if (fmax_hz <= 0.0) fmax_hz = sample_rate_hz / 2.0;
    const double lo = hz_to_mel(fmin_hz, scale), hi = hz_to_mel(fmax_hz, scale);
    std::vector<double> pts(static_cast<std::size_t>(n_mels) + 2);
    for (std::size_t i = 0; i < pts.size(); ++i)
        pts[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n_mels + 1), scale);
    return pts;
}

std::vector<double> mel_center_frequencies(int n_mels, int sample_rate_hz, double fmin_hz, double fmax_hz,
                                           MelScale scale) {
    auto pts = mel_points_hz(n_mels, sample_rate_hz, fmin_hz, fmax_hz, scale);
    return {pts.begin() + 1, pts.end() - 1};
}

Matrix mel_filterbank(int n_fft, int n_mels, int sample_rate_hz, double fmin_hz, double fmax_hz, MelScale scale) {
    if (n_mels <= 0) throw ConfigError("n_mels must be positive");
    if (n_fft <= 0 || sample_rate_hz <= 0) throw ConfigError("n_fft and sample rate must be positive");
    const int n_bins = n_fft / 2 + 1;
    if (n_mels >= n_bins) throw ConfigError("n_mels must be smaller than n_fft/2 + 1");

    const auto pts = mel_points_hz(n_mels, sample_rate_hz, fmin_hz, fmax_hz, scale);
    const double bin_hz = static_cast<double>(sample_rate_hz) / n_fft;
    Matrix fb(static_cast<std::size_t>(n_mels), static_cast<std::size_t>(n_bins));
    for (std::size_t m = 0; m < fb.rows; ++m) {
        const double left = pts[m], center = pts[m + 1], right = pts[m + 2];
        bool any = false;
        for (std::size_t k = 0; k < fb.cols; ++k) {
            const double f = bin_hz * static_cast<double>(k);
            const double lower = (f - left) / (center - left);
            const double upper = (right - f) / (right - center);
            const double wgt = std::max(0.0, std::min(lower, upper));
            fb(m, k) = wgt;
            any = any || wgt > 0.0;
        }
        if (!any) {
            const auto k = static_cast<std::size_t>(std::lround(center / bin_hz));
            fb(m, std::min(k, fb.cols - 1)) = 1.0;
        }
        const double enorm = 2.0 / (right - left);
        for (std::size_t k = 0; k < fb.cols; ++k) fb(m, k) *= enorm;
    }
    return fb;
}

std::vector<double> periodic_hann(std::size_t n) {
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i)
        w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
    return w;
}

Matrix power_spectrogram(const std::vector<double>& samples, int n_fft, int hop) {
    check_frame_params(n_fft, hop);
    if (samples.empty()) throw InvalidInputError("power_spectrogram: empty signal");
    Matrix p(ceil_div(samples.size(), static_cast<std::size_t>(hop)), static_cast<std::size_t>(n_fft / 2 + 1));
    stft_frames(samples, n_fft, hop, [&](std::size_t t, const std::vector<std::complex<double>>& spec) {
        for (std::size_t k = 0; k < p.cols; ++k) p(t, k) = std::norm(spec[k]);
    });
    return p;
}

LogMelSpectrogram compute_log_mel(const Waveform& w, const FrontendConfig& cfg) {
    if (cfg.n_mels <= 0) throw ConfigError("n_mels must be positive");
    if (cfg.floor_epsilon <= 0.0) throw ConfigError("floor_epsilon must be positive");
    check_frame_params(cfg.n_fft, cfg.hop);
    if (w.samples.empty()) throw InvalidInputError("compute_log_mel: empty waveform");
    if (w.sample_rate_hz <= 0) throw InvalidInputError("compute_log_mel: non-positive sample rate");

    const Matrix fb = mel_filterbank(cfg.n_fft, cfg.n_mels, w.sample_rate_hz, cfg.fmin_hz, cfg.fmax_hz, cfg.mel_scale);
    const Matrix power = power_spectrogram(w.samples, cfg.n_fft, cfg.hop);
    Matrix mel = kernels::matmul_bt(power, fb);
    for (double& v : mel.data) v = std::log(std::max(std::sqrt(v), cfg.floor_epsilon));

    LogMelSpectrogram out;
    out.values = std::move(mel);
    out.n_mels = cfg.n_mels;
    out.hop_samples = cfg.hop;
    out.win_samples = cfg.n_fft;
    out.sample_rate_hz = w.sample_rate_hz;
    return out;
}

double mel_distance(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw InvalidInputError("mel_distance: shape mismatch");
    if (a.empty()) throw InvalidInputError("mel_distance: empty input");
    double s = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) s += std::abs(a.data[i] - b.data[i]);
    return s / static_cast<double>(a.data.size());
}

double mel_distance(const LogMelSpectrogram& a, const LogMelSpectrogram& b) { return mel_distance(a.values, b.values); }

double stft_distance(const Waveform& a, const Waveform& b, const std::vector<int>& scales, double floor_epsilon) {
    if (a.samples.size() != b.samples.size()) throw InvalidInputError("stft_distance: length mismatch");
    if (a.samples.empty()) throw InvalidInputError("stft_distance: empty waveform");
    if (scales.empty()) throw ConfigError("stft_distance: no scales");
    double total = 0.0;
    for (int n_fft : scales) {
        const int hop = std::max(1, n_fft / 4);
        const Matrix pa = power_spectrogram(a.samples, n_fft, hop);
        const Matrix pb = power_spectrogram(b.samples, n_fft, hop);
        double s = 0.0;
        for (std::size_t i = 0; i < pa.data.size(); ++i) {
            const double la = std::log(std::max(std::sqrt(pa.data[i]), floor_epsilon));
            const double lb = std::log(std::max(std::sqrt(pb.data[i]), floor_epsilon));
            s += std::abs(la - lb);
        }
        total += s / static_cast<double>(pa.data.size());
    }
    return total / static_cast<double>(scales.size());
}

}  // namespace bandtok
