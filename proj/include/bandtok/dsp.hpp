#pragma once

#include <cstddef>
#include <vector>

#include "bandtok/common.hpp"

namespace bandtok {

struct Waveform {
    std::vector<double> samples;  // in [-1, 1]
    int sample_rate_hz = 44100;
};

enum class MelScale { slaney, htk };

struct FrontendConfig {
    int sample_rate_hz = 44100;
    int n_fft = 2048;  // also the analysis window length
    int hop = 512;
    int n_mels = 128;
    double fmin_hz = 0.0;
    double fmax_hz = 0.0;  // 0 selects sample_rate / 2
    double floor_epsilon = 1e-5;
    MelScale mel_scale = MelScale::slaney;
};

struct LogMelSpectrogram {
    Matrix values;  // T × n_mels, log-amplitude
    int n_mels = 128;
    int hop_samples = 512;
    int win_samples = 2048;
    int sample_rate_hz = 44100;

    std::size_t frames() const { return values.rows; }
};

double hz_to_mel(double hz, MelScale scale);
double mel_to_hz(double mel, MelScale scale);

// Triangular filters, area-normalised, ordered by centre frequency. Shape:
// n_mels × (n_fft/2 + 1). A filter too narrow to cover any FFT bin is given
// unit weight at the bin nearest its centre so every row stays nonzero.
Matrix mel_filterbank(int n_fft, int n_mels, int sample_rate_hz, double fmin_hz = 0.0, double fmax_hz = 0.0,
                      MelScale scale = MelScale::slaney);

// Centre frequencies (Hz) of the filters built by mel_filterbank.
std::vector<double> mel_center_frequencies(int n_mels, int sample_rate_hz, double fmin_hz = 0.0,
                                           double fmax_hz = 0.0, MelScale scale = MelScale::slaney);

std::vector<double> periodic_hann(std::size_t n);

// |STFT|^2 with reflect-padded centred frames and a periodic Hann window.
// Frame count is ceil(len / hop). Shape: frames × (n_fft/2 + 1).
Matrix power_spectrogram(const std::vector<double>& samples, int n_fft, int hop);

LogMelSpectrogram compute_log_mel(const Waveform& w, const FrontendConfig& cfg = {});

// Mean absolute difference of log-Mel values.
double mel_distance(const LogMelSpectrogram& a, const LogMelSpectrogram& b);
double mel_distance(const Matrix& a, const Matrix& b);

// Mean over scales of the mean absolute difference of log-magnitude STFTs
// (hop = n_fft / 4, magnitudes floored at floor_epsilon).
double stft_distance(const Waveform& a, const Waveform& b, const std::vector<int>& scales = {2048, 1024, 512},
                     double floor_epsilon = 1e-5);

}  // namespace bandtok
