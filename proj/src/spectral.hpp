#pragma once

#include "tensor.hpp"

#include <complex>
#include <vector>

namespace dmcodec {

// In-place radix-2 FFT (forward sign convention e^{-i...}); size must be a power of two.
void fft_inplace(std::vector<std::complex<double>>& data);

bool is_power_of_two(int64_t n);

// Periodic Hann window.
std::vector<double> hann_window(int64_t n);

// Triangular HTK-mel filterbank [n_mels, n_fft/2 + 1], no area normalization.
std::vector<double> mel_filterbank(int n_fft, int n_mels, double sample_rate, double f_min, double f_max);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

namespace ops {

// Short-time Fourier transform of x [B, T] with a Hann window and no centering:
// frames = (T - n_fft) / hop + 1. Returns [B, frames, n_fft/2 + 1, 2] (re, im).
Tensor stft(const Tensor& x, int n_fft, int hop);

// sqrt(re^2 + im^2 + eps) over a trailing (re, im) axis.
Tensor complex_magnitude(const Tensor& spec, double eps = 1e-10);

// Magnitude mel spectrogram [B, frames, n_mels].
Tensor mel_spectrogram(const Tensor& x, int n_fft, int hop, int n_mels, double sample_rate, double f_min,
                       double f_max);

} // namespace ops
} // namespace dmcodec
