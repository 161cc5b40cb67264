#include "spectral.hpp"

#include "errors.hpp"
#include "ops.hpp"

#include <cmath>
#include <map>
#include <memory>
#include <numbers>

namespace dmcodec {

namespace {

struct FftPlan {
    std::vector<size_t> bitrev;
    std::vector<std::complex<double>> twiddle;
};

const FftPlan& plan_for(size_t n) {
    thread_local std::map<size_t, std::unique_ptr<FftPlan>> cache;
    auto& slot = cache[n];
    if (!slot) {
        slot = std::make_unique<FftPlan>();
        int bits = 0;
        while ((size_t{1} << bits) < n) ++bits;
        slot->bitrev.resize(n);
        for (size_t i = 0; i < n; ++i) {
            size_t r = 0;
            for (int b = 0; b < bits; ++b)
                if (i & (size_t{1} << b)) r |= size_t{1} << (bits - 1 - b);
            slot->bitrev[i] = r;
        }
        slot->twiddle.resize(n / 2);
        for (size_t k = 0; k < n / 2; ++k) {
            const double a = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
            slot->twiddle[k] = {std::cos(a), std::sin(a)};
        }
    }
    return *slot;
}

} // namespace

bool is_power_of_two(int64_t n) { return n > 0 && (n & (n - 1)) == 0; }

void fft_inplace(std::vector<std::complex<double>>& data) {
    const size_t n = data.size();
    if (!is_power_of_two(static_cast<int64_t>(n))) throw DomainError("fft: size must be a power of two");
    const FftPlan& plan = plan_for(n);
    for (size_t i = 0; i < n; ++i)
        if (i < plan.bitrev[i]) std::swap(data[i], data[plan.bitrev[i]]);
    for (size_t len = 2; len <= n; len <<= 1) {
        const size_t half = len / 2;
        const size_t step = n / len;
        for (size_t i = 0; i < n; i += len) {
            for (size_t j = 0; j < half; ++j) {
                const auto w = plan.twiddle[j * step];
                const auto u = data[i + j];
                const auto v = data[i + j + half] * w;
                data[i + j] = u + v;
                data[i + j + half] = u - v;
            }
        }
    }
}

std::vector<double> hann_window(int64_t n) {
    std::vector<double> w(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
    }
    return w;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::vector<double> mel_filterbank(int n_fft, int n_mels, double sample_rate, double f_min, double f_max) {
    const int bins = n_fft / 2 + 1;
    std::vector<double> fb(static_cast<size_t>(n_mels * bins), 0.0);
    const double mlo = hz_to_mel(f_min), mhi = hz_to_mel(f_max);
    std::vector<double> edges(static_cast<size_t>(n_mels + 2));
    for (int i = 0; i < n_mels + 2; ++i) edges[i] = mel_to_hz(mlo + (mhi - mlo) * i / (n_mels + 1));
    for (int m = 0; m < n_mels; ++m) {
        const double lo = edges[m], ctr = edges[m + 1], hi = edges[m + 2];
        for (int k = 0; k < bins; ++k) {
            const double f = sample_rate * k / n_fft;
            double w = 0.0;
            if (f > lo && f <= ctr) w = (f - lo) / (ctr - lo);
            else if (f > ctr && f < hi) w = (hi - f) / (hi - ctr);
            fb[m * bins + k] = w;
        }
    }
    return fb;
}

namespace ops {

Tensor stft(const Tensor& x, int n_fft, int hop) {
    if (x.rank() != 2) throw DomainError("stft: expected [B, T]");
    if (!is_power_of_two(n_fft) || hop <= 0) throw ConfigError("stft: n_fft must be a power of two and hop > 0");
    const int64_t b = x.dim(0), t = x.dim(1);
    if (t < n_fft) throw DomainError("stft: signal of " + std::to_string(t) + " samples shorter than window " +
                                     std::to_string(n_fft));
    const int64_t frames = (t - n_fft) / hop + 1;
    const int64_t bins = n_fft / 2 + 1;
    auto window = std::make_shared<std::vector<double>>(hann_window(n_fft));
    std::vector<double> y(static_cast<size_t>(b * frames * bins * 2));
    std::vector<std::complex<double>> buf(static_cast<size_t>(n_fft));
    const auto& xv = x.values();
    for (int64_t n = 0; n < b; ++n)
        for (int64_t f = 0; f < frames; ++f) {
            const double* src = xv.data() + n * t + f * hop;
            for (int i = 0; i < n_fft; ++i) buf[i] = {src[i] * (*window)[i], 0.0};
            fft_inplace(buf);
            double* dst = y.data() + ((n * frames + f) * bins) * 2;
            for (int64_t k = 0; k < bins; ++k) {
                dst[2 * k] = buf[k].real();
                dst[2 * k + 1] = buf[k].imag();
            }
        }
    return make_result({b, frames, bins, 2}, std::move(y), {x}, [=](Node& self) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        auto& g = p->ensure_grad();
        std::vector<std::complex<double>> gb(static_cast<size_t>(n_fft));
        for (int64_t n = 0; n < b; ++n)
            for (int64_t f = 0; f < frames; ++f) {
                const double* gs = self.grad.data() + ((n * frames + f) * bins) * 2;
                std::fill(gb.begin(), gb.end(), std::complex<double>{});
                // d/da_n of sum_k gR_k Re X_k + gI_k Im X_k = Re(FFT(conj G))_n
                for (int64_t k = 0; k < bins; ++k) gb[k] = {gs[2 * k], -gs[2 * k + 1]};
                fft_inplace(gb);
                double* dst = g.data() + n * t + f * hop;
                for (int i = 0; i < n_fft; ++i) dst[i] += gb[i].real() * (*window)[i];
            }
    });
}

Tensor complex_magnitude(const Tensor& spec, double eps) {
    if (spec.rank() < 1 || spec.dim(-1) != 2) throw DomainError("complex_magnitude: trailing axis must be 2");
    Shape out(spec.shape().begin(), spec.shape().end() - 1);
    const int64_t n = shape_numel(out);
    std::vector<double> y(static_cast<size_t>(n));
    const auto& sv = spec.values();
    for (int64_t i = 0; i < n; ++i) y[i] = std::sqrt(sv[2 * i] * sv[2 * i] + sv[2 * i + 1] * sv[2 * i + 1] + eps);
    return make_result(std::move(out), std::move(y), {spec}, [n](Node& self) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        auto& g = p->ensure_grad();
        for (int64_t i = 0; i < n; ++i) {
            const double s = self.grad[i] / self.value[i];
            g[2 * i] += s * p->value[2 * i];
            g[2 * i + 1] += s * p->value[2 * i + 1];
        }
    });
}

Tensor mel_spectrogram(const Tensor& x, int n_fft, int hop, int n_mels, double sample_rate, double f_min,
                       double f_max) {
    Tensor mag = complex_magnitude(stft(x, n_fft, hop));
    const int64_t b = mag.dim(0), frames = mag.dim(1), bins = mag.dim(2);
    Tensor fb = Tensor::from({n_mels, bins}, mel_filterbank(n_fft, n_mels, sample_rate, f_min, f_max));
    Tensor mel = linear(reshape(mag, {b * frames, bins}), fb, Tensor());
    return reshape(mel, {b, frames, n_mels});
}

} // namespace ops
} // namespace dmcodec
