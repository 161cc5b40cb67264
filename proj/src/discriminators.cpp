#include "discriminators.hpp"

#include "errors.hpp"
#include "nn_ops.hpp"
#include "ops.hpp"
#include "spectral.hpp"

#include <algorithm>
#include <cmath>

namespace dmcodec {

int DiscriminatorConfig::min_length() const {
    int m = 1;
    for (int w : stft_windows) m = std::max(m, w);
    for (int p : periods) m = std::max(m, p);
    return m;
}

void DiscriminatorConfig::validate() const {
    for (int p : periods) {
        if (p < 1) throw ConfigError("discriminator periods must be >= 1");
    }
    if (msd_scales < 0) throw ConfigError("msd_scales must be >= 0");
    for (int w : stft_windows) {
        if (!is_power_of_two(w) || w < 16) throw ConfigError("STFT windows must be powers of two >= 16");
    }
    if (stft_channels < 1) throw ConfigError("stft_channels must be >= 1");
    if (count() == 0) throw ConfigError("at least one discriminator is required");
}

namespace {

Tensor flatten_batch(const Tensor& t, int64_t batch) { return ops::reshape(t, {batch, t.numel() / batch}); }

ops::Conv1dArgs padded(int stride, int pad) { return ops::Conv1dArgs{stride, 1, pad, pad}; }

} // namespace

PeriodDiscriminator::PeriodDiscriminator(ParamStore& store, const std::string& name, int period, double slope,
                                         Rng& rng)
    : name_(name), period_(period), slope_(slope) {
    const int ch[] = {1, 4, 16, 32, 32};
    for (int i = 0; i < 4; ++i) {
        convs_.emplace_back(store, name + ".conv" + std::to_string(i), ch[i], ch[i + 1], 5, rng, padded(3, 2));
    }
    convs_.emplace_back(store, name + ".conv4", 32, 32, 5, rng, padded(1, 2));
    post_ = Conv1dLayer(store, name + ".post", 32, 1, 3, rng, padded(1, 1));
}

DiscriminatorOutput PeriodDiscriminator::forward(const Tensor& x) const {
    const int64_t b = x.dim(0), t = x.dim(2);
    const int64_t rem = t % period_;
    Tensor h = rem == 0 ? x : ops::pad_last(x, 0, period_ - rem);
    const int64_t rows = h.dim(2) / period_;
    // [B, 1, rows * p] -> [B, p, rows] -> [B * p, 1, rows]: each phase is a column.
    h = ops::permute(ops::reshape(h, {b, rows, period_}), {0, 2, 1});
    h = ops::reshape(h, {b * period_, 1, rows});
    DiscriminatorOutput out;
    out.name = name_;
    for (const auto& c : convs_) {
        h = ops::leaky_relu(c.forward(h), slope_);
        out.features.push_back(flatten_batch(h, b));
    }
    out.logits = flatten_batch(post_.forward(h), b);
    return out;
}

ScaleDiscriminator::ScaleDiscriminator(ParamStore& store, const std::string& name, int pools, double slope, Rng& rng)
    : name_(name), pools_(pools), slope_(slope) {
    struct Spec {
        int cin, cout, k, stride;
    };
    const Spec specs[] = {{1, 8, 15, 1}, {8, 16, 11, 2}, {16, 32, 11, 4}, {32, 32, 11, 4}, {32, 32, 5, 1}};
    int i = 0;
    for (const auto& s : specs) {
        convs_.emplace_back(store, name + ".conv" + std::to_string(i++), s.cin, s.cout, s.k, rng,
                            padded(s.stride, s.k / 2));
    }
    post_ = Conv1dLayer(store, name + ".post", 32, 1, 3, rng, padded(1, 1));
}

DiscriminatorOutput ScaleDiscriminator::forward(const Tensor& x) const {
    const int64_t b = x.dim(0);
    Tensor h = x;
    for (int p = 0; p < pools_; ++p) h = ops::avg_pool1d(h, 4, 2, 2);
    DiscriminatorOutput out;
    out.name = name_;
    for (const auto& c : convs_) {
        h = ops::leaky_relu(c.forward(h), slope_);
        out.features.push_back(flatten_batch(h, b));
    }
    out.logits = flatten_batch(post_.forward(h), b);
    return out;
}

StftDiscriminator::StftDiscriminator(ParamStore& store, const std::string& name, int window, int channels,
                                     double slope, Rng& rng)
    : name_(name), window_(window), slope_(slope) {
    // Axes are (frames, bins): dilation grows along time, stride halves frequency.
    ops::Conv2dArgs first;
    first.pad_h = 1;
    first.pad_w = 4;
    convs_.emplace_back(store, name + ".conv0", 2, channels, 3, 9, rng, first);
    for (int i = 0; i < 3; ++i) {
        ops::Conv2dArgs a;
        a.stride_w = 2;
        a.dilation_h = 1 << i;
        a.pad_h = 1 << i;
        a.pad_w = 4;
        convs_.emplace_back(store, name + ".conv" + std::to_string(i + 1), channels, channels, 3, 9, rng, a);
    }
    ops::Conv2dArgs last;
    last.pad_h = 1;
    last.pad_w = 1;
    convs_.emplace_back(store, name + ".conv4", channels, channels, 3, 3, rng, last);
    post_ = Conv2dLayer(store, name + ".post", channels, 1, 3, 3, rng, last);
}

DiscriminatorOutput StftDiscriminator::forward(const Tensor& x) const {
    const int64_t b = x.dim(0), t = x.dim(2);
    if (t < window_) {
        throw DomainError(name_ + ": input of " + std::to_string(t) + " samples is shorter than the window " +
                          std::to_string(window_));
    }
    Tensor spec = ops::stft(ops::reshape(x, {b, t}), window_, window_ / 4);
    spec = ops::scale(ops::permute(spec, {0, 3, 1, 2}), 1.0 / std::sqrt(static_cast<double>(window_)));
    DiscriminatorOutput out;
    out.name = name_;
    Tensor h = spec;
    for (const auto& c : convs_) {
        h = ops::leaky_relu(c.forward(h), slope_);
        out.features.push_back(flatten_batch(h, b));
    }
    out.logits = flatten_batch(post_.forward(h), b);
    return out;
}

DiscriminatorSet::DiscriminatorSet(ParamStore& store, const DiscriminatorConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(cfg.seed);
    for (int p : cfg.periods) mpd_.emplace_back(store, "disc.mpd" + std::to_string(p), p, cfg.slope, rng);
    for (int s = 0; s < cfg.msd_scales; ++s) msd_.emplace_back(store, "disc.msd" + std::to_string(s), s, cfg.slope, rng);
    for (int w : cfg.stft_windows) {
        stft_.emplace_back(store, "disc.stft" + std::to_string(w), w, cfg.stft_channels, cfg.slope, rng);
    }
}

std::vector<DiscriminatorOutput> DiscriminatorSet::run_all(const Tensor& x) const {
    if (x.rank() != 3 || x.dim(1) != 1) throw DomainError("discriminators expect [B, 1, T], got " + shape_str(x.shape()));
    if (x.dim(2) < cfg_.min_length()) {
        throw DomainError("discriminator input of " + std::to_string(x.dim(2)) + " samples is shorter than " +
                          std::to_string(cfg_.min_length()));
    }
    std::vector<DiscriminatorOutput> out;
    for (const auto& d : mpd_) out.push_back(d.forward(x));
    for (const auto& d : msd_) out.push_back(d.forward(x));
    for (const auto& d : stft_) out.push_back(d.forward(x));
    return out;
}

} // namespace dmcodec
