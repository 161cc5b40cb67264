#pragma once

// Multi-period, multi-scale and multi-scale STFT discriminators.

#include "layers.hpp"

#include <string>
#include <vector>

namespace dmcodec {

struct DiscriminatorConfig {
    std::vector<int> periods{2, 3, 5, 7, 11};
    // Scale s runs on the input average-pooled s times (1x, 2x, 4x, ...).
    int msd_scales = 3;
    std::vector<int> stft_windows{512, 1024, 2048};
    int stft_channels = 8;
    double slope = 0.1;
    uint64_t seed = 43;

    int count() const { return static_cast<int>(periods.size()) + msd_scales + static_cast<int>(stft_windows.size()); }
    int min_length() const;
    void validate() const;
};

struct DiscriminatorOutput {
    std::string name;
    Tensor logits;                 // [B, ...]
    std::vector<Tensor> features;  // each [B, ...]
};

class PeriodDiscriminator {
public:
    PeriodDiscriminator(ParamStore& store, const std::string& name, int period, double slope, Rng& rng);
    DiscriminatorOutput forward(const Tensor& x) const;
    static constexpr int kLayers = 5;

private:
    std::string name_;
    int period_;
    double slope_;
    std::vector<Conv1dLayer> convs_;
    Conv1dLayer post_;
};

class ScaleDiscriminator {
public:
    ScaleDiscriminator(ParamStore& store, const std::string& name, int pools, double slope, Rng& rng);
    DiscriminatorOutput forward(const Tensor& x) const;
    static constexpr int kLayers = 5;

private:
    std::string name_;
    int pools_;
    double slope_;
    std::vector<Conv1dLayer> convs_;
    Conv1dLayer post_;
};

class StftDiscriminator {
public:
    StftDiscriminator(ParamStore& store, const std::string& name, int window, int channels, double slope, Rng& rng);
    DiscriminatorOutput forward(const Tensor& x) const;
    static constexpr int kLayers = 5;

private:
    std::string name_;
    int window_;
    double slope_;
    std::vector<Conv2dLayer> convs_;
    Conv2dLayer post_;
};

class DiscriminatorSet {
public:
    DiscriminatorSet(ParamStore& store, const DiscriminatorConfig& cfg);
    // x [B, 1, T] -> one output per sub-discriminator, periods first, then
    // scales, then STFT windows.
    std::vector<DiscriminatorOutput> run_all(const Tensor& x) const;
    const DiscriminatorConfig& config() const { return cfg_; }

private:
    DiscriminatorConfig cfg_;
    std::vector<PeriodDiscriminator> mpd_;
    std::vector<ScaleDiscriminator> msd_;
    std::vector<StftDiscriminator> stft_;
};

} // namespace dmcodec
