#pragma once

// SEANet-style waveform encoder and mirrored decoder.

#include "audio.hpp"
#include "layers.hpp"

#include <cstdint>
#include <vector>

namespace dmcodec {

struct CodecConfig {
    int base_channels = 8;
    int n_blocks = 4;
    std::vector<int> strides{2, 4, 5, 8};
    int latent_dim = 64;
    int sample_rate = 16000;
    int codebook_size = 1024;
    int n_quantizers = 8;
    int lstm_layers = 2;
    uint64_t seed = 42;

    // Desk-scale defaults (the member initializers above).
    static CodecConfig desk();
    // Full-size channel counts: C = 32, D' = 1024.
    static CodecConfig paper();

    // Samples per latent frame.
    int hop() const;
    double frame_rate() const;
    // Throws ConfigError when any invariant fails.
    void validate() const;
};

// Latent frames stored row-major as [n_frames, dim].
struct LatentSequence {
    int64_t n_frames = 0;
    int dim = 0;
    double frame_rate = 0.0;
    std::vector<double> frames;

    double at(int64_t t, int d) const { return frames[static_cast<size_t>(t * dim + d)]; }
};

// ELU -> conv(dim -> dim/2, k3) -> ELU -> conv(dim/2 -> dim, k1), plus identity skip.
class ResidualUnit {
public:
    ResidualUnit() = default;
    ResidualUnit(ParamStore& store, const std::string& name, int dim, Rng& rng);
    Tensor forward(const Tensor& x) const;

private:
    Conv1dLayer conv1_, conv2_;
};

class SeanetEncoder {
public:
    SeanetEncoder(ParamStore& store, const CodecConfig& cfg, Rng& rng);
    // wav [B, 1, T] with T a multiple of the hop -> latents [B, D', T / hop]
    Tensor forward(const Tensor& wav) const;

private:
    CodecConfig cfg_;
    Conv1dLayer input_;
    struct Block {
        ResidualUnit res;
        Conv1dLayer down;
    };
    std::vector<Block> blocks_;
    LstmBlock lstm_;
    Conv1dLayer output_;
};

class SeanetDecoder {
public:
    SeanetDecoder(ParamStore& store, const CodecConfig& cfg, Rng& rng);
    // latents [B, D', T'] -> wav [B, 1, T' * hop]
    Tensor forward(const Tensor& latents) const;

private:
    CodecConfig cfg_;
    Conv1dLayer input_;
    LstmBlock lstm_;
    struct Block {
        ConvTranspose1dLayer up;
        ResidualUnit res;
    };
    std::vector<Block> blocks_;
    Conv1dLayer output_;
};

// Inference wrappers. Trailing samples that do not fill a frame are dropped.
LatentSequence encode(const SeanetEncoder& encoder, const CodecConfig& cfg, const AudioClip& clip);
AudioClip decode(const SeanetDecoder& decoder, const CodecConfig& cfg, const LatentSequence& latents);

// Number of whole frames in n_samples.
int64_t frames_for(const CodecConfig& cfg, int64_t n_samples);

} // namespace dmcodec
