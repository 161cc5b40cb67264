#include "codec_core.hpp"

#include "errors.hpp"
#include "ops.hpp"

#include <cmath>
#include <numeric>

namespace dmcodec {

CodecConfig CodecConfig::desk() { return CodecConfig{}; }

CodecConfig CodecConfig::paper() {
    CodecConfig cfg;
    cfg.base_channels = 32;
    cfg.latent_dim = 1024;
    return cfg;
}

int CodecConfig::hop() const { return std::accumulate(strides.begin(), strides.end(), 1, std::multiplies<int>()); }

double CodecConfig::frame_rate() const { return static_cast<double>(sample_rate) / hop(); }

void CodecConfig::validate() const {
    if (base_channels < 2 || base_channels % 2 != 0) throw ConfigError("base_channels must be even and >= 2");
    if (n_blocks < 1) throw ConfigError("n_blocks must be >= 1");
    if (static_cast<int>(strides.size()) != n_blocks) {
        throw ConfigError("strides has " + std::to_string(strides.size()) + " entries but n_blocks is " +
                          std::to_string(n_blocks));
    }
    for (int s : strides) {
        if (s < 1) throw ConfigError("strides must be >= 1");
    }
    if (latent_dim < 1) throw ConfigError("latent_dim must be >= 1");
    if (sample_rate <= 0) throw ConfigError("sample_rate must be positive");
    if (sample_rate % hop() != 0) {
        throw ConfigError("sample_rate " + std::to_string(sample_rate) + " is not a multiple of the stride product " +
                          std::to_string(hop()));
    }
    if (codebook_size < 2) throw ConfigError("codebook_size must be >= 2");
    if (n_quantizers < 1) throw ConfigError("n_quantizers must be >= 1");
    if (lstm_layers < 0) throw ConfigError("lstm_layers must be >= 0");
}

int64_t frames_for(const CodecConfig& cfg, int64_t n_samples) { return n_samples / cfg.hop(); }

ResidualUnit::ResidualUnit(ParamStore& store, const std::string& name, int dim, Rng& rng)
    : conv1_(store, name + ".conv1", dim, dim / 2, 3, rng, Conv1dLayer::same(3)),
      conv2_(store, name + ".conv2", dim / 2, dim, 1, rng, Conv1dLayer::same(1)) {}

Tensor ResidualUnit::forward(const Tensor& x) const {
    Tensor h = conv1_.forward(ops::elu(x));
    h = conv2_.forward(ops::elu(h));
    return ops::add(x, h);
}

namespace {

// Kernel 2s, stride s, total padding s: maps T to exactly T / s.
ops::Conv1dArgs downsample_args(int s) { return ops::Conv1dArgs{s, 1, s / 2, s - s / 2}; }

void check_input(const Tensor& x, int64_t channels, const char* what) {
    if (x.rank() != 3 || x.dim(1) != channels) {
        throw DomainError(std::string(what) + ": expected [B, " + std::to_string(channels) + ", T], got " +
                          shape_str(x.shape()));
    }
}

} // namespace

SeanetEncoder::SeanetEncoder(ParamStore& store, const CodecConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    int ch = cfg.base_channels;
    input_ = Conv1dLayer(store, "encoder.input", 1, ch, 7, rng, Conv1dLayer::same(7));
    for (int b = 0; b < cfg.n_blocks; ++b) {
        const std::string p = "encoder.block" + std::to_string(b);
        const int s = cfg.strides[static_cast<size_t>(b)];
        Block blk;
        blk.res = ResidualUnit(store, p + ".res", ch, rng);
        blk.down = Conv1dLayer(store, p + ".down", ch, 2 * ch, 2 * s, rng, downsample_args(s));
        blocks_.push_back(std::move(blk));
        ch *= 2;
    }
    if (cfg.lstm_layers > 0) lstm_ = LstmBlock(store, "encoder.lstm", ch, cfg.lstm_layers, true, rng);
    output_ = Conv1dLayer(store, "encoder.output", ch, cfg.latent_dim, 7, rng, Conv1dLayer::same(7));
}

Tensor SeanetEncoder::forward(const Tensor& wav) const {
    check_input(wav, 1, "encoder");
    if (wav.dim(2) == 0 || wav.dim(2) % cfg_.hop() != 0) {
        throw DomainError("encoder: input length " + std::to_string(wav.dim(2)) + " is not a positive multiple of " +
                          std::to_string(cfg_.hop()));
    }
    Tensor h = input_.forward(wav);
    for (const auto& blk : blocks_) {
        h = blk.res.forward(h);
        h = blk.down.forward(ops::elu(h));
    }
    if (cfg_.lstm_layers > 0) h = lstm_.forward(ops::elu(h));
    return output_.forward(ops::elu(h));
}

SeanetDecoder::SeanetDecoder(ParamStore& store, const CodecConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    int ch = cfg.base_channels << cfg.n_blocks;
    input_ = Conv1dLayer(store, "decoder.input", cfg.latent_dim, ch, 7, rng, Conv1dLayer::same(7));
    if (cfg.lstm_layers > 0) lstm_ = LstmBlock(store, "decoder.lstm", ch, cfg.lstm_layers, false, rng);
    for (int b = 0; b < cfg.n_blocks; ++b) {
        const std::string p = "decoder.block" + std::to_string(b);
        const int s = cfg.strides[static_cast<size_t>(cfg.n_blocks - 1 - b)];
        Block blk;
        blk.up = ConvTranspose1dLayer(store, p + ".up", ch, ch / 2, 2 * s, s, rng);
        blk.res = ResidualUnit(store, p + ".res", ch / 2, rng);
        blocks_.push_back(std::move(blk));
        ch /= 2;
    }
    output_ = Conv1dLayer(store, "decoder.output", ch, 1, 7, rng, Conv1dLayer::same(7));
}

Tensor SeanetDecoder::forward(const Tensor& latents) const {
    check_input(latents, cfg_.latent_dim, "decoder");
    Tensor h = input_.forward(latents);
    if (cfg_.lstm_layers > 0) h = lstm_.forward(h);
    for (const auto& blk : blocks_) {
        h = blk.up.forward(ops::elu(h));
        h = blk.res.forward(h);
    }
    return output_.forward(ops::elu(h));
}

LatentSequence encode(const SeanetEncoder& encoder, const CodecConfig& cfg, const AudioClip& clip) {
    if (clip.sample_rate != cfg.sample_rate) {
        throw ConfigError("clip sample rate " + std::to_string(clip.sample_rate) + " Hz does not match codec rate " +
                          std::to_string(cfg.sample_rate) + " Hz (resampling is not supported)");
    }
    const int64_t n_frames = frames_for(cfg, static_cast<int64_t>(clip.samples.size()));
    if (n_frames == 0) {
        throw DomainError("clip has " + std::to_string(clip.samples.size()) + " samples, fewer than one frame (" +
                          std::to_string(cfg.hop()) + ")");
    }
    clip.validate();
    const int64_t n = n_frames * cfg.hop();
    NoGradGuard no_grad;
    Tensor wav = Tensor::from({1, 1, n}, std::vector<double>(clip.samples.begin(), clip.samples.begin() + n));
    Tensor z = ops::permute(encoder.forward(wav), {0, 2, 1});
    LatentSequence out;
    out.n_frames = n_frames;
    out.dim = cfg.latent_dim;
    out.frame_rate = cfg.frame_rate();
    out.frames = z.values();
    return out;
}

AudioClip decode(const SeanetDecoder& decoder, const CodecConfig& cfg, const LatentSequence& latents) {
    if (latents.dim != cfg.latent_dim) {
        throw DomainError("latent dimension " + std::to_string(latents.dim) + " does not match codec latent_dim " +
                          std::to_string(cfg.latent_dim));
    }
    if (latents.n_frames < 1 || static_cast<int64_t>(latents.frames.size()) != latents.n_frames * latents.dim) {
        throw DomainError("latent sequence is empty or inconsistently sized");
    }
    NoGradGuard no_grad;
    Tensor z = ops::permute(Tensor::from({1, latents.n_frames, latents.dim}, latents.frames), {0, 2, 1});
    Tensor wav = decoder.forward(z);
    AudioClip clip;
    clip.sample_rate = cfg.sample_rate;
    clip.samples = wav.values();
    return clip;
}

} // namespace dmcodec
