#include "tts.hpp"

#include "errors.hpp"
#include "logging.hpp"

#include <algorithm>

namespace dmcodec {

CodecLmConfig lm_config_for(const CodecModel& codec, const Phonemizer& phonemizer, CodecLmConfig base) {
    base.codebook_size = codec.config().codec.codebook_size;
    base.n_quantizers = codec.rvq().n_layers();
    base.phoneme_vocab = phonemizer.vocab_size();
    base.validate();
    return base;
}

namespace {

CodeGrid grid_of(const QuantizedCode& code) {
    CodeGrid g;
    g.n_layers = code.n_active;
    g.n_frames = code.n_frames;
    g.idx.assign(code.indices.begin(), code.indices.end());
    return g;
}

CodeGrid prefix(const CodeGrid& g, int64_t frames) {
    CodeGrid out;
    out.n_layers = g.n_layers;
    out.n_frames = std::min(frames, g.n_frames);
    for (int k = 0; k < g.n_layers; ++k) {
        for (int64_t t = 0; t < out.n_frames; ++t) out.idx.push_back(g.at(k, t));
    }
    return out;
}

} // namespace

std::vector<TtsSample> build_tts_samples(const Manifest& manifest, const CodecModel& codec,
                                         const Phonemizer& phonemizer, const CodecLmConfig& lm_cfg,
                                         int prompt_frames) {
    if (manifest.entries.empty()) throw DataError("manifest has no entries");
    if (prompt_frames < 0) throw ConfigError("prompt_frames must be >= 0");
    std::vector<CodeGrid> grids;
    for (const auto& e : manifest.entries) grids.push_back(grid_of(codec.tokenize(read_wav(e.wav)).code));

    std::vector<TtsSample> out;
    const size_t n = manifest.entries.size();
    for (size_t i = 0; i < n; ++i) {
        TtsSample s;
        s.phonemes = phonemizer.phonemize(manifest.entries[i].transcript);
        s.codes = grids[i];
        s.prompt = n > 1 ? prefix(grids[(i + n - 1) % n], prompt_frames) : prefix(grids[i], 0);
        const auto phon = static_cast<int64_t>(s.phonemes.size());
        const int64_t ar_len = phon + 1 + s.codes.n_frames;
        const int64_t nar_len = phon + s.prompt.n_frames + s.codes.n_frames;
        if (s.phonemes.empty() || std::max(ar_len, nar_len) > lm_cfg.max_len) {
            logger().warn("skipping {}: {} phonemes, {} frames do not fit the context of {}",
                          manifest.entries[i].wav.string(), phon, s.codes.n_frames, lm_cfg.max_len);
            continue;
        }
        out.push_back(std::move(s));
    }
    if (out.empty()) throw DataError("no manifest entry fits the codec LM");
    return out;
}

void train_codec_lm(CodecLm& lm, const std::vector<TtsSample>& samples, const LmTrainOptions& opts,
                    const LmStepCallback& on_step) {
    if (samples.empty()) throw DataError("no training samples");
    if (opts.ar_steps < 0 || opts.nar_steps < 0) throw ConfigError("step counts must be >= 0");
    for (int64_t i = 0; i < opts.ar_steps; ++i) {
        Rng pick = Rng::derive({opts.seed, 0xA4ULL, static_cast<uint64_t>(i)});
        const double loss = lm.train_ar_step({samples[pick.below(samples.size())]});
        if (on_step) on_step("ar", i, 1, loss);
    }
    Rng layers = Rng::derive({opts.seed, 0x4A4ULL});
    for (int64_t i = 0; i < opts.nar_steps; ++i) {
        Rng pick = Rng::derive({opts.seed, 0x4A5ULL, static_cast<uint64_t>(i)});
        int k = 0;
        const double loss = lm.train_nar_step({samples[pick.below(samples.size())]}, layers, &k);
        if (on_step) on_step("nar", i, k, loss);
    }
}

SpeechResult synthesize_speech(const CodecLm& lm, const CodecModel& codec, const Phonemizer& phonemizer,
                               const std::string& text, const AudioClip& prompt, int64_t max_frames,
                               int prompt_frames) {
    const std::vector<int> phonemes = phonemizer.phonemize(text);
    if (phonemes.empty()) throw DomainError("text has no pronounceable symbols");
    CodeGrid prompt_codes;
    prompt_codes.n_layers = lm.config().n_quantizers;
    if (!prompt.samples.empty()) prompt_codes = prefix(grid_of(codec.tokenize(prompt).code), prompt_frames);
    const SynthesisResult r = lm.synthesize(phonemes, prompt_codes, max_frames);
    SpeechResult out;
    out.codes = r.codes;
    out.truncated = r.truncated;
    out.audio = codec.reconstruct(r.codes.to_codes(lm.config().codebook_size));
    return out;
}

} // namespace dmcodec
