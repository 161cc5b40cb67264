#pragma once

// Glue between the codec and the codec language models: building training
// samples from a manifest, the training schedule and text-to-waveform
// synthesis.

#include "codec_lm.hpp"
#include "corpus.hpp"
#include "trainer.hpp"

#include <functional>
#include <string>
#include <vector>

namespace dmcodec {

// Codebook size, layer count and phoneme vocabulary taken from the codec and
// phonemizer; everything else from base.
CodecLmConfig lm_config_for(const CodecModel& codec, const Phonemizer& phonemizer, CodecLmConfig base = {});

// One sample per manifest entry: all RVQ layers of the clip, the phonemized
// transcript and, as the prompt, the first prompt_frames of the previous
// entry's codes (none for a single-entry manifest). Entries that do not fit
// the model context are skipped with a warning.
std::vector<TtsSample> build_tts_samples(const Manifest& manifest, const CodecModel& codec,
                                         const Phonemizer& phonemizer, const CodecLmConfig& lm_cfg,
                                         int prompt_frames = 75);

struct LmTrainOptions {
    int ar_steps = 200;
    int nar_steps = 1000;
    uint64_t seed = 42;
};

// stage is "ar" or "nar"; k is the NAR layer (1-based) or 1 for the AR model.
using LmStepCallback = std::function<void(const std::string& stage, int64_t step, int k, double loss)>;

// Single-sample steps, AR first and then NAR, with samples drawn from a
// stream derived from the seed.
void train_codec_lm(CodecLm& lm, const std::vector<TtsSample>& samples, const LmTrainOptions& opts,
                    const LmStepCallback& on_step = {});

struct SpeechResult {
    AudioClip audio;
    CodeGrid codes;
    bool truncated = false;
};

// prompt may be empty (zero samples); it is cut to prompt_frames frames.
SpeechResult synthesize_speech(const CodecLm& lm, const CodecModel& codec, const Phonemizer& phonemizer,
                               const std::string& text, const AudioClip& prompt, int64_t max_frames = 0,
                               int prompt_frames = 75);

} // namespace dmcodec
