#pragma once

#include <filesystem>
#include <vector>

namespace dmcodec {

// Mono waveform at a fixed sample rate.
struct AudioClip {
    std::vector<double> samples;
    int sample_rate = 16000;

    double duration_seconds() const {
        return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0;
    }
    // Throws DomainError on non-finite samples or a non-positive rate.
    void validate() const;
};

enum class WavEncoding { pcm16, float32 };

// Reads mono PCM16 or IEEE float32 WAV. Multi-channel files are rejected.
AudioClip read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, const AudioClip& clip, WavEncoding encoding = WavEncoding::pcm16);

// Serialized WAV bytes, for callers that hash or compare output.
std::vector<unsigned char> encode_wav(const AudioClip& clip, WavEncoding encoding = WavEncoding::pcm16);

} // namespace dmcodec
