#include "audio.hpp"

#include "errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

namespace dmcodec {

namespace {

uint32_t rd32(const unsigned char* p) {
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) | (static_cast<uint32_t>(p[2]) << 16) |
           (static_cast<uint32_t>(p[3]) << 24);
}
uint16_t rd16(const unsigned char* p) { return static_cast<uint16_t>(p[0] | (p[1] << 8)); }

void put32(std::vector<unsigned char>& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}
void put16(std::vector<unsigned char>& out, uint16_t v) {
    out.push_back(static_cast<unsigned char>(v & 0xff));
    out.push_back(static_cast<unsigned char>(v >> 8));
}
void put_tag(std::vector<unsigned char>& out, const char* tag) { out.insert(out.end(), tag, tag + 4); }

constexpr uint16_t kFormatPcm = 1;
constexpr uint16_t kFormatFloat = 3;
constexpr uint16_t kFormatExtensible = 0xFFFE;

} // namespace

void AudioClip::validate() const {
    if (sample_rate <= 0) throw DomainError("audio: sample rate must be positive");
    for (double s : samples) {
        if (!std::isfinite(s)) throw DomainError("audio: non-finite sample");
    }
}

AudioClip read_wav(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
        throw DataError(path.string() + ": not a RIFF/WAVE file");
    }
    uint16_t format = 0, channels = 0, bits = 0;
    uint32_t rate = 0;
    const unsigned char* data = nullptr;
    size_t data_len = 0;
    size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        const unsigned char* chunk = bytes.data() + pos;
        const uint32_t len = rd32(chunk + 4);
        const size_t body = pos + 8;
        if (body + len > bytes.size()) throw DataError(path.string() + ": truncated chunk");
        if (std::memcmp(chunk, "fmt ", 4) == 0) {
            if (len < 16) throw DataError(path.string() + ": short fmt chunk");
            format = rd16(chunk + 8);
            channels = rd16(chunk + 10);
            rate = rd32(chunk + 12);
            bits = rd16(chunk + 22);
            if (format == kFormatExtensible && len >= 40) format = rd16(chunk + 32);
        } else if (std::memcmp(chunk, "data", 4) == 0) {
            data = chunk + 8;
            data_len = len;
        }
        pos = body + len + (len & 1U);
    }
    if (format == 0 || data == nullptr) throw DataError(path.string() + ": missing fmt or data chunk");
    if (channels != 1) throw DataError(path.string() + ": expected mono audio, found " + std::to_string(channels) + " channels");

    AudioClip clip;
    clip.sample_rate = static_cast<int>(rate);
    if (format == kFormatPcm && bits == 16) {
        const size_t n = data_len / 2;
        clip.samples.resize(n);
        for (size_t i = 0; i < n; ++i) {
            clip.samples[i] = static_cast<int16_t>(rd16(data + 2 * i)) / 32768.0;
        }
    } else if (format == kFormatFloat && bits == 32) {
        const size_t n = data_len / 4;
        clip.samples.resize(n);
        for (size_t i = 0; i < n; ++i) {
            const uint32_t u = rd32(data + 4 * i);
            float f;
            std::memcpy(&f, &u, 4);
            clip.samples[i] = f;
        }
    } else {
        throw DataError(path.string() + ": unsupported WAV encoding (format " + std::to_string(format) + ", " +
                        std::to_string(bits) + " bits); expected PCM16 or float32");
    }
    try {
        clip.validate();
    } catch (const DomainError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
    return clip;
}

std::vector<unsigned char> encode_wav(const AudioClip& clip, WavEncoding encoding) {
    const bool pcm = encoding == WavEncoding::pcm16;
    const uint16_t bits = pcm ? 16 : 32;
    const uint32_t data_len = static_cast<uint32_t>(clip.samples.size() * (bits / 8));
    std::vector<unsigned char> out;
    out.reserve(44 + data_len);
    put_tag(out, "RIFF");
    put32(out, 36 + data_len);
    put_tag(out, "WAVE");
    put_tag(out, "fmt ");
    put32(out, 16);
    put16(out, pcm ? kFormatPcm : kFormatFloat);
    put16(out, 1);
    put32(out, static_cast<uint32_t>(clip.sample_rate));
    put32(out, static_cast<uint32_t>(clip.sample_rate) * (bits / 8));
    put16(out, bits / 8);
    put16(out, bits);
    put_tag(out, "data");
    put32(out, data_len);
    for (double s : clip.samples) {
        if (pcm) {
            const double c = std::clamp(s, -1.0, 32767.0 / 32768.0);
            put16(out, static_cast<uint16_t>(static_cast<int16_t>(std::lround(c * 32768.0))));
        } else {
            const float f = static_cast<float>(s);
            uint32_t u;
            std::memcpy(&u, &f, 4);
            put32(out, u);
        }
    }
    return out;
}

void write_wav(const std::filesystem::path& path, const AudioClip& clip, WavEncoding encoding) {
    const auto bytes = encode_wav(clip, encoding);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

} // namespace dmcodec
