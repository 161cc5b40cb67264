#pragma once

// Manifests and the synthetic toy corpus.

#include "audio.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace dmcodec {

struct ManifestEntry {
    std::filesystem::path wav;
    std::string transcript;
    std::filesystem::path teacher_lm; // empty when absent
    std::filesystem::path teacher_sm;
};

struct Manifest {
    std::vector<ManifestEntry> entries;
};

// Tab-separated lines: wav, transcript, then optional LM and SM teacher
// paths. Relative paths resolve against the manifest's directory. Blank lines
// and lines starting with '#' are ignored.
Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);

std::vector<std::string> split_words(const std::string& text);

struct ToyCorpusOptions {
    int n_clips = 16;
    uint64_t seed = 42;
    double seconds = 3.0;
    int sample_rate = 16000;
    int teacher_dim = 32;
    int hop = 320;
};

// Harmonic tones under gliding formant envelopes, with random transcripts
// and synthetic teacher caches. Writes clipNNN.wav, clipNNN.lm.dmte,
// clipNNN.sm.dmte and manifest.tsv; returns the manifest with absolute paths.
Manifest generate_toy_corpus(const ToyCorpusOptions& opts, const std::filesystem::path& out_dir);

// The waveform and transcript for clip i alone, without touching disk.
AudioClip toy_clip(const ToyCorpusOptions& opts, int index, std::string* transcript = nullptr);

} // namespace dmcodec
