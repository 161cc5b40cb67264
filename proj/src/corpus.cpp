#include "corpus.hpp"

#include "distill.hpp"
#include "errors.hpp"
#include "rng.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

namespace dmcodec {

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    size_t start = 0;
    while (true) {
        const size_t tab = line.find('\t', start);
        out.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
        if (tab == std::string::npos) break;
        start = tab + 1;
    }
    return out;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    if (p.empty()) return {};
    std::filesystem::path path(p);
    return path.is_absolute() ? path : base / path;
}

const char* const kWords[] = {"the",   "cat",   "sat",   "on",    "a",     "mat",   "speech", "codec",
                              "token", "sound", "wave",  "model", "green", "river", "stone",  "light",
                              "over",  "under", "quick", "slow"};

} // namespace

std::vector<std::string> split_words(const std::string& text) {
    std::istringstream in(text);
    std::vector<std::string> out;
    std::string w;
    while (in >> w) out.push_back(w);
    return out;
}

Manifest read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest " + path.string());
    const auto base = path.parent_path();
    Manifest m;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        auto f = split_tabs(line);
        if (f.size() < 2 || f[0].empty()) {
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected wav<TAB>transcript[...]");
        }
        ManifestEntry e;
        e.wav = resolve(base, f[0]);
        e.transcript = f[1];
        if (f.size() > 2) e.teacher_lm = resolve(base, f[2]);
        if (f.size() > 3) e.teacher_sm = resolve(base, f[3]);
        m.entries.push_back(std::move(e));
    }
    if (m.entries.empty()) throw DataError(path.string() + ": manifest has no entries");
    return m;
}

void write_manifest(const std::filesystem::path& path, const Manifest& manifest) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    const auto base = path.parent_path();
    auto rel = [&](const std::filesystem::path& p) {
        if (p.empty()) return std::string();
        return p.lexically_relative(base).empty() ? p.string() : p.lexically_relative(base).string();
    };
    for (const auto& e : manifest.entries) {
        out << rel(e.wav) << '\t' << e.transcript << '\t' << rel(e.teacher_lm) << '\t' << rel(e.teacher_sm) << '\n';
    }
}

AudioClip toy_clip(const ToyCorpusOptions& opts, int index, std::string* transcript) {
    Rng rng = Rng::derive({opts.seed, 0xC0A9ULL, static_cast<uint64_t>(index)});
    const int64_t n = std::llround(opts.seconds * opts.sample_rate);
    const double sr = opts.sample_rate;
    const double f0_start = rng.uniform(90.0, 220.0);
    const double f0_end = f0_start * rng.uniform(0.8, 1.25);
    double formants_a[3], formants_b[3];
    const double lo[3] = {300, 900, 2400}, hi[3] = {900, 2400, 3500};
    for (int k = 0; k < 3; ++k) {
        formants_a[k] = rng.uniform(lo[k], hi[k]);
        formants_b[k] = rng.uniform(lo[k], hi[k]);
    }
    const double syllable_rate = rng.uniform(2.5, 5.0);
    const double noise = rng.uniform(0.002, 0.01);

    AudioClip clip;
    clip.sample_rate = opts.sample_rate;
    clip.samples.resize(static_cast<size_t>(n));
    double phase = 0.0;
    double peak = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double u = static_cast<double>(i) / static_cast<double>(n);
        const double f0 = f0_start + (f0_end - f0_start) * u;
        phase += 2.0 * std::numbers::pi * f0 / sr;
        double s = 0.0;
        for (int h = 1; f0 * h < sr / 2 && h <= 40; ++h) {
            const double fh = f0 * h;
            double gain = 0.0;
            for (int k = 0; k < 3; ++k) {
                const double fk = formants_a[k] + (formants_b[k] - formants_a[k]) * u;
                const double bw = 80.0 + 60.0 * k;
                gain += std::exp(-0.5 * (fh - fk) * (fh - fk) / (bw * bw)) / (k + 1);
            }
            s += gain * std::sin(phase * h);
        }
        const double env = 0.55 - 0.45 * std::cos(2.0 * std::numbers::pi * syllable_rate * i / sr);
        s = s * env + noise * rng.normal();
        clip.samples[static_cast<size_t>(i)] = s;
        peak = std::max(peak, std::abs(s));
    }
    const double norm = peak > 0 ? 0.5 / peak : 1.0;
    for (auto& v : clip.samples) v *= norm;

    if (transcript) {
        const int words = 3 + static_cast<int>(rng.below(6));
        std::string t;
        for (int w = 0; w < words; ++w) {
            if (w) t += ' ';
            t += kWords[rng.below(std::size(kWords))];
        }
        *transcript = t;
    }
    return clip;
}

Manifest generate_toy_corpus(const ToyCorpusOptions& opts, const std::filesystem::path& out_dir) {
    if (opts.n_clips < 1) throw ConfigError("toy corpus needs at least one clip");
    if (opts.seconds <= 0.0) throw ConfigError("clip duration must be positive");
    std::filesystem::create_directories(out_dir);
    SyntheticTeacher teacher(opts.seed, opts.teacher_dim, 4, opts.sample_rate, opts.hop);
    Manifest m;
    for (int i = 0; i < opts.n_clips; ++i) {
        char stem[32];
        std::snprintf(stem, sizeof(stem), "clip%03d", i);
        ManifestEntry e;
        AudioClip clip = toy_clip(opts, i, &e.transcript);
        e.wav = out_dir / (std::string(stem) + ".wav");
        e.teacher_lm = out_dir / (std::string(stem) + ".lm.dmte");
        e.teacher_sm = out_dir / (std::string(stem) + ".sm.dmte");
        write_wav(e.wav, clip);
        // Teachers see the stored (PCM16) waveform, as a real extractor would.
        AudioClip stored = read_wav(e.wav);
        write_teacher(e.teacher_lm, teacher.contextual(stored, static_cast<int>(split_words(e.transcript).size())));
        write_teacher(e.teacher_sm, teacher.semantic(stored));
        m.entries.push_back(std::move(e));
    }
    write_manifest(out_dir / "manifest.tsv", m);
    return m;
}

} // namespace dmcodec
