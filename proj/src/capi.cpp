#include "dmcodec/dmcodec.h"

#include "corpus.hpp"
#include "errors.hpp"
#include "eval.hpp"
#include "logging.hpp"
#include "losses.hpp"
#include "train_config.hpp"
#include "trainer.hpp"
#include "tts.hpp"

#include <cstdlib>
#include <cstring>
#include <memory>
#include <new>
#include <string>

using namespace dmcodec;

struct dmc_train_config {
    TrainConfig cfg;
};

struct dmc_trainer {
    std::unique_ptr<Trainer> trainer;
};

struct dmc_codec {
    std::unique_ptr<CodecModel> model;
};

struct dmc_lm {
    std::unique_ptr<CodecLm> lm;
};

namespace {

thread_local std::string g_last_error;

class InvalidArgument : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

dmc_status fail(dmc_status status, const char* message) {
    g_last_error = message;
    return status;
}

// Runs body and maps every exception to a status code.
template <typename F>
dmc_status guarded(F&& body) noexcept {
    try {
        g_last_error.clear();
        body();
        return DMC_OK;
    } catch (const InvalidArgument& e) {
        return fail(DMC_ERR_INVALID_ARGUMENT, e.what());
    } catch (const ConfigError& e) {
        return fail(DMC_ERR_CONFIG, e.what());
    } catch (const DomainError& e) {
        return fail(DMC_ERR_DOMAIN, e.what());
    } catch (const DataError& e) {
        return fail(DMC_ERR_DATA, e.what());
    } catch (const NumericError& e) {
        return fail(DMC_ERR_NUMERIC, e.what());
    } catch (const IoError& e) {
        return fail(DMC_ERR_IO, e.what());
    } catch (const std::bad_alloc&) {
        return fail(DMC_ERR_INTERNAL, "out of memory");
    } catch (const std::exception& e) {
        return fail(DMC_ERR_INTERNAL, e.what());
    } catch (...) {
        return fail(DMC_ERR_INTERNAL, "unknown error");
    }
}

void require(const void* p, const char* name) {
    if (p == nullptr) throw InvalidArgument(std::string(name) + " must not be null");
}

char* dup_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (out == nullptr) throw std::bad_alloc();
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

void fill(dmc_losses* out, int64_t step, const LossBreakdown& l) {
    *out = {step, l.t, l.f, l.g, l.d, l.fm, l.w, l.distill, l.total};
}

int effective_layers(const CodecModel& m, int n_layers) {
    if (n_layers < 0 || n_layers > m.rvq().n_layers()) {
        throw ConfigError("n_layers must be in [0, " + std::to_string(m.rvq().n_layers()) + "], got " +
                          std::to_string(n_layers));
    }
    return n_layers == 0 ? m.rvq().n_layers() : n_layers;
}

void reconstruction_losses(const AudioClip& in, const AudioClip& out, dmc_roundtrip_info& info) {
    const auto n = static_cast<int64_t>(out.samples.size());
    if (n == 0 || static_cast<int64_t>(in.samples.size()) < n) return;
    NoGradGuard guard;
    const Tensor x = Tensor::from({1, n}, std::vector<double>(in.samples.begin(), in.samples.begin() + n));
    const Tensor y = Tensor::from({1, n}, out.samples);
    info.time_loss = time_loss(x, y).item();
    MelLossOptions mel;
    mel.sample_rate = in.sample_rate;
    info.mel_loss = mel_loss(x, y, mel).item();
}

CodesFile to_codes_file(const QuantizedCode& code, int codebook_size) {
    CodesFile f;
    f.n_layers = code.n_active;
    f.n_frames = code.n_frames;
    f.codebook_size = codebook_size;
    f.indices = code.indices;
    return f;
}

} // namespace

extern "C" {

const char* dmc_version(void) { return "0.1.0"; }

const char* dmc_last_error(void) { return g_last_error.c_str(); }

const char* dmc_status_name(dmc_status status) {
    switch (status) {
    case DMC_OK: return "ok";
    case DMC_ERR_INVALID_ARGUMENT: return "invalid argument";
    case DMC_ERR_CONFIG: return "configuration error";
    case DMC_ERR_DOMAIN: return "domain error";
    case DMC_ERR_DATA: return "data error";
    case DMC_ERR_NUMERIC: return "numeric error";
    case DMC_ERR_IO: return "I/O error";
    case DMC_ERR_INTERNAL: return "internal error";
    }
    return "unknown status";
}

void dmc_string_free(char* s) { std::free(s); }

dmc_status dmc_set_log_level(const char* level) {
    return guarded([&] {
        require(level, "level");
        const auto lvl = spdlog::level::from_str(level);
        if (lvl == spdlog::level::off && std::strcmp(level, "off") != 0) {
            throw ConfigError(std::string("unknown log level '") + level + "'");
        }
        logger().set_level(lvl);
    });
}

dmc_status dmc_generate_toy_corpus(int n_clips, uint64_t seed, int teacher_dim, const char* out_dir) {
    return guarded([&] {
        require(out_dir, "out_dir");
        ToyCorpusOptions o;
        o.n_clips = n_clips;
        o.seed = seed;
        o.teacher_dim = teacher_dim;
        generate_toy_corpus(o, out_dir);
    });
}

dmc_status dmc_train_config_new(const char* path, dmc_train_config** out) {
    return guarded([&] {
        require(out, "out");
        *out = nullptr;
        auto c = std::make_unique<dmc_train_config>();
        if (path != nullptr) c->cfg = TrainConfig::from_file(path);
        *out = c.release();
    });
}

void dmc_train_config_free(dmc_train_config* cfg) { delete cfg; }

dmc_status dmc_train_config_set(dmc_train_config* cfg, const char* key, const char* value) {
    return guarded([&] {
        require(cfg, "cfg");
        require(key, "key");
        require(value, "value");
        cfg->cfg.set(key, value);
    });
}

dmc_status dmc_train_config_apply_seed_env(dmc_train_config* cfg) {
    return guarded([&] {
        require(cfg, "cfg");
        apply_seed_env(cfg->cfg);
    });
}

dmc_status dmc_train_config_text(const dmc_train_config* cfg, char** out) {
    return guarded([&] {
        require(cfg, "cfg");
        require(out, "out");
        *out = dup_string(cfg->cfg.to_text());
    });
}

dmc_status dmc_trainer_new(const dmc_train_config* cfg, const char* manifest, dmc_trainer** out) {
    return guarded([&] {
        require(cfg, "cfg");
        require(manifest, "manifest");
        require(out, "out");
        *out = nullptr;
        cfg->cfg.validate();
        auto t = std::make_unique<dmc_trainer>();
        t->trainer = std::make_unique<Trainer>(cfg->cfg, load_dataset(read_manifest(manifest), cfg->cfg));
        *out = t.release();
    });
}

void dmc_trainer_free(dmc_trainer* tr) { delete tr; }

dmc_status dmc_trainer_skipped(const dmc_trainer* tr, int* out) {
    return guarded([&] {
        require(tr, "trainer");
        require(out, "out");
        *out = tr->trainer->skipped();
    });
}

dmc_status dmc_trainer_step(dmc_trainer* tr, dmc_losses* out) {
    return guarded([&] {
        require(tr, "trainer");
        const int64_t step = tr->trainer->global_step();
        const LossBreakdown l = tr->trainer->step();
        if (out != nullptr) fill(out, step, l);
    });
}

dmc_status dmc_trainer_probe(dmc_trainer* tr, dmc_losses* out) {
    return guarded([&] {
        require(tr, "trainer");
        require(out, "out");
        fill(out, tr->trainer->global_step(), tr->trainer->evaluate(tr->trainer->probe_batch()));
    });
}

dmc_status dmc_trainer_run(dmc_trainer* tr, const char* out_dir, dmc_train_callback cb, void* user) {
    return guarded([&] {
        require(tr, "trainer");
        require(out_dir, "out_dir");
        Trainer::StepCallback on_step;
        if (cb != nullptr) {
            on_step = [cb, user](int64_t step, const LossBreakdown& l) {
                dmc_losses row;
                fill(&row, step, l);
                cb(&row, user);
            };
        }
        tr->trainer->run(out_dir, on_step);
    });
}

dmc_status dmc_trainer_save(const dmc_trainer* tr, const char* path) {
    return guarded([&] {
        require(tr, "trainer");
        require(path, "path");
        tr->trainer->save_checkpoint(path);
    });
}

dmc_status dmc_trainer_load(dmc_trainer* tr, const char* path) {
    return guarded([&] {
        require(tr, "trainer");
        require(path, "path");
        tr->trainer->load_checkpoint(path);
    });
}

dmc_status dmc_codec_load(const char* checkpoint, dmc_codec** out) {
    return guarded([&] {
        require(checkpoint, "checkpoint");
        require(out, "out");
        *out = nullptr;
        auto c = std::make_unique<dmc_codec>();
        c->model = CodecModel::from_checkpoint(checkpoint);
        *out = c.release();
    });
}

void dmc_codec_free(dmc_codec* codec) { delete codec; }

dmc_status dmc_codec_info_get(const dmc_codec* codec, dmc_codec_info* out) {
    return guarded([&] {
        require(codec, "codec");
        require(out, "out");
        const CodecConfig& c = codec->model->config().codec;
        *out = {c.sample_rate, c.hop(), codec->model->rvq().n_layers(), c.codebook_size, c.latent_dim, c.frame_rate()};
    });
}

dmc_status dmc_codec_bitrate(const dmc_codec* codec, int n_layers, double* kbps) {
    return guarded([&] {
        require(codec, "codec");
        require(kbps, "kbps");
        *kbps = bitrate_kbps(codec->model->config().codec, effective_layers(*codec->model, n_layers));
    });
}

dmc_status dmc_codec_encode_pcm(const dmc_codec* codec, const double* samples, int64_t n_samples, int n_layers,
                                int32_t* codes, int64_t capacity, int64_t* n_frames) {
    return guarded([&] {
        require(codec, "codec");
        require(samples, "samples");
        require(n_frames, "n_frames");
        if (n_samples < 0) throw InvalidArgument("n_samples must be >= 0");
        const CodecModel& m = *codec->model;
        const int k = effective_layers(m, n_layers);
        AudioClip clip;
        clip.sample_rate = m.config().codec.sample_rate;
        clip.samples.assign(samples, samples + n_samples);
        const QuantizedCode code = m.tokenize(clip, k).code;
        *n_frames = code.n_frames;
        const auto needed = static_cast<int64_t>(code.indices.size());
        if (codes == nullptr || capacity < needed) {
            throw InvalidArgument("code buffer holds " + std::to_string(capacity) + " entries, need " +
                                  std::to_string(needed));
        }
        std::copy(code.indices.begin(), code.indices.end(), codes);
    });
}

dmc_status dmc_codec_decode_pcm(const dmc_codec* codec, const int32_t* codes, int n_layers, int64_t n_frames,
                                double* samples, int64_t capacity, int64_t* n_samples) {
    return guarded([&] {
        require(codec, "codec");
        require(codes, "codes");
        require(n_samples, "n_samples");
        if (n_frames < 0) throw InvalidArgument("n_frames must be >= 0");
        const CodecModel& m = *codec->model;
        CodesFile f;
        f.n_layers = effective_layers(m, n_layers);
        f.n_frames = n_frames;
        f.codebook_size = m.config().codec.codebook_size;
        f.indices.assign(codes, codes + static_cast<int64_t>(f.n_layers) * n_frames);
        const AudioClip out = m.reconstruct(f);
        *n_samples = static_cast<int64_t>(out.samples.size());
        if (samples == nullptr || capacity < *n_samples) {
            throw InvalidArgument("sample buffer holds " + std::to_string(capacity) + " entries, need " +
                                  std::to_string(*n_samples));
        }
        std::copy(out.samples.begin(), out.samples.end(), samples);
    });
}

dmc_status dmc_codec_encode_file(const dmc_codec* codec, const char* wav_in, int n_layers, const char* codes_out,
                                 dmc_roundtrip_info* info) {
    return guarded([&] {
        require(codec, "codec");
        require(wav_in, "wav_in");
        require(codes_out, "codes_out");
        const CodecModel& m = *codec->model;
        const int k = effective_layers(m, n_layers);
        const AudioClip clip = read_wav(wav_in);
        const QuantizedCode code = m.tokenize(clip, k).code;
        write_codes(codes_out, code, m.config().codec.codebook_size);
        if (info != nullptr) {
            *info = {};
            info->n_layers = k;
            info->n_frames = code.n_frames;
            info->input_samples = static_cast<int64_t>(clip.samples.size());
            info->bitrate_kbps = bitrate_kbps(m.config().codec, k);
        }
    });
}

dmc_status dmc_codec_decode_file(const dmc_codec* codec, const char* codes_in, const char* wav_out,
                                 dmc_roundtrip_info* info) {
    return guarded([&] {
        require(codec, "codec");
        require(codes_in, "codes_in");
        require(wav_out, "wav_out");
        const CodecModel& m = *codec->model;
        const CodesFile f = read_codes(codes_in);
        const AudioClip out = m.reconstruct(f);
        write_wav(wav_out, out);
        if (info != nullptr) {
            *info = {};
            info->n_layers = f.n_layers;
            info->n_frames = f.n_frames;
            info->output_samples = static_cast<int64_t>(out.samples.size());
            info->bitrate_kbps = bitrate_kbps(m.config().codec, f.n_layers);
        }
    });
}

dmc_status dmc_codec_roundtrip_file(const dmc_codec* codec, const char* wav_in, int n_layers, const char* wav_out,
                                    dmc_roundtrip_info* info) {
    return guarded([&] {
        require(codec, "codec");
        require(wav_in, "wav_in");
        require(wav_out, "wav_out");
        const CodecModel& m = *codec->model;
        const int k = effective_layers(m, n_layers);
        const AudioClip clip = read_wav(wav_in);
        const QuantizedCode code = m.tokenize(clip, k).code;
        const AudioClip out = m.reconstruct(to_codes_file(code, m.config().codec.codebook_size));
        write_wav(wav_out, out);
        if (info != nullptr) {
            *info = {};
            info->n_layers = k;
            info->n_frames = code.n_frames;
            info->input_samples = static_cast<int64_t>(clip.samples.size());
            info->output_samples = static_cast<int64_t>(out.samples.size());
            info->bitrate_kbps = bitrate_kbps(m.config().codec, k);
            reconstruction_losses(clip, out, *info);
        }
    });
}

dmc_status dmc_codes_read_header(const char* path, dmc_codes_header* out) {
    return guarded([&] {
        require(path, "path");
        require(out, "out");
        const CodesFile f = read_codes(path);
        *out = {f.n_layers, f.n_frames, f.codebook_size};
    });
}

dmc_status dmc_lm_new(const dmc_codec* codec, const char* const* overrides, int n, dmc_lm** out) {
    return guarded([&] {
        require(codec, "codec");
        require(out, "out");
        *out = nullptr;
        if (n < 0 || (n > 0 && overrides == nullptr)) throw InvalidArgument("bad override list");
        CodecLmConfig base;
        for (int i = 0; i < n; ++i) {
            require(overrides[i], "override");
            const std::string kv = overrides[i];
            const auto eq = kv.find('=');
            if (eq == std::string::npos) throw ConfigError("override '" + kv + "' is not key=value");
            base.set(kv.substr(0, eq), kv.substr(eq + 1));
        }
        auto l = std::make_unique<dmc_lm>();
        l->lm = std::make_unique<CodecLm>(lm_config_for(*codec->model, GraphemePhonemizer(), base));
        *out = l.release();
    });
}

dmc_status dmc_lm_load(const char* path, dmc_lm** out) {
    return guarded([&] {
        require(path, "path");
        require(out, "out");
        *out = nullptr;
        auto l = std::make_unique<dmc_lm>();
        l->lm = CodecLm::load(path);
        *out = l.release();
    });
}

void dmc_lm_free(dmc_lm* lm) { delete lm; }

dmc_status dmc_lm_save(const dmc_lm* lm, const char* path) {
    return guarded([&] {
        require(lm, "lm");
        require(path, "path");
        lm->lm->save(path);
    });
}

dmc_status dmc_lm_train(dmc_lm* lm, const dmc_codec* codec, const char* manifest, int ar_steps, int nar_steps,
                        uint64_t seed, dmc_lm_callback cb, void* user) {
    return guarded([&] {
        require(lm, "lm");
        require(codec, "codec");
        require(manifest, "manifest");
        const GraphemePhonemizer phonemizer;
        const auto samples =
            build_tts_samples(read_manifest(manifest), *codec->model, phonemizer, lm->lm->config());
        LmTrainOptions o;
        o.ar_steps = ar_steps;
        o.nar_steps = nar_steps;
        o.seed = seed;
        LmStepCallback on_step;
        if (cb != nullptr) {
            on_step = [cb, user](const std::string& stage, int64_t step, int k, double loss) {
                cb(stage.c_str(), step, k, loss, user);
            };
        }
        train_codec_lm(*lm->lm, samples, o, on_step);
    });
}

dmc_status dmc_lm_synthesize(const dmc_lm* lm, const dmc_codec* codec, const char* text, const char* prompt_wav,
                             int64_t max_frames, const char* wav_out, const char* codes_out, dmc_synth_info* info) {
    return guarded([&] {
        require(lm, "lm");
        require(codec, "codec");
        require(text, "text");
        require(wav_out, "wav_out");
        AudioClip prompt;
        prompt.sample_rate = codec->model->config().codec.sample_rate;
        if (prompt_wav != nullptr) prompt = read_wav(prompt_wav);
        const SpeechResult r =
            synthesize_speech(*lm->lm, *codec->model, GraphemePhonemizer(), text, prompt, max_frames);
        write_wav(wav_out, r.audio);
        if (codes_out != nullptr) {
            const CodesFile f = r.codes.to_codes(lm->lm->config().codebook_size);
            QuantizedCode q;
            q.n_active = f.n_layers;
            q.n_frames = f.n_frames;
            q.indices = f.indices;
            write_codes(codes_out, q, f.codebook_size);
        }
        if (info != nullptr) {
            info->n_frames = r.codes.n_frames;
            info->n_samples = static_cast<int64_t>(r.audio.samples.size());
            info->truncated = r.truncated ? 1 : 0;
        }
    });
}

dmc_status dmc_eval_counts(const char* transcripts, dmc_counts* out) {
    return guarded([&] {
        require(transcripts, "transcripts");
        require(out, "out");
        const AlignmentCounts k = corpus_counts(read_transcript_pairs(transcripts));
        *out = {k.n, k.c, k.s, k.d, k.i, k.p};
    });
}

namespace {

AlignmentCounts from_c(const dmc_counts& c) { return {c.n, c.c, c.s, c.d, c.i, c.p}; }

} // namespace

dmc_status dmc_eval_wer(const dmc_counts* counts, double* out) {
    return guarded([&] {
        require(counts, "counts");
        require(out, "out");
        *out = wer(from_c(*counts));
    });
}

dmc_status dmc_eval_wil(const dmc_counts* counts, const char* variant, double* out) {
    return guarded([&] {
        require(counts, "counts");
        require(variant, "variant");
        require(out, "out");
        *out = wil(from_c(*counts), parse_wil_variant(variant));
    });
}

void dmc_aso_options_default(dmc_aso_options* out) {
    if (out == nullptr) return;
    const AsoOptions d;
    *out = {d.alpha, d.n_bootstrap, d.seed, d.higher_is_better ? 1 : 0};
}

dmc_status dmc_eval_dominance(const char* const* names, const char* const* files, int n, const char* metric,
                              const dmc_aso_options* opts, char** tsv, char** report) {
    return guarded([&] {
        require(names, "names");
        require(files, "files");
        require(metric, "metric");
        require(opts, "opts");
        std::map<std::string, std::filesystem::path> systems;
        for (int i = 0; i < n; ++i) {
            require(names[i], "name");
            require(files[i], "file");
            if (!systems.emplace(names[i], files[i]).second) {
                throw ConfigError(std::string("duplicate system name '") + names[i] + "'");
            }
        }
        AsoOptions o;
        o.alpha = opts->alpha;
        o.n_bootstrap = opts->n_bootstrap;
        o.seed = opts->seed;
        o.higher_is_better = opts->higher_is_better != 0;
        const DominanceTable t = dominance_matrix(systems, metric, o);
        // Allocate both before handing either out, so a failure leaks nothing.
        std::unique_ptr<char, decltype(&std::free)> tsv_s(tsv ? dup_string(t.to_tsv()) : nullptr, &std::free);
        std::unique_ptr<char, decltype(&std::free)> rep_s(report ? dup_string(t.report()) : nullptr, &std::free);
        if (tsv != nullptr) *tsv = tsv_s.release();
        if (report != nullptr) *report = rep_s.release();
    });
}

} // extern "C"
