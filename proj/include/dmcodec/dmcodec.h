#ifndef DMCODEC_DMCODEC_H
#define DMCODEC_DMCODEC_H

/*
 * C interface to the dmcodec library: toy corpus generation, codec training,
 * encoding and decoding, codec language models and transcription metrics.
 *
 * Every function that can fail returns a dmc_status. On failure a message is
 * available from dmc_last_error() on the same thread until the next call.
 * Handles are opaque and must be released with their matching _free function.
 * Strings returned through char** are owned by the caller and released with
 * dmc_string_free.
 */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define DMC_API __declspec(dllexport)
#else
#define DMC_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum dmc_status {
    DMC_OK = 0,
    DMC_ERR_INVALID_ARGUMENT = 1, /* null pointer, buffer too small */
    DMC_ERR_CONFIG = 2,
    DMC_ERR_DOMAIN = 3,
    DMC_ERR_DATA = 4,
    DMC_ERR_NUMERIC = 5,
    DMC_ERR_IO = 6,
    DMC_ERR_INTERNAL = 7
} dmc_status;

DMC_API const char* dmc_version(void);
DMC_API const char* dmc_last_error(void);
DMC_API const char* dmc_status_name(dmc_status status);
DMC_API void dmc_string_free(char* s);
/* "trace", "debug", "info", "warn", "err", "off". */
DMC_API dmc_status dmc_set_log_level(const char* level);

/* ---- corpus ------------------------------------------------------------ */

/* Writes clipNNN.wav, teacher caches and manifest.tsv under out_dir. */
DMC_API dmc_status dmc_generate_toy_corpus(int n_clips, uint64_t seed, int teacher_dim, const char* out_dir);

/* ---- training configuration --------------------------------------------- */

typedef struct dmc_train_config dmc_train_config;

/* path may be NULL for defaults; otherwise a key=value file. */
DMC_API dmc_status dmc_train_config_new(const char* path, dmc_train_config** out);
DMC_API void dmc_train_config_free(dmc_train_config* cfg);
DMC_API dmc_status dmc_train_config_set(dmc_train_config* cfg, const char* key, const char* value);
/* Applies DMCODEC_SEED from the environment when set. */
DMC_API dmc_status dmc_train_config_apply_seed_env(dmc_train_config* cfg);
DMC_API dmc_status dmc_train_config_text(const dmc_train_config* cfg, char** out);

typedef struct dmc_losses {
    int64_t step;
    double t, f, g, d, fm, w, distill, total;
} dmc_losses;

typedef void (*dmc_train_callback)(const dmc_losses* losses, void* user);

/* ---- codec trainer ------------------------------------------------------ */

typedef struct dmc_trainer dmc_trainer;

DMC_API dmc_status dmc_trainer_new(const dmc_train_config* cfg, const char* manifest, dmc_trainer** out);
DMC_API void dmc_trainer_free(dmc_trainer* tr);
/* Number of manifest entries that could not be loaded. */
DMC_API dmc_status dmc_trainer_skipped(const dmc_trainer* tr, int* out);
DMC_API dmc_status dmc_trainer_step(dmc_trainer* tr, dmc_losses* out);
/* Losses on a centered crop of every clip, without updating anything. */
DMC_API dmc_status dmc_trainer_probe(dmc_trainer* tr, dmc_losses* out);
/* Trains to the configured length, writing train_log.csv and checkpoint.dmck. */
DMC_API dmc_status dmc_trainer_run(dmc_trainer* tr, const char* out_dir, dmc_train_callback cb, void* user);
DMC_API dmc_status dmc_trainer_save(const dmc_trainer* tr, const char* path);
DMC_API dmc_status dmc_trainer_load(dmc_trainer* tr, const char* path);

/* ---- codec -------------------------------------------------------------- */

typedef struct dmc_codec dmc_codec;

typedef struct dmc_codec_info {
    int sample_rate;
    int hop;
    int n_quantizers;
    int codebook_size;
    int latent_dim;
    double frame_rate;
} dmc_codec_info;

DMC_API dmc_status dmc_codec_load(const char* checkpoint, dmc_codec** out);
DMC_API void dmc_codec_free(dmc_codec* codec);
DMC_API dmc_status dmc_codec_info_get(const dmc_codec* codec, dmc_codec_info* out);
/* n_layers = 0 means all layers. */
DMC_API dmc_status dmc_codec_bitrate(const dmc_codec* codec, int n_layers, double* kbps);

/*
 * In-memory encoding. codes receives layer-major indices [n_layers, n_frames];
 * when capacity is too small nothing is written, *n_frames is still set and
 * DMC_ERR_INVALID_ARGUMENT is returned.
 */
DMC_API dmc_status dmc_codec_encode_pcm(const dmc_codec* codec, const double* samples, int64_t n_samples,
                                        int n_layers, int32_t* codes, int64_t capacity, int64_t* n_frames);
DMC_API dmc_status dmc_codec_decode_pcm(const dmc_codec* codec, const int32_t* codes, int n_layers,
                                        int64_t n_frames, double* samples, int64_t capacity, int64_t* n_samples);

typedef struct dmc_roundtrip_info {
    int n_layers;
    int64_t n_frames;
    int64_t input_samples;
    int64_t output_samples;
    double bitrate_kbps;
    double time_loss;
    double mel_loss;
} dmc_roundtrip_info;

/* Reads a WAV, writes the binary code file. info may be NULL. */
DMC_API dmc_status dmc_codec_encode_file(const dmc_codec* codec, const char* wav_in, int n_layers,
                                         const char* codes_out, dmc_roundtrip_info* info);
DMC_API dmc_status dmc_codec_decode_file(const dmc_codec* codec, const char* codes_in, const char* wav_out,
                                         dmc_roundtrip_info* info);
/* Encode and decode one WAV; losses compare the input cut to the output length. */
DMC_API dmc_status dmc_codec_roundtrip_file(const dmc_codec* codec, const char* wav_in, int n_layers,
                                            const char* wav_out, dmc_roundtrip_info* info);

typedef struct dmc_codes_header {
    int n_layers;
    int64_t n_frames;
    int codebook_size;
} dmc_codes_header;

DMC_API dmc_status dmc_codes_read_header(const char* path, dmc_codes_header* out);

/* ---- codec language models ---------------------------------------------- */

typedef struct dmc_lm dmc_lm;

/*
 * overrides: n key=value strings applied on top of the defaults. Codebook
 * size, layer count and phoneme vocabulary always follow the codec.
 */
DMC_API dmc_status dmc_lm_new(const dmc_codec* codec, const char* const* overrides, int n, dmc_lm** out);
DMC_API dmc_status dmc_lm_load(const char* path, dmc_lm** out);
DMC_API void dmc_lm_free(dmc_lm* lm);
DMC_API dmc_status dmc_lm_save(const dmc_lm* lm, const char* path);

/* stage is "ar" or "nar"; k is the NAR layer or 1 for the AR model. */
typedef void (*dmc_lm_callback)(const char* stage, int64_t step, int k, double loss, void* user);

DMC_API dmc_status dmc_lm_train(dmc_lm* lm, const dmc_codec* codec, const char* manifest, int ar_steps,
                                int nar_steps, uint64_t seed, dmc_lm_callback cb, void* user);

typedef struct dmc_synth_info {
    int64_t n_frames;
    int64_t n_samples;
    int truncated;
} dmc_synth_info;

/* prompt_wav may be NULL; max_frames = 0 uses the remaining context. */
DMC_API dmc_status dmc_lm_synthesize(const dmc_lm* lm, const dmc_codec* codec, const char* text,
                                     const char* prompt_wav, int64_t max_frames, const char* wav_out,
                                     const char* codes_out, dmc_synth_info* info);

/* ---- evaluation --------------------------------------------------------- */

typedef struct dmc_counts {
    int64_t n, c, s, d, i, p;
} dmc_counts;

/* Corpus-level counts over a TSV of utterance_id, reference, hypothesis. */
DMC_API dmc_status dmc_eval_counts(const char* transcripts, dmc_counts* out);
DMC_API dmc_status dmc_eval_wer(const dmc_counts* counts, double* out);
/* variant: "paper" or "standard". */
DMC_API dmc_status dmc_eval_wil(const dmc_counts* counts, const char* variant, double* out);

typedef struct dmc_aso_options {
    double alpha;
    int n_bootstrap;
    uint64_t seed;
    int higher_is_better;
} dmc_aso_options;

DMC_API void dmc_aso_options_default(dmc_aso_options* out);

/*
 * Pairwise comparison of n score files (CSV utterance_id,score). tsv and
 * report may each be NULL.
 */
DMC_API dmc_status dmc_eval_dominance(const char* const* names, const char* const* files, int n,
                                      const char* metric, const dmc_aso_options* opts, char** tsv,
                                      char** report);

#ifdef __cplusplus
}
#endif

#endif /* DMCODEC_DMCODEC_H */
