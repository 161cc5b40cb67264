/* Exercises the C interface from C: handles, status codes and the main flows
 * on a two-clip toy corpus with a tiny model. */

#include "dmcodec/dmcodec.h"

#include <math.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

static int failures = 0;

#define EXPECT(cond)                                                                                                   \
    do {                                                                                                               \
        if (!(cond)) {                                                                                                 \
            fprintf(stderr, "%s:%d: expectation failed: %s (last error: %s)\n", __FILE__, __LINE__, #cond,            \
                    dmc_last_error());                                                                                 \
            ++failures;                                                                                                \
        }                                                                                                              \
    } while (0)

#define EXPECT_OK(call) EXPECT((call) == DMC_OK)

static int steps_seen = 0;

static void on_step(const dmc_losses* l, void* user) {
    (void)user;
    if (isfinite(l->total)) ++steps_seen;
}

static int lm_steps_seen = 0;

static void on_lm_step(const char* stage, int64_t step, int k, double loss, void* user) {
    (void)step;
    (void)k;
    (void)user;
    if ((strcmp(stage, "ar") == 0 || strcmp(stage, "nar") == 0) && isfinite(loss)) ++lm_steps_seen;
}

static void path_join(char* out, size_t cap, const char* dir, const char* name) {
    if (snprintf(out, cap, "%s/%s", dir, name) >= (int)cap) {
        fprintf(stderr, "path too long: %s/%s\n", dir, name);
        exit(EXIT_FAILURE);
    }
}

static int write_text(const char* path, const char* text) {
    FILE* f = fopen(path, "w");
    if (!f) return 0;
    fputs(text, f);
    fclose(f);
    return 1;
}

int main(int argc, char** argv) {
    const char* dir = argc > 1 ? argv[1] : "capi_test_out";
    char manifest[1024], run_dir[1024], ckpt[1024], wav[1024], codes[1024], out_wav[1024], lm_path[1024];
    char pairs[1024], scores_a[1024], scores_b[1024];
    path_join(manifest, sizeof manifest, dir, "manifest.tsv");
    path_join(run_dir, sizeof run_dir, dir, "run");
    path_join(ckpt, sizeof ckpt, run_dir, "checkpoint.dmck");
    path_join(wav, sizeof wav, dir, "clip000.wav");
    path_join(codes, sizeof codes, dir, "clip000.dmcq");
    path_join(out_wav, sizeof out_wav, dir, "clip000.recon.wav");
    path_join(lm_path, sizeof lm_path, dir, "lm.dmck");
    path_join(pairs, sizeof pairs, dir, "pairs.tsv");
    path_join(scores_a, sizeof scores_a, dir, "a.csv");
    path_join(scores_b, sizeof scores_b, dir, "b.csv");

    EXPECT(strlen(dmc_version()) > 0);
    EXPECT_OK(dmc_set_log_level("err"));
    EXPECT(dmc_set_log_level("loud") == DMC_ERR_CONFIG);

    /* Argument and configuration errors carry a message. */
    EXPECT(dmc_train_config_new(NULL, NULL) == DMC_ERR_INVALID_ARGUMENT);
    EXPECT(strlen(dmc_last_error()) > 0);
    EXPECT(dmc_generate_toy_corpus(0, 42, 4, dir) == DMC_ERR_CONFIG);
    EXPECT(dmc_codec_load("/nonexistent/checkpoint.dmck", &(dmc_codec*){NULL}) == DMC_ERR_IO);
    EXPECT(strcmp(dmc_status_name(DMC_ERR_DATA), "data error") == 0);

    EXPECT_OK(dmc_generate_toy_corpus(2, 42, 4, dir));

    dmc_train_config* cfg = NULL;
    EXPECT_OK(dmc_train_config_new(NULL, &cfg));
    EXPECT(dmc_train_config_set(cfg, "no.such_key", "1") == DMC_ERR_CONFIG);
    const char* kv[][2] = {
        {"codec.base_channels", "2"}, {"codec.n_blocks", "2"},      {"codec.strides", "8,40"},
        {"codec.latent_dim", "4"},    {"codec.codebook_size", "16"}, {"codec.n_quantizers", "2"},
        {"codec.lstm_layers", "1"},   {"disc.periods", "2"},         {"disc.msd_scales", "1"},
        {"disc.stft_windows", "64"},  {"disc.stft_channels", "2"},   {"distill.teacher_dim", "4"},
        {"train.crop_seconds", "0.04"}, {"train.batch_size", "2"},   {"train.max_steps", "2"},
        {"train.epochs", "5"},
        {"train.learning_rate", "0.001"},
    };
    for (size_t i = 0; i < sizeof kv / sizeof kv[0]; ++i) EXPECT_OK(dmc_train_config_set(cfg, kv[i][0], kv[i][1]));
    char* text = NULL;
    EXPECT_OK(dmc_train_config_text(cfg, &text));
    EXPECT(text && strstr(text, "codec.strides=8,40") != NULL);
    dmc_string_free(text);

    dmc_trainer* tr = NULL;
    EXPECT_OK(dmc_trainer_new(cfg, manifest, &tr));
    int skipped = -1;
    EXPECT_OK(dmc_trainer_skipped(tr, &skipped));
    EXPECT(skipped == 0);
    dmc_losses probe;
    EXPECT_OK(dmc_trainer_probe(tr, &probe));
    EXPECT(isfinite(probe.total) && probe.step == 0);
    EXPECT_OK(dmc_trainer_run(tr, run_dir, on_step, NULL));
    EXPECT(steps_seen == 2);
    dmc_trainer_free(tr);
    dmc_train_config_free(cfg);

    dmc_codec* codec = NULL;
    EXPECT_OK(dmc_codec_load(ckpt, &codec));
    dmc_codec_info info;
    EXPECT_OK(dmc_codec_info_get(codec, &info));
    EXPECT(info.hop == 320 && info.n_quantizers == 2 && info.codebook_size == 16);
    double kbps = 0.0;
    EXPECT_OK(dmc_codec_bitrate(codec, 1, &kbps));
    EXPECT(kbps == 0.2); /* 4 bits x 50 Hz */
    EXPECT(dmc_codec_bitrate(codec, 3, &kbps) == DMC_ERR_CONFIG);

    /* In-memory round trip; a short buffer reports the needed size. */
    double pcm[1000];
    for (int i = 0; i < 1000; ++i) pcm[i] = 0.3 * sin(0.05 * i);
    int64_t frames = 0;
    int32_t small[1];
    EXPECT(dmc_codec_encode_pcm(codec, pcm, 1000, 0, small, 1, &frames) == DMC_ERR_INVALID_ARGUMENT);
    EXPECT(frames == 3);
    int32_t idx[6];
    EXPECT_OK(dmc_codec_encode_pcm(codec, pcm, 1000, 0, idx, 6, &frames));
    double back[960];
    int64_t n_back = 0;
    EXPECT_OK(dmc_codec_decode_pcm(codec, idx, 2, frames, back, 960, &n_back));
    EXPECT(n_back == 960);
    idx[0] = 99;
    EXPECT(dmc_codec_decode_pcm(codec, idx, 2, frames, back, 960, &n_back) == DMC_ERR_DOMAIN);

    dmc_roundtrip_info rt;
    EXPECT_OK(dmc_codec_encode_file(codec, wav, 1, codes, &rt));
    EXPECT(rt.n_layers == 1 && rt.n_frames == 150);
    dmc_codes_header hdr;
    EXPECT_OK(dmc_codes_read_header(codes, &hdr));
    EXPECT(hdr.n_layers == 1 && hdr.n_frames == 150 && hdr.codebook_size == 16);
    EXPECT_OK(dmc_codec_decode_file(codec, codes, out_wav, &rt));
    EXPECT(rt.output_samples == 48000);
    EXPECT_OK(dmc_codec_roundtrip_file(codec, wav, 2, out_wav, &rt));
    EXPECT(rt.input_samples == 48000 && rt.output_samples == 48000);
    EXPECT(isfinite(rt.time_loss) && rt.time_loss > 0.0 && isfinite(rt.mel_loss));

    /* Codec LM: a few steps, save, load, synthesize. */
    const char* overrides[] = {"dim=16", "heads=2", "layers=1"};
    dmc_lm* lm = NULL;
    EXPECT(dmc_lm_new(codec, (const char*[]){"bogus"}, 1, &lm) == DMC_ERR_CONFIG);
    EXPECT_OK(dmc_lm_new(codec, overrides, 3, &lm));
    EXPECT_OK(dmc_lm_train(lm, codec, manifest, 2, 2, 42, on_lm_step, NULL));
    EXPECT(lm_steps_seen == 4);
    EXPECT_OK(dmc_lm_save(lm, lm_path));
    dmc_lm_free(lm);
    lm = NULL;
    EXPECT_OK(dmc_lm_load(lm_path, &lm));
    dmc_synth_info si;
    EXPECT_OK(dmc_lm_synthesize(lm, codec, "hello there", wav, 5, out_wav, codes, &si));
    EXPECT(si.n_frames <= 5 && si.n_samples == si.n_frames * 320);
    EXPECT(dmc_lm_synthesize(lm, codec, "123", NULL, 5, out_wav, NULL, &si) == DMC_ERR_DOMAIN);
    dmc_lm_free(lm);
    dmc_codec_free(codec);

    /* Metrics. */
    EXPECT(write_text(pairs, "u1\ta b c d\ta x c d\n"));
    dmc_counts counts;
    EXPECT_OK(dmc_eval_counts(pairs, &counts));
    double rate = 0.0;
    EXPECT_OK(dmc_eval_wer(&counts, &rate));
    EXPECT(rate == 0.25);
    EXPECT_OK(dmc_eval_wil(&counts, "standard", &rate));
    EXPECT(fabs(rate - 0.4375) < 1e-15);
    EXPECT(dmc_eval_wil(&counts, "other", &rate) == DMC_ERR_CONFIG);

    EXPECT(write_text(scores_a, "utterance_id,score\nu1,5\nu2,6\nu3,7\n"));
    EXPECT(write_text(scores_b, "utterance_id,score\nu1,1\nu2,2\nu3,3\n"));
    const char* names[] = {"a", "b"};
    const char* files[] = {scores_a, scores_b};
    dmc_aso_options opts;
    dmc_aso_options_default(&opts);
    EXPECT(opts.n_bootstrap == 1000 && opts.alpha == 0.05);
    opts.n_bootstrap = 100;
    char* tsv = NULL;
    char* report = NULL;
    EXPECT_OK(dmc_eval_dominance(names, files, 2, "score", &opts, &tsv, &report));
    EXPECT(tsv && strstr(tsv, "a\t6.000000\t") != NULL && strstr(tsv, "dominant:0.0000") != NULL);
    EXPECT(report && strlen(report) > 0);
    dmc_string_free(tsv);
    dmc_string_free(report);

    if (failures) fprintf(stderr, "%d expectation(s) failed\n", failures);
    return failures ? EXIT_FAILURE : EXIT_SUCCESS;
}
