// Command-line front end over the dmcodec C interface.

#include "dmcodec/dmcodec.h"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace {

using nlohmann::json;

// Carries a failed status out of a subcommand to the single diagnostic line.
struct Failure : std::runtime_error {
    dmc_status status;
    Failure(dmc_status s, const std::string& what) : std::runtime_error(what), status(s) {}
};

void check(dmc_status s) {
    if (s != DMC_OK) throw Failure(s, dmc_last_error());
}

struct ConfigDeleter {
    void operator()(dmc_train_config* p) const { dmc_train_config_free(p); }
};
struct TrainerDeleter {
    void operator()(dmc_trainer* p) const { dmc_trainer_free(p); }
};
struct CodecDeleter {
    void operator()(dmc_codec* p) const { dmc_codec_free(p); }
};
struct LmDeleter {
    void operator()(dmc_lm* p) const { dmc_lm_free(p); }
};
struct StringDeleter {
    void operator()(char* p) const { dmc_string_free(p); }
};

using ConfigPtr = std::unique_ptr<dmc_train_config, ConfigDeleter>;
using TrainerPtr = std::unique_ptr<dmc_trainer, TrainerDeleter>;
using CodecPtr = std::unique_ptr<dmc_codec, CodecDeleter>;
using LmPtr = std::unique_ptr<dmc_lm, LmDeleter>;
using StringPtr = std::unique_ptr<char, StringDeleter>;

CodecPtr load_codec(const std::string& path) {
    dmc_codec* c = nullptr;
    check(dmc_codec_load(path.c_str(), &c));
    return CodecPtr(c);
}

std::pair<std::string, std::string> split_assignment(const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) throw Failure(DMC_ERR_CONFIG, "expected key=value, got '" + kv + "'");
    return {kv.substr(0, eq), kv.substr(eq + 1)};
}

void write_json(const std::string& path, const json& j) {
    std::ofstream f(path);
    if (!f) throw Failure(DMC_ERR_IO, "cannot write " + path);
    f << j.dump(2) << '\n';
    if (!f) throw Failure(DMC_ERR_IO, "cannot write " + path);
}

json losses_json(const dmc_losses& l) {
    return {{"step", l.step}, {"t", l.t},   {"f", l.f},             {"g", l.g},          {"d", l.d},
            {"fm", l.fm},     {"w", l.w}, {"distill", l.distill}, {"total", l.total}};
}

json roundtrip_json(const dmc_roundtrip_info& r) {
    return {{"n_layers", r.n_layers},
            {"n_frames", r.n_frames},
            {"bitrate_kbps", r.bitrate_kbps},
            {"input_samples", r.input_samples},
            {"output_samples", r.output_samples}};
}

// ---- subcommands -----------------------------------------------------------

struct CorpusArgs {
    int n_clips = 16;
    uint64_t seed = 42;
    int teacher_dim = 32;
    std::string out;
};

void run_corpus(const CorpusArgs& a) {
    check(dmc_generate_toy_corpus(a.n_clips, a.seed, a.teacher_dim, a.out.c_str()));
    std::cout << json{{"manifest", a.out + "/manifest.tsv"}, {"n_clips", a.n_clips}}.dump() << '\n';
}

struct TrainArgs {
    std::string config, manifest, out, resume;
    std::vector<std::string> overrides;
    bool quiet = false;
};

void run_train(const TrainArgs& a) {
    dmc_train_config* raw = nullptr;
    check(dmc_train_config_new(a.config.empty() ? nullptr : a.config.c_str(), &raw));
    ConfigPtr cfg(raw);
    check(dmc_train_config_apply_seed_env(cfg.get()));
    for (const auto& kv : a.overrides) {
        const auto [k, v] = split_assignment(kv);
        check(dmc_train_config_set(cfg.get(), k.c_str(), v.c_str()));
    }
    dmc_trainer* tr_raw = nullptr;
    check(dmc_trainer_new(cfg.get(), a.manifest.c_str(), &tr_raw));
    TrainerPtr tr(tr_raw);
    if (!a.resume.empty()) check(dmc_trainer_load(tr.get(), a.resume.c_str()));
    dmc_losses last{};
    struct Ctx {
        dmc_losses* last;
        bool quiet;
    } ctx{&last, a.quiet};
    auto cb = [](const dmc_losses* l, void* user) {
        auto* c = static_cast<Ctx*>(user);
        *c->last = *l;
        if (!c->quiet) {
            std::fprintf(stderr, "step %lld  total %.5g  t %.5g  f %.5g  d %.5g  distill %.5g\n",
                         static_cast<long long>(l->step), l->total, l->t, l->f, l->d, l->distill);
        }
    };
    check(dmc_trainer_run(tr.get(), a.out.c_str(), cb, &ctx));
    int skipped = 0;
    check(dmc_trainer_skipped(tr.get(), &skipped));
    std::cout << json{{"checkpoint", a.out + "/checkpoint.dmck"},
                      {"log", a.out + "/train_log.csv"},
                      {"skipped", skipped},
                      {"last", losses_json(last)}}
                     .dump()
              << '\n';
}

struct CodecArgs {
    std::string checkpoint, in, out;
    int layers = 0;
};

void run_encode(const CodecArgs& a) {
    const CodecPtr codec = load_codec(a.checkpoint);
    dmc_roundtrip_info info{};
    check(dmc_codec_encode_file(codec.get(), a.in.c_str(), a.layers, a.out.c_str(), &info));
    std::cout << roundtrip_json(info).dump() << '\n';
}

void run_decode(const CodecArgs& a) {
    const CodecPtr codec = load_codec(a.checkpoint);
    dmc_roundtrip_info info{};
    check(dmc_codec_decode_file(codec.get(), a.in.c_str(), a.out.c_str(), &info));
    std::cout << roundtrip_json(info).dump() << '\n';
}

void run_roundtrip(const CodecArgs& a) {
    const CodecPtr codec = load_codec(a.checkpoint);
    dmc_roundtrip_info info{};
    check(dmc_codec_roundtrip_file(codec.get(), a.in.c_str(), a.layers, a.out.c_str(), &info));
    json j = roundtrip_json(info);
    j["losses"] = {{"time", info.time_loss}, {"mel", info.mel_loss}};
    write_json(a.out + ".json", j);
    std::cout << j.dump() << '\n';
}

void run_codes_info(const std::string& path) {
    dmc_codes_header h{};
    check(dmc_codes_read_header(path.c_str(), &h));
    std::cout << json{{"n_layers", h.n_layers}, {"n_frames", h.n_frames}, {"codebook_size", h.codebook_size}}.dump()
              << '\n';
}

struct TtsTrainArgs {
    std::string checkpoint, manifest, out, init, log;
    int ar_steps = 200;
    int nar_steps = 1000;
    uint64_t seed = 42;
    bool seed_given = false;
    std::vector<std::string> overrides;
};

void run_tts_train(TtsTrainArgs a) {
    // Precedence: --seed, then DMCODEC_SEED, then the default.
    const char* env = std::getenv("DMCODEC_SEED");
    if (env != nullptr && !a.seed_given) {
        try {
            a.seed = std::stoull(env);
        } catch (const std::logic_error&) {
            throw Failure(DMC_ERR_CONFIG, std::string("DMCODEC_SEED is not an integer: '") + env + "'");
        }
    }
    const CodecPtr codec = load_codec(a.checkpoint);
    dmc_lm* raw = nullptr;
    if (!a.init.empty()) {
        check(dmc_lm_load(a.init.c_str(), &raw));
    } else {
        std::vector<const char*> kv;
        for (const auto& s : a.overrides) kv.push_back(s.c_str());
        check(dmc_lm_new(codec.get(), kv.data(), static_cast<int>(kv.size()), &raw));
    }
    LmPtr lm(raw);
    std::ofstream log;
    if (!a.log.empty()) {
        log.open(a.log);
        if (!log) throw Failure(DMC_ERR_IO, "cannot write " + a.log);
        log << "stage,step,k,loss\n";
    }
    struct Ctx {
        std::ofstream* log;
        double last_ar = 0, last_nar = 0;
    } ctx{a.log.empty() ? nullptr : &log};
    auto cb = [](const char* stage, int64_t step, int k, double loss, void* user) {
        auto* c = static_cast<Ctx*>(user);
        if (c->log) {
            char buf[64];
            std::snprintf(buf, sizeof buf, "%.17g", loss);
            *c->log << stage << ',' << step << ',' << k << ',' << buf << '\n';
        }
        (std::string(stage) == "ar" ? c->last_ar : c->last_nar) = loss;
        if (step % 50 == 0) {
            std::fprintf(stderr, "%s step %lld  k %d  loss %.5g\n", stage, static_cast<long long>(step), k, loss);
        }
    };
    check(dmc_lm_train(lm.get(), codec.get(), a.manifest.c_str(), a.ar_steps, a.nar_steps, a.seed, cb, &ctx));
    check(dmc_lm_save(lm.get(), a.out.c_str()));
    std::cout << json{{"lm", a.out}, {"last_ar_loss", ctx.last_ar}, {"last_nar_loss", ctx.last_nar}}.dump() << '\n';
}

struct TtsSynthArgs {
    std::string checkpoint, lm, text, prompt, out, codes_out;
    int64_t max_frames = 0;
};

void run_tts_synth(const TtsSynthArgs& a) {
    const CodecPtr codec = load_codec(a.checkpoint);
    dmc_lm* raw = nullptr;
    check(dmc_lm_load(a.lm.c_str(), &raw));
    const LmPtr lm(raw);
    dmc_synth_info info{};
    check(dmc_lm_synthesize(lm.get(), codec.get(), a.text.c_str(), a.prompt.empty() ? nullptr : a.prompt.c_str(),
                            a.max_frames, a.out.c_str(), a.codes_out.empty() ? nullptr : a.codes_out.c_str(), &info));
    std::cout << json{{"out", a.out},
                      {"n_frames", info.n_frames},
                      {"n_samples", info.n_samples},
                      {"truncated", info.truncated != 0}}
                     .dump()
              << '\n';
}

json counts_json(const dmc_counts& c) {
    return {{"N", c.n}, {"C", c.c}, {"S", c.s}, {"D", c.d}, {"I", c.i}, {"P", c.p}};
}

void run_eval_wer(const std::string& pairs) {
    dmc_counts c{};
    check(dmc_eval_counts(pairs.c_str(), &c));
    double v = 0;
    check(dmc_eval_wer(&c, &v));
    std::cout << json{{"wer", v}, {"counts", counts_json(c)}}.dump() << '\n';
}

void run_eval_wil(const std::string& pairs, const std::string& variant) {
    dmc_counts c{};
    check(dmc_eval_counts(pairs.c_str(), &c));
    double v = 0;
    check(dmc_eval_wil(&c, variant.c_str(), &v));
    std::cout << json{{"wil", v}, {"variant", variant}, {"counts", counts_json(c)}}.dump() << '\n';
}

struct AsoArgs {
    std::vector<std::string> systems;
    std::string metric = "score", out;
    double alpha = 0.05;
    int n_bootstrap = 1000;
    uint64_t seed = 42;
    bool lower_is_better = false;
};

void run_eval_aso(const AsoArgs& a) {
    std::vector<std::string> names, files;
    for (const auto& s : a.systems) {
        const auto [name, file] = split_assignment(s);
        names.push_back(name);
        files.push_back(file);
    }
    std::vector<const char*> n_ptr, f_ptr;
    for (size_t i = 0; i < names.size(); ++i) {
        n_ptr.push_back(names[i].c_str());
        f_ptr.push_back(files[i].c_str());
    }
    dmc_aso_options o;
    dmc_aso_options_default(&o);
    o.alpha = a.alpha;
    o.n_bootstrap = a.n_bootstrap;
    o.seed = a.seed;
    o.higher_is_better = a.lower_is_better ? 0 : 1;
    char* tsv = nullptr;
    char* report = nullptr;
    check(dmc_eval_dominance(n_ptr.data(), f_ptr.data(), static_cast<int>(names.size()), a.metric.c_str(), &o, &tsv,
                             &report));
    const StringPtr tsv_s(tsv), report_s(report);
    if (!a.out.empty()) {
        std::ofstream f(a.out);
        f << tsv;
        if (!f) throw Failure(DMC_ERR_IO, "cannot write " + a.out);
    }
    std::cout << report;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"dmcodec: speech codec training, coding, codec-LM synthesis and evaluation"};
    app.require_subcommand(1);
    std::string log_level = "info";
    app.add_option("--log-level", log_level, "trace, debug, info, warn, err or off");

    std::function<void()> action;

    CorpusArgs corpus;
    auto* c_corpus = app.add_subcommand("corpus", "Generate the synthetic toy corpus");
    c_corpus->add_option("--n-clips", corpus.n_clips)->capture_default_str();
    c_corpus->add_option("--seed", corpus.seed)->capture_default_str();
    c_corpus->add_option("--teacher-dim", corpus.teacher_dim)->capture_default_str();
    c_corpus->add_option("--out", corpus.out)->required();
    c_corpus->callback([&] { action = [&] { run_corpus(corpus); }; });

    TrainArgs train;
    auto* c_train = app.add_subcommand("train", "Train the codec");
    c_train->add_option("--config", train.config, "key=value config file");
    c_train->add_option("--manifest", train.manifest)->required();
    c_train->add_option("--out", train.out)->required();
    c_train->add_option("--set", train.overrides, "key=value override (repeatable)");
    c_train->add_option("--resume", train.resume, "checkpoint to continue from");
    c_train->add_flag("--quiet", train.quiet);
    c_train->callback([&] { action = [&] { run_train(train); }; });

    CodecArgs enc, dec, rt;
    auto* c_enc = app.add_subcommand("encode", "WAV to binary code file");
    c_enc->add_option("--checkpoint", enc.checkpoint)->required();
    c_enc->add_option("--in", enc.in)->required();
    c_enc->add_option("--out", enc.out)->required();
    c_enc->add_option("--layers", enc.layers, "active RVQ layers, 0 = all")->capture_default_str();
    c_enc->callback([&] { action = [&] { run_encode(enc); }; });

    auto* c_dec = app.add_subcommand("decode", "Binary code file to WAV");
    c_dec->add_option("--checkpoint", dec.checkpoint)->required();
    c_dec->add_option("--in", dec.in)->required();
    c_dec->add_option("--out", dec.out)->required();
    c_dec->callback([&] { action = [&] { run_decode(dec); }; });

    auto* c_rt = app.add_subcommand("roundtrip", "Encode and decode a WAV, with a JSON sidecar");
    c_rt->add_option("--checkpoint", rt.checkpoint)->required();
    c_rt->add_option("--in", rt.in)->required();
    c_rt->add_option("--out", rt.out)->required();
    c_rt->add_option("--layers", rt.layers, "active RVQ layers, 0 = all")->capture_default_str();
    c_rt->callback([&] { action = [&] { run_roundtrip(rt); }; });

    CodecArgs exp;
    std::string info_path;
    auto* c_codes = app.add_subcommand("codes", "Code file utilities");
    c_codes->require_subcommand(1);
    auto* c_export = c_codes->add_subcommand("export", "Write the code indices of a WAV");
    c_export->add_option("--checkpoint", exp.checkpoint)->required();
    c_export->add_option("--in", exp.in)->required();
    c_export->add_option("--out", exp.out)->required();
    c_export->add_option("--layers", exp.layers, "active RVQ layers, 0 = all")->capture_default_str();
    c_export->callback([&] { action = [&] { run_encode(exp); }; });
    auto* c_info = c_codes->add_subcommand("info", "Print a code file header");
    c_info->add_option("--in", info_path)->required();
    c_info->callback([&] { action = [&] { run_codes_info(info_path); }; });

    TtsTrainArgs tts_train;
    auto* c_tt = app.add_subcommand("tts-train", "Train the codec language models");
    c_tt->add_option("--checkpoint", tts_train.checkpoint, "codec checkpoint")->required();
    c_tt->add_option("--manifest", tts_train.manifest)->required();
    c_tt->add_option("--out", tts_train.out, "LM checkpoint to write")->required();
    c_tt->add_option("--init", tts_train.init, "LM checkpoint to continue from");
    c_tt->add_option("--ar-steps", tts_train.ar_steps)->capture_default_str();
    c_tt->add_option("--nar-steps", tts_train.nar_steps)->capture_default_str();
    c_tt->add_option("--seed", tts_train.seed)->capture_default_str();
    c_tt->add_option("--set", tts_train.overrides, "LM key=value override (repeatable)");
    c_tt->add_option("--log", tts_train.log, "per-step loss CSV");
    c_tt->callback([&] {
        tts_train.seed_given = c_tt->get_option("--seed")->count() > 0;
        action = [&] { run_tts_train(tts_train); };
    });

    TtsSynthArgs synth;
    auto* c_ts = app.add_subcommand("tts-synth", "Synthesize speech from text and an optional prompt");
    c_ts->add_option("--checkpoint", synth.checkpoint, "codec checkpoint")->required();
    c_ts->add_option("--lm", synth.lm)->required();
    c_ts->add_option("--phonemes,--text", synth.text, "text, phonemized by the grapheme phonemizer")->required();
    c_ts->add_option("--prompt", synth.prompt, "prompt WAV");
    c_ts->add_option("--out", synth.out)->required();
    c_ts->add_option("--codes-out", synth.codes_out);
    c_ts->add_option("--max-frames", synth.max_frames, "0 = context limit")->capture_default_str();
    c_ts->callback([&] { action = [&] { run_tts_synth(synth); }; });

    auto* c_eval = app.add_subcommand("eval", "Transcription metrics and significance tests");
    c_eval->require_subcommand(1);
    std::string wer_pairs, wil_pairs, wil_variant = "paper";
    auto* c_wer = c_eval->add_subcommand("wer", "Word error rate over a transcript TSV");
    c_wer->add_option("--pairs", wer_pairs, "TSV: utterance_id, reference, hypothesis")->required();
    c_wer->callback([&] { action = [&] { run_eval_wer(wer_pairs); }; });
    auto* c_wil = c_eval->add_subcommand("wil", "Word information lost over a transcript TSV");
    c_wil->add_option("--pairs", wil_pairs, "TSV: utterance_id, reference, hypothesis")->required();
    c_wil->add_option("--variant", wil_variant, "paper or standard")->capture_default_str();
    c_wil->callback([&] { action = [&] { run_eval_wil(wil_pairs, wil_variant); }; });
    AsoArgs aso;
    auto* c_aso = c_eval->add_subcommand("aso", "Pairwise almost-stochastic-order dominance table");
    c_aso->add_option("--system", aso.systems, "name=scores.csv (repeatable, at least two)")->required();
    c_aso->add_option("--metric", aso.metric)->capture_default_str();
    c_aso->add_option("--alpha", aso.alpha)->capture_default_str();
    c_aso->add_option("--bootstrap", aso.n_bootstrap)->capture_default_str();
    c_aso->add_option("--seed", aso.seed)->capture_default_str();
    c_aso->add_flag("--lower-is-better", aso.lower_is_better, "for error rates such as WER");
    c_aso->add_option("--out", aso.out, "write the table as TSV");
    c_aso->callback([&] { action = [&] { run_eval_aso(aso); }; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::fprintf(stderr, "dmcodec: usage error: %s (run with --help)\n", e.what());
        return 2;
    }
    try {
        check(dmc_set_log_level(log_level.c_str()));
        if (action) action();
    } catch (const Failure& f) {
        std::fprintf(stderr, "dmcodec: %s: %s\n", dmc_status_name(f.status), f.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "dmcodec: %s\n", e.what());
        return 1;
    }
    return 0;
}
