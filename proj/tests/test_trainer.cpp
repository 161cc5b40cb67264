#include "doctest.h"

#include "checkpoint.hpp"
#include "corpus.hpp"
#include "errors.hpp"
#include "logging.hpp"
#include "trainer.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>

using namespace dmcodec;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("dmcodec_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

// hop 32 at 16 kHz, 8-frame crops, one small discriminator of each kind.
TrainConfig tiny_train_config() {
    TrainConfig cfg;
    cfg.codec.base_channels = 2;
    cfg.codec.n_blocks = 2;
    cfg.codec.strides = {4, 8};
    cfg.codec.latent_dim = 4;
    cfg.codec.codebook_size = 16;
    cfg.codec.n_quantizers = 2;
    cfg.codec.lstm_layers = 1;
    cfg.disc.periods = {2};
    cfg.disc.msd_scales = 1;
    cfg.disc.stft_windows = {64};
    cfg.disc.stft_channels = 2;
    cfg.distill.teacher_dim = 4;
    cfg.distill.lm_enabled = true;
    cfg.distill.sm_enabled = true;
    cfg.crop_seconds = 0.016;
    cfg.batch_size = 2;
    cfg.learning_rate = 1e-3;
    cfg.teacher_mode = TeacherMode::synthetic;
    return cfg;
}

ToyCorpusOptions tiny_corpus(int n) {
    ToyCorpusOptions o;
    o.n_clips = n;
    o.seconds = 0.05;
    o.teacher_dim = 4;
    o.hop = 32;
    return o;
}

struct QuietLogs {
    QuietLogs() { logger().set_level(spdlog::level::err); }
    ~QuietLogs() { logger().set_level(spdlog::level::info); }
};

Dataset tiny_dataset(const TrainConfig& cfg, int n, const std::string& name) {
    const auto dir = scratch_dir(name);
    return load_dataset(generate_toy_corpus(tiny_corpus(n), dir), cfg);
}

} // namespace

TEST_CASE("toy corpus is deterministic and well formed") {
    QuietLogs quiet;
    const auto a = scratch_dir("corpus_a");
    const auto b = scratch_dir("corpus_b");
    const Manifest ma = generate_toy_corpus(tiny_corpus(3), a);
    generate_toy_corpus(tiny_corpus(3), b);
    REQUIRE(ma.entries.size() == 3);
    for (const char* f : {"clip000.wav", "clip001.lm.dmte", "clip002.sm.dmte", "manifest.tsv"}) {
        CHECK(file_bytes(a / f) == file_bytes(b / f));
    }
    const Manifest back = read_manifest(a / "manifest.tsv");
    REQUIRE(back.entries.size() == 3);
    CHECK(back.entries[1].transcript == ma.entries[1].transcript);
    CHECK(fs::equivalent(back.entries[1].wav, ma.entries[1].wav));

    const TeacherDump sm = read_teacher(ma.entries[0].teacher_sm);
    CHECK(sm.modality == Modality::semantic);
    CHECK(sm.dim == 4);
    CHECK(sm.n == 800 / 32);
    const TeacherDump lm = read_teacher(ma.entries[0].teacher_lm);
    CHECK(lm.modality == Modality::contextual);
    CHECK(lm.n == 1 + static_cast<int64_t>(split_words(ma.entries[0].transcript).size()));

    ToyCorpusOptions none = tiny_corpus(0);
    CHECK_THROWS_AS(generate_toy_corpus(none, scratch_dir("corpus_none")), ConfigError);
}

TEST_CASE("manifest parsing") {
    const auto dir = scratch_dir("manifest");
    {
        std::ofstream out(dir / "m.tsv");
        out << "# comment\n\nsub/a.wav\thello world\n/abs/b.wav\tbye\tb.lm\tb.sm\n";
    }
    const Manifest m = read_manifest(dir / "m.tsv");
    REQUIRE(m.entries.size() == 2);
    CHECK(m.entries[0].wav == dir / "sub/a.wav");
    CHECK(m.entries[0].teacher_lm.empty());
    CHECK(m.entries[1].wav == fs::path("/abs/b.wav"));
    CHECK(m.entries[1].teacher_sm == dir / "b.sm");
    CHECK(split_words("  a  b\tc ") == std::vector<std::string>{"a", "b", "c"});
    {
        std::ofstream out(dir / "empty.tsv");
        out << "# nothing\n";
    }
    CHECK_THROWS_AS(read_manifest(dir / "empty.tsv"), DataError);
    CHECK_THROWS_AS(read_manifest(dir / "missing.tsv"), IoError);
}

TEST_CASE("train config text round trip and overrides") {
    TrainConfig cfg = tiny_train_config();
    const TrainConfig back = TrainConfig::from_text(cfg.to_text());
    CHECK(back.to_text() == cfg.to_text());
    CHECK(back.hash() == cfg.hash());
    CHECK(cfg.hash().size() == 16);

    TrainConfig s = TrainConfig::from_text("# desk\nloss.scale = 2\nloss.lambda_g = 0.5\ntrain.seed=7\n");
    CHECK(s.weights.t == 8.3);
    CHECK(s.weights.g == 0.5);
    CHECK(s.weights.fm == 1.0);
    CHECK(s.seed == 7);
    CHECK_THROWS_AS(TrainConfig::from_text("nope.key=1\n"), ConfigError);
    CHECK_THROWS_AS(TrainConfig::from_text("train.epochs=x\n"), ConfigError);
    CHECK_THROWS_AS(TrainConfig::from_text("train.epochs\n"), ConfigError);

    TrainConfig bad = tiny_train_config();
    bad.crop_seconds = 0.0161;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = tiny_train_config();
    bad.crop_seconds = 0.002; // shorter than the STFT window
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    ::setenv("DMCODEC_SEED", "99", 1);
    apply_seed_env(cfg);
    ::unsetenv("DMCODEC_SEED");
    CHECK(cfg.seed == 99);
}

TEST_CASE("each ablation switch changes the config hash") {
    const TrainConfig base = tiny_train_config();
    const std::vector<std::pair<std::string, std::string>> switches{
        {"distill.axis", "time"},           {"distill.lm_rvq", "rvq1:8"},   {"distill.sm_rvq", "rvq8"},
        {"distill.w_lm", "0.5"},            {"distill.w_sm", "2"},          {"train.n_active_layers", "1"},
        {"distill.lm_modality", "cls"},     {"distill.layer_policy", "last"}, {"distill.lm", "false"},
        {"distill.sm", "false"},            {"loss.scale", "2"},
        {"codec.n_quantizers", "4"},
    };
    TrainConfig longer = base;
    longer.epochs = 5;
    longer.max_steps = 3;
    CHECK(longer.hash() == base.hash());
    std::set<std::string> hashes{base.hash()};
    for (const auto& [k, v] : switches) {
        TrainConfig c = base;
        c.set(k, v);
        INFO(k);
        CHECK(hashes.insert(c.hash()).second);
    }
}

TEST_CASE("checkpoint archive round trip and corruption") {
    const auto dir = scratch_dir("archive");
    Archive a;
    a.put("x", {2, 2}, {1.0, -2.5, 3.25, 1e-300});
    a.put("v", {0.1, 0.2});
    a.meta["k"] = "value";
    save_archive(dir / "a.dmck", a);
    const Archive b = load_archive(dir / "a.dmck");
    CHECK(b.get("x").shape == Shape{2, 2});
    CHECK(b.get("x").values == a.get("x").values);
    CHECK(b.meta_value("k") == "value");
    CHECK_THROWS_AS(b.get("missing"), DataError);

    std::string bytes = file_bytes(dir / "a.dmck");
    {
        std::ofstream out(dir / "short.dmck", std::ios::binary);
        out << bytes.substr(0, bytes.size() - 3);
    }
    CHECK_THROWS_AS(load_archive(dir / "short.dmck"), DataError);
    {
        std::ofstream out(dir / "long.dmck", std::ios::binary);
        out << bytes << 'x';
    }
    CHECK_THROWS_AS(load_archive(dir / "long.dmck"), DataError);
    CHECK_THROWS_AS(load_archive(dir / "none.dmck"), IoError);
}

TEST_CASE("train step accounting and baseline mode") {
    QuietLogs quiet;
    TrainConfig cfg = tiny_train_config();
    Trainer tr(cfg, tiny_dataset(cfg, 4, "acct"));
    const LossBreakdown l = tr.step();
    CHECK(l.total == total_generator(l, cfg.weights));
    CHECK(l.distill > 0.0);
    for (double v : {l.t, l.f, l.g, l.d, l.fm, l.w}) CHECK(std::isfinite(v));

    TrainConfig base = tiny_train_config();
    base.distill.lm_enabled = false;
    base.distill.sm_enabled = false;
    Trainer tb(base, tiny_dataset(base, 4, "baseline"));
    const LossBreakdown lb = tb.step();
    CHECK(lb.distill == 0.0);
    CHECK(lb.total == total_generator(lb, base.weights));
}

TEST_CASE("codebook state changes only in the generator pass") {
    QuietLogs quiet;
    TrainConfig cfg = tiny_train_config();
    Trainer tr(cfg, tiny_dataset(cfg, 4, "ema"));
    tr.step();
    const auto before = tr.model().rvq().books();
    const Batch probe = tr.probe_batch();
    tr.evaluate(probe);
    CHECK(tr.model().rvq().books()[0].embeddings == before[0].embeddings);
    CHECK(tr.model().rvq().books()[1].cluster_size == before[1].cluster_size);
    tr.step();
    CHECK(tr.model().rvq().books()[0].embeddings != before[0].embeddings);
}

TEST_CASE("checkpoint reload reproduces probe losses and resume matches") {
    QuietLogs quiet;
    TrainConfig cfg = tiny_train_config();
    cfg.epochs = 2;
    const auto out = scratch_dir("run");
    Trainer tr(cfg, tiny_dataset(cfg, 4, "run_data"));
    const fs::path ckpt = tr.run(out);
    CHECK(fs::exists(ckpt));
    CHECK(tr.global_step() == 4);
    {
        std::ifstream log(out / "train_log.csv");
        std::string header;
        std::getline(log, header);
        CHECK(header == "step,t,f,g,d,fm,w,distill,total");
        int rows = 0;
        for (std::string line; std::getline(log, line);) ++rows;
        CHECK(rows == 4);
    }
    const Batch probe = tr.probe_batch();
    const LossBreakdown a = tr.evaluate(probe);

    Trainer back(cfg, tiny_dataset(cfg, 4, "run_data2"));
    back.load_checkpoint(ckpt);
    const LossBreakdown b = back.evaluate(probe);
    CHECK(a.total == b.total);
    CHECK(a.d == b.d);
    CHECK(back.global_step() == 4);

    // Stop after 2 steps, save, resume, and compare step 3 with a straight run.
    TrainConfig half = cfg;
    half.max_steps = 2;
    Trainer first(half, tiny_dataset(cfg, 4, "resume_a"));
    first.step();
    first.step();
    first.save_checkpoint(out / "half.dmck");
    Trainer straight(cfg, tiny_dataset(cfg, 4, "resume_b"));
    straight.step();
    straight.step();
    const LossBreakdown want = straight.step();

    Trainer resumed(cfg, tiny_dataset(cfg, 4, "resume_c"));
    resumed.load_checkpoint(out / "half.dmck");
    const LossBreakdown got = resumed.step();
    CHECK(got.total == want.total);
    CHECK(got.t == want.t);
    TrainConfig other = cfg;
    other.distill.axis = DistillAxis::time;
    Trainer mismatched(other, tiny_dataset(cfg, 4, "resume_e"));
    CHECK_THROWS_AS(mismatched.load_checkpoint(out / "half.dmck"), ConfigError);

    auto model = CodecModel::from_checkpoint(ckpt);
    AudioClip clip = toy_clip(tiny_corpus(1), 0);
    const auto tokens = model->tokenize(clip);
    CHECK(tokens.code.n_active == 2);
    CHECK(model->reconstruct(tokens.code).samples.size() == 800);
}

TEST_CASE("unreadable manifest entries are skipped and counted") {
    QuietLogs quiet;
    TrainConfig cfg = tiny_train_config();
    const auto dir = scratch_dir("skip");
    Manifest m = generate_toy_corpus(tiny_corpus(3), dir);
    m.entries.push_back({dir / "missing.wav", "gone", {}, {}});
    {
        std::ofstream junk(dir / "junk.wav");
        junk << "not a wav";
    }
    m.entries.push_back({dir / "junk.wav", "junk", {}, {}});
    const Dataset ds = load_dataset(m, cfg);
    CHECK(ds.items.size() == 3);
    CHECK(ds.skipped == 2);

    Manifest bad;
    bad.entries.push_back({dir / "missing.wav", "gone", {}, {}});
    CHECK_THROWS_AS(load_dataset(bad, cfg), DataError);

    // Cached mode needs teacher files.
    TrainConfig cached = cfg;
    cached.teacher_mode = TeacherMode::cached;
    Manifest no_teachers = generate_toy_corpus(tiny_corpus(2), scratch_dir("skip2"));
    no_teachers.entries[0].teacher_sm.clear();
    CHECK(load_dataset(no_teachers, cached).skipped == 1);
}
