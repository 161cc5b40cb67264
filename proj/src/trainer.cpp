#include "trainer.hpp"

#include "errors.hpp"
#include "logging.hpp"
#include "ops.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace dmcodec {

CodecModel::CodecModel(const TrainConfig& cfg)
    : cfg_(cfg), init_rng_(cfg.codec.seed), encoder_(params_, cfg.codec, init_rng_),
      decoder_(params_, cfg.codec, init_rng_), rvq_(cfg.codec),
      distill_(params_, cfg.distill, cfg.codec.latent_dim, init_rng_) {
    rvq_.set_decay(cfg.rvq_decay);
    rvq_.set_dead_threshold(cfg.rvq_dead_threshold);
}

namespace {

// [B, D', T'] -> [B*T', D'] with frames of each item contiguous.
Tensor to_frames(const Tensor& z) {
    const int64_t b = z.dim(0), d = z.dim(1), t = z.dim(2);
    return ops::reshape(ops::permute(z, {0, 2, 1}), {b * t, d});
}

Tensor from_frames(const Tensor& f, int64_t b, int64_t t) {
    const int64_t d = f.dim(1);
    return ops::permute(ops::reshape(f, {b, t, d}), {0, 2, 1});
}

void set_trainable(ParamStore& store, bool on) {
    for (auto& [name, t] : store.all()) t.node()->requires_grad = on;
}

} // namespace

CodecModel::Tokens CodecModel::tokenize(const AudioClip& clip, int n_layers) const {
    Tokens out;
    out.latents = encode(encoder_, cfg_.codec, clip);
    if (!rvq_.initialized()) throw ConfigError("codebooks are not initialized; train or load a checkpoint first");
    out.code = rvq_.quantize(out.latents.frames, out.latents.n_frames, n_layers == 0 ? rvq_.n_layers() : n_layers);
    return out;
}

AudioClip CodecModel::reconstruct(const QuantizedCode& code) const {
    LatentSequence z;
    z.n_frames = code.n_frames;
    z.dim = code.dim;
    z.frame_rate = cfg_.codec.frame_rate();
    z.frames = code.reconstruction();
    return decode(decoder_, cfg_.codec, z);
}

AudioClip CodecModel::reconstruct(const CodesFile& codes) const {
    LatentSequence z;
    z.n_frames = codes.n_frames;
    z.dim = cfg_.codec.latent_dim;
    z.frame_rate = cfg_.codec.frame_rate();
    z.frames = dequantize(rvq_.books(), codes);
    return decode(decoder_, cfg_.codec, z);
}

void CodecModel::save(Archive& a) const {
    a.put_params("gen/", params_);
    for (int k = 0; k < rvq_.n_layers(); ++k) {
        const auto& b = rvq_.books()[k];
        const std::string p = "rvq/" + std::to_string(k) + "/";
        a.put(p + "embeddings", {b.codebook_size, b.dim}, b.embeddings);
        a.put(p + "cluster_size", b.cluster_size);
        a.put(p + "embed_sum", {b.codebook_size, b.dim}, b.embed_sum);
    }
    a.meta["rvq_initialized"] = rvq_.initialized() ? "1" : "0";
    a.meta["config"] = cfg_.to_text();
    a.meta["config_hash"] = cfg_.hash();
}

void CodecModel::load(const Archive& a) {
    a.load_params("gen/", params_);
    const bool init = a.meta_value("rvq_initialized") == "1";
    for (int k = 0; k < rvq_.n_layers(); ++k) {
        auto& b = rvq_.books()[k];
        const std::string p = "rvq/" + std::to_string(k) + "/";
        const auto& e = a.get(p + "embeddings");
        if (e.values.size() != b.embeddings.size()) throw DataError("checkpoint codebook size mismatch");
        b.embeddings = e.values;
        b.cluster_size = a.get(p + "cluster_size").values;
        b.embed_sum = a.get(p + "embed_sum").values;
        b.initialized = init;
    }
}

std::unique_ptr<CodecModel> CodecModel::from_checkpoint(const std::filesystem::path& path) {
    Archive a = load_archive(path);
    TrainConfig cfg = TrainConfig::from_text(a.meta_value("config"));
    auto model = std::make_unique<CodecModel>(cfg);
    model->load(a);
    return model;
}

Dataset load_dataset(const Manifest& manifest, const TrainConfig& cfg) {
    Dataset ds;
    const int dim = cfg.distill.teacher_dim;
    std::unique_ptr<SyntheticTeacher> synth;
    if (cfg.teacher_mode == TeacherMode::synthetic) {
        synth = std::make_unique<SyntheticTeacher>(cfg.teacher_seed, dim, 4, cfg.codec.sample_rate, cfg.codec.hop());
    }
    const bool need_lm = cfg.distill.lm_enabled;
    const bool need_sm = cfg.distill.sm_enabled;
    for (const auto& e : manifest.entries) {
        try {
            TrainingExample ex;
            ex.clip = read_wav(e.wav);
            if (ex.clip.sample_rate != cfg.codec.sample_rate) {
                throw DataError(e.wav.string() + ": sample rate " + std::to_string(ex.clip.sample_rate) +
                                " Hz, expected " + std::to_string(cfg.codec.sample_rate));
            }
            ex.transcript = e.transcript;
            const auto words = split_words(e.transcript);
            if (need_lm) {
                if (cfg.distill.lm_modality == Modality::static_word) {
                    if (words.empty()) throw DataError(e.wav.string() + ": empty transcript");
                    ex.lm = static_word_embedding(words, dim, cfg.teacher_seed);
                } else {
                    TeacherDump dump;
                    if (synth) {
                        if (words.empty()) throw DataError(e.wav.string() + ": empty transcript");
                        dump = synth->contextual(ex.clip, static_cast<int>(words.size()));
                    } else {
                        if (e.teacher_lm.empty()) throw DataError(e.wav.string() + ": no LM teacher path");
                        dump = read_teacher(e.teacher_lm);
                    }
                    ex.lm = select_layers(dump, cfg.distill.lm_modality, cfg.distill.layer_policy);
                }
                if (ex.lm.dim != dim) {
                    throw ConfigError("LM teacher dimension " + std::to_string(ex.lm.dim) +
                                      " does not match distill.teacher_dim " + std::to_string(dim));
                }
            }
            if (need_sm) {
                TeacherDump dump;
                if (synth) {
                    dump = synth->semantic(ex.clip);
                } else {
                    if (e.teacher_sm.empty()) throw DataError(e.wav.string() + ": no SM teacher path");
                    dump = read_teacher(e.teacher_sm);
                }
                ex.sm = select_layers(dump, Modality::semantic, cfg.distill.layer_policy);
                if (ex.sm.dim != dim) {
                    throw ConfigError("SM teacher dimension " + std::to_string(ex.sm.dim) +
                                      " does not match distill.teacher_dim " + std::to_string(dim));
                }
            }
            ds.items.push_back(std::move(ex));
        } catch (const IoError& err) {
            ++ds.skipped;
            logger().warn("skipping manifest entry: {}", err.what());
        } catch (const DataError& err) {
            ++ds.skipped;
            logger().warn("skipping manifest entry: {}", err.what());
        }
    }
    if (ds.skipped > 0) logger().warn("skipped {} unreadable manifest entr{}", ds.skipped, ds.skipped == 1 ? "y" : "ies");
    if (ds.items.empty()) throw DataError("no usable entries in manifest");
    return ds;
}

Trainer::Trainer(const TrainConfig& cfg, Dataset data)
    : cfg_(cfg), data_(std::move(data)), opt_g_(Adam::Options{cfg.learning_rate}),
      opt_d_(Adam::Options{cfg.learning_rate}) {
    cfg_.validate();
    if (data_.items.empty()) throw DataError("training needs at least one example");
    model_ = std::make_unique<CodecModel>(cfg_);
    disc_ = std::make_unique<DiscriminatorSet>(disc_params_, cfg_.disc);
}

int64_t Trainer::steps_per_epoch() const {
    return std::max<int64_t>(1, static_cast<int64_t>(data_.items.size()) / cfg_.batch_size);
}

Batch Trainer::make_batch(int64_t step) const {
    const int64_t n = static_cast<int64_t>(data_.items.size());
    const int64_t spe = steps_per_epoch();
    const int64_t ep = step / spe;
    const int64_t within = step % spe;
    std::vector<int64_t> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle = Rng::derive({cfg_.seed, 0xE90CULL, static_cast<uint64_t>(ep)});
    for (int64_t i = n - 1; i > 0; --i) std::swap(order[i], order[shuffle.below(static_cast<uint64_t>(i + 1))]);

    const int crop = cfg_.crop_samples();
    const int hop = cfg_.codec.hop();
    const int64_t frames = crop / hop;
    const int64_t bsz = cfg_.batch_size;
    std::vector<double> wav(static_cast<size_t>(bsz) * crop, 0.0);
    Batch batch;
    for (int64_t j = 0; j < bsz; ++j) {
        const auto& ex = data_.items[static_cast<size_t>(order[(within * bsz + j) % n])];
        const int64_t clip_frames = static_cast<int64_t>(ex.clip.samples.size()) / hop;
        Rng crop_rng = Rng::derive({cfg_.seed, 0xC209ULL, static_cast<uint64_t>(step), static_cast<uint64_t>(j)});
        const int64_t start_frame =
            clip_frames > frames ? static_cast<int64_t>(crop_rng.below(static_cast<uint64_t>(clip_frames - frames + 1)))
                                 : 0;
        fill_item(ex, start_frame, frames, wav.data() + j * crop, batch.targets);
    }
    batch.wav = Tensor::from({bsz, 1, crop}, std::move(wav));
    return batch;
}

namespace {

std::vector<Tensor> logits_of(const std::vector<DiscriminatorOutput>& outs) {
    std::vector<Tensor> l;
    for (const auto& o : outs) l.push_back(o.logits);
    return l;
}

std::vector<std::vector<Tensor>> features_of(const std::vector<DiscriminatorOutput>& outs) {
    std::vector<std::vector<Tensor>> f;
    for (const auto& o : outs) f.push_back(o.features);
    return f;
}

std::string describe(const LossBreakdown& l) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "t=%g f=%g g=%g d=%g fm=%g w=%g distill=%g total=%g", l.t, l.f, l.g, l.d, l.fm,
                  l.w, l.distill, l.total);
    return buf;
}

bool finite(const LossBreakdown& l) {
    for (double v : {l.t, l.f, l.g, l.d, l.fm, l.w, l.distill, l.total}) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

} // namespace

LossBreakdown Trainer::compute(const Batch& batch, bool update) {
    const int64_t bsz = batch.wav.dim(0);
    const int64_t crop = batch.wav.dim(2);
    const int64_t frames = crop / cfg_.codec.hop();
    Rng rng = Rng::derive({cfg_.seed, 0x57E9ULL, static_cast<uint64_t>(step_)});
    LossBreakdown out;

    // Generator forward with the pre-update codebooks.
    CodecModel& m = *model_;
    Tensor z = to_frames(m.encoder().forward(batch.wav));
    QuantizedCode code;
    if (update) {
        code = m.rvq().quantize_for_training(z.values(), bsz * frames, cfg_.active_layers(), rng);
    } else if (m.rvq().initialized()) {
        code = m.rvq().quantize(z.values(), bsz * frames, cfg_.active_layers());
    } else {
        // Untrained model: seed a throwaway copy of the codebooks from this batch.
        ResidualVQ scratch = m.rvq();
        Rng init = Rng::derive({cfg_.seed, 0x9A0BEULL});
        code = scratch.quantize_for_training(z.values(), bsz * frames, cfg_.active_layers(), init);
    }
    Tensor q = quantized_straight_through(z, code);
    Tensor x_hat = m.decoder().forward(from_frames(q, bsz, frames));
    Tensor commit = commitment_loss(z, code);
    if (update) m.rvq().update(code, rng);

    // Discriminator step on the detached reconstruction.
    {
        Tensor fake = x_hat.detach();
        Tensor loss_d = hinge_discriminator(logits_of(disc_->run_all(batch.wav)), logits_of(disc_->run_all(fake)));
        out.d = loss_d.item();
        if (update) {
            if (!std::isfinite(out.d)) throw NumericError("non-finite discriminator loss at step " + std::to_string(step_));
            disc_params_.zero_grad();
            loss_d.backward();
            disc_params_.clip_grad_norm(cfg_.grad_clip);
            opt_d_.step(disc_params_);
        }
    }

    // Generator losses against the updated discriminators, whose weights are
    // frozen for this pass.
    set_trainable(disc_params_, false);
    std::vector<DiscriminatorOutput> real_out;
    {
        NoGradGuard ng;
        real_out = disc_->run_all(batch.wav);
    }
    auto fake_out = disc_->run_all(x_hat);
    set_trainable(disc_params_, true);

    Tensor t = time_loss(batch.wav, x_hat);
    MelLossOptions mel_opts;
    mel_opts.sample_rate = cfg_.codec.sample_rate;
    Tensor f = mel_loss(ops::reshape(batch.wav, {bsz, crop}), ops::reshape(x_hat, {bsz, crop}), mel_opts);
    Tensor g = hinge_generator(logits_of(fake_out));
    Tensor fm = feature_matching(features_of(real_out), features_of(fake_out));
    Tensor distill;
    if (cfg_.distill.enabled()) distill = m.distill().forward(z, code, batch.targets, bsz, frames).total;
    Tensor total = total_generator(t, f, g, fm, commit, distill, cfg_.weights);

    out.t = t.item();
    out.f = f.item();
    out.g = g.item();
    out.fm = fm.item();
    out.w = commit.item();
    out.distill = distill.defined() ? distill.item() : 0.0;
    out.total = total.item();
    if (!finite(out)) {
        throw NumericError("non-finite loss at step " + std::to_string(step_) + ": " + describe(out));
    }
    if (update) {
        m.params().zero_grad();
        total.backward();
        m.params().clip_grad_norm(cfg_.grad_clip);
        opt_g_.step(m.params());
    }
    return out;
}

LossBreakdown Trainer::train_step(const Batch& batch) {
    const double lr = cfg_.learning_rate * std::pow(cfg_.lr_decay, static_cast<double>(epoch()));
    opt_g_.set_lr(lr);
    opt_d_.set_lr(lr);
    return compute(batch, true);
}

LossBreakdown Trainer::evaluate(const Batch& batch) { return compute(batch, false); }

Batch Trainer::probe_batch() const {
    const int crop = cfg_.crop_samples();
    const int hop = cfg_.codec.hop();
    const int64_t frames = crop / hop;
    const int64_t n = static_cast<int64_t>(data_.items.size());
    std::vector<double> wav(static_cast<size_t>(n) * crop, 0.0);
    Batch batch;
    for (int64_t j = 0; j < n; ++j) {
        const auto& ex = data_.items[static_cast<size_t>(j)];
        const int64_t clip_frames = static_cast<int64_t>(ex.clip.samples.size()) / hop;
        const int64_t start_frame = std::max<int64_t>(0, (clip_frames - frames) / 2);
        fill_item(ex, start_frame, frames, wav.data() + j * crop, batch.targets);
    }
    batch.wav = Tensor::from({n, 1, crop}, std::move(wav));
    return batch;
}

void Trainer::fill_item(const TrainingExample& ex, int64_t start_frame, int64_t frames, double* out,
                        DistillTargets& targets) const {
    const int64_t crop = frames * cfg_.codec.hop();
    const int64_t start = start_frame * cfg_.codec.hop();
    const int64_t avail = std::clamp<int64_t>(static_cast<int64_t>(ex.clip.samples.size()) - start, 0, crop);
    std::copy_n(ex.clip.samples.begin() + start, avail, out);
    if (cfg_.distill.lm_enabled) targets.lm.push_back(align(ex.lm, frames));
    if (cfg_.distill.sm_enabled) {
        const int dim = ex.sm.dim;
        std::vector<double> rows(static_cast<size_t>(frames) * dim, 0.0);
        const int64_t keep = std::clamp<int64_t>(ex.sm.n - start_frame, 0, frames);
        std::copy_n(ex.sm.vectors.begin() + start_frame * dim, keep * dim, rows.begin());
        targets.sm.push_back(std::move(rows));
    }
}

LossBreakdown Trainer::step() {
    LossBreakdown l = train_step(make_batch(step_));
    ++step_;
    return l;
}

std::string loss_csv_header() { return "step,t,f,g,d,fm,w,distill,total"; }

std::string loss_csv_row(int64_t step, const LossBreakdown& l) {
    char buf[512];
    std::snprintf(buf, sizeof(buf), "%lld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g",
                  static_cast<long long>(step), l.t, l.f, l.g, l.d, l.fm, l.w, l.distill, l.total);
    return buf;
}

std::filesystem::path Trainer::run(const std::filesystem::path& out_dir, const StepCallback& on_step) {
    std::filesystem::create_directories(out_dir);
    const auto log_path = out_dir / "train_log.csv";
    const auto ckpt = out_dir / "checkpoint.dmck";
    const bool fresh = step_ == 0 || !std::filesystem::exists(log_path);
    std::ofstream log(log_path, fresh ? std::ios::trunc : std::ios::app);
    if (!log) throw IoError("cannot write " + log_path.string());
    if (fresh) log << loss_csv_header() << '\n';
    const int64_t total_steps = static_cast<int64_t>(cfg_.epochs) * steps_per_epoch();
    const int64_t limit = cfg_.max_steps > 0 ? std::min(total_steps, cfg_.max_steps) : total_steps;
    while (step_ < limit) {
        const int64_t s = step_;
        LossBreakdown l = step();
        log << loss_csv_row(s, l) << '\n';
        log.flush();
        if (on_step) on_step(s, l);
        if (step_ % steps_per_epoch() == 0) save_checkpoint(ckpt);
    }
    save_checkpoint(ckpt);
    return ckpt;
}

void Trainer::save_checkpoint(const std::filesystem::path& path) const {
    Archive a;
    model_->save(a);
    a.put_params("disc/", disc_params_);
    for (const auto& [k, v] : opt_g_.export_state()) a.put("adam_g/" + k, v);
    for (const auto& [k, v] : opt_d_.export_state()) a.put("adam_d/" + k, v);
    a.meta["step"] = std::to_string(step_);
    a.meta["format"] = "dmcodec-checkpoint";
    save_archive(path, a);
}

void Trainer::load_checkpoint(const std::filesystem::path& path) {
    Archive a = load_archive(path);
    if (a.meta_value("config_hash") != cfg_.hash()) {
        throw ConfigError("checkpoint config hash " + a.meta_value("config_hash") + " does not match this run (" +
                          cfg_.hash() + ")");
    }
    model_->load(a);
    a.load_params("disc/", disc_params_);
    auto extract = [&](const std::string& prefix) {
        std::map<std::string, std::vector<double>> state;
        for (const auto& [name, arr] : a.arrays) {
            if (name.rfind(prefix, 0) == 0) state[name.substr(prefix.size())] = arr.values;
        }
        return state;
    };
    opt_g_.import_state(extract("adam_g/"));
    opt_d_.import_state(extract("adam_d/"));
    step_ = std::stoll(a.meta_value("step"));
}

} // namespace dmcodec
