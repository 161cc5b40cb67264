#pragma once

// Generator/discriminator training loop with distillation and checkpoints.

#include "checkpoint.hpp"
#include "codec_core.hpp"
#include "corpus.hpp"
#include "discriminators.hpp"
#include "distill.hpp"
#include "losses.hpp"
#include "rvq.hpp"
#include "train_config.hpp"

#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace dmcodec {

// Generator side: encoder, quantizer, decoder and distillation projections.
class CodecModel {
public:
    explicit CodecModel(const TrainConfig& cfg);
    CodecModel(const CodecModel&) = delete;
    CodecModel& operator=(const CodecModel&) = delete;

    const TrainConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }
    const SeanetEncoder& encoder() const { return encoder_; }
    const SeanetDecoder& decoder() const { return decoder_; }
    ResidualVQ& rvq() { return rvq_; }
    const ResidualVQ& rvq() const { return rvq_; }
    const DistillHead& distill() const { return distill_; }

    // Latents, codes and reconstruction for one clip; n_layers = 0 means all.
    struct Tokens {
        LatentSequence latents;
        QuantizedCode code;
    };
    Tokens tokenize(const AudioClip& clip, int n_layers = 0) const;
    AudioClip reconstruct(const QuantizedCode& code) const;
    AudioClip reconstruct(const CodesFile& codes) const;

    void save(Archive& archive) const;
    void load(const Archive& archive);

    static std::unique_ptr<CodecModel> from_checkpoint(const std::filesystem::path& path);

private:
    TrainConfig cfg_;
    ParamStore params_;
    Rng init_rng_;
    SeanetEncoder encoder_;
    SeanetDecoder decoder_;
    ResidualVQ rvq_;
    DistillHead distill_;
};

struct TrainingExample {
    AudioClip clip;
    std::string transcript;
    TeacherEmbedding lm;  // empty when LM distillation is off
    TeacherEmbedding sm;  // one row per latent frame of the full clip
};

struct Dataset {
    std::vector<TrainingExample> items;
    int skipped = 0;
};

// Loads audio and teacher targets; unreadable entries are skipped and counted.
Dataset load_dataset(const Manifest& manifest, const TrainConfig& cfg);

struct Batch {
    Tensor wav; // [B, 1, crop]
    DistillTargets targets;
};

class Trainer {
public:
    Trainer(const TrainConfig& cfg, Dataset data);

    int64_t global_step() const { return step_; }
    // Manifest entries that could not be loaded.
    int skipped() const { return data_.skipped; }
    int64_t steps_per_epoch() const;
    int epoch() const { return static_cast<int>(step_ / steps_per_epoch()); }
    CodecModel& model() { return *model_; }
    const DiscriminatorSet& discriminators() const { return *disc_; }
    const TrainConfig& config() const { return cfg_; }

    // Deterministic batch for a given global step.
    Batch make_batch(int64_t step) const;
    // One discriminator update followed by one generator update.
    LossBreakdown train_step(const Batch& batch);
    // Builds the batch for the current step, trains on it and advances.
    LossBreakdown step();
    // Losses on a batch without updating anything (EMA included).
    LossBreakdown evaluate(const Batch& batch);
    // Centered crop of every example, for before/after comparisons.
    Batch probe_batch() const;

    using StepCallback = std::function<void(int64_t step, const LossBreakdown&)>;
    // Trains until the configured epochs or max_steps are reached, writing
    // train_log.csv and checkpoint.dmck (every epoch and at the end) under
    // out_dir. Returns the checkpoint path.
    std::filesystem::path run(const std::filesystem::path& out_dir, const StepCallback& on_step = {});

    void save_checkpoint(const std::filesystem::path& path) const;
    // Restores parameters, optimizer and codebook state and the step counter.
    void load_checkpoint(const std::filesystem::path& path);

private:
    LossBreakdown compute(const Batch& batch, bool update);
    void fill_item(const TrainingExample& ex, int64_t start_frame, int64_t frames, double* out,
                   DistillTargets& targets) const;

    TrainConfig cfg_;
    Dataset data_;
    std::unique_ptr<CodecModel> model_;
    ParamStore disc_params_;
    std::unique_ptr<DiscriminatorSet> disc_;
    Adam opt_g_, opt_d_;
    int64_t step_ = 0;
};

// CSV header and row for one step.
std::string loss_csv_header();
std::string loss_csv_row(int64_t step, const LossBreakdown& l);

} // namespace dmcodec
