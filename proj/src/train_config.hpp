#pragma once

// Flat key=value training configuration.

#include "codec_core.hpp"
#include "discriminators.hpp"
#include "distill.hpp"
#include "losses.hpp"

#include <filesystem>
#include <map>
#include <string>

namespace dmcodec {

enum class TeacherMode { synthetic, cached };

struct TrainConfig {
    CodecConfig codec;
    DiscriminatorConfig disc;
    DistillConfig distill;
    double loss_scale = 1.0;
    LossWeights weights = LossWeights::from_scale(1.0);

    int epochs = 1;
    int batch_size = 4;
    double crop_seconds = 3.0;
    double learning_rate = 1e-4;
    double lr_decay = 0.98;
    uint64_t seed = 42;
    double grad_clip = 10.0;
    // Stop after this many steps in total (0 = run all epochs).
    int64_t max_steps = 0;
    // RVQ layers used in training; 0 = all.
    int n_active_layers = 0;
    double rvq_decay = 0.99;
    double rvq_dead_threshold = 1.0;
    TeacherMode teacher_mode = TeacherMode::cached;
    uint64_t teacher_seed = 42;

    int crop_samples() const;
    int active_layers() const { return n_active_layers == 0 ? codec.n_quantizers : n_active_layers; }
    void validate() const;

    // Applies one key=value assignment; unknown keys are configuration errors.
    void set(const std::string& key, const std::string& value);
    // Canonical listing of every key, sorted.
    std::map<std::string, std::string> to_map() const;
    std::string to_text() const;
    // FNV-1a over the canonical text minus epochs and max_steps, as 16 hex
    // digits.
    std::string hash() const;

    static TrainConfig from_text(const std::string& text);
    static TrainConfig from_file(const std::filesystem::path& path);
};

// Overrides the seed from DMCODEC_SEED when it is set.
void apply_seed_env(TrainConfig& cfg);

} // namespace dmcodec
