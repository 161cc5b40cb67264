#pragma once

// Teacher ingestion and the cosine-based distillation losses.

#include "audio.hpp"
#include "layers.hpp"
#include "rvq.hpp"
#include "tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace dmcodec {

enum class Modality : uint32_t { contextual = 0, semantic = 1, cls = 2, static_word = 3 };
enum class LayerPolicy { average_all, last, ninth };
enum class RvqSelection { first, all_mean, last };
enum class DistillAxis { feature_dim, time };

Modality parse_modality(const std::string& s);
LayerPolicy parse_layer_policy(const std::string& s);
RvqSelection parse_rvq_selection(const std::string& s);
DistillAxis parse_axis(const std::string& s);
std::string to_string(Modality m);
std::string to_string(LayerPolicy p);
std::string to_string(RvqSelection s);
std::string to_string(DistillAxis a);

// Raw teacher dump as stored on disk. layers == 0 means already averaged,
// otherwise values hold [layers, n, dim].
struct TeacherDump {
    Modality modality = Modality::contextual;
    int layers = 0;
    int64_t n = 0;
    int dim = 0;
    std::vector<double> values;
};

// File layout: "DMTE", then little-endian u32 version, modality, L, n, D,
// dtype (0 = float32), then the row-major float32 payload.
void write_teacher(const std::filesystem::path& path, const TeacherDump& dump);
TeacherDump read_teacher(const std::filesystem::path& path);

struct TeacherEmbedding {
    Modality modality = Modality::contextual;
    int64_t n = 0;
    int dim = 0;
    std::vector<double> vectors; // [n, dim]
};

// Applies the layer policy. ninth is 1-based over transformer blocks. A
// request for cls on a contextual dump takes row 0, the summary token.
TeacherEmbedding select_layers(const TeacherDump& dump, Modality modality, LayerPolicy policy);
TeacherEmbedding load_teacher(const std::filesystem::path& path, Modality modality, LayerPolicy policy);

// Pads with zero rows or truncates to t_prime rows; cls repeats its vector.
std::vector<double> align(const TeacherEmbedding& teacher, int64_t t_prime);

// -(1/D) sum_d log sigmoid(cos(q[:, d], t[:, d])) over columns of [T, D]
// inputs. The time axis swaps rows and columns. Gradients flow to q_proj
// only; target is a frozen teacher.
Tensor distill_loss(const Tensor& q_proj, const Tensor& target, DistillAxis axis = DistillAxis::feature_dim);

// (w_lm * l_lm + w_sm * l_sm) / 2.
Tensor combined_loss(const Tensor& l_lm, const Tensor& l_sm, double w_lm, double w_sm);
double combined_loss(double l_lm, double l_sm, double w_lm, double w_sm);

struct DistillConfig {
    bool lm_enabled = true;
    bool sm_enabled = true;
    Modality lm_modality = Modality::contextual;
    LayerPolicy layer_policy = LayerPolicy::average_all;
    RvqSelection lm_selection = RvqSelection::first;
    RvqSelection sm_selection = RvqSelection::all_mean;
    DistillAxis axis = DistillAxis::feature_dim;
    double w_lm = 1.0;
    double w_sm = 1.0;
    int teacher_dim = 32;

    bool enabled() const { return lm_enabled || sm_enabled; }
    void validate() const;
};

// Selected quantizer output as a differentiable [N, D'] tensor.
Tensor select_rvq(const Tensor& latents, const QuantizedCode& code, RvqSelection selection);

// Per-batch targets, each already aligned to [T', teacher_dim].
struct DistillTargets {
    std::vector<std::vector<double>> lm;
    std::vector<std::vector<double>> sm;
};

struct DistillLosses {
    Tensor lm, sm, total;
};

// Holds the shared linear projections W for each teacher modality.
class DistillHead {
public:
    DistillHead() = default;
    DistillHead(ParamStore& store, const DistillConfig& cfg, int latent_dim, Rng& rng);

    // latents [B*T', D'] in batch-major frame order.
    DistillLosses forward(const Tensor& latents, const QuantizedCode& code, const DistillTargets& targets,
                          int64_t batch, int64_t frames) const;
    const DistillConfig& config() const { return cfg_; }

private:
    DistillConfig cfg_;
    Linear lm_proj_, sm_proj_;
};

// Deterministic stand-in for a frozen speech or language model: stacked
// tanh(P_l h) layers over log-mel frames with seeded projections.
class SyntheticTeacher {
public:
    SyntheticTeacher(uint64_t seed, int dim = 32, int layers = 4, int sample_rate = 16000, int hop = 320);

    // One row per latent frame.
    TeacherDump semantic(const AudioClip& clip) const;
    // Row 0 summarizes the clip, then one row per word, pooling equal frame
    // segments.
    TeacherDump contextual(const AudioClip& clip, int n_words) const;

    int dim() const { return dim_; }

private:
    std::vector<double> log_mel(const AudioClip& clip, int64_t& frames) const;
    std::vector<double> run_layers(const std::vector<std::vector<double>>& proj, const std::vector<double>& input,
                                   int64_t rows) const;

    int dim_, layers_, sample_rate_, hop_;
    static constexpr int kMels = 64;
    std::vector<std::vector<double>> sm_proj_, lm_proj_;
};

// Seeded per-word vectors (the word's hash picks the stream).
TeacherEmbedding static_word_embedding(const std::vector<std::string>& words, int dim, uint64_t seed);

} // namespace dmcodec
