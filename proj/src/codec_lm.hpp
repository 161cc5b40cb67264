#pragma once

// Toy text-to-speech language models over codec tokens: an autoregressive
// model for the first RVQ layer and a non-autoregressive model for the rest.

#include "layers.hpp"
#include "rvq.hpp"

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace dmcodec {

// Code indices laid out layer-major: idx[k * n_frames + t].
struct CodeGrid {
    int n_layers = 0;
    int64_t n_frames = 0;
    std::vector<int> idx;

    int at(int k, int64_t t) const { return idx[static_cast<size_t>(k * n_frames + t)]; }
    int& at(int k, int64_t t) { return idx[static_cast<size_t>(k * n_frames + t)]; }
    std::vector<int> layer(int k) const;
    static CodeGrid from_codes(const CodesFile& codes);
    CodesFile to_codes(int codebook_size) const;
};

struct TtsSample {
    std::vector<int> phonemes;
    CodeGrid codes;   // K x T'
    CodeGrid prompt;  // K x T'_p, may have zero frames
};

class Phonemizer {
public:
    virtual ~Phonemizer() = default;
    virtual std::vector<int> phonemize(const std::string& text) const = 0;
    virtual int vocab_size() const = 0;
};

// Lowercased letters, apostrophe and a word-boundary symbol; anything else is
// dropped. Leading, trailing and repeated boundaries collapse.
class GraphemePhonemizer : public Phonemizer {
public:
    std::vector<int> phonemize(const std::string& text) const override;
    int vocab_size() const override { return 28; }
};

struct CodecLmConfig {
    int dim = 128;
    int heads = 4;
    int layers = 2;
    int ff_mult = 4;
    int codebook_size = 1024;
    int n_quantizers = 8;
    int phoneme_vocab = 28;
    int max_len = 512;
    double learning_rate = 1e-3;
    uint64_t seed = 42;

    void validate() const;
    // Keys match the member names; unknown keys and bad values are
    // configuration errors.
    void set(const std::string& key, const std::string& value);
    std::string to_text() const;
};

class TransformerStack {
public:
    TransformerStack() = default;
    TransformerStack(ParamStore& store, const std::string& name, const CodecLmConfig& cfg, Rng& rng);
    // x [T, dim] -> [T, dim], final layer norm applied.
    Tensor forward(const Tensor& x, bool causal) const;

private:
    struct Block {
        LayerNorm ln1, ln2;
        Linear q, k, v, o, ff1, ff2;
    };
    int heads_ = 1;
    std::vector<Block> blocks_;
    LayerNorm final_;
};

class ArModel {
public:
    ArModel(ParamStore& store, const CodecLmConfig& cfg, Rng& rng);
    // Logits [len(u) + 1 + T', V + 1]; row i predicts the token after input i.
    Tensor logits(const std::vector<int>& phonemes, const std::vector<int>& q1) const;
    int bos() const { return cfg_.codebook_size; }
    int eos() const { return cfg_.codebook_size; }

private:
    CodecLmConfig cfg_;
    Tensor phone_emb_, code_emb_, pos_emb_;
    TransformerStack stack_;
    Linear head_;
};

class NarModel {
public:
    NarModel(ParamStore& store, const CodecLmConfig& cfg, Rng& rng);
    // Logits [T', V] for layer k (0-based, >= 1) from layers < k, prompt and
    // phonemes.
    Tensor logits(const std::vector<int>& phonemes, const CodeGrid& prompt, const CodeGrid& codes, int k) const;

private:
    CodecLmConfig cfg_;
    Tensor phone_emb_, pos_emb_, stage_emb_, segment_emb_;
    std::vector<Tensor> code_emb_; // one table per layer
    TransformerStack stack_;
    Linear head_;
};

struct SynthesisResult {
    CodeGrid codes;
    // No end token within the length cap.
    bool truncated = false;
};

class CodecLm {
public:
    explicit CodecLm(const CodecLmConfig& cfg);
    CodecLm(const CodecLm&) = delete;
    CodecLm& operator=(const CodecLm&) = delete;

    const CodecLmConfig& config() const { return cfg_; }
    ParamStore& ar_params() { return ar_params_; }
    ParamStore& nar_params() { return nar_params_; }

    // Mean next-token NLL over all Q1 targets (EOS included) in the batch.
    Tensor ar_loss(const std::vector<TtsSample>& batch) const;
    // Per-position NLL for one sample, Q1 targets then EOS.
    std::vector<double> ar_token_losses(const TtsSample& sample) const;
    // Mean NLL of layer k tokens, k 1-based in [2, K].
    Tensor nar_loss(const std::vector<TtsSample>& batch, int k) const;

    double train_ar_step(const std::vector<TtsSample>& batch);
    // Draws k uniformly from [2, K]; returns the loss and writes k if asked.
    double train_nar_step(const std::vector<TtsSample>& batch, Rng& rng, int* k_out = nullptr);
    double train_nar_step(const std::vector<TtsSample>& batch, int k);

    // Greedy decoding: Q1 until EOS or max_frames (0 = context limit), then
    // layers 2..K in turn.
    SynthesisResult synthesize(const std::vector<int>& phonemes, const CodeGrid& prompt, int64_t max_frames = 0) const;

    void save(const std::filesystem::path& path) const;
    static std::unique_ptr<CodecLm> load(const std::filesystem::path& path);

private:
    void check_sample(const TtsSample& s) const;

    CodecLmConfig cfg_;
    ParamStore ar_params_, nar_params_;
    Rng init_rng_;
    ArModel ar_;
    NarModel nar_;
    Adam opt_ar_, opt_nar_;
};

} // namespace dmcodec
