#pragma once

// Residual vector quantizer with EMA-maintained codebooks.

#include "codec_core.hpp"
#include "rng.hpp"
#include "tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace dmcodec {

struct CodebookState {
    int codebook_size = 0;
    int dim = 0;
    double decay = 0.99;
    double eps = 1e-5;
    // Entries whose EMA cluster size falls below this are re-seeded from the batch.
    double dead_threshold = 1.0;
    bool initialized = false;
    std::vector<double> embeddings;   // [codebook_size, dim]
    std::vector<double> cluster_size; // [codebook_size]
    std::vector<double> embed_sum;    // [codebook_size, dim]

    CodebookState() = default;
    CodebookState(int codebook_size, int dim);

    const double* entry(int j) const { return embeddings.data() + static_cast<size_t>(j) * dim; }
    // Copies random batch rows into every entry; cluster sizes start at 1.
    void initialize_from(const double* batch, int64_t n, Rng& rng);
};

struct QuantizedCode {
    int n_active = 0;
    int64_t n_frames = 0;
    int dim = 0;
    std::vector<int32_t> indices;  // [n_active, n_frames]
    std::vector<double> per_layer; // [n_active, n_frames, dim], selected codewords
    std::vector<double> residuals; // [n_active, n_frames, dim], input to each layer

    int32_t index(int k, int64_t t) const { return indices[static_cast<size_t>(k * n_frames + t)]; }
    // Sum of the selected codewords over active layers, [n_frames, dim].
    std::vector<double> reconstruction() const;
    // Codewords or residuals of one layer as a flat [n_frames, dim] slice.
    std::vector<double> layer(int k) const;
    std::vector<double> residual(int k) const;
};

// Index of the nearest entry by squared Euclidean distance; ties go to the
// lowest index.
int nearest_entry(const CodebookState& book, const double* x);

// Quantizes frames [n_frames, dim] with the first n_active books.
QuantizedCode quantize(const std::vector<CodebookState>& books, const double* latents, int64_t n_frames, int dim,
                       int n_active);

// One EMA step for a single codebook from the vectors it was assigned.
void ema_update(CodebookState& book, const double* batch, const int32_t* assignments, int64_t n, Rng& rng);

// Sum over layers of the mean (over frames) squared distance between each
// layer's residual input and its codeword. latents [n_frames, dim]; the
// gradient flows to latents only.
Tensor commitment_loss(const Tensor& latents, const QuantizedCode& code);

// Straight-through reconstruction: value is the codeword sum, gradient is the
// identity to latents [n_frames, dim].
Tensor quantized_straight_through(const Tensor& latents, const QuantizedCode& code);

// Straight-through codeword of one layer: residual_k + sg(q_k - residual_k).
Tensor layer_straight_through(const Tensor& latents, const QuantizedCode& code, int k);

class ResidualVQ {
public:
    ResidualVQ() = default;
    ResidualVQ(int n_layers, int codebook_size, int dim);
    explicit ResidualVQ(const CodecConfig& cfg) : ResidualVQ(cfg.n_quantizers, cfg.codebook_size, cfg.latent_dim) {}

    int n_layers() const { return static_cast<int>(books_.size()); }
    std::vector<CodebookState>& books() { return books_; }
    const std::vector<CodebookState>& books() const { return books_; }
    bool initialized() const { return !books_.empty() && books_.front().initialized; }
    void set_dead_threshold(double t);
    void set_decay(double d);

    // Validates n_active and frames; throws DomainError on NaN.
    QuantizedCode quantize(const std::vector<double>& frames, int64_t n_frames, int n_active) const;
    // Initializes layer books lazily (layer k from the residuals reaching it)
    // and applies one EMA update per layer.
    void update(const QuantizedCode& code, Rng& rng);
    // Quantizes with the current books, initializing them first if needed.
    QuantizedCode quantize_for_training(const std::vector<double>& frames, int64_t n_frames, int n_active, Rng& rng);

private:
    std::vector<CodebookState> books_;
};

// kbps for n_active layers; codebook_size must be a power of two.
double bitrate_kbps(const CodecConfig& cfg, int n_active);

// Binary code dump: 4-byte magic "DMCQ", then little-endian u32 K, u32 T',
// u32 codebook_size, then K*T' little-endian uint16 indices, layer-major.
void write_codes(const std::filesystem::path& path, const QuantizedCode& code, int codebook_size);
std::vector<unsigned char> serialize_codes(const QuantizedCode& code, int codebook_size);
struct CodesFile {
    int n_layers = 0;
    int64_t n_frames = 0;
    int codebook_size = 0;
    std::vector<int32_t> indices;
};
CodesFile read_codes(const std::filesystem::path& path);

// Latent frames from indices alone, summing the selected entries.
std::vector<double> dequantize(const std::vector<CodebookState>& books, const CodesFile& codes);

} // namespace dmcodec
