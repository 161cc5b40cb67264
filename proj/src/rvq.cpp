#include "rvq.hpp"

#include "errors.hpp"
#include "logging.hpp"
#include "ops.hpp"

#include <Eigen/Core>

#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

namespace dmcodec {

CodebookState::CodebookState(int codebook_size_, int dim_)
    : codebook_size(codebook_size_), dim(dim_),
      embeddings(static_cast<size_t>(codebook_size_) * dim_, 0.0),
      cluster_size(static_cast<size_t>(codebook_size_), 0.0),
      embed_sum(static_cast<size_t>(codebook_size_) * dim_, 0.0) {}

void CodebookState::initialize_from(const double* batch, int64_t n, Rng& rng) {
    if (n <= 0) throw DomainError("codebook initialization needs at least one vector");
    for (int j = 0; j < codebook_size; ++j) {
        const int64_t src = static_cast<int64_t>(rng.below(static_cast<uint64_t>(n)));
        std::memcpy(&embeddings[static_cast<size_t>(j) * dim], batch + src * dim, sizeof(double) * dim);
        cluster_size[j] = 1.0;
    }
    embed_sum = embeddings;
    initialized = true;
}

std::vector<double> QuantizedCode::reconstruction() const {
    const size_t frame_len = static_cast<size_t>(n_frames) * dim;
    std::vector<double> out(frame_len, 0.0);
    for (int k = 0; k < n_active; ++k) {
        for (size_t i = 0; i < frame_len; ++i) out[i] += per_layer[k * frame_len + i];
    }
    return out;
}

std::vector<double> QuantizedCode::layer(int k) const {
    const size_t len = static_cast<size_t>(n_frames) * dim;
    return {per_layer.begin() + k * len, per_layer.begin() + (k + 1) * len};
}

std::vector<double> QuantizedCode::residual(int k) const {
    const size_t len = static_cast<size_t>(n_frames) * dim;
    return {residuals.begin() + k * len, residuals.begin() + (k + 1) * len};
}

namespace {

double squared_distance(const double* a, const double* b, int dim) {
    double s = 0.0;
    for (int d = 0; d < dim; ++d) {
        const double diff = a[d] - b[d];
        s += diff * diff;
    }
    return s;
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Nearest entries for a block of frames. Candidate scores come from the
// expanded form ||e||^2 - 2 x.e; anything within rounding of the best score
// is re-checked with the exact distance so ties resolve to the lowest index.
void assign_block(const CodebookState& book, const double* x, int64_t n, int32_t* out) {
    Eigen::Map<const RowMat> e(book.embeddings.data(), book.codebook_size, book.dim);
    Eigen::Map<const RowMat> xs(x, n, book.dim);
    const Eigen::VectorXd e_norm = e.rowwise().squaredNorm();
    const RowMat cross = xs * e.transpose();
    for (int64_t i = 0; i < n; ++i) {
        const double x_norm = xs.row(i).squaredNorm();
        double best = std::numeric_limits<double>::infinity();
        for (int j = 0; j < book.codebook_size; ++j) best = std::min(best, e_norm[j] - 2.0 * cross(i, j));
        const double tol = 1e-9 * (x_norm + std::abs(best) + 1.0);
        int32_t arg = -1;
        double arg_d = std::numeric_limits<double>::infinity();
        for (int j = 0; j < book.codebook_size; ++j) {
            if (e_norm[j] - 2.0 * cross(i, j) <= best + tol) {
                const double d = squared_distance(x + i * book.dim, book.entry(j), book.dim);
                if (d < arg_d) {
                    arg_d = d;
                    arg = j;
                }
            }
        }
        out[i] = arg;
    }
}

} // namespace

int nearest_entry(const CodebookState& book, const double* x) {
    int best = 0;
    double best_d = squared_distance(x, book.entry(0), book.dim);
    for (int j = 1; j < book.codebook_size; ++j) {
        const double d = squared_distance(x, book.entry(j), book.dim);
        if (d < best_d) {
            best_d = d;
            best = j;
        }
    }
    return best;
}

QuantizedCode quantize(const std::vector<CodebookState>& books, const double* latents, int64_t n_frames, int dim,
                       int n_active) {
    if (n_active < 1 || n_active > static_cast<int>(books.size())) {
        throw ConfigError("n_active_layers must be in [1, " + std::to_string(books.size()) + "], got " +
                          std::to_string(n_active));
    }
    for (int k = 0; k < n_active; ++k) {
        if (books[k].dim != dim) throw DomainError("codebook dimension does not match latent dimension");
    }
    const size_t len = static_cast<size_t>(n_frames) * dim;
    for (size_t i = 0; i < len; ++i) {
        if (std::isnan(latents[i])) throw DomainError("NaN in latents passed to quantize");
    }
    QuantizedCode code;
    code.n_active = n_active;
    code.n_frames = n_frames;
    code.dim = dim;
    code.indices.resize(static_cast<size_t>(n_active) * n_frames);
    code.per_layer.resize(n_active * len);
    code.residuals.resize(n_active * len);
    std::vector<double> residual(latents, latents + len);
    for (int k = 0; k < n_active; ++k) {
        std::copy(residual.begin(), residual.end(), code.residuals.begin() + k * len);
        int32_t* idx = code.indices.data() + k * n_frames;
        assign_block(books[k], residual.data(), n_frames, idx);
        double* q = code.per_layer.data() + k * len;
        for (int64_t t = 0; t < n_frames; ++t) {
            const double* e = books[k].entry(idx[t]);
            for (int d = 0; d < dim; ++d) {
                q[t * dim + d] = e[d];
                residual[t * dim + d] -= e[d];
            }
        }
    }
    return code;
}

void ema_update(CodebookState& book, const double* batch, const int32_t* assignments, int64_t n, Rng& rng) {
    if (n <= 0) {
        logger().warn("ema_update called with an empty batch; codebook left unchanged");
        return;
    }
    const int dim = book.dim;
    std::vector<double> counts(static_cast<size_t>(book.codebook_size), 0.0);
    std::vector<double> sums(book.embed_sum.size(), 0.0);
    for (int64_t i = 0; i < n; ++i) {
        const int32_t j = assignments[i];
        if (j < 0 || j >= book.codebook_size) throw DomainError("assignment index out of range");
        counts[j] += 1.0;
        for (int d = 0; d < dim; ++d) sums[static_cast<size_t>(j) * dim + d] += batch[i * dim + d];
    }
    const double a = book.decay;
    for (int j = 0; j < book.codebook_size; ++j) {
        book.cluster_size[j] = a * book.cluster_size[j] + (1.0 - a) * counts[j];
        for (int d = 0; d < dim; ++d) {
            const size_t o = static_cast<size_t>(j) * dim + d;
            book.embed_sum[o] = a * book.embed_sum[o] + (1.0 - a) * sums[o];
        }
        const double denom = std::max(book.cluster_size[j], book.eps);
        for (int d = 0; d < dim; ++d) {
            const size_t o = static_cast<size_t>(j) * dim + d;
            book.embeddings[o] = book.embed_sum[o] / denom;
        }
    }
    for (int j = 0; j < book.codebook_size; ++j) {
        if (book.cluster_size[j] >= book.dead_threshold) continue;
        const int64_t src = static_cast<int64_t>(rng.below(static_cast<uint64_t>(n)));
        for (int d = 0; d < dim; ++d) {
            const size_t o = static_cast<size_t>(j) * dim + d;
            book.embeddings[o] = batch[src * dim + d];
            book.embed_sum[o] = book.embeddings[o] * book.dead_threshold;
        }
        book.cluster_size[j] = book.dead_threshold;
    }
}

namespace {

void check_code_shape(const Tensor& latents, const QuantizedCode& code) {
    if (latents.rank() != 2 || latents.dim(0) != code.n_frames || latents.dim(1) != code.dim) {
        throw DomainError("latents " + shape_str(latents.shape()) + " do not match the quantized code");
    }
}

} // namespace

Tensor commitment_loss(const Tensor& latents, const QuantizedCode& code) {
    check_code_shape(latents, code);
    const size_t len = static_cast<size_t>(code.n_frames) * code.dim;
    const double inv_frames = 1.0 / static_cast<double>(std::max<int64_t>(code.n_frames, 1));
    // Residual inputs are latents minus earlier (constant) codewords, so the
    // gradient of each layer's term with respect to latents is 2 (r_k - q_k).
    auto diff = std::make_shared<std::vector<double>>(len, 0.0);
    double total = 0.0;
    for (int k = 0; k < code.n_active; ++k) {
        for (size_t i = 0; i < len; ++i) {
            const double d = code.residuals[k * len + i] - code.per_layer[k * len + i];
            total += d * d;
            (*diff)[i] += d;
        }
    }
    Node* in = latents.node();
    return make_result({}, {total * inv_frames}, {latents}, [in, diff, inv_frames](Node& out) {
        if (!in->requires_grad) return;
        auto& g = in->ensure_grad();
        const double go = out.grad[0] * 2.0 * inv_frames;
        for (size_t i = 0; i < g.size(); ++i) g[i] += go * (*diff)[i];
    });
}

Tensor quantized_straight_through(const Tensor& latents, const QuantizedCode& code) {
    check_code_shape(latents, code);
    return ops::straight_through(latents, Tensor::from(latents.shape(), code.reconstruction()));
}

Tensor layer_straight_through(const Tensor& latents, const QuantizedCode& code, int k) {
    check_code_shape(latents, code);
    if (k < 0 || k >= code.n_active) throw DomainError("layer index out of range");
    // residual_k differs from latents by a constant, so its Jacobian is the identity.
    return ops::straight_through(latents, Tensor::from(latents.shape(), code.layer(k)));
}

ResidualVQ::ResidualVQ(int n_layers, int codebook_size, int dim) {
    if (n_layers < 1) throw ConfigError("RVQ needs at least one layer");
    if (codebook_size < 2) throw ConfigError("codebook_size must be >= 2");
    for (int k = 0; k < n_layers; ++k) books_.emplace_back(codebook_size, dim);
}

void ResidualVQ::set_dead_threshold(double t) {
    if (!(t >= 0.0)) throw ConfigError("dead_threshold must be non-negative");
    for (auto& b : books_) b.dead_threshold = t;
}

void ResidualVQ::set_decay(double d) {
    if (!(d > 0.0 && d < 1.0)) throw ConfigError("EMA decay must be in (0, 1)");
    for (auto& b : books_) b.decay = d;
}

QuantizedCode ResidualVQ::quantize(const std::vector<double>& frames, int64_t n_frames, int n_active) const {
    if (books_.empty()) throw ConfigError("RVQ has no codebooks");
    const int dim = books_.front().dim;
    if (static_cast<int64_t>(frames.size()) != n_frames * dim) throw DomainError("frame buffer size mismatch");
    return dmcodec::quantize(books_, frames.data(), n_frames, dim, n_active);
}

QuantizedCode ResidualVQ::quantize_for_training(const std::vector<double>& frames, int64_t n_frames, int n_active,
                                                 Rng& rng) {
    if (!initialized()) {
        // Each layer is seeded from the residuals that reach it, so layer k
        // starts from the batch minus the first k layers' reconstruction.
        const int dim = books_.front().dim;
        std::vector<double> residual = frames;
        for (int k = 0; k < n_layers(); ++k) {
            books_[k].initialize_from(residual.data(), n_frames, rng);
            std::vector<int32_t> idx(static_cast<size_t>(n_frames));
            assign_block(books_[k], residual.data(), n_frames, idx.data());
            for (int64_t t = 0; t < n_frames; ++t) {
                const double* e = books_[k].entry(idx[t]);
                for (int d = 0; d < dim; ++d) residual[t * dim + d] -= e[d];
            }
        }
    }
    return quantize(frames, n_frames, n_active);
}

void ResidualVQ::update(const QuantizedCode& code, Rng& rng) {
    const size_t len = static_cast<size_t>(code.n_frames) * code.dim;
    for (int k = 0; k < code.n_active; ++k) {
        ema_update(books_[k], code.residuals.data() + k * len, code.indices.data() + k * code.n_frames, code.n_frames,
                   rng);
    }
}

double bitrate_kbps(const CodecConfig& cfg, int n_active) {
    if (cfg.codebook_size < 2 || (cfg.codebook_size & (cfg.codebook_size - 1)) != 0) {
        throw ConfigError("bitrate needs a power-of-two codebook size, got " + std::to_string(cfg.codebook_size));
    }
    if (n_active < 1 || n_active > cfg.n_quantizers) throw ConfigError("n_active_layers out of range");
    return n_active * std::log2(static_cast<double>(cfg.codebook_size)) * cfg.frame_rate() / 1000.0;
}

namespace {

void put32(std::vector<unsigned char>& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}
uint32_t get32(const unsigned char* p) {
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) | (static_cast<uint32_t>(p[2]) << 16) |
           (static_cast<uint32_t>(p[3]) << 24);
}

} // namespace

std::vector<unsigned char> serialize_codes(const QuantizedCode& code, int codebook_size) {
    if (codebook_size > 65536) throw ConfigError("codebook_size too large for uint16 code export");
    std::vector<unsigned char> out{'D', 'M', 'C', 'Q'};
    put32(out, static_cast<uint32_t>(code.n_active));
    put32(out, static_cast<uint32_t>(code.n_frames));
    put32(out, static_cast<uint32_t>(codebook_size));
    for (int32_t idx : code.indices) {
        out.push_back(static_cast<unsigned char>(idx & 0xff));
        out.push_back(static_cast<unsigned char>((idx >> 8) & 0xff));
    }
    return out;
}

void write_codes(const std::filesystem::path& path, const QuantizedCode& code, int codebook_size) {
    const auto bytes = serialize_codes(code, codebook_size);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

CodesFile read_codes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < 16 || std::memcmp(bytes.data(), "DMCQ", 4) != 0) {
        throw DataError(path.string() + ": not a code file");
    }
    CodesFile f;
    f.n_layers = static_cast<int>(get32(bytes.data() + 4));
    f.n_frames = get32(bytes.data() + 8);
    f.codebook_size = static_cast<int>(get32(bytes.data() + 12));
    const size_t count = static_cast<size_t>(f.n_layers) * static_cast<size_t>(f.n_frames);
    if (bytes.size() != 16 + 2 * count) throw DataError(path.string() + ": payload size does not match header");
    f.indices.resize(count);
    for (size_t i = 0; i < count; ++i) {
        f.indices[i] = bytes[16 + 2 * i] | (bytes[17 + 2 * i] << 8);
        if (f.indices[i] >= f.codebook_size) throw DataError(path.string() + ": index exceeds codebook size");
    }
    return f;
}

std::vector<double> dequantize(const std::vector<CodebookState>& books, const CodesFile& codes) {
    if (codes.n_layers > static_cast<int>(books.size())) throw DomainError("code file has more layers than the model");
    if (codes.n_layers < 1) throw DomainError("code file has no layers");
    if (codes.n_frames < 0 || codes.indices.size() != static_cast<size_t>(codes.n_layers * codes.n_frames)) {
        throw DomainError("code index count does not match layers x frames");
    }
    for (int32_t i : codes.indices) {
        if (i < 0 || i >= codes.codebook_size) throw DomainError("code index out of range");
    }
    const int dim = books.front().dim;
    std::vector<double> out(static_cast<size_t>(codes.n_frames) * dim, 0.0);
    for (int k = 0; k < codes.n_layers; ++k) {
        if (codes.codebook_size != books[k].codebook_size) throw DomainError("codebook size mismatch");
        for (int64_t t = 0; t < codes.n_frames; ++t) {
            const double* e = books[k].entry(codes.indices[static_cast<size_t>(k * codes.n_frames + t)]);
            for (int d = 0; d < dim; ++d) out[t * dim + d] += e[d];
        }
    }
    return out;
}

} // namespace dmcodec
