#include "distill.hpp"

#include "errors.hpp"
#include "nn_ops.hpp"
#include "ops.hpp"
#include "spectral.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

namespace dmcodec {

Modality parse_modality(const std::string& s) {
    if (s == "contextual") return Modality::contextual;
    if (s == "semantic") return Modality::semantic;
    if (s == "cls") return Modality::cls;
    if (s == "static_word") return Modality::static_word;
    throw ConfigError("unknown teacher modality '" + s + "'");
}

LayerPolicy parse_layer_policy(const std::string& s) {
    if (s == "average_all") return LayerPolicy::average_all;
    if (s == "last") return LayerPolicy::last;
    if (s == "ninth") return LayerPolicy::ninth;
    throw ConfigError("unknown layer policy '" + s + "'");
}

RvqSelection parse_rvq_selection(const std::string& s) {
    if (s == "rvq1" || s == "first") return RvqSelection::first;
    if (s == "rvq1:8" || s == "all_mean") return RvqSelection::all_mean;
    if (s == "rvq8" || s == "last") return RvqSelection::last;
    throw ConfigError("unknown RVQ selection '" + s + "' (expected rvq1, rvq1:8 or rvq8)");
}

DistillAxis parse_axis(const std::string& s) {
    if (s == "feature_dim") return DistillAxis::feature_dim;
    if (s == "time") return DistillAxis::time;
    throw ConfigError("unknown distillation axis '" + s + "'");
}

std::string to_string(Modality m) {
    switch (m) {
    case Modality::contextual: return "contextual";
    case Modality::semantic: return "semantic";
    case Modality::cls: return "cls";
    case Modality::static_word: return "static_word";
    }
    return "?";
}

std::string to_string(LayerPolicy p) {
    switch (p) {
    case LayerPolicy::average_all: return "average_all";
    case LayerPolicy::last: return "last";
    case LayerPolicy::ninth: return "ninth";
    }
    return "?";
}

std::string to_string(RvqSelection s) {
    switch (s) {
    case RvqSelection::first: return "rvq1";
    case RvqSelection::all_mean: return "rvq1:8";
    case RvqSelection::last: return "rvq8";
    }
    return "?";
}

std::string to_string(DistillAxis a) { return a == DistillAxis::time ? "time" : "feature_dim"; }

namespace {

constexpr uint32_t kTeacherVersion = 1;

void put32(std::vector<unsigned char>& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}
uint32_t get32(const unsigned char* p) {
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) | (static_cast<uint32_t>(p[2]) << 16) |
           (static_cast<uint32_t>(p[3]) << 24);
}

} // namespace

void write_teacher(const std::filesystem::path& path, const TeacherDump& dump) {
    const size_t count = static_cast<size_t>(std::max(dump.layers, 1)) * dump.n * dump.dim;
    if (dump.values.size() != count) throw DomainError("teacher dump size does not match its header");
    std::vector<unsigned char> out{'D', 'M', 'T', 'E'};
    put32(out, kTeacherVersion);
    put32(out, static_cast<uint32_t>(dump.modality));
    put32(out, static_cast<uint32_t>(dump.layers));
    put32(out, static_cast<uint32_t>(dump.n));
    put32(out, static_cast<uint32_t>(dump.dim));
    put32(out, 0);
    for (double v : dump.values) {
        const float f = static_cast<float>(v);
        uint32_t u;
        std::memcpy(&u, &f, 4);
        put32(out, u);
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path.string());
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
}

TeacherDump read_teacher(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open teacher file " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < 28 || std::memcmp(bytes.data(), "DMTE", 4) != 0) {
        throw DataError(path.string() + ": not a teacher file");
    }
    const uint32_t version = get32(bytes.data() + 4);
    if (version != kTeacherVersion) throw DataError(path.string() + ": unsupported version " + std::to_string(version));
    TeacherDump d;
    const uint32_t modality = get32(bytes.data() + 8);
    if (modality > 3) throw DataError(path.string() + ": unknown modality code " + std::to_string(modality));
    d.modality = static_cast<Modality>(modality);
    d.layers = static_cast<int>(get32(bytes.data() + 12));
    d.n = get32(bytes.data() + 16);
    d.dim = static_cast<int>(get32(bytes.data() + 20));
    if (get32(bytes.data() + 24) != 0) throw DataError(path.string() + ": only float32 payloads are supported");
    if (d.n < 1 || d.dim < 1) throw DataError(path.string() + ": empty teacher array");
    const size_t count = static_cast<size_t>(std::max(d.layers, 1)) * d.n * d.dim;
    if (bytes.size() != 28 + 4 * count) throw DataError(path.string() + ": payload size does not match header");
    d.values.resize(count);
    for (size_t i = 0; i < count; ++i) {
        const uint32_t u = get32(bytes.data() + 28 + 4 * i);
        float f;
        std::memcpy(&f, &u, 4);
        if (!std::isfinite(f)) throw DataError(path.string() + ": non-finite value in teacher payload");
        d.values[i] = f;
    }
    return d;
}

TeacherEmbedding select_layers(const TeacherDump& dump, Modality modality, LayerPolicy policy) {
    const bool cls_from_contextual = modality == Modality::cls && dump.modality == Modality::contextual;
    if (dump.modality != modality && !cls_from_contextual) {
        throw ConfigError("teacher holds " + to_string(dump.modality) + " vectors, requested " + to_string(modality));
    }
    for (double v : dump.values) {
        if (!std::isfinite(v)) throw DataError("non-finite value in teacher embedding");
    }
    const size_t layer_len = static_cast<size_t>(dump.n) * dump.dim;
    std::vector<double> rows;
    if (dump.layers == 0) {
        if (policy != LayerPolicy::average_all) {
            throw ConfigError("layer policy " + to_string(policy) + " needs a layered dump, got a pre-averaged one");
        }
        rows = dump.values;
    } else if (policy == LayerPolicy::average_all) {
        rows.assign(layer_len, 0.0);
        for (int l = 0; l < dump.layers; ++l) {
            for (size_t i = 0; i < layer_len; ++i) rows[i] += dump.values[l * layer_len + i];
        }
        for (auto& v : rows) v /= dump.layers;
    } else {
        const int layer = policy == LayerPolicy::last ? dump.layers : 9;
        if (layer > dump.layers) {
            throw ConfigError("layer " + std::to_string(layer) + " requested from a " + std::to_string(dump.layers) +
                              "-layer dump");
        }
        rows.assign(dump.values.begin() + (layer - 1) * layer_len, dump.values.begin() + layer * layer_len);
    }
    TeacherEmbedding e;
    e.modality = modality;
    e.dim = dump.dim;
    if (cls_from_contextual || (modality == Modality::cls && dump.n > 1)) {
        if (modality == Modality::cls && !cls_from_contextual) {
            throw DataError("cls teacher must hold exactly one vector, found " + std::to_string(dump.n));
        }
        e.n = 1;
        e.vectors.assign(rows.begin(), rows.begin() + dump.dim);
    } else {
        e.n = dump.n;
        e.vectors = std::move(rows);
    }
    return e;
}

TeacherEmbedding load_teacher(const std::filesystem::path& path, Modality modality, LayerPolicy policy) {
    return select_layers(read_teacher(path), modality, policy);
}

std::vector<double> align(const TeacherEmbedding& teacher, int64_t t_prime) {
    if (t_prime < 1) throw DomainError("align needs t_prime >= 1");
    const int dim = teacher.dim;
    std::vector<double> out(static_cast<size_t>(t_prime) * dim, 0.0);
    if (teacher.modality == Modality::cls) {
        for (int64_t t = 0; t < t_prime; ++t) std::copy_n(teacher.vectors.begin(), dim, out.begin() + t * dim);
        return out;
    }
    const int64_t keep = std::min<int64_t>(teacher.n, t_prime);
    std::copy_n(teacher.vectors.begin(), keep * dim, out.begin());
    return out;
}

namespace {

// Guard on the norm product: zero columns give cosine 0 without biasing
// nonzero ones.
constexpr double kCosEps = 1e-8;

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Mean over columns of softplus(-cos(q[:, d], t[:, d])) for [T, D] inputs.
Tensor column_cosine_loss(const Tensor& q, const Tensor& t) {
    const int64_t rows = q.dim(0), cols = q.dim(1);
    const auto& qv = q.values();
    const auto& tv = t.values();
    struct Col {
        double dot, qq, tt, denom, cos;
        bool guarded;
    };
    auto stats = std::make_shared<std::vector<Col>>(static_cast<size_t>(cols));
    double total = 0.0;
    for (int64_t d = 0; d < cols; ++d) {
        double dot = 0, qq = 0, tt = 0;
        for (int64_t r = 0; r < rows; ++r) {
            const double a = qv[r * cols + d], b = tv[r * cols + d];
            dot += a * b;
            qq += a * a;
            tt += b * b;
        }
        const double prod = std::sqrt(qq) * std::sqrt(tt);
        const bool guarded = prod < kCosEps;
        const double denom = guarded ? kCosEps : prod;
        const double c = dot / denom;
        (*stats)[d] = {dot, qq, tt, denom, c, guarded};
        total += softplus(-c);
    }
    const double inv_cols = 1.0 / static_cast<double>(cols);
    Node* qn = q.node();
    std::shared_ptr<Node> tn = t.node_ptr();
    return make_result({}, {total * inv_cols}, {q}, [qn, tn, stats, rows, cols, inv_cols](Node& out) {
        if (!qn->requires_grad) return;
        auto& g = qn->ensure_grad();
        const auto& qv = qn->value;
        const auto& tv = tn->value;
        for (int64_t d = 0; d < cols; ++d) {
            const Col& s = (*stats)[d];
            // d softplus(-c)/dc = -sigmoid(-c)
            const double dl_dc = -sigmoid(-s.cos) * inv_cols * out.grad[0];
            for (int64_t r = 0; r < rows; ++r) {
                const double a = qv[r * cols + d], b = tv[r * cols + d];
                double dc_da = b / s.denom;
                if (!s.guarded && s.qq > 0.0) dc_da -= s.cos * a / s.qq;
                g[r * cols + d] += dl_dc * dc_da;
            }
        }
    });
}

} // namespace

Tensor distill_loss(const Tensor& q_proj, const Tensor& target, DistillAxis axis) {
    if (q_proj.rank() != 2 || q_proj.shape() != target.shape()) {
        throw DomainError("distill_loss expects equal [T, D] shapes, got " + shape_str(q_proj.shape()) + " and " +
                          shape_str(target.shape()));
    }
    if (q_proj.dim(0) < 1 || q_proj.dim(1) < 1) throw DomainError("distill_loss on an empty array");
    Tensor t = target.detach();
    if (axis == DistillAxis::time) return column_cosine_loss(ops::transpose2d(q_proj), ops::transpose2d(t));
    return column_cosine_loss(q_proj, t);
}

double combined_loss(double l_lm, double l_sm, double w_lm, double w_sm) {
    if (w_lm < 0.0 || w_sm < 0.0) throw ConfigError("distillation weights must be non-negative");
    if (w_lm == 0.0 && w_sm == 0.0) throw ConfigError("both distillation weights are zero");
    return 0.5 * (w_lm * l_lm + w_sm * l_sm);
}

Tensor combined_loss(const Tensor& l_lm, const Tensor& l_sm, double w_lm, double w_sm) {
    combined_loss(0.0, 0.0, w_lm, w_sm);
    const std::vector<Tensor> terms{l_lm, l_sm};
    const std::vector<double> weights{0.5 * w_lm, 0.5 * w_sm};
    return ops::weighted_sum(terms, weights);
}

void DistillConfig::validate() const {
    if (w_lm < 0.0 || w_sm < 0.0) throw ConfigError("distillation weights must be non-negative");
    if (lm_enabled && sm_enabled && w_lm == 0.0 && w_sm == 0.0) throw ConfigError("both distillation weights are zero");
    if (teacher_dim < 1) throw ConfigError("teacher_dim must be >= 1");
    if (lm_modality == Modality::semantic) throw ConfigError("the LM teacher cannot use the semantic modality");
}

Tensor select_rvq(const Tensor& latents, const QuantizedCode& code, RvqSelection selection) {
    switch (selection) {
    case RvqSelection::first: return layer_straight_through(latents, code, 0);
    case RvqSelection::last: return layer_straight_through(latents, code, code.n_active - 1);
    case RvqSelection::all_mean: {
        std::vector<Tensor> layers;
        std::vector<double> w(static_cast<size_t>(code.n_active), 1.0 / code.n_active);
        for (int k = 0; k < code.n_active; ++k) layers.push_back(layer_straight_through(latents, code, k));
        Tensor acc = ops::scale(layers[0], w[0]);
        for (int k = 1; k < code.n_active; ++k) acc = ops::add(acc, ops::scale(layers[k], w[k]));
        return acc;
    }
    }
    throw ConfigError("bad RVQ selection");
}

DistillHead::DistillHead(ParamStore& store, const DistillConfig& cfg, int latent_dim, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    lm_proj_ = Linear(store, "distill.lm_proj", latent_dim, cfg.teacher_dim, rng, false);
    sm_proj_ = Linear(store, "distill.sm_proj", latent_dim, cfg.teacher_dim, rng, false);
}

DistillLosses DistillHead::forward(const Tensor& latents, const QuantizedCode& code, const DistillTargets& targets,
                                   int64_t batch, int64_t frames) const {
    DistillLosses out;
    auto branch = [&](const Linear& proj, RvqSelection sel, const std::vector<std::vector<double>>& tgt,
                      const char* which) {
        if (static_cast<int64_t>(tgt.size()) != batch) {
            throw DomainError(std::string(which) + " targets: expected " + std::to_string(batch) + " items, got " +
                              std::to_string(tgt.size()));
        }
        Tensor q = proj.forward(select_rvq(latents, code, sel));
        Tensor acc;
        for (int64_t b = 0; b < batch; ++b) {
            Tensor t = Tensor::from({frames, cfg_.teacher_dim}, tgt[b]);
            Tensor l = distill_loss(ops::slice(q, 0, b * frames, frames), t, cfg_.axis);
            acc = acc.defined() ? ops::add(acc, l) : l;
        }
        return ops::scale(acc, 1.0 / static_cast<double>(batch));
    };
    if (cfg_.lm_enabled) out.lm = branch(lm_proj_, cfg_.lm_selection, targets.lm, "LM");
    if (cfg_.sm_enabled) out.sm = branch(sm_proj_, cfg_.sm_selection, targets.sm, "SM");
    if (out.lm.defined() && out.sm.defined()) {
        out.total = combined_loss(out.lm, out.sm, cfg_.w_lm, cfg_.w_sm);
    } else if (out.lm.defined()) {
        out.total = out.lm;
    } else if (out.sm.defined()) {
        out.total = out.sm;
    } else {
        out.total = Tensor::scalar(0.0);
    }
    return out;
}

SyntheticTeacher::SyntheticTeacher(uint64_t seed, int dim, int layers, int sample_rate, int hop)
    : dim_(dim), layers_(layers), sample_rate_(sample_rate), hop_(hop) {
    auto make = [&](uint64_t which) {
        std::vector<std::vector<double>> proj;
        Rng rng = Rng::derive({seed, 0x7eac4e5ULL, which});
        int in = kMels;
        for (int l = 0; l < layers_; ++l) {
            std::vector<double> p(static_cast<size_t>(dim_) * in);
            const double s = 1.0 / std::sqrt(static_cast<double>(in));
            for (auto& v : p) v = rng.normal() * s;
            proj.push_back(std::move(p));
            in = dim_;
        }
        return proj;
    };
    lm_proj_ = make(1);
    sm_proj_ = make(2);
}

std::vector<double> SyntheticTeacher::log_mel(const AudioClip& clip, int64_t& frames) const {
    frames = static_cast<int64_t>(clip.samples.size()) / hop_;
    if (frames < 1) throw DomainError("clip shorter than one teacher frame");
    const int n_fft = 1024;
    NoGradGuard ng;
    Tensor x = Tensor::from({1, 1, frames * hop_},
                            std::vector<double>(clip.samples.begin(), clip.samples.begin() + frames * hop_));
    x = ops::reshape(ops::pad_last(x, 0, n_fft - hop_), {1, frames * hop_ + n_fft - hop_});
    Tensor mel = ops::mel_spectrogram(x, n_fft, hop_, kMels, sample_rate_, 0.0, sample_rate_ / 2.0);
    std::vector<double> out = mel.values();
    for (auto& v : out) v = std::log(v + 1e-5);
    return out;
}

std::vector<double> SyntheticTeacher::run_layers(const std::vector<std::vector<double>>& proj,
                                                 const std::vector<double>& input, int64_t rows) const {
    std::vector<double> all;
    std::vector<double> h = input;
    int in = kMels;
    for (int l = 0; l < layers_; ++l) {
        std::vector<double> next(static_cast<size_t>(rows) * dim_);
        for (int64_t r = 0; r < rows; ++r) {
            for (int o = 0; o < dim_; ++o) {
                double s = 0.0;
                for (int i = 0; i < in; ++i) s += proj[l][o * in + i] * h[r * in + i];
                next[r * dim_ + o] = std::tanh(s);
            }
        }
        all.insert(all.end(), next.begin(), next.end());
        h = std::move(next);
        in = dim_;
    }
    return all;
}

TeacherDump SyntheticTeacher::semantic(const AudioClip& clip) const {
    int64_t frames = 0;
    auto mel = log_mel(clip, frames);
    TeacherDump d;
    d.modality = Modality::semantic;
    d.layers = layers_;
    d.n = frames;
    d.dim = dim_;
    d.values = run_layers(sm_proj_, mel, frames);
    return d;
}

TeacherDump SyntheticTeacher::contextual(const AudioClip& clip, int n_words) const {
    if (n_words < 1) throw DomainError("contextual teacher needs at least one word");
    int64_t frames = 0;
    auto mel = log_mel(clip, frames);
    const int64_t rows = n_words + 1;
    std::vector<double> pooled(static_cast<size_t>(rows) * kMels, 0.0);
    for (int64_t t = 0; t < frames; ++t) {
        for (int m = 0; m < kMels; ++m) pooled[m] += mel[t * kMels + m] / frames;
    }
    for (int w = 0; w < n_words; ++w) {
        int64_t lo = w * frames / n_words;
        int64_t hi = std::max(lo + 1, (w + 1) * frames / n_words);
        lo = std::min(lo, frames - 1);
        hi = std::min(hi, frames);
        for (int64_t t = lo; t < hi; ++t) {
            for (int m = 0; m < kMels; ++m) pooled[(w + 1) * kMels + m] += mel[t * kMels + m] / (hi - lo);
        }
    }
    TeacherDump d;
    d.modality = Modality::contextual;
    d.layers = layers_;
    d.n = rows;
    d.dim = dim_;
    d.values = run_layers(lm_proj_, pooled, rows);
    return d;
}

TeacherEmbedding static_word_embedding(const std::vector<std::string>& words, int dim, uint64_t seed) {
    if (words.empty()) throw DomainError("static word embedding needs at least one word");
    TeacherEmbedding e;
    e.modality = Modality::static_word;
    e.n = static_cast<int64_t>(words.size());
    e.dim = dim;
    for (const auto& w : words) {
        uint64_t h = 0xcbf29ce484222325ULL;
        for (unsigned char c : w) {
            h ^= c;
            h *= 0x100000001b3ULL;
        }
        Rng rng = Rng::derive({seed, h});
        for (int d = 0; d < dim; ++d) e.vectors.push_back(rng.normal() / std::sqrt(static_cast<double>(dim)));
    }
    return e;
}

} // namespace dmcodec
