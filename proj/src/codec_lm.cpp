#include "codec_lm.hpp"

#include "checkpoint.hpp"
#include "errors.hpp"
#include "ops.hpp"
#include "seq_ops.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>

namespace dmcodec {

std::vector<int> CodeGrid::layer(int k) const {
    return {idx.begin() + k * n_frames, idx.begin() + (k + 1) * n_frames};
}

CodeGrid CodeGrid::from_codes(const CodesFile& codes) {
    CodeGrid g;
    g.n_layers = codes.n_layers;
    g.n_frames = codes.n_frames;
    g.idx.assign(codes.indices.begin(), codes.indices.end());
    return g;
}

CodesFile CodeGrid::to_codes(int codebook_size) const {
    CodesFile c;
    c.n_layers = n_layers;
    c.n_frames = n_frames;
    c.codebook_size = codebook_size;
    c.indices.assign(idx.begin(), idx.end());
    return c;
}

std::vector<int> GraphemePhonemizer::phonemize(const std::string& text) const {
    constexpr int kApostrophe = 26, kBoundary = 27;
    std::vector<int> out;
    for (unsigned char c : text) {
        int id = -1;
        if (std::isalpha(c)) id = std::tolower(c) - 'a';
        else if (c == '\'') id = kApostrophe;
        else if (std::isspace(c)) id = kBoundary;
        if (id < 0) continue;
        if (id == kBoundary && (out.empty() || out.back() == kBoundary)) continue;
        out.push_back(id);
    }
    if (!out.empty() && out.back() == kBoundary) out.pop_back();
    return out;
}

void CodecLmConfig::validate() const {
    if (dim < 1 || heads < 1 || dim % heads != 0) throw ConfigError("codec LM dim must be a positive multiple of heads");
    if (layers < 1 || ff_mult < 1) throw ConfigError("codec LM needs at least one layer");
    if (codebook_size < 2) throw ConfigError("codec LM codebook_size must be >= 2");
    if (n_quantizers < 1) throw ConfigError("codec LM n_quantizers must be >= 1");
    if (phoneme_vocab < 1) throw ConfigError("codec LM phoneme_vocab must be >= 1");
    if (max_len < 2) throw ConfigError("codec LM max_len must be >= 2");
    if (!(learning_rate > 0.0)) throw ConfigError("codec LM learning_rate must be positive");
}

namespace {

Tensor embedding_table(ParamStore& store, const std::string& name, int rows, int dim, Rng& rng) {
    std::vector<double> v(static_cast<size_t>(rows) * dim);
    for (auto& x : v) x = 0.02 * rng.normal();
    return store.add(name, {rows, dim}, std::move(v));
}

Tensor row(const Tensor& table, int64_t i) { return ops::reshape(ops::slice(table, 0, i, 1), {table.dim(1)}); }

Tensor positions(const Tensor& table, int64_t n) { return ops::slice(table, 0, 0, n); }

} // namespace

TransformerStack::TransformerStack(ParamStore& store, const std::string& name, const CodecLmConfig& cfg, Rng& rng)
    : heads_(cfg.heads) {
    const int d = cfg.dim, ff = cfg.dim * cfg.ff_mult;
    for (int i = 0; i < cfg.layers; ++i) {
        const std::string p = name + ".block" + std::to_string(i);
        blocks_.push_back(Block{LayerNorm(store, p + ".ln1", d), LayerNorm(store, p + ".ln2", d),
                                Linear(store, p + ".q", d, d, rng), Linear(store, p + ".k", d, d, rng),
                                Linear(store, p + ".v", d, d, rng), Linear(store, p + ".o", d, d, rng),
                                Linear(store, p + ".ff1", d, ff, rng), Linear(store, p + ".ff2", ff, d, rng)});
    }
    final_ = LayerNorm(store, name + ".final", d);
}

Tensor TransformerStack::forward(const Tensor& x, bool causal) const {
    Tensor h = x;
    for (const auto& b : blocks_) {
        Tensor n = b.ln1.forward(h);
        h = ops::add(h, b.o.forward(ops::attention(b.q.forward(n), b.k.forward(n), b.v.forward(n), heads_, causal)));
        h = ops::add(h, b.ff2.forward(ops::gelu(b.ff1.forward(b.ln2.forward(h)))));
    }
    return final_.forward(h);
}

ArModel::ArModel(ParamStore& store, const CodecLmConfig& cfg, Rng& rng)
    : cfg_(cfg), phone_emb_(embedding_table(store, "ar.phone_emb", cfg.phoneme_vocab, cfg.dim, rng)),
      code_emb_(embedding_table(store, "ar.code_emb", cfg.codebook_size + 1, cfg.dim, rng)),
      pos_emb_(embedding_table(store, "ar.pos_emb", cfg.max_len, cfg.dim, rng)),
      stack_(store, "ar", cfg, rng),
      // Small head so an untrained model starts near uniform.
      head_(store, "ar.head", cfg.dim, cfg.codebook_size + 1, rng, true, 0.01) {}

Tensor ArModel::logits(const std::vector<int>& phonemes, const std::vector<int>& q1) const {
    std::vector<int> codes{bos()};
    codes.insert(codes.end(), q1.begin(), q1.end());
    const int64_t len = static_cast<int64_t>(phonemes.size() + codes.size());
    if (len > cfg_.max_len) {
        throw DomainError("AR sequence of " + std::to_string(len) + " tokens exceeds the context limit " +
                          std::to_string(cfg_.max_len));
    }
    std::vector<Tensor> parts;
    if (!phonemes.empty()) parts.push_back(ops::embedding(phone_emb_, phonemes));
    parts.push_back(ops::embedding(code_emb_, codes));
    Tensor x = ops::add(ops::concat(parts, 0), positions(pos_emb_, len));
    return head_.forward(stack_.forward(x, true));
}

NarModel::NarModel(ParamStore& store, const CodecLmConfig& cfg, Rng& rng)
    : cfg_(cfg), phone_emb_(embedding_table(store, "nar.phone_emb", cfg.phoneme_vocab, cfg.dim, rng)),
      pos_emb_(embedding_table(store, "nar.pos_emb", cfg.max_len, cfg.dim, rng)),
      stage_emb_(embedding_table(store, "nar.stage_emb", cfg.n_quantizers, cfg.dim, rng)),
      segment_emb_(embedding_table(store, "nar.segment_emb", 3, cfg.dim, rng)) {
    for (int k = 0; k < cfg.n_quantizers; ++k) {
        code_emb_.push_back(
            embedding_table(store, "nar.code_emb" + std::to_string(k), cfg.codebook_size, cfg.dim, rng));
    }
    stack_ = TransformerStack(store, "nar", cfg, rng);
    head_ = Linear(store, "nar.head", cfg.dim, cfg.codebook_size, rng, true, 0.01);
}

Tensor NarModel::logits(const std::vector<int>& phonemes, const CodeGrid& prompt, const CodeGrid& codes, int k) const {
    if (k < 1 || k >= cfg_.n_quantizers || k >= codes.n_layers) {
        throw DomainError("NAR layer " + std::to_string(k + 1) + " outside [2, " + std::to_string(cfg_.n_quantizers) +
                          "]");
    }
    const int64_t n_ph = static_cast<int64_t>(phonemes.size());
    const int64_t n_pr = prompt.n_frames;
    const int64_t n_tg = codes.n_frames;
    const int64_t len = n_ph + n_pr + n_tg;
    if (len > cfg_.max_len) {
        throw DomainError("NAR sequence of " + std::to_string(len) + " tokens exceeds the context limit " +
                          std::to_string(cfg_.max_len));
    }
    std::vector<Tensor> parts;
    if (n_ph > 0) parts.push_back(ops::add_row(ops::embedding(phone_emb_, phonemes), row(segment_emb_, 0)));
    if (n_pr > 0) {
        // Prompt frames carry every layer.
        Tensor p = ops::embedding(code_emb_[0], prompt.layer(0));
        for (int j = 1; j < prompt.n_layers; ++j) p = ops::add(p, ops::embedding(code_emb_[j], prompt.layer(j)));
        parts.push_back(ops::add_row(p, row(segment_emb_, 1)));
    }
    Tensor t = ops::embedding(code_emb_[0], codes.layer(0));
    for (int j = 1; j < k; ++j) t = ops::add(t, ops::embedding(code_emb_[j], codes.layer(j)));
    t = ops::add_row(ops::add_row(t, row(segment_emb_, 2)), row(stage_emb_, k));
    parts.push_back(t);
    Tensor x = ops::add(ops::concat(parts, 0), positions(pos_emb_, len));
    Tensor h = stack_.forward(x, false);
    return head_.forward(ops::slice(h, 0, n_ph + n_pr, n_tg));
}

CodecLm::CodecLm(const CodecLmConfig& cfg)
    : cfg_((cfg.validate(), cfg)), init_rng_(cfg.seed), ar_(ar_params_, cfg_, init_rng_),
      nar_(nar_params_, cfg_, init_rng_), opt_ar_(Adam::Options{cfg.learning_rate}),
      opt_nar_(Adam::Options{cfg.learning_rate}) {}

void CodecLm::check_sample(const TtsSample& s) const {
    if (s.phonemes.empty()) throw DomainError("TTS sample has no phonemes");
    for (int p : s.phonemes) {
        if (p < 0 || p >= cfg_.phoneme_vocab) throw DomainError("phoneme id " + std::to_string(p) + " out of range");
    }
    auto check_grid = [&](const CodeGrid& g, const char* what) {
        if (g.n_frames == 0) return;
        if (g.n_layers != cfg_.n_quantizers || static_cast<int64_t>(g.idx.size()) != g.n_layers * g.n_frames) {
            throw DomainError(std::string(what) + " must have " + std::to_string(cfg_.n_quantizers) + " layers");
        }
        for (int c : g.idx) {
            if (c < 0 || c >= cfg_.codebook_size) throw DomainError(std::string(what) + " index out of range");
        }
    };
    if (s.codes.n_frames < 1) throw DomainError("TTS sample has no code frames");
    check_grid(s.codes, "codes");
    check_grid(s.prompt, "prompt");
}

Tensor CodecLm::ar_loss(const std::vector<TtsSample>& batch) const {
    if (batch.empty()) throw DomainError("ar_loss needs a non-empty batch");
    std::vector<Tensor> logits;
    std::vector<int> targets;
    for (const auto& s : batch) {
        check_sample(s);
        const auto q1 = s.codes.layer(0);
        logits.push_back(ar_.logits(s.phonemes, q1));
        targets.insert(targets.end(), s.phonemes.size(), -1);
        targets.insert(targets.end(), q1.begin(), q1.end());
        targets.push_back(ar_.eos());
    }
    return ops::cross_entropy(ops::concat(logits, 0), targets);
}

std::vector<double> CodecLm::ar_token_losses(const TtsSample& s) const {
    check_sample(s);
    NoGradGuard ng;
    const auto q1 = s.codes.layer(0);
    const Tensor lg = ar_.logits(s.phonemes, q1);
    const int64_t vocab = lg.dim(1);
    std::vector<double> out;
    for (size_t t = 0; t <= q1.size(); ++t) {
        const int64_t r = static_cast<int64_t>(s.phonemes.size() + t);
        const double* p = lg.values().data() + r * vocab;
        const double mx = *std::max_element(p, p + vocab);
        double z = 0.0;
        for (int64_t j = 0; j < vocab; ++j) z += std::exp(p[j] - mx);
        const int target = t < q1.size() ? q1[t] : ar_.eos();
        out.push_back(mx + std::log(z) - p[target]);
    }
    return out;
}

Tensor CodecLm::nar_loss(const std::vector<TtsSample>& batch, int k) const {
    if (k < 2 || k > cfg_.n_quantizers) {
        throw DomainError("NAR layer " + std::to_string(k) + " outside [2, " + std::to_string(cfg_.n_quantizers) + "]");
    }
    if (batch.empty()) throw DomainError("nar_loss needs a non-empty batch");
    std::vector<Tensor> logits;
    std::vector<int> targets;
    for (const auto& s : batch) {
        check_sample(s);
        logits.push_back(nar_.logits(s.phonemes, s.prompt, s.codes, k - 1));
        const auto layer = s.codes.layer(k - 1);
        targets.insert(targets.end(), layer.begin(), layer.end());
    }
    return ops::cross_entropy(ops::concat(logits, 0), targets);
}

double CodecLm::train_ar_step(const std::vector<TtsSample>& batch) {
    Tensor loss = ar_loss(batch);
    ar_params_.zero_grad();
    loss.backward();
    ar_params_.clip_grad_norm(10.0);
    opt_ar_.step(ar_params_);
    return loss.item();
}

double CodecLm::train_nar_step(const std::vector<TtsSample>& batch, int k) {
    Tensor loss = nar_loss(batch, k);
    nar_params_.zero_grad();
    loss.backward();
    nar_params_.clip_grad_norm(10.0);
    opt_nar_.step(nar_params_);
    return loss.item();
}

double CodecLm::train_nar_step(const std::vector<TtsSample>& batch, Rng& rng, int* k_out) {
    if (cfg_.n_quantizers < 2) throw ConfigError("NAR training needs at least two quantizer layers");
    const int k = 2 + static_cast<int>(rng.below(static_cast<uint64_t>(cfg_.n_quantizers - 1)));
    if (k_out) *k_out = k;
    return train_nar_step(batch, k);
}

SynthesisResult CodecLm::synthesize(const std::vector<int>& phonemes, const CodeGrid& prompt,
                                    int64_t max_frames) const {
    if (phonemes.empty()) throw DomainError("synthesis needs a non-empty phoneme sequence");
    const int64_t room = cfg_.max_len - static_cast<int64_t>(phonemes.size()) - 1;
    const int64_t nar_room = cfg_.max_len - static_cast<int64_t>(phonemes.size()) - prompt.n_frames;
    int64_t cap = std::min(room, nar_room);
    if (max_frames > 0) cap = std::min(cap, max_frames);
    if (cap < 1) throw DomainError("phonemes and prompt leave no room for output frames");

    NoGradGuard ng;
    SynthesisResult res;
    std::vector<int> q1;
    res.truncated = true;
    while (static_cast<int64_t>(q1.size()) < cap) {
        const Tensor lg = ar_.logits(phonemes, q1);
        const int64_t vocab = lg.dim(1);
        const double* last = lg.values().data() + (lg.dim(0) - 1) * vocab;
        const int next = static_cast<int>(std::max_element(last, last + vocab) - last);
        if (next == ar_.eos()) {
            res.truncated = false;
            break;
        }
        q1.push_back(next);
    }
    if (q1.empty()) throw DomainError("the AR model produced no frames before the end token");

    CodeGrid& g = res.codes;
    g.n_layers = cfg_.n_quantizers;
    g.n_frames = static_cast<int64_t>(q1.size());
    g.idx.assign(static_cast<size_t>(g.n_layers * g.n_frames), 0);
    std::copy(q1.begin(), q1.end(), g.idx.begin());
    for (int k = 1; k < cfg_.n_quantizers; ++k) {
        const Tensor lg = nar_.logits(phonemes, prompt, g, k);
        const int64_t vocab = lg.dim(1);
        for (int64_t t = 0; t < g.n_frames; ++t) {
            const double* r = lg.values().data() + t * vocab;
            g.at(k, t) = static_cast<int>(std::max_element(r, r + vocab) - r);
        }
    }
    return res;
}

std::string CodecLmConfig::to_text() const {
    std::ostringstream o;
    o.precision(17);
    o << "dim=" << dim << "\nheads=" << heads << "\nlayers=" << layers << "\nff_mult=" << ff_mult
      << "\ncodebook_size=" << codebook_size << "\nn_quantizers=" << n_quantizers << "\nphoneme_vocab=" << phoneme_vocab
      << "\nmax_len=" << max_len << "\nlearning_rate=" << learning_rate << "\nseed=" << seed << "\n";
    return o.str();
}

void CodecLmConfig::set(const std::string& k, const std::string& v) {
    try {
        size_t used = 0;
        auto whole = [&] {
            if (used != v.size()) throw std::invalid_argument(v);
        };
        if (k == "dim") dim = std::stoi(v, &used);
        else if (k == "heads") heads = std::stoi(v, &used);
        else if (k == "layers") layers = std::stoi(v, &used);
        else if (k == "ff_mult") ff_mult = std::stoi(v, &used);
        else if (k == "codebook_size") codebook_size = std::stoi(v, &used);
        else if (k == "n_quantizers") n_quantizers = std::stoi(v, &used);
        else if (k == "phoneme_vocab") phoneme_vocab = std::stoi(v, &used);
        else if (k == "max_len") max_len = std::stoi(v, &used);
        else if (k == "learning_rate") learning_rate = std::stod(v, &used);
        else if (k == "seed") seed = std::stoull(v, &used);
        else throw ConfigError("unknown codec LM config key '" + k + "'");
        whole();
    } catch (const std::logic_error&) {
        throw ConfigError("bad codec LM config value '" + v + "' for '" + k + "'");
    }
}

namespace {

CodecLmConfig lm_config_from_text(const std::string& text) {
    CodecLmConfig c;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        try {
            c.set(line.substr(0, eq), line.substr(eq + 1));
        } catch (const ConfigError& e) {
            throw DataError(std::string("stored codec LM config: ") + e.what());
        }
    }
    return c;
}

} // namespace

void CodecLm::save(const std::filesystem::path& path) const {
    Archive a;
    a.put_params("ar/", ar_params_);
    a.put_params("nar/", nar_params_);
    a.meta["format"] = "dmcodec-lm";
    a.meta["lm_config"] = cfg_.to_text();
    save_archive(path, a);
}

std::unique_ptr<CodecLm> CodecLm::load(const std::filesystem::path& path) {
    Archive a = load_archive(path);
    if (a.meta_value("format") != "dmcodec-lm") throw DataError(path.string() + ": not a codec LM checkpoint");
    auto lm = std::make_unique<CodecLm>(lm_config_from_text(a.meta_value("lm_config")));
    a.load_params("ar/", lm->ar_params_);
    a.load_params("nar/", lm->nar_params_);
    return lm;
}

} // namespace dmcodec
