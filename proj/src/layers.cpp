#include "layers.hpp"

#include "errors.hpp"
#include "ops.hpp"
#include "seq_ops.hpp"

#include <cmath>

namespace dmcodec {

std::vector<double> fan_in_uniform(Rng& rng, int64_t n, int64_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<int64_t>(fan_in, 1)));
    std::vector<double> v(static_cast<size_t>(n));
    for (auto& x : v) x = rng.uniform(-bound, bound);
    return v;
}

namespace {

// Gain initialized to the per-output norm of v so that w == v at init.
std::vector<double> row_norms(const std::vector<double>& v, int64_t rows) {
    const int64_t inner = static_cast<int64_t>(v.size()) / rows;
    std::vector<double> g(static_cast<size_t>(rows));
    for (int64_t i = 0; i < rows; ++i) {
        double s = 0.0;
        for (int64_t j = 0; j < inner; ++j) s += v[i * inner + j] * v[i * inner + j];
        g[i] = std::sqrt(s);
    }
    return g;
}

} // namespace

ops::Conv1dArgs Conv1dLayer::same(int kernel, int dilation) {
    const int total = dilation * (kernel - 1);
    return ops::Conv1dArgs{1, dilation, total / 2, total - total / 2};
}

Conv1dLayer::Conv1dLayer(ParamStore& store, const std::string& name, int cin, int cout, int kernel, Rng& rng,
                         ops::Conv1dArgs args, bool weight_norm)
    : args_(args), weight_norm_(weight_norm) {
    const int64_t fan_in = static_cast<int64_t>(cin) * kernel;
    auto v = fan_in_uniform(rng, static_cast<int64_t>(cout) * fan_in, fan_in);
    if (weight_norm_) {
        g_ = store.add(name + ".weight_g", {cout}, row_norms(v, cout));
        v_ = store.add(name + ".weight_v", {cout, cin, kernel}, std::move(v));
    } else {
        v_ = store.add(name + ".weight", {cout, cin, kernel}, std::move(v));
    }
    bias_ = store.add(name + ".bias", {cout}, fan_in_uniform(rng, cout, fan_in));
}

Tensor Conv1dLayer::weight() const { return weight_norm_ ? ops::weight_norm(v_, g_) : v_; }

Tensor Conv1dLayer::forward(const Tensor& x) const { return ops::conv1d(x, weight(), bias_, args_); }

ConvTranspose1dLayer::ConvTranspose1dLayer(ParamStore& store, const std::string& name, int cin, int cout, int kernel,
                                           int stride, Rng& rng)
    : stride_(stride) {
    const int excess = kernel - stride;
    trim_left_ = excess / 2;
    trim_right_ = excess - trim_left_;
    const int64_t fan_in = static_cast<int64_t>(cin) * kernel / std::max(stride, 1);
    auto v = fan_in_uniform(rng, static_cast<int64_t>(cin) * cout * kernel, fan_in);
    g_ = store.add(name + ".weight_g", {cin}, row_norms(v, cin));
    v_ = store.add(name + ".weight_v", {cin, cout, kernel}, std::move(v));
    bias_ = store.add(name + ".bias", {cout}, fan_in_uniform(rng, cout, fan_in));
}

Tensor ConvTranspose1dLayer::forward(const Tensor& x) const {
    return ops::conv_transpose1d(x, ops::weight_norm(v_, g_), bias_, stride_, trim_left_, trim_right_);
}

Conv2dLayer::Conv2dLayer(ParamStore& store, const std::string& name, int cin, int cout, int kh, int kw, Rng& rng,
                         ops::Conv2dArgs args)
    : args_(args) {
    const int64_t fan_in = static_cast<int64_t>(cin) * kh * kw;
    auto v = fan_in_uniform(rng, static_cast<int64_t>(cout) * fan_in, fan_in);
    g_ = store.add(name + ".weight_g", {cout}, row_norms(v, cout));
    v_ = store.add(name + ".weight_v", {cout, cin, kh, kw}, std::move(v));
    bias_ = store.add(name + ".bias", {cout}, fan_in_uniform(rng, cout, fan_in));
}

Tensor Conv2dLayer::forward(const Tensor& x) const {
    return ops::conv2d(x, ops::weight_norm(v_, g_), bias_, args_);
}

LstmBlock::LstmBlock(ParamStore& store, const std::string& name, int channels, int layers, bool bidirectional,
                     Rng& rng)
    : bidirectional_(bidirectional) {
    if (bidirectional && channels % 2 != 0) throw ConfigError("bidirectional LSTM needs an even channel count");
    const int hidden = bidirectional ? channels / 2 : channels;
    const int dirs = bidirectional ? 2 : 1;
    for (int l = 0; l < layers; ++l) {
        std::vector<Direction> layer;
        for (int d = 0; d < dirs; ++d) {
            const std::string p = name + ".l" + std::to_string(l) + (d == 0 ? "" : "_reverse");
            Direction dir;
            dir.w_ih = store.add(p + ".w_ih", {4 * hidden, channels},
                                 fan_in_uniform(rng, 4LL * hidden * channels, hidden));
            dir.w_hh = store.add(p + ".w_hh", {4 * hidden, hidden}, fan_in_uniform(rng, 4LL * hidden * hidden, hidden));
            dir.bias = store.add(p + ".bias", {4 * hidden}, fan_in_uniform(rng, 4LL * hidden, hidden));
            layer.push_back(dir);
        }
        layers_.push_back(std::move(layer));
    }
}

Tensor LstmBlock::forward(const Tensor& x) const {
    Tensor h = ops::permute(x, {0, 2, 1});
    const Tensor skip = h;
    for (const auto& layer : layers_) {
        Tensor fwd = ops::lstm(h, layer[0].w_ih, layer[0].w_hh, layer[0].bias, false);
        if (bidirectional_) {
            Tensor bwd = ops::lstm(h, layer[1].w_ih, layer[1].w_hh, layer[1].bias, true);
            std::vector<Tensor> parts{fwd, bwd};
            h = ops::concat(parts, 2);
        } else {
            h = fwd;
        }
    }
    return ops::permute(ops::add(h, skip), {0, 2, 1});
}

Linear::Linear(ParamStore& store, const std::string& name, int in, int out, Rng& rng, bool bias, double init_scale) {
    auto w = fan_in_uniform(rng, static_cast<int64_t>(in) * out, in);
    for (auto& x : w) x *= init_scale;
    w_ = store.add(name + ".weight", {out, in}, std::move(w));
    if (bias) b_ = store.add(name + ".bias", {out}, std::vector<double>(static_cast<size_t>(out), 0.0));
}

Tensor Linear::forward(const Tensor& x) const { return ops::linear(x, w_, b_); }

LayerNorm::LayerNorm(ParamStore& store, const std::string& name, int dim) {
    gain_ = store.add(name + ".gain", {dim}, std::vector<double>(static_cast<size_t>(dim), 1.0));
    bias_ = store.add(name + ".bias", {dim}, std::vector<double>(static_cast<size_t>(dim), 0.0));
}

Tensor LayerNorm::forward(const Tensor& x) const { return ops::layer_norm(x, gain_, bias_); }

} // namespace dmcodec
