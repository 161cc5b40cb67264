#pragma once

// Parameterized building blocks. Each layer registers its tensors in a
// ParamStore under a dotted module path and keeps handles to them, so
// checkpoint loading (which overwrites values in place) is visible to the
// layer without rebinding.

#include "nn_ops.hpp"
#include "rng.hpp"
#include "tensor.hpp"

#include <string>
#include <vector>

namespace dmcodec {

// U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
std::vector<double> fan_in_uniform(Rng& rng, int64_t n, int64_t fan_in);

// Weight-normalized 1-D convolution with "same"-style zero padding unless
// explicit pads are given.
class Conv1dLayer {
public:
    Conv1dLayer() = default;
    Conv1dLayer(ParamStore& store, const std::string& name, int cin, int cout, int kernel, Rng& rng,
                ops::Conv1dArgs args, bool weight_norm = true);
    // Padding that keeps T unchanged at stride 1 (extra sample goes right).
    static ops::Conv1dArgs same(int kernel, int dilation = 1);

    Tensor forward(const Tensor& x) const;
    Tensor weight() const;

private:
    Tensor v_, g_, bias_;
    ops::Conv1dArgs args_;
    bool weight_norm_ = true;
};

class ConvTranspose1dLayer {
public:
    ConvTranspose1dLayer() = default;
    ConvTranspose1dLayer(ParamStore& store, const std::string& name, int cin, int cout, int kernel, int stride,
                         Rng& rng);
    Tensor forward(const Tensor& x) const;

private:
    Tensor v_, g_, bias_;
    int stride_ = 1, trim_left_ = 0, trim_right_ = 0;
};

class Conv2dLayer {
public:
    Conv2dLayer() = default;
    Conv2dLayer(ParamStore& store, const std::string& name, int cin, int cout, int kh, int kw, Rng& rng,
                ops::Conv2dArgs args);
    Tensor forward(const Tensor& x) const;

private:
    Tensor v_, g_, bias_;
    ops::Conv2dArgs args_;
};

// Stacked LSTM over [B, T, C] with an additive skip connection. When
// bidirectional, each direction has C/2 hidden units and the two outputs are
// concatenated back to C channels.
class LstmBlock {
public:
    LstmBlock() = default;
    LstmBlock(ParamStore& store, const std::string& name, int channels, int layers, bool bidirectional, Rng& rng);
    // x [B, C, T] -> [B, C, T]
    Tensor forward(const Tensor& x) const;

private:
    struct Direction {
        Tensor w_ih, w_hh, bias;
    };
    std::vector<std::vector<Direction>> layers_;
    bool bidirectional_ = false;
};

class Linear {
public:
    Linear() = default;
    Linear(ParamStore& store, const std::string& name, int in, int out, Rng& rng, bool bias = true,
           double init_scale = 1.0);
    // x [N, in] -> [N, out]
    Tensor forward(const Tensor& x) const;
    const Tensor& weight() const { return w_; }

private:
    Tensor w_, b_;
};

class LayerNorm {
public:
    LayerNorm() = default;
    LayerNorm(ParamStore& store, const std::string& name, int dim);
    Tensor forward(const Tensor& x) const;

private:
    Tensor gain_, bias_;
};

} // namespace dmcodec
