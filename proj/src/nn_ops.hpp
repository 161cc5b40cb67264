#pragma once

#include "tensor.hpp"

namespace dmcodec::ops {

struct Conv1dArgs {
    int stride = 1;
    int dilation = 1;
    int pad_left = 0;
    int pad_right = 0;
};

// x [B, Cin, T], weight [Cout, Cin, K], bias [Cout] (optional) -> [B, Cout, T_out]
// with zero padding and T_out = (T + pads - dilation*(K-1) - 1) / stride + 1.
Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias, const Conv1dArgs& args);

// x [B, Cin, T], weight [Cin, Cout, K] -> [B, Cout, (T-1)*stride + K - trim_left - trim_right]
Tensor conv_transpose1d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride, int trim_left,
                        int trim_right);

struct Conv2dArgs {
    int stride_h = 1, stride_w = 1;
    int dilation_h = 1, dilation_w = 1;
    int pad_h = 0, pad_w = 0;
};

// x [B, Cin, H, W], weight [Cout, Cin, KH, KW] -> [B, Cout, H_out, W_out], zero padding.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, const Conv2dArgs& args);

// Average pooling over the last axis of [B, C, T]; padded positions are not
// counted in the average.
Tensor avg_pool1d(const Tensor& x, int kernel, int stride, int pad);

// Zero-pads the last axis of [B, C, T].
Tensor pad_last(const Tensor& x, int left, int right);

// Single-direction LSTM layer, gate order (input, forget, cell, output).
// x [B, T, I], w_ih [4H, I], w_hh [4H, H], bias [4H] -> [B, T, H].
// reverse runs the recurrence from the last step to the first.
Tensor lstm(const Tensor& x, const Tensor& w_ih, const Tensor& w_hh, const Tensor& bias, bool reverse);

} // namespace dmcodec::ops
