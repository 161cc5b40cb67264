#include "doctest.h"

#include "errors.hpp"
#include "gradcheck.hpp"
#include "nn_ops.hpp"
#include "ops.hpp"
#include "seq_ops.hpp"
#include "spectral.hpp"

#include <cmath>
#include <complex>

using namespace dmcodec;
using dmcodec::testing::gradcheck;
using dmcodec::testing::project;
using dmcodec::testing::random_param;

TEST_CASE("elementwise ops match finite differences") {
    Rng rng(1);
    Tensor a = random_param(rng, {3, 4});
    Tensor b = random_param(rng, {3, 4});
    CHECK(gradcheck([](const auto& in) { return project(ops::mul(in[0], in[1])); }, {a, b}) < 1e-6);
    CHECK(gradcheck([](const auto& in) { return project(ops::sub(ops::elu(in[0]), ops::tanh(in[1]))); }, {a, b}) <
          1e-6);
    CHECK(gradcheck([](const auto& in) { return project(ops::sigmoid(ops::gelu(in[0]))); }, {a}) < 1e-6);
    CHECK(gradcheck([](const auto& in) { return project(ops::leaky_relu(in[0], 0.1)); }, {a}) < 1e-6);
    CHECK(gradcheck([](const auto& in) { return ops::mean(ops::sqrt(ops::square(in[0]), 1e-3)); }, {a}) < 1e-6);
}

TEST_CASE("shape ops route gradients") {
    Rng rng(2);
    Tensor a = random_param(rng, {2, 3, 4});
    Tensor b = random_param(rng, {2, 2, 4});
    CHECK(gradcheck([](const auto& in) { return project(ops::permute(in[0], {2, 0, 1})); }, {a}) < 1e-6);
    CHECK(gradcheck([](const auto& in) { return project(ops::slice(in[0], 1, 1, 2)); }, {a}) < 1e-6);
    CHECK(gradcheck(
              [](const auto& in) {
                  std::vector<Tensor> parts{in[0], in[1]};
                  return project(ops::concat(parts, 1));
              },
              {a, b}) < 1e-6);

    Tensor x = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor p = ops::permute(x, {1, 0});
    CHECK(p.shape() == Shape{3, 2});
    CHECK(p.at(1) == 4.0);
    CHECK_THROWS_AS(ops::slice(x, 1, 2, 2), DomainError);
}

TEST_CASE("matmul, linear and weight norm") {
    Rng rng(3);
    Tensor a = random_param(rng, {3, 5});
    Tensor b = random_param(rng, {5, 2});
    Tensor w = random_param(rng, {4, 5});
    Tensor bias = random_param(rng, {4});
    CHECK(gradcheck([](const auto& in) { return project(ops::matmul(in[0], in[1])); }, {a, b}) < 1e-6);
    CHECK(gradcheck([](const auto& in) { return project(ops::linear(in[0], in[1], in[2])); }, {a, w, bias}) < 1e-6);
    Tensor v = random_param(rng, {3, 2, 4});
    Tensor g = random_param(rng, {3});
    CHECK(gradcheck([](const auto& in) { return project(ops::weight_norm(in[0], in[1])); }, {v, g}) < 1e-6);
}

TEST_CASE("straight-through passes the identity gradient") {
    Tensor lat = Tensor::parameter({3}, {0.1, 0.2, 0.3});
    Tensor q = Tensor::from({3}, {1.0, 2.0, 3.0});
    Tensor y = ops::straight_through(lat, q);
    CHECK(y.values() == q.values());
    Tensor y2 = ops::straight_through(lat, q);
    lat.zero_grad();
    ops::sum(y2).backward();
    for (double gv : lat.grad()) CHECK(gv == 1.0);
}

TEST_CASE("conv1d with stride, dilation and asymmetric padding") {
    Rng rng(4);
    Tensor x = random_param(rng, {2, 3, 11});
    Tensor w = random_param(rng, {4, 3, 3});
    Tensor b = random_param(rng, {4});
    ops::Conv1dArgs args{2, 2, 2, 1};
    CHECK(gradcheck([&](const auto& in) { return project(ops::conv1d(in[0], in[1], in[2], args)); }, {x, w, b}) <
          1e-6);
    Tensor y = ops::conv1d(x, w, b, args);
    CHECK(y.dim(2) == (11 + 3 - 5) / 2 + 1);

    // Hand case: single channel, kernel [1, 1], stride 1.
    Tensor xi = Tensor::from({1, 1, 4}, {1, 2, 3, 4});
    Tensor wi = Tensor::from({1, 1, 2}, {1, 1});
    Tensor yi = ops::conv1d(xi, wi, Tensor(), {});
    CHECK(yi.values() == std::vector<double>{3, 5, 7});
}

TEST_CASE("transposed conv1d inverts the stride arithmetic") {
    Rng rng(5);
    Tensor x = random_param(rng, {2, 3, 5});
    Tensor w = random_param(rng, {3, 2, 4});
    Tensor b = random_param(rng, {2});
    CHECK(gradcheck([](const auto& in) { return project(ops::conv_transpose1d(in[0], in[1], in[2], 2, 1, 1)); },
                    {x, w, b}) < 1e-6);
    // kernel 2S, stride S, trimming S in total gives exactly T*S samples.
    Tensor y = ops::conv_transpose1d(x, w, b, 2, 1, 1);
    CHECK(y.dim(2) == 10);
}

TEST_CASE("conv2d and pooling") {
    Rng rng(6);
    Tensor x = random_param(rng, {1, 2, 6, 7});
    Tensor w = random_param(rng, {3, 2, 3, 3});
    Tensor b = random_param(rng, {3});
    ops::Conv2dArgs args;
    args.stride_w = 2;
    args.dilation_h = 2;
    args.pad_h = 2;
    args.pad_w = 1;
    CHECK(gradcheck([&](const auto& in) { return project(ops::conv2d(in[0], in[1], in[2], args)); }, {x, w, b}) <
          1e-6);
    Tensor p = random_param(rng, {2, 2, 9});
    CHECK(gradcheck([](const auto& in) { return project(ops::avg_pool1d(in[0], 4, 2, 2)); }, {p}) < 1e-6);
    CHECK(gradcheck([](const auto& in) { return project(ops::pad_last(in[0], 2, 1)); }, {p}) < 1e-6);
}

TEST_CASE("lstm backward through time, both directions") {
    Rng rng(7);
    Tensor x = random_param(rng, {2, 5, 3}, 0.5);
    Tensor wih = random_param(rng, {8, 3}, 0.5);
    Tensor whh = random_param(rng, {8, 2}, 0.5);
    Tensor b = random_param(rng, {8}, 0.5);
    for (bool rev : {false, true}) {
        CAPTURE(rev);
        CHECK(gradcheck([rev](const auto& in) { return project(ops::lstm(in[0], in[1], in[2], in[3], rev)); },
                        {x, wih, whh, b}) < 1e-6);
    }
}

TEST_CASE("lstm reverse direction sees the future") {
    Tensor x = Tensor::from({1, 3, 1}, {1.0, 0.0, 0.0});
    Tensor wih = Tensor::full({4, 1}, 1.0);
    Tensor whh = Tensor::full({4, 1}, 0.0);
    Tensor b = Tensor::zeros({4});
    Tensor fwd = ops::lstm(x, wih, whh, b, false);
    Tensor rev = ops::lstm(x, wih, whh, b, true);
    // Forward: the impulse at t=0 leaves a cell state that persists.
    CHECK(fwd.at(2) != 0.0);
    // Reverse: steps processed before the impulse stay at zero.
    CHECK(rev.at(1) == 0.0);
    CHECK(rev.at(2) == 0.0);
    CHECK(rev.at(0) != 0.0);
}

TEST_CASE("sequence ops") {
    Rng rng(8);
    Tensor table = random_param(rng, {6, 4});
    CHECK(gradcheck([](const auto& in) { return project(ops::embedding(in[0], {1, 3, 1, 5})); }, {table}) < 1e-6);
    CHECK_THROWS_AS(ops::embedding(table, {6}), DomainError);

    Tensor x = random_param(rng, {3, 4});
    Tensor g = random_param(rng, {4});
    Tensor b = random_param(rng, {4});
    CHECK(gradcheck([](const auto& in) { return project(ops::layer_norm(in[0], in[1], in[2])); }, {x, g, b}) < 1e-6);

    Tensor q = random_param(rng, {5, 4});
    Tensor k = random_param(rng, {5, 4});
    Tensor v = random_param(rng, {5, 4});
    for (bool causal : {false, true}) {
        CAPTURE(causal);
        CHECK(gradcheck([causal](const auto& in) { return project(ops::attention(in[0], in[1], in[2], 2, causal)); },
                        {q, k, v}) < 1e-6);
    }

    Tensor logits = random_param(rng, {4, 6});
    CHECK(gradcheck([](const auto& in) { return ops::cross_entropy(in[0], {0, 5, -1, 2}); }, {logits}) < 1e-6);
    Tensor uniform = Tensor::zeros({3, 8});
    CHECK(ops::cross_entropy(uniform, {1, 2, 3}).item() == doctest::Approx(std::log(8.0)));
}

TEST_CASE("causal attention ignores future keys") {
    Rng rng(9);
    Tensor q = Tensor::from({4, 4}, dmcodec::testing::random_values(rng, 16));
    Tensor k = Tensor::from({4, 4}, dmcodec::testing::random_values(rng, 16));
    Tensor v = Tensor::from({4, 4}, dmcodec::testing::random_values(rng, 16));
    Tensor y1 = ops::attention(q, k, v, 2, true);
    for (int i = 12; i < 16; ++i) {
        k.values()[i] += 3.0;
        v.values()[i] -= 2.0;
    }
    Tensor y2 = ops::attention(q, k, v, 2, true);
    for (int i = 0; i < 12; ++i) CHECK(y1.at(i) == y2.at(i));
}

TEST_CASE("fft agrees with a direct DFT") {
    Rng rng(10);
    const int n = 16;
    std::vector<std::complex<double>> data(n);
    for (auto& c : data) c = {rng.normal(), rng.normal()};
    auto direct = data;
    for (int k = 0; k < n; ++k) {
        std::complex<double> s{};
        for (int j = 0; j < n; ++j) s += data[j] * std::polar(1.0, -2.0 * M_PI * k * j / n);
        direct[k] = s;
    }
    fft_inplace(data);
    for (int k = 0; k < n; ++k) CHECK(std::abs(data[k] - direct[k]) < 1e-10);
    std::vector<std::complex<double>> bad(12);
    CHECK_THROWS_AS(fft_inplace(bad), DomainError);
}

TEST_CASE("stft and mel spectrogram gradients") {
    Rng rng(11);
    Tensor x = random_param(rng, {2, 40});
    CHECK(gradcheck([](const auto& in) { return project(ops::stft(in[0], 16, 8)); }, {x}) < 1e-6);
    CHECK(gradcheck([](const auto& in) { return project(ops::mel_spectrogram(in[0], 16, 4, 8, 16000, 0, 8000)); },
                    {x}) < 1e-5);
    Tensor s = ops::stft(x, 16, 8);
    CHECK(s.shape() == Shape{2, 4, 9, 2});
    CHECK_THROWS_AS(ops::stft(x, 64, 16), DomainError);
}

TEST_CASE("mel filterbank covers the band with unit-peak triangles") {
    auto fb = mel_filterbank(512, 64, 16000, 0, 8000);
    const int bins = 257;
    for (int m = 0; m < 64; ++m) {
        double peak = 0.0;
        for (int k = 0; k < bins; ++k) {
            CHECK(fb[m * bins + k] >= 0.0);
            peak = std::max(peak, fb[m * bins + k]);
        }
        CHECK(peak <= 1.0);
    }
    CHECK(hz_to_mel(mel_to_hz(1234.5)) == doctest::Approx(1234.5));
}
