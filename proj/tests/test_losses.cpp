#include "doctest.h"

#include "errors.hpp"
#include "gradcheck.hpp"
#include "losses.hpp"

#include <cmath>

using namespace dmcodec;
using dmcodec::testing::gradcheck;
using dmcodec::testing::random_values;

TEST_CASE("time loss") {
    CHECK(time_loss(Tensor::from({2}, {1, 1}), Tensor::from({2}, {1, 1})).item() == 0.0);
    CHECK(time_loss(Tensor::from({2}, {1, 1}), Tensor::from({2}, {0, 0})).item() == 1.0);
    CHECK(time_loss(Tensor::from({2}, {0.5, -0.5}), Tensor::from({2}, {-0.5, 0.5})).item() == 1.0);
    CHECK_THROWS_AS(time_loss(Tensor::zeros({2}), Tensor::zeros({3})), DomainError);
    Rng rng(1);
    Tensor x = Tensor::from({2, 16}, random_values(rng, 32));
    Tensor xh = Tensor::parameter({2, 16}, random_values(rng, 32));
    CHECK(gradcheck([&](const auto& in) { return time_loss(x, in[0]); }, {xh}) < 1e-6);
}

TEST_CASE("mel loss properties") {
    Rng rng(2);
    const int64_t T = 16000;
    Tensor noise = Tensor::from({1, T}, random_values(rng, T, 0.1));
    Tensor silence = Tensor::zeros({1, T});
    CHECK(mel_loss(noise, noise).item() == 0.0);
    const double ab = mel_loss(noise, silence).item();
    CHECK(ab > 0.0);
    CHECK(ab == doctest::Approx(mel_loss(silence, noise).item()).epsilon(1e-12));
    double prev = 0.0;
    for (double amp : {0.001, 0.01, 0.1, 1.0}) {
        const double l = mel_loss(ops::scale(noise, amp), silence).item();
        CHECK(l > prev);
        prev = l;
    }
    // Short inputs keep the scales that fit.
    Tensor short_x = Tensor::from({1, 100}, random_values(rng, 100));
    CHECK(mel_loss(short_x, Tensor::zeros({1, 100})).item() > 0.0);
    CHECK_THROWS_AS(mel_loss(Tensor::zeros({1, 20}), Tensor::zeros({1, 20})), DomainError);
}

TEST_CASE("mel loss gradient") {
    Rng rng(3);
    MelLossOptions opts;
    opts.max_exp = 6;
    opts.n_mels = 8;
    Tensor x = Tensor::from({2, 96}, random_values(rng, 192));
    Tensor xh = Tensor::parameter({2, 96}, random_values(rng, 192));
    CHECK(gradcheck([&](const auto& in) { return mel_loss(x, in[0], opts); }, {xh}) < 1e-5);
}

TEST_CASE("hinge losses") {
    auto logits = [](std::vector<double> r) { return Tensor::from({1, static_cast<int64_t>(r.size())}, r); };
    // One sample per discriminator; each logit map is a single value.
    auto per_disc = [](std::vector<double> r) {
        std::vector<Tensor> out;
        for (double v : r) out.push_back(Tensor::from({1, 1}, {v}));
        return out;
    };
    CHECK(hinge_generator(per_disc({1, 1, 1})).item() == 0.0);
    CHECK(hinge_generator(per_disc({0, 2})).item() == 0.5);
    CHECK(hinge_generator(per_disc({-1})).item() >= hinge_generator(per_disc({0.5})).item());
    CHECK(hinge_discriminator(per_disc({1, 1}), per_disc({-1, -1})).item() == 0.0);
    CHECK(hinge_discriminator(per_disc({0}), per_disc({0})).item() == 2.0);
    CHECK(hinge_discriminator(per_disc({2}), per_disc({-2})).item() == 0.0);
    // R_n is the mean of the logit map.
    CHECK(logit_means(logits({0, 2, 4})).item() == 2.0);
}

TEST_CASE("feature matching") {
    std::vector<std::vector<Tensor>> real{{Tensor::from({1, 2}, {2, 2})}};
    std::vector<std::vector<Tensor>> fake{{Tensor::from({1, 2}, {0, 0})}};
    CHECK(feature_matching(real, fake).item() == 2.0);
    CHECK(feature_matching(real, real).item() == 0.0);

    Rng rng(4);
    std::vector<std::vector<Tensor>> r2, f2, r3, f3;
    for (int n = 0; n < 2; ++n) {
        r2.emplace_back();
        f2.emplace_back();
        r3.emplace_back();
        f3.emplace_back();
        for (int m = 0; m < 3; ++m) {
            auto a = random_values(rng, 12);
            auto b = random_values(rng, 12);
            r2.back().push_back(Tensor::from({2, 6}, a));
            f2.back().push_back(Tensor::from({2, 6}, b));
            for (auto& v : a) v *= 3.5;
            for (auto& v : b) v *= 3.5;
            r3.back().push_back(Tensor::from({2, 6}, a));
            f3.back().push_back(Tensor::from({2, 6}, b));
        }
    }
    CHECK(feature_matching(r3, f3).item() == doctest::Approx(feature_matching(r2, f2).item()).epsilon(1e-12));
    Tensor p = Tensor::parameter({2, 6}, f2[0][0].values());
    CHECK(gradcheck(
              [&](const auto& in) {
                  auto ff = f2;
                  ff[0][0] = in[0];
                  return feature_matching(r2, ff);
              },
              {p}) < 1e-6);
}

TEST_CASE("generator total accounting") {
    LossBreakdown ones{1, 1, 1, 1, 1, 1, 1, 0};
    const LossWeights w = LossWeights::from_scale(1.0);
    CHECK(total_generator(ones, w) == 7.61);
    CHECK(total_generator(LossBreakdown{}, w) == 0.0);
    const LossWeights w2 = LossWeights::from_scale(2.0);
    CHECK(w2.t == 2 * w.t);
    CHECK(w2.f == 2 * w.f);
    CHECK(w2.w == 2 * w.w);
    CHECK(w2.distill == 2 * w.distill);
    CHECK(w2.g == 1.0);
    CHECK(w2.fm == 1.0);
    Tensor one = Tensor::scalar(1.0);
    CHECK(total_generator(one, one, one, one, one, one, w).item() == 7.61);
    // Linear in each component.
    LossBreakdown c{0.3, 0, 0, 0, 0, 0, 0, 0};
    LossBreakdown c2{0.6, 0, 0, 0, 0, 0, 0, 0};
    CHECK(total_generator(c2, w) == doctest::Approx(2 * total_generator(c, w)));
}
