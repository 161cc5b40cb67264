#include "doctest.h"

#include "discriminators.hpp"
#include "errors.hpp"
#include "gradcheck.hpp"
#include "losses.hpp"

#include <algorithm>

using namespace dmcodec;
using dmcodec::testing::gradcheck;
using dmcodec::testing::random_values;

TEST_CASE("discriminator set shapes and determinism") {
    DiscriminatorConfig cfg;
    ParamStore store;
    DiscriminatorSet set(store, cfg);
    Rng rng(1);
    Tensor x = Tensor::from({1, 1, 48000}, random_values(rng, 48000, 0.1));
    auto a = set.run_all(x);
    REQUIRE(a.size() == 11u);
    CHECK(static_cast<int>(a.size()) == cfg.count());
    auto b = set.run_all(x);
    for (size_t n = 0; n < a.size(); ++n) {
        CAPTURE(a[n].name);
        CHECK(a[n].features.size() == 5u);
        CHECK(a[n].logits.dim(0) == 1);
        CHECK(a[n].logits.values() == b[n].logits.values());
        for (size_t m = 0; m < a[n].features.size(); ++m) {
            CHECK(a[n].features[m].values() == b[n].features[m].values());
            const auto& v = a[n].features[m].values();
            CHECK(std::all_of(v.begin(), v.end(), [](double y) { return std::isfinite(y); }));
        }
    }
    CHECK_THROWS_AS(set.run_all(Tensor::zeros({1, 1, 1000})), DomainError);
    CHECK_THROWS_AS(set.run_all(Tensor::zeros({1, 2, 4000})), DomainError);
}

TEST_CASE("sub-discriminator gradients") {
    Rng rng(2);
    DiscriminatorConfig cfg;
    cfg.periods = {3};
    cfg.msd_scales = 2;
    cfg.stft_windows = {16};
    cfg.stft_channels = 2;
    ParamStore store;
    DiscriminatorSet set(store, cfg);
    Tensor x = Tensor::parameter({2, 1, 40}, random_values(rng, 80, 0.5));
    for (int n = 0; n < 3; ++n) {
        CAPTURE(n);
        CHECK(gradcheck(
                  [&](const auto& in) {
                      auto out = set.run_all(in[0]);
                      return ops::add(dmcodec::testing::project(out[n].logits),
                                      dmcodec::testing::project(out[n].features[2], 7));
                  },
                  {x}) < 1e-6);
    }
}

TEST_CASE("one discriminator step does not increase the hinge loss on its pair") {
    DiscriminatorConfig cfg;
    cfg.stft_windows = {512};
    ParamStore store;
    DiscriminatorSet set(store, cfg);
    Rng rng(3);
    Tensor real = Tensor::from({2, 1, 4000}, random_values(rng, 8000, 0.3));
    Tensor fake = Tensor::from({2, 1, 4000}, random_values(rng, 8000, 0.05));
    auto loss = [&] {
        auto r = set.run_all(real);
        auto f = set.run_all(fake);
        std::vector<Tensor> rl, fl;
        for (auto& o : r) rl.push_back(o.logits);
        for (auto& o : f) fl.push_back(o.logits);
        return hinge_discriminator(rl, fl);
    };
    Tensor before = loss();
    store.zero_grad();
    before.backward();
    Adam opt(Adam::Options{1e-5});
    opt.step(store);
    CHECK(loss().item() <= before.item());
}
