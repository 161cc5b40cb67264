#include "doctest.h"

#include "distill.hpp"
#include "errors.hpp"
#include "gradcheck.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace dmcodec;
using dmcodec::testing::gradcheck;
using dmcodec::testing::random_values;

namespace {

const double kIdentical = std::log1p(std::exp(-1.0));
const double kNegated = std::log1p(std::exp(1.0));

std::filesystem::path tmp(const std::string& name) { return std::filesystem::temp_directory_path() / name; }

} // namespace

TEST_CASE("distill loss closed forms") {
    Rng rng(1);
    Tensor q = Tensor::from({6, 4}, random_values(rng, 24));
    Tensor neg = ops::neg(q);
    for (auto axis : {DistillAxis::feature_dim, DistillAxis::time}) {
        CAPTURE(to_string(axis));
        CHECK(std::abs(distill_loss(q, q, axis).item() - kIdentical) < 1e-9);
        CHECK(std::abs(distill_loss(q, neg, axis).item() - kNegated) < 1e-9);
    }
    Tensor a = Tensor::from({2, 1}, {1, 0});
    Tensor b = Tensor::from({2, 1}, {0, 1});
    CHECK(distill_loss(a, b).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    // A zero column counts as cosine 0.
    Tensor z = Tensor::zeros({2, 1});
    CHECK(distill_loss(z, b).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK_THROWS_AS(distill_loss(a, Tensor::zeros({1, 2})), DomainError);
}

TEST_CASE("distill loss gradients, scale invariance, axis duality and range") {
    Rng rng(2);
    for (int trial = 0; trial < 5; ++trial) {
        Tensor q = Tensor::parameter({5, 3}, random_values(rng, 15));
        Tensor t = Tensor::from({5, 3}, random_values(rng, 15));
        for (auto axis : {DistillAxis::feature_dim, DistillAxis::time}) {
            CHECK(gradcheck([&](const auto& in) { return distill_loss(in[0], t, axis); }, {q}) < 1e-6);
            const double l = distill_loss(q, t, axis).item();
            CHECK(l >= kIdentical - 1e-12);
            CHECK(l <= kNegated + 1e-12);
        }
        // Column scaling leaves every cosine unchanged.
        const double base = distill_loss(q, t).item();
        CHECK(distill_loss(ops::scale(q, 3.7), ops::scale(t, 0.2)).item() == doctest::Approx(base).epsilon(1e-12));
        CHECK(distill_loss(q, t, DistillAxis::time).item() ==
              doctest::Approx(distill_loss(ops::transpose2d(q), ops::transpose2d(t)).item()).epsilon(1e-12));
    }
}

TEST_CASE("combined loss") {
    CHECK(combined_loss(0.4, 0.6, 1, 1) == doctest::Approx(0.5));
    const double l = 0.31326168751822286;
    CHECK(combined_loss(l, l, 1, 1) == l);
    CHECK(combined_loss(0.3, 0.9, 0, 1) == 0.45);
    CHECK_THROWS_AS(combined_loss(1.0, 1.0, 0, 0), ConfigError);
    CHECK_THROWS_AS(combined_loss(1.0, 1.0, -1, 1), ConfigError);
    Tensor a = Tensor::scalar(l);
    CHECK(combined_loss(a, a, 1, 1).item() == l);
    CHECK(combined_loss(Tensor::scalar(0.4), Tensor::scalar(0.6), 0.8, 0.2).item() == doctest::Approx(0.22));
}

TEST_CASE("teacher files and layer policies") {
    TeacherDump d;
    d.modality = Modality::contextual;
    d.layers = 2;
    d.n = 1;
    d.dim = 2;
    d.values = {1, 1, 3, 3};
    auto path = tmp("dmcodec_teacher.bin");
    write_teacher(path, d);
    auto avg = load_teacher(path, Modality::contextual, LayerPolicy::average_all);
    CHECK(avg.vectors == std::vector<double>{2, 2});
    auto last = load_teacher(path, Modality::contextual, LayerPolicy::last);
    CHECK(last.vectors == std::vector<double>{3, 3});
    CHECK_THROWS_AS(load_teacher(path, Modality::contextual, LayerPolicy::ninth), ConfigError);
    CHECK_THROWS_AS(load_teacher(path, Modality::semantic, LayerPolicy::last), ConfigError);

    TeacherDump twelve;
    twelve.modality = Modality::semantic;
    twelve.layers = 12;
    twelve.n = 1;
    twelve.dim = 1;
    for (int l = 1; l <= 12; ++l) twelve.values.push_back(l);
    CHECK(select_layers(twelve, Modality::semantic, LayerPolicy::ninth).vectors == std::vector<double>{9});
    CHECK(select_layers(twelve, Modality::semantic, LayerPolicy::average_all).vectors == std::vector<double>{6.5});

    TeacherDump flat{Modality::semantic, 0, 2, 1, {4, 5}};
    CHECK(select_layers(flat, Modality::semantic, LayerPolicy::average_all).vectors == std::vector<double>{4, 5});
    CHECK_THROWS_AS(select_layers(flat, Modality::semantic, LayerPolicy::last), ConfigError);

    // A contextual dump serves cls requests with its first row.
    TeacherDump ctx{Modality::contextual, 0, 3, 2, {7, 8, 1, 1, 2, 2}};
    auto cls = select_layers(ctx, Modality::cls, LayerPolicy::average_all);
    CHECK(cls.n == 1);
    CHECK(cls.vectors == std::vector<double>{7, 8});

    // NaN payload is a data error.
    d.values = {1, NAN, 3, 3};
    write_teacher(path, d);
    CHECK_THROWS_AS(read_teacher(path), DataError);
    {
        std::ofstream f(path, std::ios::binary);
        f << "garbage";
    }
    CHECK_THROWS_AS(read_teacher(path), DataError);
    std::filesystem::remove(path);
}

TEST_CASE("align pads, truncates and repeats") {
    TeacherEmbedding e{Modality::contextual, 2, 2, {1, 2, 3, 4}};
    CHECK(align(e, 4) == std::vector<double>{1, 2, 3, 4, 0, 0, 0, 0});
    CHECK(align(e, 2) == e.vectors);
    CHECK(align(e, 1) == std::vector<double>{1, 2});
    TeacherEmbedding u{Modality::cls, 1, 2, {5, 6}};
    CHECK(align(u, 3) == std::vector<double>{5, 6, 5, 6, 5, 6});
    CHECK_THROWS_AS(align(e, 0), DomainError);
}

TEST_CASE("cls guidance with one frame equals lm guidance") {
    Rng rng(3);
    Tensor q = Tensor::from({1, 4}, random_values(rng, 4));
    std::vector<double> v = random_values(rng, 4);
    TeacherEmbedding lm{Modality::contextual, 1, 4, v};
    TeacherEmbedding cls{Modality::cls, 1, 4, v};
    CHECK(distill_loss(q, Tensor::from({1, 4}, align(cls, 1))).item() ==
          distill_loss(q, Tensor::from({1, 4}, align(lm, 1))).item());
}

TEST_CASE("synthetic teacher is deterministic and shaped per modality") {
    AudioClip clip;
    clip.samples.resize(3200);
    for (size_t i = 0; i < clip.samples.size(); ++i) clip.samples[i] = std::sin(0.05 * i) * 0.3;
    SyntheticTeacher t1(42), t2(42), t3(7);
    auto sm = t1.semantic(clip);
    CHECK(sm.layers == 4);
    CHECK(sm.n == 10);
    CHECK(sm.dim == 32);
    CHECK(sm.values == t2.semantic(clip).values);
    CHECK(sm.values != t3.semantic(clip).values);
    auto lm = t1.contextual(clip, 3);
    CHECK(lm.n == 4);
    CHECK(lm.values != sm.values);
    for (double v : lm.values) CHECK(std::isfinite(v));

    auto w = static_word_embedding({"a", "b", "a"}, 8, 1);
    CHECK(w.n == 3);
    CHECK(std::equal(w.vectors.begin(), w.vectors.begin() + 8, w.vectors.begin() + 16));
    CHECK(!std::equal(w.vectors.begin(), w.vectors.begin() + 8, w.vectors.begin() + 8));
}

TEST_CASE("distill head combines modalities and back-propagates") {
    Rng rng(4);
    std::vector<CodebookState> books;
    for (int k = 0; k < 3; ++k) {
        CodebookState b(4, 6);
        for (auto& v : b.embeddings) v = rng.normal();
        books.push_back(b);
    }
    const int64_t B = 2, T = 5;
    Tensor lat = Tensor::parameter({B * T, 6}, random_values(rng, B * T * 6));
    auto code = quantize(books, lat.values().data(), B * T, 6, 3);
    DistillConfig cfg;
    cfg.teacher_dim = 3;
    ParamStore store;
    DistillHead head(store, cfg, 6, rng);
    DistillTargets targets;
    for (int b = 0; b < B; ++b) {
        targets.lm.push_back(random_values(rng, T * 3));
        targets.sm.push_back(random_values(rng, T * 3));
    }
    auto out = head.forward(lat, code, targets, B, T);
    CHECK(out.total.item() == doctest::Approx(0.5 * (out.lm.item() + out.sm.item())));
    out.total.backward();
    double norm = 0;
    for (double g : lat.grad()) norm += g * g;
    CHECK(norm > 0.0);
    CHECK(store.contains("distill.lm_proj.weight"));

    DistillConfig off = cfg;
    off.lm_enabled = false;
    ParamStore s2;
    DistillHead sm_only(s2, off, 6, rng);
    auto o2 = sm_only.forward(lat, code, targets, B, T);
    CHECK(!o2.lm.defined());
    CHECK(o2.total.item() == o2.sm.item());

    cfg.w_lm = 0;
    cfg.w_sm = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
