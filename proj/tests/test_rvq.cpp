#include "doctest.h"

#include "errors.hpp"
#include "gradcheck.hpp"
#include "rvq.hpp"

#include <cmath>
#include <filesystem>

using namespace dmcodec;

namespace {

CodebookState book_from(std::vector<std::vector<double>> rows) {
    CodebookState b(static_cast<int>(rows.size()), static_cast<int>(rows[0].size()));
    for (size_t j = 0; j < rows.size(); ++j) {
        for (size_t d = 0; d < rows[j].size(); ++d) b.embeddings[j * rows[j].size() + d] = rows[j][d];
    }
    b.embed_sum = b.embeddings;
    b.cluster_size.assign(rows.size(), 1.0);
    b.initialized = true;
    return b;
}

// Brute-force oracle: nearest entry by explicit distances, then subtract.
std::vector<int> brute_indices(const std::vector<CodebookState>& books, std::vector<double> x, int active) {
    std::vector<int> out;
    const int dim = books[0].dim;
    for (int k = 0; k < active; ++k) {
        int best = 0;
        double best_d = INFINITY;
        for (int j = 0; j < books[k].codebook_size; ++j) {
            double d = 0;
            for (int i = 0; i < dim; ++i) d += std::pow(x[i] - books[k].entry(j)[i], 2);
            if (d < best_d) {
                best_d = d;
                best = j;
            }
        }
        out.push_back(best);
        for (int i = 0; i < dim; ++i) x[i] -= books[k].entry(best)[i];
    }
    return out;
}

} // namespace

TEST_CASE("two-layer worked example") {
    std::vector<CodebookState> books{book_from({{0, 0}, {1, 1}}), book_from({{0, 0}, {0.25, 0.25}})};
    std::vector<double> x{1.2, 1.2};
    auto code = quantize(books, x.data(), 1, 2, 2);
    CHECK(code.index(0, 0) == 1);
    CHECK(code.index(1, 0) == 1);
    CHECK(code.reconstruction() == std::vector<double>{1.25, 1.25});
    CHECK(brute_indices(books, x, 2) == std::vector<int>{1, 1});
}

TEST_CASE("exact codeword input and tie-break") {
    std::vector<CodebookState> books{book_from({{3, -1}, {1, 1}}), book_from({{0.5, 0.5}, {0, 0}}),
                                     book_from({{0, 0}, {2, 2}})};
    std::vector<double> x{1, 1};
    auto code = quantize(books, x.data(), 1, 2, 3);
    CHECK(code.index(0, 0) == 1);
    CHECK(code.index(1, 0) == 1);
    CHECK(code.index(2, 0) == 0);
    CHECK(code.reconstruction() == x);

    std::vector<CodebookState> tie{book_from({{0, 0}, {1, 1}})};
    std::vector<double> mid{0.5, 0.5};
    CHECK(quantize(tie, mid.data(), 1, 2, 1).index(0, 0) == 0);
    CHECK(nearest_entry(tie[0], mid.data()) == 0);
}

TEST_CASE("quantize properties on random books") {
    Rng rng(11);
    const int dim = 4, cb = 16, layers = 4;
    std::vector<CodebookState> books;
    for (int k = 0; k < layers; ++k) {
        CodebookState b(cb, dim);
        for (auto& v : b.embeddings) v = rng.normal() / (k + 1);
        books.push_back(b);
    }
    const int64_t n = 20;
    auto x = dmcodec::testing::random_values(rng, n * dim);
    auto full = quantize(books, x.data(), n, dim, layers);

    for (int64_t t = 0; t < n; ++t) {
        std::vector<double> frame(x.begin() + t * dim, x.begin() + (t + 1) * dim);
        auto want = brute_indices(books, frame, layers);
        for (int k = 0; k < layers; ++k) CHECK(full.index(k, t) == want[k]);
    }

    // Each layer leaves the smallest residual any entry of its book could.
    for (int a = 1; a <= layers; ++a) {
        auto code = quantize(books, x.data(), n, dim, a);
        auto rec = code.reconstruction();
        for (int64_t t = 0; t < n; ++t) {
            const double* r = code.residuals.data() + (a - 1) * n * dim + t * dim;
            double chosen = 0;
            for (int d = 0; d < dim; ++d) {
                const double diff = r[d] - books[a - 1].entry(code.index(a - 1, t))[d];
                chosen += diff * diff;
            }
            for (int j = 0; j < cb; ++j) {
                double other = 0;
                for (int d = 0; d < dim; ++d) other += (r[d] - books[a - 1].entry(j)[d]) * (r[d] - books[a - 1].entry(j)[d]);
                CHECK(chosen <= other);
            }
        }
        // Reconstruction is exactly the sum of the selected entries.
        for (int64_t t = 0; t < n; ++t) {
            for (int d = 0; d < dim; ++d) {
                double s = 0;
                for (int k = 0; k < a; ++k) s += books[k].entry(code.index(k, t))[d];
                CHECK(rec[t * dim + d] == s);
            }
        }
    }

    // Frame order does not matter.
    std::vector<double> rev(x.size());
    for (int64_t t = 0; t < n; ++t) std::copy(x.begin() + t * dim, x.begin() + (t + 1) * dim, rev.begin() + (n - 1 - t) * dim);
    auto code_rev = quantize(books, rev.data(), n, dim, layers);
    for (int k = 0; k < layers; ++k) {
        for (int64_t t = 0; t < n; ++t) CHECK(code_rev.index(k, n - 1 - t) == full.index(k, t));
    }

    x[3] = NAN;
    CHECK_THROWS_AS(quantize(books, x.data(), n, dim, layers), DomainError);
    CHECK_THROWS_AS(quantize(books, rev.data(), n, dim, 0), ConfigError);
    CHECK_THROWS_AS(quantize(books, rev.data(), n, dim, 5), ConfigError);
}

TEST_CASE("residual energy can grow when no entry is near the residual") {
    std::vector<CodebookState> books{book_from({{3, 0}})};
    std::vector<double> x{1, 0};
    auto code = quantize(books, x.data(), 1, 2, 1);
    const auto rec = code.reconstruction();
    CHECK((x[0] - rec[0]) * (x[0] - rec[0]) + (x[1] - rec[1]) * (x[1] - rec[1]) == 4.0);
}

TEST_CASE("ema update arithmetic") {
    Rng rng(1);
    auto b = book_from({{1, 0}, {5, 5}});
    b.cluster_size = {1.0, 5.0};
    b.embed_sum = {1, 0, 25, 25};
    std::vector<double> batch{1, 0, 3, 0};
    std::vector<int32_t> assign{0, 0};
    ema_update(b, batch.data(), assign.data(), 2, rng);
    CHECK(b.cluster_size[0] == doctest::Approx(1.01).epsilon(1e-12));
    CHECK(b.embed_sum[0] == doctest::Approx(1.03).epsilon(1e-12));
    CHECK(b.embed_sum[1] == 0.0);
    CHECK(b.embeddings[0] == doctest::Approx(1.03 / 1.01).epsilon(1e-12));
    CHECK(b.embeddings[0] == doctest::Approx(1.0198).epsilon(1e-4));
    // Unassigned live entry: cluster size and sum decay, embedding unchanged.
    CHECK(b.cluster_size[1] == doctest::Approx(4.95));
    CHECK(b.embeddings[2] == doctest::Approx(5.0));

    // Empty batch is a no-op.
    auto before = b.embeddings;
    ema_update(b, batch.data(), assign.data(), 0, rng);
    CHECK(b.embeddings == before);
}

TEST_CASE("ema converges to a constant batch and re-seeds dead entries") {
    Rng rng(2);
    auto b = book_from({{0, 0}, {10, 10}, {-4, 2}});
    b.cluster_size = {1.0, 1.0, 1.0};
    std::vector<double> batch(8 * 2);
    for (int i = 0; i < 8; ++i) {
        batch[2 * i] = 0.7;
        batch[2 * i + 1] = -0.3;
    }
    std::vector<int32_t> assign(8, 0);
    int steps = 0;
    for (; steps < 1000; ++steps) {
        ema_update(b, batch.data(), assign.data(), 8, rng);
        if (std::abs(b.embeddings[0] - 0.7) < 1e-3 && std::abs(b.embeddings[1] + 0.3) < 1e-3) break;
    }
    CHECK(steps < 1000);
    // Entries 1 and 2 fell below the threshold and were replaced by batch vectors.
    CHECK(b.embeddings[2] == 0.7);
    CHECK(b.embeddings[5] == -0.3);

    // With a zero threshold nothing is replaced.
    auto c = book_from({{0, 0}, {10, 10}});
    c.dead_threshold = 0.0;
    ema_update(c, batch.data(), assign.data(), 8, rng);
    CHECK(c.embeddings[2] == doctest::Approx(10.0));
}

TEST_CASE("commitment loss and straight-through gradients") {
    std::vector<CodebookState> one{book_from({{0, 0}, {5, 5}})};
    Tensor lat = Tensor::parameter({1, 2}, {1, 1});
    auto code = quantize(one, lat.values().data(), 1, 2, 1);
    CHECK(commitment_loss(lat, code).item() == doctest::Approx(2.0));

    std::vector<CodebookState> exact{book_from({{1, 1}})};
    auto code0 = quantize(exact, lat.values().data(), 1, 2, 1);
    CHECK(commitment_loss(lat, code0).item() == 0.0);

    Rng rng(3);
    std::vector<CodebookState> books;
    for (int k = 0; k < 3; ++k) {
        CodebookState b(8, 3);
        for (auto& v : b.embeddings) v = rng.normal();
        books.push_back(b);
    }
    Tensor x = dmcodec::testing::random_param(rng, {5, 3});
    auto c = quantize(books, x.values().data(), 5, 3, 3);
    CHECK(commitment_loss(x, c).item() >= 0.0);
    // Codes are held fixed while perturbing, so the loss is smooth in x.
    CHECK(dmcodec::testing::gradcheck(
              [&](const auto& in) {
                  QuantizedCode cc = c;
                  const size_t len = 15;
                  for (int k = 0; k < 3; ++k) {
                      std::vector<double> r(in[0].values());
                      for (int j = 0; j < k; ++j) {
                          for (size_t i = 0; i < len; ++i) r[i] -= c.per_layer[j * len + i];
                      }
                      std::copy(r.begin(), r.end(), cc.residuals.begin() + k * len);
                  }
                  return commitment_loss(in[0], cc);
              },
              {x}) < 1e-6);

    Tensor st = quantized_straight_through(x, c);
    CHECK(st.values() == c.reconstruction());
    x.zero_grad();
    dmcodec::testing::project(st).backward();
    Tensor x2 = Tensor::parameter({5, 3}, x.values());
    dmcodec::testing::project(x2).backward();
    for (int i = 0; i < 15; ++i) CHECK(x.grad()[i] == doctest::Approx(x2.grad()[i]));

    Tensor l1 = layer_straight_through(x, c, 1);
    CHECK(l1.values() == c.layer(1));
}

TEST_CASE("rvq training path initializes books from the batch") {
    ResidualVQ rvq(3, 4, 2);
    Rng rng(9);
    std::vector<double> frames{0, 0, 1, 1, 2, 2, 3, 3, -1, 0};
    auto code = rvq.quantize_for_training(frames, 5, 3, rng);
    CHECK(rvq.initialized());
    CHECK(code.n_active == 3);
    // Every layer-0 entry is one of the batch vectors.
    for (int j = 0; j < 4; ++j) {
        bool found = false;
        for (int t = 0; t < 5; ++t) {
            found |= rvq.books()[0].entry(j)[0] == frames[2 * t] && rvq.books()[0].entry(j)[1] == frames[2 * t + 1];
        }
        CHECK(found);
    }
    rvq.update(code, rng);
    for (const auto& b : rvq.books()) {
        for (double c : b.cluster_size) CHECK(c >= 0.0);
    }
}

TEST_CASE("bitrate table") {
    CodecConfig cfg;
    CHECK(bitrate_kbps(cfg, 6) == doctest::Approx(3.0));
    CHECK(bitrate_kbps(cfg, 3) == doctest::Approx(1.5));
    // One layer carries 10 bits per 50 Hz frame.
    CHECK(bitrate_kbps(cfg, 1) == 0.5);
    CHECK(bitrate_kbps(cfg, 8) == doctest::Approx(4.0));
    cfg.codebook_size = 1000;
    CHECK_THROWS_AS(bitrate_kbps(cfg, 1), ConfigError);
}

TEST_CASE("code file layout") {
    QuantizedCode code;
    code.n_active = 2;
    code.n_frames = 3;
    code.indices = {1, 2, 3, 1023, 256, 0};
    auto bytes = serialize_codes(code, 1024);
    REQUIRE(bytes.size() == 16u + 12u);
    CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "DMCQ");
    CHECK(bytes[4] == 2);
    CHECK(bytes[8] == 3);
    CHECK(bytes[12] == 0x00);
    CHECK(bytes[13] == 0x04);
    CHECK(bytes[22] == 0xff);
    CHECK(bytes[23] == 0x03);
    CHECK(bytes[24] == 0x00);
    CHECK(bytes[25] == 0x01);
    auto path = std::filesystem::temp_directory_path() / "dmcodec_codes.bin";
    write_codes(path, code, 1024);
    auto back = read_codes(path);
    CHECK(back.n_layers == 2);
    CHECK(back.n_frames == 3);
    CHECK(back.codebook_size == 1024);
    CHECK(back.indices == code.indices);
    std::filesystem::remove(path);
}
