#include "doctest.h"

#include "errors.hpp"
#include "eval.hpp"
#include "rng.hpp"

#include <algorithm>
#include <climits>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>

using namespace dmcodec;

namespace {

using Words = std::vector<std::string>;

Words words(const std::string& s) { return normalize_words(s); }

// Enumerates every alignment path and keeps the cheapest, preferring more
// substitutions among equal-cost paths.
AlignmentCounts brute_force_align(const Words& ref, const Words& hyp) {
    AlignmentCounts best;
    int64_t best_cost = INT64_MAX;
    std::function<void(size_t, size_t, AlignmentCounts)> walk = [&](size_t r, size_t h, AlignmentCounts k) {
        if (r == ref.size() && h == hyp.size()) {
            const int64_t cost = k.s + k.d + k.i;
            if (cost < best_cost || (cost == best_cost && k.s > best.s)) {
                best_cost = cost;
                best = k;
            }
            return;
        }
        if (r < ref.size() && h < hyp.size()) {
            AlignmentCounts x = k;
            if (ref[r] == hyp[h]) ++x.c;
            else ++x.s;
            walk(r + 1, h + 1, x);
        }
        if (r < ref.size()) {
            AlignmentCounts x = k;
            ++x.d;
            walk(r + 1, h, x);
        }
        if (h < hyp.size()) {
            AlignmentCounts x = k;
            ++x.i;
            walk(r, h + 1, x);
        }
    };
    walk(0, 0, {});
    best.n = static_cast<int64_t>(ref.size());
    best.p = static_cast<int64_t>(hyp.size());
    return best;
}

// Top-down memoized recursion over (cost, -substitutions).
AlignmentCounts memo_align(const Words& ref, const Words& hyp) {
    struct Val {
        int64_t cost = -1, s = 0, c = 0, d = 0, i = 0;
    };
    std::vector<Val> memo((ref.size() + 1) * (hyp.size() + 1));
    std::function<Val(size_t, size_t)> go = [&](size_t r, size_t h) -> Val {
        Val& m = memo[r * (hyp.size() + 1) + h];
        if (m.cost >= 0) return m;
        Val best;
        best.cost = INT64_MAX;
        auto offer = [&](Val v) {
            if (v.cost < best.cost || (v.cost == best.cost && v.s > best.s)) best = v;
        };
        if (r == ref.size() && h == hyp.size()) best = {0, 0, 0, 0, 0};
        if (r < ref.size() && h < hyp.size()) {
            Val v = go(r + 1, h + 1);
            if (ref[r] == hyp[h]) ++v.c;
            else {
                ++v.s;
                ++v.cost;
            }
            offer(v);
        }
        if (r < ref.size()) {
            Val v = go(r + 1, h);
            ++v.d;
            ++v.cost;
            offer(v);
        }
        if (h < hyp.size()) {
            Val v = go(r, h + 1);
            ++v.i;
            ++v.cost;
            offer(v);
        }
        m = best;
        return best;
    };
    const Val v = go(0, 0);
    return {static_cast<int64_t>(ref.size()), v.c, v.s, v.d, v.i, static_cast<int64_t>(hyp.size())};
}

std::vector<Words> all_sequences(int max_len) {
    std::vector<Words> out{{}};
    std::vector<Words> frontier{{}};
    for (int len = 1; len <= max_len; ++len) {
        std::vector<Words> next;
        for (const auto& w : frontier) {
            for (const char* sym : {"a", "b", "c"}) {
                Words x = w;
                x.push_back(sym);
                next.push_back(x);
            }
        }
        out.insert(out.end(), next.begin(), next.end());
        frontier = std::move(next);
    }
    return out;
}

// Direct quantile integral on the grid used by the estimator.
double quantile_integral_ratio(std::vector<double> a, std::vector<double> b, int steps) {
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    double viol = 0.0, total = 0.0;
    for (int k = 0; k < steps; ++k) {
        const double t = (k + 0.5) / steps;
        const auto ia = static_cast<size_t>(std::min<double>(a.size() - 1, std::floor(t * a.size())));
        const auto ib = static_cast<size_t>(std::min<double>(b.size() - 1, std::floor(t * b.size())));
        const double d = a[ia] - b[ib];
        total += d * d;
        if (d < 0) viol += d * d;
    }
    return viol / total;
}

} // namespace

TEST_CASE("text normalization") {
    CHECK(words("  Hello,   WORLD!  It's  fine. ") == Words{"hello", "world", "it's", "fine"});
    CHECK(words("'quoted' -- dash") == Words{"quoted", "dash"});
    CHECK(words("").empty());
}

TEST_CASE("alignment hand cases") {
    CHECK(align(words("a b c d"), words("a b c d")) == AlignmentCounts{4, 4, 0, 0, 0, 4});
    CHECK(align(words("a b c d"), words("a x c d")) == AlignmentCounts{4, 3, 1, 0, 0, 4});
    CHECK(align(words("a b"), words("a b c")) == AlignmentCounts{2, 2, 0, 0, 1, 3});
    CHECK(align(words("a b c d e"), {}) == AlignmentCounts{5, 0, 0, 5, 0, 0});
    // Equal cost 2 either way; substitutions win over a deletion plus insertion.
    CHECK(align(words("a b"), words("b a")) == AlignmentCounts{2, 0, 2, 0, 0, 2});
}

TEST_CASE("alignment matches exhaustive oracles") {
    const auto short_seqs = all_sequences(4);
    for (const auto& r : short_seqs) {
        for (const auto& h : short_seqs) REQUIRE(align(r, h) == brute_force_align(r, h));
    }
    const auto seqs = all_sequences(6);
    int64_t checked = 0;
    for (const auto& r : seqs) {
        for (const auto& h : seqs) {
            const AlignmentCounts k = align(r, h);
            REQUIRE(k == memo_align(r, h));
            REQUIRE(k.n == k.c + k.s + k.d);
            REQUIRE(k.p == k.c + k.s + k.i);
            if (k.n > 0) {
                REQUIRE(wil(k, WilVariant::paper) >= 0.0);
                REQUIRE(wil(k, WilVariant::paper) <= wer(k));
            }
            ++checked;
        }
    }
    CHECK(checked == 1093 * 1093);
}

TEST_CASE("wer and wil formulas") {
    const AlignmentCounts perfect{4, 4, 0, 0, 0, 4};
    CHECK(wer(perfect) == 0.0);
    CHECK(wil(perfect, WilVariant::paper) == 0.0);
    CHECK(wil(perfect, WilVariant::standard) == 0.0);
    const AlignmentCounts one_sub{4, 3, 1, 0, 0, 4};
    CHECK(wer(one_sub) == 0.25);
    CHECK(wil(one_sub, WilVariant::paper) == 0.25);
    CHECK(wil(one_sub, WilVariant::standard) == doctest::Approx(0.4375).epsilon(1e-15));
    const AlignmentCounts deleted{5, 0, 0, 5, 0, 0};
    CHECK(wer(deleted) == 1.0);
    CHECK(wil(deleted, WilVariant::paper) == 1.0);
    CHECK(wil(deleted, WilVariant::standard) == 1.0);
    CHECK_THROWS_AS(wer(AlignmentCounts{}), DomainError);
    CHECK_THROWS_AS(wil(AlignmentCounts{}, WilVariant::paper), DomainError);
    CHECK_THROWS_AS(parse_wil_variant("other"), ConfigError);
}

TEST_CASE("transcript files give corpus-level counts") {
    const auto path = std::filesystem::temp_directory_path() / "dmcodec_test_pairs.tsv";
    {
        std::ofstream f(path);
        f << "u1\tThe cat sat.\tthe cat sat\n";
        f << "u2\ta b c d\ta x c d\n";
    }
    const auto pairs = read_transcript_pairs(path);
    REQUIRE(pairs.size() == 2);
    const AlignmentCounts k = corpus_counts(pairs);
    CHECK(k == AlignmentCounts{7, 6, 1, 0, 0, 7});
    CHECK(wer(k) == doctest::Approx(1.0 / 7.0));
    {
        std::ofstream f(path);
        f << "u1 only one field\n";
    }
    CHECK_THROWS_AS(read_transcript_pairs(path), DataError);
}

TEST_CASE("ASO: strict separation is dominant") {
    Rng rng(11);
    std::vector<double> a, b;
    for (int i = 0; i < 50; ++i) {
        a.push_back(10.0 + rng.uniform());
        b.push_back(rng.uniform());
    }
    AsoOptions o;
    o.n_bootstrap = 200;
    const AsoResult r = aso(a, b, o);
    CHECK(r.epsilon == 0.0);
    CHECK(r.label == AsoLabel::dominant);
    const AsoResult back = aso(b, a, o);
    CHECK(back.epsilon == 1.0);
    CHECK(back.label == AsoLabel::not_significant);
    // Lower-is-better flips the orientation.
    o.higher_is_better = false;
    CHECK(aso(b, a, o).label == AsoLabel::dominant);
}

TEST_CASE("ASO: self comparison is not significant") {
    Rng rng(12);
    std::vector<double> a;
    for (int i = 0; i < 200; ++i) a.push_back(rng.normal());
    const AsoResult r = aso(a, a, AsoOptions{});
    CHECK(r.epsilon >= 0.4);
    CHECK(r.epsilon <= 0.6);
    CHECK(r.label == AsoLabel::not_significant);
}

TEST_CASE("ASO: mostly better sample matches the quantile integral") {
    // A exceeds B by 1 on 90% of the quantiles and trails by 0.5 on the rest.
    std::vector<double> a, b;
    for (int i = 0; i < 200; ++i) {
        b.push_back(i * 0.01);
        a.push_back(i < 20 ? i * 0.01 - 0.5 : i * 0.01 + 1.0);
    }
    const double expected = quantile_integral_ratio(a, b, 200);
    CHECK(expected == doctest::Approx(20 * 0.25 / (20 * 0.25 + 180 * 1.0)));
    CHECK(violation_ratio(a, b, 0.005) == doctest::Approx(expected).epsilon(1e-12));
    const AsoResult r = aso(a, b, AsoOptions{});
    CHECK(r.violation_ratio == doctest::Approx(expected).epsilon(1e-12));
    CHECK(r.epsilon < 0.5);
    CHECK(r.label == AsoLabel::significantly_better);
}

TEST_CASE("ASO: swapped comparisons are complementary") {
    Rng rng(13);
    for (int trial = 0; trial < 5; ++trial) {
        std::vector<double> a, b;
        const double shift = 0.1 * trial;
        for (int i = 0; i < 120; ++i) {
            a.push_back(rng.normal() + shift);
            b.push_back(1.3 * rng.normal());
        }
        AsoOptions o;
        o.n_bootstrap = 300;
        o.seed = 100 + trial;
        const AsoResult ab = aso(a, b, o), ba = aso(b, a, o);
        CHECK(ab.violation_ratio + ba.violation_ratio == doctest::Approx(1.0).epsilon(1e-12));
        // Each side carries an upper correction of z * std.
        const double noise = 1.645 * (ab.bootstrap_std + ba.bootstrap_std) + 1e-9;
        CHECK(std::abs(ab.epsilon + ba.epsilon - 1.0) <= noise);
    }
}

TEST_CASE("ASO: errors and determinism") {
    CHECK_THROWS_AS(aso({1.0}, {2.0}, AsoOptions{}), DomainError);
    CHECK_THROWS_AS(aso({1.0, 2.0}, {1.0, 2.0, 3.0}, AsoOptions{}), DomainError);
    AsoOptions bad;
    bad.alpha = 1.5;
    CHECK_THROWS_AS(aso({1.0, 2.0}, {1.0, 2.0}, bad), ConfigError);
    const std::vector<double> a{0.1, 0.5, 0.3, 0.9, 0.2}, b{0.2, 0.4, 0.35, 0.7, 0.1};
    CHECK(aso(a, b, AsoOptions{}).epsilon == aso(a, b, AsoOptions{}).epsilon);
}

TEST_CASE("dominance matrix from score files") {
    const auto dir = std::filesystem::temp_directory_path() / "dmcodec_test_scores";
    std::filesystem::create_directories(dir);
    Rng rng(14);
    std::map<std::string, std::vector<double>> raw;
    for (const char* sys : {"good", "bad", "bad_copy"}) {
        std::ofstream f(dir / (std::string(sys) + ".csv"));
        f.precision(17);
        f << "utterance_id,score\n";
        for (int i = 0; i < 60; ++i) {
            const double v = std::string(sys) == "good" ? 5.0 + rng.uniform() : (i % 7) * 0.1;
            raw[sys].push_back(v);
            f << "utt" << i << ',' << v << '\n';
        }
    }
    std::map<std::string, std::filesystem::path> files;
    for (const auto& [name, _] : raw) files[name] = dir / (name + ".csv");
    AsoOptions o;
    o.n_bootstrap = 200;
    const DominanceTable t = dominance_matrix(files, "score", o);
    REQUIRE(t.systems == std::vector<std::string>{"bad", "bad_copy", "good"});
    for (size_t r = 0; r < 3; ++r) {
        const auto& v = raw[t.systems[r]];
        double mean = 0.0;
        for (double x : v) mean += x;
        mean /= v.size();
        double var = 0.0;
        for (double x : v) var += (x - mean) * (x - mean);
        CHECK(t.means[r] == doctest::Approx(mean).epsilon(1e-12));
        CHECK(t.stds[r] == doctest::Approx(std::sqrt(var / v.size())).epsilon(1e-12));
    }
    CHECK(t.results[0][1].label == AsoLabel::not_significant);
    CHECK(t.results[1][0].label == AsoLabel::not_significant);
    CHECK(t.results[2][0].label == AsoLabel::dominant);
    CHECK(t.results[0][2].label == AsoLabel::not_significant);
    const std::string tsv = t.to_tsv();
    CHECK(tsv.rfind("system\tmean\tstd\tbad\tbad_copy\tgood\n", 0) == 0);
    CHECK(tsv.find("good\t5.") != std::string::npos);
    CHECK(t.report().find("✓") != std::string::npos);

    {
        std::ofstream f(dir / "short.csv");
        f << "utt0,1\nutt1,2\n";
    }
    files["short"] = dir / "short.csv";
    CHECK_THROWS_AS(dominance_matrix(files, "score", o), DataError);
    {
        std::ofstream f(dir / "broken.csv");
        f << "utt0,1\nutt1,abc\n";
    }
    CHECK_THROWS_AS(read_scores(dir / "broken.csv"), DataError);
}
