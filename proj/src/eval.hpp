#pragma once

// Transcription error rates and almost-stochastic-order significance tests.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace dmcodec {

struct AlignmentCounts {
    int64_t n = 0; // reference words
    int64_t c = 0;
    int64_t s = 0;
    int64_t d = 0;
    int64_t i = 0;
    int64_t p = 0; // hypothesis words

    AlignmentCounts& operator+=(const AlignmentCounts& o);
    bool operator==(const AlignmentCounts&) const = default;
};

// Lowercase, drop punctuation other than in-word apostrophes, split on
// whitespace.
std::vector<std::string> normalize_words(const std::string& text);

// Unit-cost edit alignment. Among minimum-cost alignments the one with the
// most substitutions wins, which fixes every count.
AlignmentCounts align(const std::vector<std::string>& ref, const std::vector<std::string>& hyp);
AlignmentCounts align_text(const std::string& ref, const std::string& hyp);

double wer(const AlignmentCounts& counts);

enum class WilVariant { paper, standard };
WilVariant parse_wil_variant(const std::string& s);
// paper: (S + D) / N; standard: 1 - (C / N)(C / P).
double wil(const AlignmentCounts& counts, WilVariant variant);

struct TranscriptPair {
    std::string id, ref, hyp;
};
// TSV lines: utterance_id, reference, hypothesis.
std::vector<TranscriptPair> read_transcript_pairs(const std::filesystem::path& path);
AlignmentCounts corpus_counts(const std::vector<TranscriptPair>& pairs);

enum class AsoLabel { dominant, significantly_better, not_significant };
std::string to_string(AsoLabel label);

struct AsoOptions {
    double alpha = 0.05;
    int n_bootstrap = 1000;
    uint64_t seed = 42;
    bool higher_is_better = true;
    // Quantile grid spacing for the inverse-CDF integrals.
    double dt = 0.005;
};

struct AsoResult {
    double violation_ratio = 0.0; // on the observed samples
    double bootstrap_std = 0.0;
    double epsilon = 0.0;         // upper-corrected, clipped to [0, 1]
    AsoLabel label = AsoLabel::not_significant;
};

// Share of the squared quantile gap where A falls below B; 0.5 when the two
// quantile functions coincide.
double violation_ratio(std::vector<double> a, std::vector<double> b, double dt);

// Tests whether A is stochastically better than B. Scores are paired per
// utterance and resampled together.
AsoResult aso(const std::vector<double>& a, const std::vector<double>& b, const AsoOptions& opts);

// CSV lines utterance_id,score; a non-numeric first line is taken as a header.
std::map<std::string, double> read_scores(const std::filesystem::path& path);

struct DominanceTable {
    std::string metric;
    std::vector<std::string> systems;
    std::vector<double> means, stds; // population std
    // results[r][c]: row system compared against column system; diagonal unused.
    std::vector<std::vector<AsoResult>> results;

    std::string to_tsv() const;
    std::string report() const;
};

DominanceTable dominance_matrix(const std::map<std::string, std::map<std::string, double>>& systems,
                                const std::string& metric, const AsoOptions& opts);
DominanceTable dominance_matrix(const std::map<std::string, std::filesystem::path>& files, const std::string& metric,
                                const AsoOptions& opts);

} // namespace dmcodec
