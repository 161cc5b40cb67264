#include "eval.hpp"

#include "errors.hpp"
#include "rng.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace dmcodec {

AlignmentCounts& AlignmentCounts::operator+=(const AlignmentCounts& o) {
    n += o.n;
    c += o.c;
    s += o.s;
    d += o.d;
    i += o.i;
    p += o.p;
    return *this;
}

std::vector<std::string> normalize_words(const std::string& text) {
    std::vector<std::string> words;
    std::string cur;
    auto flush = [&] {
        while (!cur.empty() && cur.back() == '\'') cur.pop_back();
        size_t lead = 0;
        while (lead < cur.size() && cur[lead] == '\'') ++lead;
        if (lead < cur.size()) words.push_back(cur.substr(lead));
        cur.clear();
    };
    for (unsigned char ch : text) {
        if (std::isspace(ch)) flush();
        else if (std::isalnum(ch)) cur.push_back(static_cast<char>(std::tolower(ch)));
        else if (ch == '\'') cur.push_back('\'');
        else if (ch >= 0x80) cur.push_back(static_cast<char>(ch)); // keep non-ASCII letters as-is
    }
    flush();
    return words;
}

AlignmentCounts align(const std::vector<std::string>& ref, const std::vector<std::string>& hyp) {
    const size_t n = ref.size(), m = hyp.size();
    // Cell score: (cost, -substitutions), compared lexicographically.
    struct Cell {
        int64_t cost, subs, c, d, i;
    };
    auto better = [](const Cell& a, const Cell& b) { return a.cost < b.cost || (a.cost == b.cost && a.subs > b.subs); };
    std::vector<Cell> dp((n + 1) * (m + 1));
    auto at = [&](size_t r, size_t h) -> Cell& { return dp[r * (m + 1) + h]; };
    for (size_t r = 0; r <= n; ++r) {
        for (size_t h = 0; h <= m; ++h) {
            if (r == 0 && h == 0) {
                at(r, h) = {0, 0, 0, 0, 0};
                continue;
            }
            Cell best{INT64_MAX, 0, 0, 0, 0};
            if (r > 0 && h > 0) {
                Cell x = at(r - 1, h - 1);
                if (ref[r - 1] == hyp[h - 1]) ++x.c;
                else {
                    ++x.cost;
                    ++x.subs;
                }
                best = x;
            }
            if (r > 0) {
                Cell x = at(r - 1, h);
                ++x.cost;
                ++x.d;
                if (better(x, best)) best = x;
            }
            if (h > 0) {
                Cell x = at(r, h - 1);
                ++x.cost;
                ++x.i;
                if (better(x, best)) best = x;
            }
            at(r, h) = best;
        }
    }
    const Cell& e = at(n, m);
    return {static_cast<int64_t>(n), e.c, e.subs, e.d, e.i, static_cast<int64_t>(m)};
}

AlignmentCounts align_text(const std::string& ref, const std::string& hyp) {
    return align(normalize_words(ref), normalize_words(hyp));
}

double wer(const AlignmentCounts& k) {
    if (k.n == 0) throw DomainError("WER is undefined for an empty reference");
    return static_cast<double>(k.s + k.d + k.i) / static_cast<double>(k.n);
}

WilVariant parse_wil_variant(const std::string& s) {
    if (s == "paper") return WilVariant::paper;
    if (s == "standard") return WilVariant::standard;
    throw ConfigError("WIL variant must be paper or standard, got '" + s + "'");
}

double wil(const AlignmentCounts& k, WilVariant variant) {
    if (k.n == 0) throw DomainError("WIL is undefined for an empty reference");
    if (variant == WilVariant::paper) return static_cast<double>(k.s + k.d) / static_cast<double>(k.n);
    if (k.p == 0) return 1.0; // nothing recognized
    const double cn = static_cast<double>(k.c) / static_cast<double>(k.n);
    const double cp = static_cast<double>(k.c) / static_cast<double>(k.p);
    return 1.0 - cn * cp;
}

std::vector<TranscriptPair> read_transcript_pairs(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open transcript file " + path.string());
    std::vector<TranscriptPair> out;
    int line_no = 0;
    for (std::string line; std::getline(in, line);) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const auto t1 = line.find('\t');
        const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
        if (t2 == std::string::npos) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected id<TAB>ref<TAB>hyp");
        }
        out.push_back({line.substr(0, t1), line.substr(t1 + 1, t2 - t1 - 1), line.substr(t2 + 1)});
    }
    if (out.empty()) throw DataError(path.string() + ": no transcript pairs");
    return out;
}

AlignmentCounts corpus_counts(const std::vector<TranscriptPair>& pairs) {
    AlignmentCounts total;
    for (const auto& p : pairs) total += align_text(p.ref, p.hyp);
    return total;
}

std::string to_string(AsoLabel label) {
    switch (label) {
    case AsoLabel::dominant: return "dominant";
    case AsoLabel::significantly_better: return "significantly_better";
    case AsoLabel::not_significant: return "not_significant";
    }
    return "?";
}

namespace {

// Inverse empirical CDF of sorted values at t in (0, 1).
double quantile(const std::vector<double>& sorted, double t) {
    const auto n = static_cast<int64_t>(sorted.size());
    int64_t idx = static_cast<int64_t>(std::ceil(t * static_cast<double>(n))) - 1;
    idx = std::clamp<int64_t>(idx, 0, n - 1);
    return sorted[static_cast<size_t>(idx)];
}

double ratio_sorted(const std::vector<double>& a, const std::vector<double>& b, double dt) {
    const int steps = static_cast<int>(std::lround(1.0 / dt));
    double viol = 0.0, total = 0.0;
    for (int k = 0; k < steps; ++k) {
        const double t = (k + 0.5) / steps;
        const double diff = quantile(a, t) - quantile(b, t);
        const double sq = diff * diff;
        total += sq;
        if (diff < 0.0) viol += sq;
    }
    return total == 0.0 ? 0.5 : viol / total;
}

// Standard normal quantile by bisection on erfc; only needed once per call.
double normal_quantile(double p) {
    double lo = -10.0, hi = 10.0;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (0.5 * std::erfc(-mid / std::sqrt(2.0)) < p) lo = mid;
        else hi = mid;
    }
    return 0.5 * (lo + hi);
}

} // namespace

double violation_ratio(std::vector<double> a, std::vector<double> b, double dt) {
    if (a.empty() || b.empty()) throw DomainError("violation_ratio needs non-empty samples");
    if (!(dt > 0.0 && dt < 1.0)) throw ConfigError("quantile grid spacing must be in (0, 1)");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    return ratio_sorted(a, b, dt);
}

AsoResult aso(const std::vector<double>& a_in, const std::vector<double>& b_in, const AsoOptions& opts) {
    if (a_in.size() < 2 || b_in.size() < 2) throw DomainError("ASO needs at least two scores per system");
    if (a_in.size() != b_in.size()) throw DomainError("ASO scores must be paired per utterance");
    if (!(opts.alpha > 0.0 && opts.alpha < 1.0)) throw ConfigError("alpha must be in (0, 1)");
    if (opts.n_bootstrap < 2) throw ConfigError("ASO needs at least two bootstrap samples");
    for (double v : a_in) {
        if (!std::isfinite(v)) throw DataError("non-finite score");
    }
    for (double v : b_in) {
        if (!std::isfinite(v)) throw DataError("non-finite score");
    }
    const double sign = opts.higher_is_better ? 1.0 : -1.0;
    std::vector<double> a(a_in.size()), b(b_in.size());
    for (size_t i = 0; i < a.size(); ++i) {
        a[i] = sign * a_in[i];
        b[i] = sign * b_in[i];
    }

    AsoResult res;
    res.violation_ratio = violation_ratio(a, b, opts.dt);

    Rng rng = Rng::derive({opts.seed, 0xA50ULL});
    const size_t n = a.size();
    std::vector<double> ra(n), rb(n), boot;
    boot.reserve(static_cast<size_t>(opts.n_bootstrap));
    for (int r = 0; r < opts.n_bootstrap; ++r) {
        for (size_t i = 0; i < n; ++i) {
            const size_t j = rng.below(n);
            ra[i] = a[j];
            rb[i] = b[j];
        }
        std::sort(ra.begin(), ra.end());
        std::sort(rb.begin(), rb.end());
        boot.push_back(ratio_sorted(ra, rb, opts.dt));
    }
    const double mean = std::accumulate(boot.begin(), boot.end(), 0.0) / static_cast<double>(boot.size());
    double var = 0.0;
    for (double v : boot) var += (v - mean) * (v - mean);
    res.bootstrap_std = std::sqrt(var / static_cast<double>(boot.size() - 1));
    // The sqrt(nm/(n+m)) scaling of the bootstrap deviations cancels against
    // the sqrt((n+m)/nm) factor of the bound.
    res.epsilon =
        std::clamp(res.violation_ratio + normal_quantile(1.0 - opts.alpha) * res.bootstrap_std, 0.0, 1.0);
    if (res.epsilon == 0.0) res.label = AsoLabel::dominant;
    else if (res.epsilon < 0.5) res.label = AsoLabel::significantly_better;
    else res.label = AsoLabel::not_significant;
    return res;
}

std::map<std::string, double> read_scores(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open score file " + path.string());
    std::map<std::string, double> out;
    int line_no = 0;
    for (std::string line; std::getline(in, line);) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const auto comma = line.rfind(',');
        if (comma == std::string::npos) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected utterance_id,score");
        }
        const std::string id = line.substr(0, comma), value = line.substr(comma + 1);
        double v = 0.0;
        try {
            size_t used = 0;
            v = std::stod(value, &used);
            if (used != value.size()) throw std::invalid_argument(value);
        } catch (const std::logic_error&) {
            if (out.empty() && line_no == 1) continue; // header
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": bad score '" + value + "'");
        }
        if (!out.emplace(id, v).second) {
            throw DataError(path.string() + ": duplicate utterance id '" + id + "'");
        }
    }
    if (out.size() < 2) throw DataError(path.string() + ": need at least two scores");
    return out;
}

DominanceTable dominance_matrix(const std::map<std::string, std::map<std::string, double>>& systems,
                                const std::string& metric, const AsoOptions& opts) {
    if (systems.size() < 2) throw DomainError("dominance_matrix needs at least two systems");
    DominanceTable t;
    t.metric = metric;
    const auto& first = systems.begin()->second;
    std::map<std::string, std::vector<double>> aligned;
    for (const auto& [name, scores] : systems) {
        if (scores.size() != first.size()) throw DataError("system '" + name + "' scores a different utterance set");
        std::vector<double> v;
        for (const auto& [id, _] : first) {
            const auto it = scores.find(id);
            if (it == scores.end()) throw DataError("system '" + name + "' has no score for '" + id + "'");
            v.push_back(it->second);
        }
        const double n = static_cast<double>(v.size());
        const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
        double var = 0.0;
        for (double x : v) var += (x - mean) * (x - mean);
        t.systems.push_back(name);
        t.means.push_back(mean);
        t.stds.push_back(std::sqrt(var / n));
        aligned[name] = std::move(v);
    }
    const size_t k = t.systems.size();
    t.results.assign(k, std::vector<AsoResult>(k));
    for (size_t r = 0; r < k; ++r) {
        for (size_t c = 0; c < k; ++c) {
            if (r != c) t.results[r][c] = aso(aligned[t.systems[r]], aligned[t.systems[c]], opts);
        }
    }
    return t;
}

DominanceTable dominance_matrix(const std::map<std::string, std::filesystem::path>& files, const std::string& metric,
                                const AsoOptions& opts) {
    std::map<std::string, std::map<std::string, double>> systems;
    for (const auto& [name, path] : files) systems[name] = read_scores(path);
    return dominance_matrix(systems, metric, opts);
}

namespace {

std::string fmt(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
    return buf;
}

} // namespace

std::string DominanceTable::to_tsv() const {
    std::ostringstream o;
    o << "system\tmean\tstd";
    for (const auto& s : systems) o << '\t' << s;
    o << '\n';
    for (size_t r = 0; r < systems.size(); ++r) {
        o << systems[r] << '\t' << fmt(means[r], 6) << '\t' << fmt(stds[r], 6);
        for (size_t c = 0; c < systems.size(); ++c) {
            o << '\t';
            if (r == c) o << '-';
            else o << to_string(results[r][c].label) << ':' << fmt(results[r][c].epsilon, 4);
        }
        o << '\n';
    }
    return o.str();
}

std::string DominanceTable::report() const {
    std::ostringstream o;
    o << "Metric: " << metric << " (row vs. column; ✓ significant, ✗ not)\n";
    size_t w = 6;
    for (const auto& s : systems) w = std::max(w, s.size());
    auto pad = [&](const std::string& s) { return s + std::string(w + 2 - std::min(w + 1, s.size()), ' '); };
    o << pad("") << pad("mean") << pad("std");
    for (const auto& s : systems) o << pad(s);
    o << '\n';
    for (size_t r = 0; r < systems.size(); ++r) {
        o << pad(systems[r]) << pad(fmt(means[r], 3)) << pad(fmt(stds[r], 3));
        for (size_t c = 0; c < systems.size(); ++c) {
            std::string cell = "-";
            if (r != c) {
                const auto& res = results[r][c];
                // The check mark is multi-byte; pad as if it were one column.
                cell = (res.label == AsoLabel::not_significant ? "✗ " : "✓ ") + fmt(res.epsilon, 2);
                o << cell << std::string(w + 2 - 6, ' ');
                continue;
            }
            o << pad(cell);
        }
        o << '\n';
    }
    return o.str();
}

} // namespace dmcodec
