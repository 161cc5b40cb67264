#include "losses.hpp"

#include "errors.hpp"
#include "logging.hpp"
#include "ops.hpp"
#include "spectral.hpp"

#include <cmath>

namespace dmcodec {

LossWeights LossWeights::from_scale(double x) {
    LossWeights w;
    w.distill = x;
    w.t = 4.15 * x;
    w.f = 0.375 * x;
    w.w = 0.085 * x;
    w.g = 1.0;
    w.fm = 1.0;
    return w;
}

void LossWeights::validate() const {
    for (double v : {distill, t, f, g, fm, w}) {
        if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("loss weights must be finite and non-negative");
    }
}

double total_generator(const LossBreakdown& c, const LossWeights& w) {
    return w.distill * c.distill + w.t * c.t + w.f * c.f + w.g * c.g + w.fm * c.fm + w.w * c.w;
}

Tensor total_generator(const Tensor& t, const Tensor& f, const Tensor& g, const Tensor& fm, const Tensor& w,
                       const Tensor& distill, const LossWeights& weights) {
    std::vector<Tensor> terms;
    std::vector<double> ws;
    auto add = [&](const Tensor& x, double k) {
        if (!x.defined()) return;
        terms.push_back(x);
        ws.push_back(k);
    };
    add(distill, weights.distill);
    add(t, weights.t);
    add(f, weights.f);
    add(g, weights.g);
    add(fm, weights.fm);
    add(w, weights.w);
    if (terms.empty()) return Tensor::scalar(0.0);
    return ops::weighted_sum(terms, ws);
}

Tensor time_loss(const Tensor& x, const Tensor& x_hat) {
    if (x.shape() != x_hat.shape()) {
        throw DomainError("time_loss: shapes " + shape_str(x.shape()) + " and " + shape_str(x_hat.shape()) + " differ");
    }
    return ops::mean(ops::abs(ops::sub(x_hat, x)));
}

namespace {

// sqrt(mean(d^2)) with a zero subgradient at d == 0.
Tensor rms(const Tensor& d) {
    const auto& v = d.values();
    double s = 0.0;
    for (double x : v) s += x * x;
    const double n = static_cast<double>(v.size());
    const double r = std::sqrt(s / n);
    Node* in = d.node();
    return make_result({}, {r}, {d}, [in, r, n](Node& out) {
        if (!in->requires_grad || r == 0.0) return;
        auto& g = in->ensure_grad();
        const double k = out.grad[0] / (n * r);
        for (size_t i = 0; i < g.size(); ++i) g[i] += k * in->value[i];
    });
}

} // namespace

Tensor mel_loss(const Tensor& x, const Tensor& x_hat, const MelLossOptions& opts) {
    if (x.shape() != x_hat.shape() || x.rank() != 2) {
        throw DomainError("mel_loss expects equal [B, T] inputs, got " + shape_str(x.shape()) + " and " +
                          shape_str(x_hat.shape()));
    }
    const int64_t T = x.dim(1);
    Tensor total;
    int skipped = 0;
    for (int e = opts.min_exp; e <= opts.max_exp; ++e) {
        const int win = 1 << e;
        if (win > T) {
            ++skipped;
            continue;
        }
        const int hop = win / 4;
        Tensor mx, mh;
        {
            NoGradGuard ng;
            mx = ops::log_floor(
                ops::mel_spectrogram(x, win, hop, opts.n_mels, opts.sample_rate, 0.0, opts.sample_rate / 2.0),
                opts.log_floor);
        }
        mh = ops::log_floor(
            ops::mel_spectrogram(x_hat, win, hop, opts.n_mels, opts.sample_rate, 0.0, opts.sample_rate / 2.0),
            opts.log_floor);
        Tensor d = ops::sub(mh, mx);
        Tensor term = ops::add(ops::mean(ops::abs(d)), rms(d));
        total = total.defined() ? ops::add(total, term) : term;
    }
    if (!total.defined()) {
        throw DomainError("mel_loss: input of " + std::to_string(T) + " samples is shorter than the smallest window " +
                          std::to_string(1 << opts.min_exp));
    }
    if (skipped > 0) {
        logger().warn("mel_loss: skipped {} scale(s) with windows longer than {} samples", skipped, T);
    }
    return total;
}

Tensor logit_means(const Tensor& logits) {
    const int64_t b = logits.dim(0);
    const int64_t rest = logits.numel() / b;
    Tensor flat = ops::reshape(logits, {b, rest});
    // Row means via a matmul against a constant column.
    return ops::reshape(ops::matmul(flat, Tensor::full({rest, 1}, 1.0 / static_cast<double>(rest))), {b});
}

Tensor hinge_generator(const std::vector<Tensor>& fake_logits) {
    if (fake_logits.empty()) throw DomainError("hinge_generator needs at least one discriminator");
    Tensor acc;
    for (const auto& l : fake_logits) {
        Tensor term = ops::mean(ops::relu(ops::add_scalar(ops::neg(logit_means(l)), 1.0)));
        acc = acc.defined() ? ops::add(acc, term) : term;
    }
    return ops::scale(acc, 1.0 / static_cast<double>(fake_logits.size()));
}

Tensor hinge_discriminator(const std::vector<Tensor>& real_logits, const std::vector<Tensor>& fake_logits) {
    if (real_logits.size() != fake_logits.size() || real_logits.empty()) {
        throw DomainError("hinge_discriminator needs matching, non-empty real and fake outputs");
    }
    Tensor acc;
    for (size_t n = 0; n < real_logits.size(); ++n) {
        Tensor real = ops::mean(ops::relu(ops::add_scalar(ops::neg(logit_means(real_logits[n])), 1.0)));
        Tensor fake = ops::mean(ops::relu(ops::add_scalar(logit_means(fake_logits[n]), 1.0)));
        Tensor term = ops::add(real, fake);
        acc = acc.defined() ? ops::add(acc, term) : term;
    }
    return ops::scale(acc, 1.0 / static_cast<double>(real_logits.size()));
}

Tensor feature_matching(const std::vector<std::vector<Tensor>>& real_feats,
                        const std::vector<std::vector<Tensor>>& fake_feats) {
    if (real_feats.size() != fake_feats.size() || real_feats.empty()) {
        throw DomainError("feature_matching needs matching, non-empty feature sets");
    }
    Tensor acc;
    int64_t pairs = 0;
    for (size_t n = 0; n < real_feats.size(); ++n) {
        if (real_feats[n].size() != fake_feats[n].size()) throw DomainError("feature layer counts differ");
        for (size_t m = 0; m < real_feats[n].size(); ++m) {
            const Tensor& r = real_feats[n][m];
            const Tensor& f = fake_feats[n][m];
            if (r.shape() != f.shape()) throw DomainError("feature shapes differ");
            const int64_t b = r.dim(0);
            const int64_t per = r.numel() / b;
            // Per-sample weights 1 / (B * max(mean|r_b|, eps)) folded into one
            // weighted L1 sum.
            std::vector<double> w(static_cast<size_t>(r.numel()));
            for (int64_t i = 0; i < b; ++i) {
                double s = 0.0;
                for (int64_t j = 0; j < per; ++j) s += std::abs(r.at(i * per + j));
                const double denom = std::max(s / static_cast<double>(per), 1e-8);
                std::fill(w.begin() + i * per, w.begin() + (i + 1) * per, 1.0 / (denom * static_cast<double>(b)));
            }
            Tensor diff = ops::abs(ops::sub(f, r.detach()));
            Tensor term = ops::sum(ops::mul(diff, Tensor::from(diff.shape(), std::move(w))));
            acc = acc.defined() ? ops::add(acc, term) : term;
            ++pairs;
        }
    }
    return ops::scale(acc, 1.0 / static_cast<double>(pairs));
}

} // namespace dmcodec
