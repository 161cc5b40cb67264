#pragma once

// Reconstruction, adversarial and feature-matching objectives.

#include "tensor.hpp"

#include <string>
#include <vector>

namespace dmcodec {

struct LossWeights {
    double distill = 1.0;
    double t = 4.15;
    double f = 0.375;
    double g = 1.0;
    double fm = 1.0;
    double w = 0.085;

    // distill = X, t = 4.15X, f = 0.375X, w = 0.085X; g and fm stay 1.
    static LossWeights from_scale(double x);
    void validate() const;
};

struct LossBreakdown {
    double t = 0, f = 0, g = 0, d = 0, fm = 0, w = 0, distill = 0, total = 0;
};

// Weighted generator total; d is reported but not part of it.
double total_generator(const LossBreakdown& c, const LossWeights& w);
Tensor total_generator(const Tensor& t, const Tensor& f, const Tensor& g, const Tensor& fm, const Tensor& w,
                       const Tensor& distill, const LossWeights& weights);

// Mean absolute difference of equally shaped waveforms.
Tensor time_loss(const Tensor& x, const Tensor& x_hat);

struct MelLossOptions {
    int min_exp = 5;
    int max_exp = 11;
    int n_mels = 64;
    double sample_rate = 16000;
    double log_floor = 1e-5;
};

// Sum over scales 2^i of L1 + L2 between log-mel spectrograms of x and
// x_hat ([B, T] each). Both terms are normalized per element: L1 is the mean
// absolute difference and L2 the root of the mean squared difference.
// Scales whose window exceeds T are skipped with a warning.
Tensor mel_loss(const Tensor& x, const Tensor& x_hat, const MelLossOptions& opts = {});

// R_n per sample: the mean of each logit map [B, ...] over non-batch axes.
Tensor logit_means(const Tensor& logits);

// (1/N) sum_n mean_b max(1 - R_n, 0)
Tensor hinge_generator(const std::vector<Tensor>& fake_logits);
// (1/N) sum_n mean_b [max(1 - R_n(x), 0) + max(1 + R_n(x_hat), 0)]
Tensor hinge_discriminator(const std::vector<Tensor>& real_logits, const std::vector<Tensor>& fake_logits);

// (1/NM) sum_n sum_m ||r - f||_1 / mean(|r|), per sample then averaged over
// the batch. Features are [B, ...]; real features are treated as constants.
Tensor feature_matching(const std::vector<std::vector<Tensor>>& real_feats,
                        const std::vector<std::vector<Tensor>>& fake_feats);

} // namespace dmcodec
