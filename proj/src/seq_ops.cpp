#include "seq_ops.hpp"

#include "errors.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <limits>

namespace dmcodec::ops {

namespace {
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;
} // namespace

Tensor embedding(const Tensor& table, const std::vector<int>& ids) {
    if (table.rank() != 2) throw DomainError("embedding: table must be [V, D]");
    const int64_t vocab = table.dim(0), d = table.dim(1);
    const auto n = static_cast<int64_t>(ids.size());
    std::vector<double> y(static_cast<size_t>(n * d));
    for (int64_t i = 0; i < n; ++i) {
        if (ids[i] < 0 || ids[i] >= vocab) {
            throw DomainError("embedding: id " + std::to_string(ids[i]) + " outside vocabulary of " +
                              std::to_string(vocab));
        }
        const double* row = table.values().data() + ids[i] * d;
        std::copy(row, row + d, y.data() + i * d);
    }
    return make_result({n, d}, std::move(y), {table}, [ids, d](Node& self) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        auto& g = p->ensure_grad();
        for (size_t i = 0; i < ids.size(); ++i)
            for (int64_t j = 0; j < d; ++j) g[ids[i] * d + j] += self.grad[i * d + j];
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    if (x.rank() != 2 || gain.numel() != x.dim(1) || bias.numel() != x.dim(1)) {
        throw DomainError("layer_norm: shape mismatch");
    }
    const int64_t n = x.dim(0), d = x.dim(1);
    std::vector<double> xhat(static_cast<size_t>(n * d));
    std::vector<double> rstd(static_cast<size_t>(n));
    std::vector<double> y(static_cast<size_t>(n * d));
    const auto& xv = x.values();
    for (int64_t i = 0; i < n; ++i) {
        double m = 0.0;
        for (int64_t j = 0; j < d; ++j) m += xv[i * d + j];
        m /= static_cast<double>(d);
        double var = 0.0;
        for (int64_t j = 0; j < d; ++j) var += (xv[i * d + j] - m) * (xv[i * d + j] - m);
        var /= static_cast<double>(d);
        rstd[i] = 1.0 / std::sqrt(var + eps);
        for (int64_t j = 0; j < d; ++j) {
            xhat[i * d + j] = (xv[i * d + j] - m) * rstd[i];
            y[i * d + j] = xhat[i * d + j] * gain.values()[j] + bias.values()[j];
        }
    }
    return make_result(x.shape(), std::move(y), {x, gain, bias},
                       [n, d, xhat = std::move(xhat), rstd = std::move(rstd)](Node& self) {
                           auto& px = self.parents[0];
                           auto& pg = self.parents[1];
                           auto& pb = self.parents[2];
                           for (int64_t i = 0; i < n; ++i) {
                               const double* gy = self.grad.data() + i * d;
                               const double* xh = xhat.data() + i * d;
                               if (pg->requires_grad) {
                                   auto& g = pg->ensure_grad();
                                   for (int64_t j = 0; j < d; ++j) g[j] += gy[j] * xh[j];
                               }
                               if (pb->requires_grad) {
                                   auto& g = pb->ensure_grad();
                                   for (int64_t j = 0; j < d; ++j) g[j] += gy[j];
                               }
                               if (px->requires_grad) {
                                   double s1 = 0.0, s2 = 0.0;
                                   for (int64_t j = 0; j < d; ++j) {
                                       const double gx = gy[j] * pg->value[j];
                                       s1 += gx;
                                       s2 += gx * xh[j];
                                   }
                                   auto& g = px->ensure_grad();
                                   const double inv_d = 1.0 / static_cast<double>(d);
                                   for (int64_t j = 0; j < d; ++j) {
                                       const double gx = gy[j] * pg->value[j];
                                       g[i * d + j] += rstd[i] * (gx - inv_d * s1 - xh[j] * inv_d * s2);
                                   }
                               }
                           }
                       });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads, bool causal) {
    if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || q.dim(1) != k.dim(1) || k.shape() != v.shape()) {
        throw DomainError("attention: shape mismatch");
    }
    const int64_t t = q.dim(0), s = k.dim(0), d = q.dim(1);
    if (heads <= 0 || d % heads != 0) throw ConfigError("attention: model dim not divisible by head count");
    if (causal && t != s) throw DomainError("attention: causal mask needs equal query/key lengths");
    const int64_t dh = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    // Per-head probabilities [heads][t, s], kept for the backward pass.
    auto probs = std::make_shared<std::vector<RowMat>>(static_cast<size_t>(heads));
    std::vector<double> y(static_cast<size_t>(t * d));
    Eigen::OuterStride<> stride(d);
    using HeadMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;
    using HeadMapW = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
    for (int h = 0; h < heads; ++h) {
        HeadMap qh(q.values().data() + h * dh, t, dh, stride);
        HeadMap kh(k.values().data() + h * dh, s, dh, stride);
        HeadMap vh(v.values().data() + h * dh, s, dh, stride);
        RowMat sc = (qh * kh.transpose()) * scale;
        for (int64_t i = 0; i < t; ++i) {
            double mx = -std::numeric_limits<double>::infinity();
            const int64_t lim = causal ? i + 1 : s;
            for (int64_t j = 0; j < lim; ++j) mx = std::max(mx, sc(i, j));
            double z = 0.0;
            for (int64_t j = 0; j < s; ++j) {
                sc(i, j) = j < lim ? std::exp(sc(i, j) - mx) : 0.0;
                z += sc(i, j);
            }
            sc.row(i) /= z;
        }
        HeadMapW(y.data() + h * dh, t, dh, stride).noalias() = sc * vh;
        (*probs)[h] = std::move(sc);
    }
    return make_result({t, d}, std::move(y), {q, k, v}, [=](Node& self) {
        auto& pq = self.parents[0];
        auto& pk = self.parents[1];
        auto& pv = self.parents[2];
        for (int h = 0; h < heads; ++h) {
            const RowMat& p = (*probs)[h];
            HeadMap go(self.grad.data() + h * dh, t, dh, stride);
            HeadMap qh(pq->value.data() + h * dh, t, dh, stride);
            HeadMap kh(pk->value.data() + h * dh, s, dh, stride);
            HeadMap vh(pv->value.data() + h * dh, s, dh, stride);
            if (pv->requires_grad) {
                HeadMapW(pv->ensure_grad().data() + h * dh, s, dh, stride).noalias() += p.transpose() * go;
            }
            RowMat dp = go * vh.transpose();
            RowMat ds(t, s);
            for (int64_t i = 0; i < t; ++i) {
                const double dot = (dp.row(i).array() * p.row(i).array()).sum();
                ds.row(i) = (p.row(i).array() * (dp.row(i).array() - dot)).matrix() * scale;
            }
            if (pq->requires_grad) {
                HeadMapW(pq->ensure_grad().data() + h * dh, t, dh, stride).noalias() += ds * kh;
            }
            if (pk->requires_grad) {
                HeadMapW(pk->ensure_grad().data() + h * dh, s, dh, stride).noalias() += ds.transpose() * qh;
            }
        }
    });
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets) {
    if (logits.rank() != 2 || logits.dim(0) != static_cast<int64_t>(targets.size())) {
        throw DomainError("cross_entropy: logits rows must match target count");
    }
    const int64_t n = logits.dim(0), vocab = logits.dim(1);
    auto probs = std::make_shared<std::vector<double>>(static_cast<size_t>(n * vocab));
    double total = 0.0;
    int64_t counted = 0;
    const auto& lv = logits.values();
    for (int64_t i = 0; i < n; ++i) {
        const double* row = lv.data() + i * vocab;
        double mx = row[0];
        for (int64_t j = 1; j < vocab; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (int64_t j = 0; j < vocab; ++j) z += std::exp(row[j] - mx);
        const double logz = mx + std::log(z);
        for (int64_t j = 0; j < vocab; ++j) (*probs)[i * vocab + j] = std::exp(row[j] - logz);
        if (targets[i] < 0) continue;
        if (targets[i] >= vocab) throw DomainError("cross_entropy: target outside vocabulary");
        total += logz - row[targets[i]];
        ++counted;
    }
    if (counted == 0) throw DomainError("cross_entropy: no targets");
    const double inv = 1.0 / static_cast<double>(counted);
    return make_result({}, {total * inv}, {logits}, [=](Node& self) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        auto& g = p->ensure_grad();
        const double up = self.grad[0] * inv;
        for (int64_t i = 0; i < n; ++i) {
            if (targets[i] < 0) continue;
            for (int64_t j = 0; j < vocab; ++j) g[i * vocab + j] += up * (*probs)[i * vocab + j];
            g[i * vocab + targets[i]] -= up;
        }
    });
}

} // namespace dmcodec::ops
