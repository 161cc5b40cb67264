#include "nn_ops.hpp"

#include "errors.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace dmcodec::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

struct Geom1d {
    int64_t cin, t, k, tout;
    int stride, dilation, pad_left;
};

// cols [Cin*K, Tout]
void im2col_1d(const double* x, const Geom1d& g, double* cols) {
    for (int64_t c = 0; c < g.cin; ++c) {
        const double* xc = x + c * g.t;
        for (int64_t k = 0; k < g.k; ++k) {
            double* row = cols + (c * g.k + k) * g.tout;
            const int64_t off = k * g.dilation - g.pad_left;
            for (int64_t t = 0; t < g.tout; ++t) {
                const int64_t src = t * g.stride + off;
                row[t] = (src >= 0 && src < g.t) ? xc[src] : 0.0;
            }
        }
    }
}

void col2im_1d(const double* cols, const Geom1d& g, double* dx) {
    for (int64_t c = 0; c < g.cin; ++c) {
        double* xc = dx + c * g.t;
        for (int64_t k = 0; k < g.k; ++k) {
            const double* row = cols + (c * g.k + k) * g.tout;
            const int64_t off = k * g.dilation - g.pad_left;
            for (int64_t t = 0; t < g.tout; ++t) {
                const int64_t src = t * g.stride + off;
                if (src >= 0 && src < g.t) xc[src] += row[t];
            }
        }
    }
}

void add_channel_bias(double* y, const double* b, int64_t c, int64_t len) {
    for (int64_t i = 0; i < c; ++i) {
        double* yi = y + i * len;
        for (int64_t t = 0; t < len; ++t) yi[t] += b[i];
    }
}

void accumulate_channel_bias_grad(const double* gy, double* gb, int64_t c, int64_t len) {
    for (int64_t i = 0; i < c; ++i) {
        double s = 0.0;
        const double* gi = gy + i * len;
        for (int64_t t = 0; t < len; ++t) s += gi[t];
        gb[i] += s;
    }
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

} // namespace

Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias, const Conv1dArgs& args) {
    if (x.rank() != 3 || weight.rank() != 3 || x.dim(1) != weight.dim(1)) {
        throw DomainError("conv1d: input " + shape_str(x.shape()) + " incompatible with weight " +
                          shape_str(weight.shape()));
    }
    const int64_t b = x.dim(0), cin = x.dim(1), t = x.dim(2);
    const int64_t cout = weight.dim(0), k = weight.dim(2);
    const int64_t span = static_cast<int64_t>(args.dilation) * (k - 1) + 1;
    const int64_t padded = t + args.pad_left + args.pad_right;
    if (padded < span) throw DomainError("conv1d: input of length " + std::to_string(t) + " shorter than kernel span");
    const int64_t tout = (padded - span) / args.stride + 1;
    const Geom1d g{cin, t, k, tout, args.stride, args.dilation, args.pad_left};
    const bool has_bias = bias.defined();

    std::vector<double> y(static_cast<size_t>(b * cout * tout));
    std::vector<double> cols(static_cast<size_t>(cin * k * tout));
    CMapMat w(weight.values().data(), cout, cin * k);
    for (int64_t i = 0; i < b; ++i) {
        im2col_1d(x.values().data() + i * cin * t, g, cols.data());
        MapMat(y.data() + i * cout * tout, cout, tout).noalias() = w * CMapMat(cols.data(), cin * k, tout);
        if (has_bias) add_channel_bias(y.data() + i * cout * tout, bias.values().data(), cout, tout);
    }
    std::vector<Tensor> inputs{x, weight};
    if (has_bias) inputs.push_back(bias);
    return make_result({b, cout, tout}, std::move(y), std::move(inputs), [=](Node& self) {
        auto& px = self.parents[0];
        auto& pw = self.parents[1];
        std::vector<double> cols_b(static_cast<size_t>(cin * k * tout));
        CMapMat wm(pw->value.data(), cout, cin * k);
        for (int64_t i = 0; i < b; ++i) {
            CMapMat gy(self.grad.data() + i * cout * tout, cout, tout);
            if (pw->requires_grad) {
                im2col_1d(px->value.data() + i * cin * t, g, cols_b.data());
                MapMat(pw->ensure_grad().data(), cout, cin * k).noalias() +=
                    gy * CMapMat(cols_b.data(), cin * k, tout).transpose();
            }
            if (px->requires_grad) {
                MapMat(cols_b.data(), cin * k, tout).noalias() = wm.transpose() * gy;
                col2im_1d(cols_b.data(), g, px->ensure_grad().data() + i * cin * t);
            }
            if (has_bias && self.parents[2]->requires_grad) {
                accumulate_channel_bias_grad(self.grad.data() + i * cout * tout, self.parents[2]->ensure_grad().data(),
                                             cout, tout);
            }
        }
    });
}

Tensor conv_transpose1d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride, int trim_left,
                        int trim_right) {
    if (x.rank() != 3 || weight.rank() != 3 || x.dim(1) != weight.dim(0)) {
        throw DomainError("conv_transpose1d: input " + shape_str(x.shape()) + " incompatible with weight " +
                          shape_str(weight.shape()));
    }
    const int64_t b = x.dim(0), cin = x.dim(1), t = x.dim(2);
    const int64_t cout = weight.dim(1), k = weight.dim(2);
    const int64_t full = (t - 1) * stride + k;
    const int64_t tout = full - trim_left - trim_right;
    if (tout <= 0) throw DomainError("conv_transpose1d: trimming removes the whole output");
    const bool has_bias = bias.defined();

    // Scatter of cols[co*K + kk, s] into y[co, s*stride + kk - trim_left].
    auto scatter = [=](const double* cols, double* y) {
        for (int64_t co = 0; co < cout; ++co) {
            for (int64_t kk = 0; kk < k; ++kk) {
                const double* row = cols + (co * k + kk) * t;
                for (int64_t s = 0; s < t; ++s) {
                    const int64_t dst = s * stride + kk - trim_left;
                    if (dst >= 0 && dst < tout) y[co * tout + dst] += row[s];
                }
            }
        }
    };
    auto gather = [=](const double* gy, double* cols) {
        for (int64_t co = 0; co < cout; ++co) {
            for (int64_t kk = 0; kk < k; ++kk) {
                double* row = cols + (co * k + kk) * t;
                for (int64_t s = 0; s < t; ++s) {
                    const int64_t dst = s * stride + kk - trim_left;
                    row[s] = (dst >= 0 && dst < tout) ? gy[co * tout + dst] : 0.0;
                }
            }
        }
    };

    std::vector<double> y(static_cast<size_t>(b * cout * tout), 0.0);
    std::vector<double> cols(static_cast<size_t>(cout * k * t));
    CMapMat w(weight.values().data(), cin, cout * k);
    for (int64_t i = 0; i < b; ++i) {
        MapMat(cols.data(), cout * k, t).noalias() = w.transpose() * CMapMat(x.values().data() + i * cin * t, cin, t);
        scatter(cols.data(), y.data() + i * cout * tout);
        if (has_bias) add_channel_bias(y.data() + i * cout * tout, bias.values().data(), cout, tout);
    }
    std::vector<Tensor> inputs{x, weight};
    if (has_bias) inputs.push_back(bias);
    return make_result({b, cout, tout}, std::move(y), std::move(inputs), [=](Node& self) {
        auto& px = self.parents[0];
        auto& pw = self.parents[1];
        std::vector<double> dcols(static_cast<size_t>(cout * k * t));
        CMapMat wm(pw->value.data(), cin, cout * k);
        for (int64_t i = 0; i < b; ++i) {
            gather(self.grad.data() + i * cout * tout, dcols.data());
            CMapMat dc(dcols.data(), cout * k, t);
            if (px->requires_grad) {
                MapMat(px->ensure_grad().data() + i * cin * t, cin, t).noalias() += wm * dc;
            }
            if (pw->requires_grad) {
                MapMat(pw->ensure_grad().data(), cin, cout * k).noalias() +=
                    CMapMat(px->value.data() + i * cin * t, cin, t) * dc.transpose();
            }
            if (has_bias && self.parents[2]->requires_grad) {
                accumulate_channel_bias_grad(self.grad.data() + i * cout * tout, self.parents[2]->ensure_grad().data(),
                                             cout, tout);
            }
        }
    });
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, const Conv2dArgs& a) {
    if (x.rank() != 4 || weight.rank() != 4 || x.dim(1) != weight.dim(1)) {
        throw DomainError("conv2d: input " + shape_str(x.shape()) + " incompatible with weight " +
                          shape_str(weight.shape()));
    }
    const int64_t b = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const int64_t cout = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
    const int64_t span_h = static_cast<int64_t>(a.dilation_h) * (kh - 1) + 1;
    const int64_t span_w = static_cast<int64_t>(a.dilation_w) * (kw - 1) + 1;
    if (h + 2 * a.pad_h < span_h || wd + 2 * a.pad_w < span_w) throw DomainError("conv2d: input smaller than kernel");
    const int64_t ho = (h + 2 * a.pad_h - span_h) / a.stride_h + 1;
    const int64_t wo = (wd + 2 * a.pad_w - span_w) / a.stride_w + 1;
    const int64_t kk = cin * kh * kw;
    const int64_t npos = ho * wo;
    const bool has_bias = bias.defined();

    auto im2col = [=](const double* xb, double* cols) {
        for (int64_t c = 0; c < cin; ++c)
            for (int64_t i = 0; i < kh; ++i)
                for (int64_t j = 0; j < kw; ++j) {
                    double* row = cols + ((c * kh + i) * kw + j) * npos;
                    for (int64_t oy = 0; oy < ho; ++oy) {
                        const int64_t sy = oy * a.stride_h + i * a.dilation_h - a.pad_h;
                        for (int64_t ox = 0; ox < wo; ++ox) {
                            const int64_t sx = ox * a.stride_w + j * a.dilation_w - a.pad_w;
                            row[oy * wo + ox] =
                                (sy >= 0 && sy < h && sx >= 0 && sx < wd) ? xb[(c * h + sy) * wd + sx] : 0.0;
                        }
                    }
                }
    };
    auto col2im = [=](const double* cols, double* dxb) {
        for (int64_t c = 0; c < cin; ++c)
            for (int64_t i = 0; i < kh; ++i)
                for (int64_t j = 0; j < kw; ++j) {
                    const double* row = cols + ((c * kh + i) * kw + j) * npos;
                    for (int64_t oy = 0; oy < ho; ++oy) {
                        const int64_t sy = oy * a.stride_h + i * a.dilation_h - a.pad_h;
                        if (sy < 0 || sy >= h) continue;
                        for (int64_t ox = 0; ox < wo; ++ox) {
                            const int64_t sx = ox * a.stride_w + j * a.dilation_w - a.pad_w;
                            if (sx >= 0 && sx < wd) dxb[(c * h + sy) * wd + sx] += row[oy * wo + ox];
                        }
                    }
                }
    };

    std::vector<double> y(static_cast<size_t>(b * cout * npos));
    std::vector<double> cols(static_cast<size_t>(kk * npos));
    CMapMat w(weight.values().data(), cout, kk);
    for (int64_t n = 0; n < b; ++n) {
        im2col(x.values().data() + n * cin * h * wd, cols.data());
        MapMat(y.data() + n * cout * npos, cout, npos).noalias() = w * CMapMat(cols.data(), kk, npos);
        if (has_bias) add_channel_bias(y.data() + n * cout * npos, bias.values().data(), cout, npos);
    }
    std::vector<Tensor> inputs{x, weight};
    if (has_bias) inputs.push_back(bias);
    return make_result({b, cout, ho, wo}, std::move(y), std::move(inputs), [=](Node& self) {
        auto& px = self.parents[0];
        auto& pw = self.parents[1];
        std::vector<double> cb(static_cast<size_t>(kk * npos));
        CMapMat wm(pw->value.data(), cout, kk);
        for (int64_t n = 0; n < b; ++n) {
            CMapMat gy(self.grad.data() + n * cout * npos, cout, npos);
            if (pw->requires_grad) {
                im2col(px->value.data() + n * cin * h * wd, cb.data());
                MapMat(pw->ensure_grad().data(), cout, kk).noalias() += gy * CMapMat(cb.data(), kk, npos).transpose();
            }
            if (px->requires_grad) {
                MapMat(cb.data(), kk, npos).noalias() = wm.transpose() * gy;
                col2im(cb.data(), px->ensure_grad().data() + n * cin * h * wd);
            }
            if (has_bias && self.parents[2]->requires_grad) {
                accumulate_channel_bias_grad(self.grad.data() + n * cout * npos, self.parents[2]->ensure_grad().data(),
                                             cout, npos);
            }
        }
    });
}

Tensor avg_pool1d(const Tensor& x, int kernel, int stride, int pad) {
    if (x.rank() != 3) throw DomainError("avg_pool1d: expected [B, C, T]");
    const int64_t rows = x.dim(0) * x.dim(1), t = x.dim(2);
    const int64_t tout = (t + 2 * pad - kernel) / stride + 1;
    if (tout <= 0) throw DomainError("avg_pool1d: input too short");
    std::vector<double> y(static_cast<size_t>(rows * tout));
    std::vector<int64_t> lo(tout), hi(tout);
    for (int64_t o = 0; o < tout; ++o) {
        lo[o] = std::max<int64_t>(0, o * stride - pad);
        hi[o] = std::min<int64_t>(t, o * stride - pad + kernel);
    }
    const auto& xv = x.values();
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t o = 0; o < tout; ++o) {
            double s = 0.0;
            for (int64_t i = lo[o]; i < hi[o]; ++i) s += xv[r * t + i];
            y[r * tout + o] = s / static_cast<double>(hi[o] - lo[o]);
        }
    return make_result({x.dim(0), x.dim(1), tout}, std::move(y), {x}, [=](Node& self) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        auto& g = p->ensure_grad();
        for (int64_t r = 0; r < rows; ++r)
            for (int64_t o = 0; o < tout; ++o) {
                const double v = self.grad[r * tout + o] / static_cast<double>(hi[o] - lo[o]);
                for (int64_t i = lo[o]; i < hi[o]; ++i) g[r * t + i] += v;
            }
    });
}

Tensor pad_last(const Tensor& x, int left, int right) {
    if (x.rank() != 3) throw DomainError("pad_last: expected [B, C, T]");
    const int64_t rows = x.dim(0) * x.dim(1), t = x.dim(2);
    const int64_t tout = t + left + right;
    std::vector<double> y(static_cast<size_t>(rows * tout), 0.0);
    for (int64_t r = 0; r < rows; ++r)
        std::copy(x.values().data() + r * t, x.values().data() + (r + 1) * t, y.data() + r * tout + left);
    return make_result({x.dim(0), x.dim(1), tout}, std::move(y), {x}, [=](Node& self) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        auto& g = p->ensure_grad();
        for (int64_t r = 0; r < rows; ++r)
            for (int64_t i = 0; i < t; ++i) g[r * t + i] += self.grad[r * tout + left + i];
    });
}

Tensor lstm(const Tensor& x, const Tensor& w_ih, const Tensor& w_hh, const Tensor& bias, bool reverse) {
    if (x.rank() != 3) throw DomainError("lstm: expected [B, T, I]");
    const int64_t b = x.dim(0), t = x.dim(1), in = x.dim(2);
    const int64_t h4 = w_ih.dim(0), hd = h4 / 4;
    if (w_ih.dim(1) != in || w_hh.dim(0) != h4 || w_hh.dim(1) != hd || bias.numel() != h4) {
        throw DomainError("lstm: weight shapes inconsistent with input " + shape_str(x.shape()));
    }
    // Gate activations per (batch, step): [i, f, g, o] after nonlinearity.
    auto gates = std::make_shared<std::vector<double>>(static_cast<size_t>(b * t * h4));
    auto cells = std::make_shared<std::vector<double>>(static_cast<size_t>(b * t * hd));
    std::vector<double> y(static_cast<size_t>(b * t * hd));

    RowMat pre(b * t, h4);
    pre.noalias() = CMapMat(x.values().data(), b * t, in) * CMapMat(w_ih.values().data(), h4, in).transpose();
    pre.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.values().data(), h4);
    CMapMat whh(w_hh.values().data(), h4, hd);

    Eigen::RowVectorXd hprev(hd), cprev(hd), z(h4);
    for (int64_t n = 0; n < b; ++n) {
        hprev.setZero();
        cprev.setZero();
        for (int64_t s = 0; s < t; ++s) {
            const int64_t step = reverse ? t - 1 - s : s;
            const int64_t row = n * t + step;
            z.noalias() = pre.row(row) + hprev * whh.transpose();
            double* gt = gates->data() + row * h4;
            double* ct = cells->data() + row * hd;
            double* ht = y.data() + row * hd;
            for (int64_t j = 0; j < hd; ++j) {
                const double ig = sigmoid(z[j]);
                const double fg = sigmoid(z[hd + j]);
                const double gg = std::tanh(z[2 * hd + j]);
                const double og = sigmoid(z[3 * hd + j]);
                gt[j] = ig;
                gt[hd + j] = fg;
                gt[2 * hd + j] = gg;
                gt[3 * hd + j] = og;
                ct[j] = fg * cprev[j] + ig * gg;
                ht[j] = og * std::tanh(ct[j]);
                cprev[j] = ct[j];
                hprev[j] = ht[j];
            }
        }
    }

    return make_result({b, t, hd}, std::move(y), {x, w_ih, w_hh, bias}, [=](Node& self) {
        auto& px = self.parents[0];
        auto& pwih = self.parents[1];
        auto& pwhh = self.parents[2];
        auto& pb = self.parents[3];
        CMapMat whh_m(pwhh->value.data(), h4, hd);
        RowMat dz(b * t, h4);
        Eigen::RowVectorXd dh_next(hd), dc_next(hd);
        for (int64_t n = 0; n < b; ++n) {
            dh_next.setZero();
            dc_next.setZero();
            for (int64_t s = t - 1; s >= 0; --s) {
                const int64_t step = reverse ? t - 1 - s : s;
                const int64_t row = n * t + step;
                const int64_t prev_step = reverse ? step + 1 : step - 1;
                const bool has_prev = s > 0;
                const double* gt = gates->data() + row * h4;
                const double* ct = cells->data() + row * hd;
                const double* cp = has_prev ? cells->data() + (n * t + prev_step) * hd : nullptr;
                for (int64_t j = 0; j < hd; ++j) {
                    const double dh = self.grad[row * hd + j] + dh_next[j];
                    const double ig = gt[j], fg = gt[hd + j], gg = gt[2 * hd + j], og = gt[3 * hd + j];
                    const double tc = std::tanh(ct[j]);
                    const double dc = dc_next[j] + dh * og * (1.0 - tc * tc);
                    const double cprev_j = cp ? cp[j] : 0.0;
                    dz(row, j) = dc * gg * ig * (1.0 - ig);
                    dz(row, hd + j) = dc * cprev_j * fg * (1.0 - fg);
                    dz(row, 2 * hd + j) = dc * ig * (1.0 - gg * gg);
                    dz(row, 3 * hd + j) = dh * tc * og * (1.0 - og);
                    dc_next[j] = dc * fg;
                }
                dh_next.noalias() = dz.row(row) * whh_m;
            }
        }
        if (pwhh->requires_grad) {
            MapMat gw(pwhh->ensure_grad().data(), h4, hd);
            for (int64_t n = 0; n < b; ++n) {
                for (int64_t s = 1; s < t; ++s) {
                    const int64_t step = reverse ? t - 1 - s : s;
                    const int64_t prev_step = reverse ? step + 1 : step - 1;
                    gw.noalias() += dz.row(n * t + step).transpose() *
                                    Eigen::Map<const Eigen::RowVectorXd>(self.value.data() + (n * t + prev_step) * hd, hd);
                }
            }
        }
        if (px->requires_grad) {
            MapMat(px->ensure_grad().data(), b * t, in).noalias() += dz * CMapMat(pwih->value.data(), h4, in);
        }
        if (pwih->requires_grad) {
            MapMat(pwih->ensure_grad().data(), h4, in).noalias() +=
                dz.transpose() * CMapMat(px->value.data(), b * t, in);
        }
        if (pb->requires_grad) {
            Eigen::Map<Eigen::RowVectorXd>(pb->ensure_grad().data(), h4) += dz.colwise().sum();
        }
    });
}

} // namespace dmcodec::ops
