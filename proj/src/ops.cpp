#include "ops.hpp"

#include "errors.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <numbers>

namespace dmcodec::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DomainError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
    }
}

void accumulate(const std::shared_ptr<Node>& p, const std::vector<double>& g, double s = 1.0) {
    if (!p->requires_grad) return;
    auto& pg = p->ensure_grad();
    for (size_t i = 0; i < g.size(); ++i) pg[i] += s * g[i];
}

// f computes y from x; df computes dy/dx from (x, y).
template <class F, class DF>
Tensor unary(const Tensor& a, F f, DF df) {
    const auto& x = a.values();
    std::vector<double> y(x.size());
    for (size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
    return make_result(a.shape(), std::move(y), {a}, [df](Node& self) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        auto& pg = p->ensure_grad();
        for (size_t i = 0; i < pg.size(); ++i) pg[i] += self.grad[i] * df(p->value[i], self.value[i]);
    });
}

} // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    std::vector<double> y(a.values());
    const auto& bv = b.values();
    for (size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
    return make_result(a.shape(), std::move(y), {a, b}, [](Node& self) {
        accumulate(self.parents[0], self.grad);
        accumulate(self.parents[1], self.grad);
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    std::vector<double> y(a.values());
    const auto& bv = b.values();
    for (size_t i = 0; i < y.size(); ++i) y[i] -= bv[i];
    return make_result(a.shape(), std::move(y), {a, b}, [](Node& self) {
        accumulate(self.parents[0], self.grad);
        accumulate(self.parents[1], self.grad, -1.0);
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    const auto& av = a.values();
    const auto& bv = b.values();
    std::vector<double> y(av.size());
    for (size_t i = 0; i < y.size(); ++i) y[i] = av[i] * bv[i];
    return make_result(a.shape(), std::move(y), {a, b}, [](Node& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        if (pa->requires_grad) {
            auto& g = pa->ensure_grad();
            for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb->value[i];
        }
        if (pb->requires_grad) {
            auto& g = pb->ensure_grad();
            for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa->value[i];
        }
    });
}

Tensor scale(const Tensor& a, double s) {
    return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double s) {
    return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor elu(const Tensor& a, double alpha) {
    return unary(
        a, [alpha](double x) { return x > 0.0 ? x : alpha * std::expm1(x); },
        [alpha](double x, double y) { return x > 0.0 ? 1.0 : y + alpha; });
}

Tensor leaky_relu(const Tensor& a, double slope) {
    return unary(
        a, [slope](double x) { return x > 0.0 ? x : slope * x; },
        [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

Tensor relu(const Tensor& a) { return leaky_relu(a, 0.0); }

Tensor tanh(const Tensor& a) {
    return unary(
        a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& a) {
    return unary(
        a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); }, [](double, double y) { return y * (1.0 - y); });
}

Tensor gelu(const Tensor& a) {
    constexpr double c = 0.7978845608028654; // sqrt(2/pi)
    return unary(
        a,
        [](double x) { return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x))); },
        [](double x, double) {
            const double u = c * (x + 0.044715 * x * x * x);
            const double th = std::tanh(u);
            const double du = c * (1.0 + 3.0 * 0.044715 * x * x);
            return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du;
        });
}

Tensor abs(const Tensor& a) {
    return unary(
        a, [](double x) { return std::abs(x); },
        [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor log(const Tensor& a) {
    return unary(
        a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor log_floor(const Tensor& a, double floor) {
    return unary(
        a, [floor](double x) { return std::log(std::max(x, floor)); },
        [floor](double x, double) { return x > floor ? 1.0 / x : 0.0; });
}

Tensor exp(const Tensor& a) {
    return unary(
        a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor square(const Tensor& a) {
    return unary(
        a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor sqrt(const Tensor& a, double eps) {
    return unary(
        a, [eps](double x) { return std::sqrt(x + eps); },
        [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.values()) s += v;
    return make_result({}, {s}, {a}, [](Node& self) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        auto& g = p->ensure_grad();
        const double up = self.grad[0];
        for (double& x : g) x += up;
    });
}

Tensor mean(const Tensor& a) {
    if (a.numel() == 0) throw DomainError("mean: empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor weighted_sum(std::span<const Tensor> terms, std::span<const double> weights) {
    if (terms.size() != weights.size()) throw DomainError("weighted_sum: size mismatch");
    double s = 0.0;
    std::vector<Tensor> inputs;
    for (size_t i = 0; i < terms.size(); ++i) {
        s += weights[i] * terms[i].item();
        inputs.push_back(terms[i]);
    }
    std::vector<double> w(weights.begin(), weights.end());
    return make_result({}, {s}, std::move(inputs), [w](Node& self) {
        for (size_t i = 0; i < self.parents.size(); ++i) {
            auto& p = self.parents[i];
            if (p->requires_grad) p->ensure_grad()[0] += w[i] * self.grad[0];
        }
    });
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel()) {
        throw DomainError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
    }
    return make_result(std::move(shape), a.values(), {a},
                       [](Node& self) { accumulate(self.parents[0], self.grad); });
}

Tensor permute(const Tensor& a, std::vector<int> dims) {
    const int r = a.rank();
    if (static_cast<int>(dims.size()) != r) throw DomainError("permute: rank mismatch");
    const Shape& in = a.shape();
    Shape out(r);
    std::vector<int64_t> in_strides(r, 1);
    for (int i = r - 2; i >= 0; --i) in_strides[i] = in_strides[i + 1] * in[i + 1];
    for (int i = 0; i < r; ++i) out[i] = in[dims[i]];
    const int64_t n = a.numel();
    // map[o] = input flat index of output element o
    std::vector<int64_t> map(static_cast<size_t>(n));
    std::vector<int64_t> idx(r, 0);
    for (int64_t o = 0; o < n; ++o) {
        int64_t src = 0;
        for (int i = 0; i < r; ++i) src += idx[i] * in_strides[dims[i]];
        map[o] = src;
        for (int i = r - 1; i >= 0; --i) {
            if (++idx[i] < out[i]) break;
            idx[i] = 0;
        }
    }
    std::vector<double> y(static_cast<size_t>(n));
    const auto& x = a.values();
    for (int64_t o = 0; o < n; ++o) y[o] = x[map[o]];
    return make_result(std::move(out), std::move(y), {a}, [map = std::move(map)](Node& self) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        auto& g = p->ensure_grad();
        for (size_t o = 0; o < map.size(); ++o) g[map[o]] += self.grad[o];
    });
}

Tensor transpose2d(const Tensor& a) {
    if (a.rank() != 2) throw DomainError("transpose2d: rank must be 2");
    return permute(a, {1, 0});
}

Tensor slice(const Tensor& a, int dim, int64_t start, int64_t length) {
    const int r = a.rank();
    if (dim < 0) dim += r;
    if (dim < 0 || dim >= r) throw DomainError("slice: bad dim");
    const Shape& in = a.shape();
    if (start < 0 || length < 0 || start + length > in[dim]) {
        throw DomainError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                          ") outside axis of size " + std::to_string(in[dim]));
    }
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < dim; ++i) outer *= in[i];
    for (int i = dim + 1; i < r; ++i) inner *= in[i];
    Shape out = in;
    out[dim] = length;
    std::vector<double> y(static_cast<size_t>(outer * length * inner));
    const auto& x = a.values();
    for (int64_t o = 0; o < outer; ++o) {
        const double* src = x.data() + (o * in[dim] + start) * inner;
        std::copy(src, src + length * inner, y.data() + o * length * inner);
    }
    const int64_t axis = in[dim];
    return make_result(std::move(out), std::move(y), {a}, [=](Node& self) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        auto& g = p->ensure_grad();
        for (int64_t o = 0; o < outer; ++o) {
            double* dst = g.data() + (o * axis + start) * inner;
            const double* src = self.grad.data() + o * length * inner;
            for (int64_t i = 0; i < length * inner; ++i) dst[i] += src[i];
        }
    });
}

Tensor concat(std::span<const Tensor> parts, int dim) {
    if (parts.empty()) throw DomainError("concat: no inputs");
    const int r = parts[0].rank();
    if (dim < 0) dim += r;
    Shape out = parts[0].shape();
    out[dim] = 0;
    std::vector<int64_t> lens;
    for (const auto& t : parts) {
        Shape s = t.shape();
        if (static_cast<int>(s.size()) != r) throw DomainError("concat: rank mismatch");
        for (int i = 0; i < r; ++i) {
            if (i != dim && s[i] != out[i]) throw DomainError("concat: shape mismatch off the concat axis");
        }
        out[dim] += s[dim];
        lens.push_back(s[dim]);
    }
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < dim; ++i) outer *= out[i];
    for (int i = dim + 1; i < r; ++i) inner *= out[i];
    std::vector<double> y(static_cast<size_t>(shape_numel(out)));
    int64_t offset = 0;
    for (size_t k = 0; k < parts.size(); ++k) {
        const auto& x = parts[k].values();
        for (int64_t o = 0; o < outer; ++o) {
            std::copy(x.data() + o * lens[k] * inner, x.data() + (o + 1) * lens[k] * inner,
                      y.data() + (o * out[dim] + offset) * inner);
        }
        offset += lens[k];
    }
    const int64_t axis = out[dim];
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    return make_result(std::move(out), std::move(y), std::move(inputs), [=](Node& self) {
        int64_t off = 0;
        for (size_t k = 0; k < self.parents.size(); ++k) {
            auto& p = self.parents[k];
            if (p->requires_grad) {
                auto& g = p->ensure_grad();
                for (int64_t o = 0; o < outer; ++o) {
                    const double* src = self.grad.data() + (o * axis + off) * inner;
                    double* dst = g.data() + o * lens[k] * inner;
                    for (int64_t i = 0; i < lens[k] * inner; ++i) dst[i] += src[i];
                }
            }
            off += lens[k];
        }
    });
}

Tensor stack(std::span<const Tensor> parts) {
    if (parts.empty()) throw DomainError("stack: no inputs");
    std::vector<Tensor> expanded;
    expanded.reserve(parts.size());
    for (const auto& t : parts) {
        Shape s = t.shape();
        s.insert(s.begin(), 1);
        expanded.push_back(reshape(t, s));
    }
    return concat(expanded, 0);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw DomainError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<double> y(static_cast<size_t>(m * n));
    MapMat(y.data(), m, n).noalias() = CMapMat(a.values().data(), m, k) * CMapMat(b.values().data(), k, n);
    return make_result({m, n}, std::move(y), {a, b}, [m, k, n](Node& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        CMapMat gy(self.grad.data(), m, n);
        if (pa->requires_grad) {
            MapMat(pa->ensure_grad().data(), m, k).noalias() += gy * CMapMat(pb->value.data(), k, n).transpose();
        }
        if (pb->requires_grad) {
            MapMat(pb->ensure_grad().data(), k, n).noalias() += CMapMat(pa->value.data(), m, k).transpose() * gy;
        }
    });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    if (x.rank() != 2 || weight.rank() != 2 || x.dim(1) != weight.dim(1)) {
        throw DomainError("linear: incompatible shapes " + shape_str(x.shape()) + " with weight " +
                          shape_str(weight.shape()));
    }
    const int64_t n = x.dim(0), in = x.dim(1), out = weight.dim(0);
    std::vector<double> y(static_cast<size_t>(n * out));
    MapMat ym(y.data(), n, out);
    ym.noalias() = CMapMat(x.values().data(), n, in) * CMapMat(weight.values().data(), out, in).transpose();
    const bool has_bias = bias.defined();
    if (has_bias) {
        if (bias.numel() != out) throw DomainError("linear: bias size mismatch");
        ym.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.values().data(), out);
    }
    std::vector<Tensor> inputs{x, weight};
    if (has_bias) inputs.push_back(bias);
    return make_result({n, out}, std::move(y), std::move(inputs), [n, in, out, has_bias](Node& self) {
        auto& px = self.parents[0];
        auto& pw = self.parents[1];
        CMapMat gy(self.grad.data(), n, out);
        if (px->requires_grad) {
            MapMat(px->ensure_grad().data(), n, in).noalias() += gy * CMapMat(pw->value.data(), out, in);
        }
        if (pw->requires_grad) {
            MapMat(pw->ensure_grad().data(), out, in).noalias() += gy.transpose() * CMapMat(px->value.data(), n, in);
        }
        if (has_bias && self.parents[2]->requires_grad) {
            Eigen::Map<Eigen::RowVectorXd>(self.parents[2]->ensure_grad().data(), out) += gy.colwise().sum();
        }
    });
}

Tensor add_row(const Tensor& x, const Tensor& b) {
    if (x.rank() != 2 || b.numel() != x.dim(1)) throw DomainError("add_row: shape mismatch");
    const int64_t n = x.dim(0), d = x.dim(1);
    std::vector<double> y(x.values());
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < d; ++j) y[i * d + j] += b.values()[j];
    return make_result(x.shape(), std::move(y), {x, b}, [n, d](Node& self) {
        accumulate(self.parents[0], self.grad);
        auto& pb = self.parents[1];
        if (pb->requires_grad) {
            auto& g = pb->ensure_grad();
            for (int64_t i = 0; i < n; ++i)
                for (int64_t j = 0; j < d; ++j) g[j] += self.grad[i * d + j];
        }
    });
}

Tensor straight_through(const Tensor& latents, const Tensor& quantized) {
    require_same_shape(latents, quantized, "straight_through");
    return make_result(latents.shape(), quantized.values(), {latents},
                       [](Node& self) { accumulate(self.parents[0], self.grad); });
}

Tensor weight_norm(const Tensor& v, const Tensor& g) {
    const int64_t o = v.dim(0);
    if (g.numel() != o) throw DomainError("weight_norm: gain size must match the leading axis");
    const int64_t inner = v.numel() / o;
    const auto& vv = v.values();
    std::vector<double> norms(static_cast<size_t>(o));
    std::vector<double> w(vv.size());
    for (int64_t i = 0; i < o; ++i) {
        double sq = 0.0;
        for (int64_t j = 0; j < inner; ++j) sq += vv[i * inner + j] * vv[i * inner + j];
        norms[i] = std::sqrt(sq) + 1e-12;
        const double s = g.values()[i] / norms[i];
        for (int64_t j = 0; j < inner; ++j) w[i * inner + j] = s * vv[i * inner + j];
    }
    return make_result(v.shape(), std::move(w), {v, g}, [o, inner, norms](Node& self) {
        auto& pv = self.parents[0];
        auto& pg = self.parents[1];
        for (int64_t i = 0; i < o; ++i) {
            const double* vi = pv->value.data() + i * inner;
            const double* gw = self.grad.data() + i * inner;
            double dot = 0.0;
            for (int64_t j = 0; j < inner; ++j) dot += gw[j] * vi[j];
            const double nrm = norms[i];
            const double gain = pg->value[i];
            if (pg->requires_grad) pg->ensure_grad()[i] += dot / nrm;
            if (pv->requires_grad) {
                double* dv = pv->ensure_grad().data() + i * inner;
                const double c = gain * dot / (nrm * nrm * nrm);
                for (int64_t j = 0; j < inner; ++j) dv[j] += gain / nrm * gw[j] - c * vi[j];
            }
        }
    });
}

} // namespace dmcodec::ops
