#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "m3t/tensor.hpp"

// Forward ops with recorded backward closures. Every reduction runs in a
// fixed serial order so replaying a step is bitwise identical. Broadcasting
// is restricted to the explicitly named bias/rowvec/colvec ops; any other
// shape mismatch throws.

namespace m3t {

namespace detail {

template <class S>
bool track(const Tensor<S>& a) {
    return Tape<S>::active() != nullptr && a.requires_grad();
}

template <class S, class... Ts>
bool track(const Tensor<S>& a, const Ts&... rest) {
    return track(a) || track(rest...);
}

template <class S>
void attach(Tensor<S>& out) {
    out.set_requires_grad(true);
    out.storage()->tape = Tape<S>::active();
}

// Upstream grad missing means this op is not an ancestor of the loss.
template <class S>
bool has_upstream(const std::shared_ptr<Storage<S>>& out) {
    return out->grad.size() == out->value.size();
}

template <class S>
void check_finite(const Tensor<S>& x, const char* op) {
    for (S v : x.values())
        if (!std::isfinite(static_cast<double>(v)))
            throw NumericError(std::string(op) + ": non-finite input");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// matmul

template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw ShapeError(strf("matmul wants rank-2 operands, got %s and %s",
                              shape_str(a.shape()).c_str(), shape_str(b.shape()).c_str()));
    const idx m = a.extent(0), k = a.extent(1), k2 = b.extent(0), n = b.extent(1);
    if (k != k2)
        throw ShapeError(strf("matmul inner extents disagree: %s vs %s",
                              shape_str(a.shape()).c_str(), shape_str(b.shape()).c_str()));

    Tensor<S> out(Shape{m, n});
    const S* pa = a.data();
    const S* pb = b.data();
    S* po = out.data();
    for (idx i = 0; i < m; ++i) {
        for (idx l = 0; l < k; ++l) {
            const S aval = pa[i * k + l];
            if (aval == S(0)) continue;
            const S* brow = pb + l * n;
            S* orow = po + i * n;
            for (idx j = 0; j < n; ++j) orow[j] += aval * brow[j];
        }
    }

    if (detail::track(a, b)) {
        detail::attach(out);
        auto sa = a.storage(), sb = b.storage(), so = out.storage();
        Tape<S>::active()->record([sa, sb, so, m, k, n] {
            if (!detail::has_upstream(so)) return;
            const S* g = so->grad.data();
            if (sa->requires_grad) {
                sa->ensure_grad();
                S* da = sa->grad.data();
                const S* pb2 = sb->value.data();
                // dA = G * B^T
                for (idx i = 0; i < m; ++i)
                    for (idx l = 0; l < k; ++l) {
                        S acc = 0;
                        const S* grow = g + i * n;
                        const S* brow = pb2 + l * n;
                        for (idx j = 0; j < n; ++j) acc += grow[j] * brow[j];
                        da[i * k + l] += acc;
                    }
            }
            if (sb->requires_grad) {
                sb->ensure_grad();
                S* db = sb->grad.data();
                const S* pa2 = sa->value.data();
                // dB = A^T * G
                for (idx l = 0; l < k; ++l)
                    for (idx i = 0; i < m; ++i) {
                        const S aval = pa2[i * k + l];
                        if (aval == S(0)) continue;
                        const S* grow = g + i * n;
                        S* brow = db + l * n;
                        for (idx j = 0; j < n; ++j) brow[j] += aval * grow[j];
                    }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// softmax along an axis, stabilized by max subtraction

template <class S>
Tensor<S> softmax(const Tensor<S>& x, idx axis) {
    if (axis < 0 || axis >= x.rank())
        throw ShapeError(strf("softmax axis %lld out of range for %s",
                              static_cast<long long>(axis), shape_str(x.shape()).c_str()));
    detail::check_finite(x, "softmax");

    const Shape& sh = x.shape();
    idx len = sh[static_cast<size_t>(axis)];
    idx inner = 1, outer = 1;
    for (idx i = axis + 1; i < x.rank(); ++i) inner *= sh[static_cast<size_t>(i)];
    for (idx i = 0; i < axis; ++i) outer *= sh[static_cast<size_t>(i)];

    Tensor<S> out(sh);
    const S* px = x.data();
    S* po = out.data();
    for (idx o = 0; o < outer; ++o) {
        for (idx in = 0; in < inner; ++in) {
            const idx base = o * len * inner + in;
            S mx = px[base];
            for (idx l = 1; l < len; ++l) mx = std::max(mx, px[base + l * inner]);
            double sum = 0.0;
            for (idx l = 0; l < len; ++l) {
                double e = std::exp(static_cast<double>(px[base + l * inner] - mx));
                po[base + l * inner] = static_cast<S>(e);
                sum += e;
            }
            const S inv = static_cast<S>(1.0 / sum);
            for (idx l = 0; l < len; ++l) po[base + l * inner] *= inv;
        }
    }

    if (detail::track(x)) {
        detail::attach(out);
        auto sx = x.storage(), so = out.storage();
        Tape<S>::active()->record([sx, so, len, inner, outer] {
            if (!detail::has_upstream(so)) return;
            sx->ensure_grad();
            const S* y = so->value.data();
            const S* g = so->grad.data();
            S* dx = sx->grad.data();
            for (idx o = 0; o < outer; ++o)
                for (idx in = 0; in < inner; ++in) {
                    const idx base = o * len * inner + in;
                    S dot = 0;
                    for (idx l = 0; l < len; ++l) dot += g[base + l * inner] * y[base + l * inner];
                    for (idx l = 0; l < len; ++l) {
                        const idx at = base + l * inner;
                        dx[at] += y[at] * (g[at] - dot);
                    }
                }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// layer norm over the last axis

template <class S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                     S eps = static_cast<S>(1e-5)) {
    if (x.rank() < 1) throw ShapeError("layer_norm wants rank >= 1");
    const idx n = x.extent(x.rank() - 1);
    if (gamma.numel() != n || beta.numel() != n)
        throw ShapeError(strf("layer_norm gamma/beta must match last extent %lld, got %s and %s",
                              static_cast<long long>(n), shape_str(gamma.shape()).c_str(),
                              shape_str(beta.shape()).c_str()));
    const idx rows = x.numel() / n;

    Tensor<S> out(x.shape());
    std::vector<S> xhat(static_cast<size_t>(x.numel()));
    std::vector<S> inv_std(static_cast<size_t>(rows));
    const S* px = x.data();
    const S* pg = gamma.data();
    const S* pb = beta.data();
    S* po = out.data();
    for (idx r = 0; r < rows; ++r) {
        const S* row = px + r * n;
        double mean = 0.0;
        for (idx j = 0; j < n; ++j) mean += row[j];
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (idx j = 0; j < n; ++j) {
            double d = row[j] - mean;
            var += d * d;
        }
        var /= static_cast<double>(n);
        const S istd = static_cast<S>(1.0 / std::sqrt(var + static_cast<double>(eps)));
        inv_std[static_cast<size_t>(r)] = istd;
        for (idx j = 0; j < n; ++j) {
            const S xh = static_cast<S>((row[j] - mean)) * istd;
            xhat[static_cast<size_t>(r * n + j)] = xh;
            po[r * n + j] = xh * pg[j] + pb[j];
        }
    }

    if (detail::track(x, gamma, beta)) {
        detail::attach(out);
        auto sx = x.storage(), sg = gamma.storage(), sb = beta.storage(), so = out.storage();
        auto xh = std::make_shared<std::vector<S>>(std::move(xhat));
        auto is = std::make_shared<std::vector<S>>(std::move(inv_std));
        Tape<S>::active()->record([sx, sg, sb, so, xh, is, rows, n] {
            if (!detail::has_upstream(so)) return;
            const S* g = so->grad.data();
            const S* gam = sg->value.data();
            if (sg->requires_grad) {
                sg->ensure_grad();
                S* dg = sg->grad.data();
                for (idx r = 0; r < rows; ++r)
                    for (idx j = 0; j < n; ++j)
                        dg[j] += g[r * n + j] * (*xh)[static_cast<size_t>(r * n + j)];
            }
            if (sb->requires_grad) {
                sb->ensure_grad();
                S* db = sb->grad.data();
                for (idx r = 0; r < rows; ++r)
                    for (idx j = 0; j < n; ++j) db[j] += g[r * n + j];
            }
            if (sx->requires_grad) {
                sx->ensure_grad();
                S* dx = sx->grad.data();
                for (idx r = 0; r < rows; ++r) {
                    double mean_h = 0.0, mean_hx = 0.0;
                    for (idx j = 0; j < n; ++j) {
                        const double h = static_cast<double>(gam[j]) * g[r * n + j];
                        mean_h += h;
                        mean_hx += h * (*xh)[static_cast<size_t>(r * n + j)];
                    }
                    mean_h /= static_cast<double>(n);
                    mean_hx /= static_cast<double>(n);
                    const double istd = (*is)[static_cast<size_t>(r)];
                    for (idx j = 0; j < n; ++j) {
                        const double h = static_cast<double>(gam[j]) * g[r * n + j];
                        dx[r * n + j] += static_cast<S>(
                            (h - mean_h - (*xh)[static_cast<size_t>(r * n + j)] * mean_hx) * istd);
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// elementwise and broadcast ops

template <class S, class FwdFn, class BwdFn>
Tensor<S> unary_elementwise(const Tensor<S>& x, FwdFn fwd, BwdFn bwd) {
    Tensor<S> out(x.shape());
    const S* px = x.data();
    S* po = out.data();
    const idx n = x.numel();
    for (idx i = 0; i < n; ++i) po[i] = fwd(px[i]);
    if (detail::track(x)) {
        detail::attach(out);
        auto sx = x.storage(), so = out.storage();
        Tape<S>::active()->record([sx, so, n, bwd] {
            if (!detail::has_upstream(so)) return;
            sx->ensure_grad();
            const S* g = so->grad.data();
            const S* xv = sx->value.data();
            const S* yv = so->value.data();
            S* dx = sx->grad.data();
            for (idx i = 0; i < n; ++i) dx[i] += bwd(xv[i], yv[i], g[i]);
        });
    }
    return out;
}

template <class S>
Tensor<S> relu(const Tensor<S>& x) {
    return unary_elementwise(
        x, [](S v) { return v > S(0) ? v : S(0); },
        [](S xv, S, S g) { return xv > S(0) ? g : S(0); });
}

template <class S>
Tensor<S> sigmoid(const Tensor<S>& x) {
    return unary_elementwise(
        x, [](S v) { return static_cast<S>(1.0 / (1.0 + std::exp(-static_cast<double>(v)))); },
        [](S, S yv, S g) { return g * yv * (S(1) - yv); });
}

template <class S>
Tensor<S> scale(const Tensor<S>& x, S c) {
    return unary_elementwise(
        x, [c](S v) { return v * c; }, [c](S, S, S g) { return g * c; });
}

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.shape() != b.shape())
        throw ShapeError(strf("add shape mismatch: %s vs %s", shape_str(a.shape()).c_str(),
                              shape_str(b.shape()).c_str()));
    Tensor<S> out(a.shape());
    const idx n = a.numel();
    const S* pa = a.data();
    const S* pb = b.data();
    S* po = out.data();
    for (idx i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
    if (detail::track(a, b)) {
        detail::attach(out);
        auto sa = a.storage(), sb = b.storage(), so = out.storage();
        Tape<S>::active()->record([sa, sb, so, n] {
            if (!detail::has_upstream(so)) return;
            const S* g = so->grad.data();
            if (sa->requires_grad) {
                sa->ensure_grad();
                for (idx i = 0; i < n; ++i) sa->grad[static_cast<size_t>(i)] += g[i];
            }
            if (sb->requires_grad) {
                sb->ensure_grad();
                for (idx i = 0; i < n; ++i) sb->grad[static_cast<size_t>(i)] += g[i];
            }
        });
    }
    return out;
}

template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.shape() != b.shape())
        throw ShapeError(strf("mul shape mismatch: %s vs %s", shape_str(a.shape()).c_str(),
                              shape_str(b.shape()).c_str()));
    Tensor<S> out(a.shape());
    const idx n = a.numel();
    const S* pa = a.data();
    const S* pb = b.data();
    S* po = out.data();
    for (idx i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
    if (detail::track(a, b)) {
        detail::attach(out);
        auto sa = a.storage(), sb = b.storage(), so = out.storage();
        Tape<S>::active()->record([sa, sb, so, n] {
            if (!detail::has_upstream(so)) return;
            const S* g = so->grad.data();
            if (sa->requires_grad) {
                sa->ensure_grad();
                for (idx i = 0; i < n; ++i)
                    sa->grad[static_cast<size_t>(i)] += g[i] * sb->value[static_cast<size_t>(i)];
            }
            if (sb->requires_grad) {
                sb->ensure_grad();
                for (idx i = 0; i < n; ++i)
                    sb->grad[static_cast<size_t>(i)] += g[i] * sa->value[static_cast<size_t>(i)];
            }
        });
    }
    return out;
}

// x[..., n] + b[n], bias broadcast over leading axes
template <class S>
Tensor<S> add_bias(const Tensor<S>& x, const Tensor<S>& b) {
    const idx n = x.extent(x.rank() - 1);
    if (b.numel() != n)
        throw ShapeError(strf("add_bias: bias %s does not match last extent of %s",
                              shape_str(b.shape()).c_str(), shape_str(x.shape()).c_str()));
    Tensor<S> out(x.shape());
    const idx rows = x.numel() / n;
    const S* px = x.data();
    const S* pb = b.data();
    S* po = out.data();
    for (idx r = 0; r < rows; ++r)
        for (idx j = 0; j < n; ++j) po[r * n + j] = px[r * n + j] + pb[j];
    if (detail::track(x, b)) {
        detail::attach(out);
        auto sx = x.storage(), sb = b.storage(), so = out.storage();
        Tape<S>::active()->record([sx, sb, so, rows, n] {
            if (!detail::has_upstream(so)) return;
            const S* g = so->grad.data();
            if (sx->requires_grad) {
                sx->ensure_grad();
                for (idx i = 0; i < rows * n; ++i) sx->grad[static_cast<size_t>(i)] += g[i];
            }
            if (sb->requires_grad) {
                sb->ensure_grad();
                for (idx r = 0; r < rows; ++r)
                    for (idx j = 0; j < n; ++j) sb->grad[static_cast<size_t>(j)] += g[r * n + j];
            }
        });
    }
    return out;
}

// out[i,j] = x[i,j] * v[j]
template <class S>
Tensor<S> mul_rowvec(const Tensor<S>& x, const Tensor<S>& v) {
    if (x.rank() != 2 || v.numel() != x.extent(1))
        throw ShapeError(strf("mul_rowvec: %s vs %s", shape_str(x.shape()).c_str(),
                              shape_str(v.shape()).c_str()));
    const idx m = x.extent(0), n = x.extent(1);
    Tensor<S> out(x.shape());
    const S* px = x.data();
    const S* pv = v.data();
    S* po = out.data();
    for (idx i = 0; i < m; ++i)
        for (idx j = 0; j < n; ++j) po[i * n + j] = px[i * n + j] * pv[j];
    if (detail::track(x, v)) {
        detail::attach(out);
        auto sx = x.storage(), sv = v.storage(), so = out.storage();
        Tape<S>::active()->record([sx, sv, so, m, n] {
            if (!detail::has_upstream(so)) return;
            const S* g = so->grad.data();
            if (sx->requires_grad) {
                sx->ensure_grad();
                for (idx i = 0; i < m; ++i)
                    for (idx j = 0; j < n; ++j)
                        sx->grad[static_cast<size_t>(i * n + j)] +=
                            g[i * n + j] * sv->value[static_cast<size_t>(j)];
            }
            if (sv->requires_grad) {
                sv->ensure_grad();
                for (idx i = 0; i < m; ++i)
                    for (idx j = 0; j < n; ++j)
                        sv->grad[static_cast<size_t>(j)] +=
                            g[i * n + j] * sx->value[static_cast<size_t>(i * n + j)];
            }
        });
    }
    return out;
}

// out[i,j] = x[i,j] * a[i]
template <class S>
Tensor<S> mul_colvec(const Tensor<S>& x, const Tensor<S>& a) {
    if (x.rank() != 2 || a.numel() != x.extent(0))
        throw ShapeError(strf("mul_colvec: %s vs %s", shape_str(x.shape()).c_str(),
                              shape_str(a.shape()).c_str()));
    const idx m = x.extent(0), n = x.extent(1);
    Tensor<S> out(x.shape());
    const S* px = x.data();
    const S* pa = a.data();
    S* po = out.data();
    for (idx i = 0; i < m; ++i)
        for (idx j = 0; j < n; ++j) po[i * n + j] = px[i * n + j] * pa[i];
    if (detail::track(x, a)) {
        detail::attach(out);
        auto sx = x.storage(), sa = a.storage(), so = out.storage();
        Tape<S>::active()->record([sx, sa, so, m, n] {
            if (!detail::has_upstream(so)) return;
            const S* g = so->grad.data();
            if (sx->requires_grad) {
                sx->ensure_grad();
                for (idx i = 0; i < m; ++i)
                    for (idx j = 0; j < n; ++j)
                        sx->grad[static_cast<size_t>(i * n + j)] +=
                            g[i * n + j] * sa->value[static_cast<size_t>(i)];
            }
            if (sa->requires_grad) {
                sa->ensure_grad();
                for (idx i = 0; i < m; ++i) {
                    S acc = 0;
                    for (idx j = 0; j < n; ++j)
                        acc += g[i * n + j] * sx->value[static_cast<size_t>(i * n + j)];
                    sa->grad[static_cast<size_t>(i)] += acc;
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// structure ops

template <class S>
Tensor<S> transpose(const Tensor<S>& x) {
    if (x.rank() != 2)
        throw ShapeError("transpose wants rank 2, got " + shape_str(x.shape()));
    const idx m = x.extent(0), n = x.extent(1);
    Tensor<S> out(Shape{n, m});
    const S* px = x.data();
    S* po = out.data();
    for (idx i = 0; i < m; ++i)
        for (idx j = 0; j < n; ++j) po[j * m + i] = px[i * n + j];
    if (detail::track(x)) {
        detail::attach(out);
        auto sx = x.storage(), so = out.storage();
        Tape<S>::active()->record([sx, so, m, n] {
            if (!detail::has_upstream(so)) return;
            sx->ensure_grad();
            const S* g = so->grad.data();
            for (idx i = 0; i < m; ++i)
                for (idx j = 0; j < n; ++j) sx->grad[static_cast<size_t>(i * n + j)] += g[j * m + i];
        });
    }
    return out;
}

template <class S>
Tensor<S> reshape(const Tensor<S>& x, Shape shape) {
    if (shape_numel(shape) != x.numel())
        throw ShapeError(strf("reshape %s -> %s changes numel", shape_str(x.shape()).c_str(),
                              shape_str(shape).c_str()));
    Tensor<S> out(std::move(shape), x.values());
    if (detail::track(x)) {
        detail::attach(out);
        auto sx = x.storage(), so = out.storage();
        const idx n = x.numel();
        Tape<S>::active()->record([sx, so, n] {
            if (!detail::has_upstream(so)) return;
            sx->ensure_grad();
            for (idx i = 0; i < n; ++i)
                sx->grad[static_cast<size_t>(i)] += so->grad[static_cast<size_t>(i)];
        });
    }
    return out;
}

// column-wise concat of rank-2 tensors with equal row counts
template <class S>
Tensor<S> concat_cols(const std::vector<Tensor<S>>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols on empty list");
    const idx m = parts[0].extent(0);
    idx total = 0;
    for (const auto& p : parts) {
        if (p.rank() != 2 || p.extent(0) != m)
            throw ShapeError("concat_cols: row counts disagree, got " + shape_str(p.shape()));
        total += p.extent(1);
    }
    Tensor<S> out(Shape{m, total});
    S* po = out.data();
    idx col = 0;
    for (const auto& p : parts) {
        const idx n = p.extent(1);
        const S* pp = p.data();
        for (idx i = 0; i < m; ++i)
            for (idx j = 0; j < n; ++j) po[i * total + col + j] = pp[i * n + j];
        col += n;
    }
    bool any = false;
    for (const auto& p : parts) any = any || detail::track(p);
    if (any) {
        detail::attach(out);
        std::vector<std::shared_ptr<Storage<S>>> srcs;
        srcs.reserve(parts.size());
        for (const auto& p : parts) srcs.push_back(p.storage());
        auto so = out.storage();
        Tape<S>::active()->record([srcs, so, m, total] {
            if (!detail::has_upstream(so)) return;
            const S* g = so->grad.data();
            idx col2 = 0;
            for (auto& src : srcs) {
                const idx n = src->shape[1];
                if (src->requires_grad) {
                    src->ensure_grad();
                    for (idx i = 0; i < m; ++i)
                        for (idx j = 0; j < n; ++j)
                            src->grad[static_cast<size_t>(i * n + j)] += g[i * total + col2 + j];
                }
                col2 += n;
            }
        });
    }
    return out;
}

template <class S>
Tensor<S> sum(const Tensor<S>& x) {
    double acc = 0.0;
    for (S v : x.values()) acc += static_cast<double>(v);
    Tensor<S> out = Tensor<S>::scalar(static_cast<S>(acc));
    if (detail::track(x)) {
        detail::attach(out);
        auto sx = x.storage(), so = out.storage();
        Tape<S>::active()->record([sx, so] {
            if (!detail::has_upstream(so)) return;
            sx->ensure_grad();
            const S g = so->grad[0];
            for (S& d : sx->grad) d += g;
        });
    }
    return out;
}

// [m, n] -> [n], arithmetic mean over rows
template <class S>
Tensor<S> mean_rows(const Tensor<S>& x) {
    if (x.rank() != 2) throw ShapeError("mean_rows wants rank 2, got " + shape_str(x.shape()));
    const idx m = x.extent(0), n = x.extent(1);
    Tensor<S> out(Shape{n});
    const S* px = x.data();
    S* po = out.data();
    for (idx j = 0; j < n; ++j) {
        double acc = 0.0;
        for (idx i = 0; i < m; ++i) acc += px[i * n + j];
        po[j] = static_cast<S>(acc / static_cast<double>(m));
    }
    if (detail::track(x)) {
        detail::attach(out);
        auto sx = x.storage(), so = out.storage();
        Tape<S>::active()->record([sx, so, m, n] {
            if (!detail::has_upstream(so)) return;
            sx->ensure_grad();
            const S inv = S(1) / static_cast<S>(m);
            for (idx i = 0; i < m; ++i)
                for (idx j = 0; j < n; ++j)
                    sx->grad[static_cast<size_t>(i * n + j)] += so->grad[static_cast<size_t>(j)] * inv;
        });
    }
    return out;
}

// table[V, d], ids -> [T, d]; gradient scatters into looked-up rows
template <class S>
Tensor<S> embedding_lookup(const Tensor<S>& table, const std::vector<idx>& ids) {
    if (table.rank() != 2) throw ShapeError("embedding_lookup wants a rank-2 table");
    const idx V = table.extent(0), d = table.extent(1);
    const idx T = static_cast<idx>(ids.size());
    if (T == 0) throw ShapeError("embedding_lookup on empty id sequence");
    for (idx t = 0; t < T; ++t)
        if (ids[static_cast<size_t>(t)] < 0 || ids[static_cast<size_t>(t)] >= V)
            throw IndexError(strf("embedding id %lld out of range [0, %lld)",
                                  static_cast<long long>(ids[static_cast<size_t>(t)]),
                                  static_cast<long long>(V)));
    Tensor<S> out(Shape{T, d});
    const S* pt = table.data();
    S* po = out.data();
    for (idx t = 0; t < T; ++t) {
        const S* row = pt + ids[static_cast<size_t>(t)] * d;
        std::copy(row, row + d, po + t * d);
    }
    if (detail::track(table)) {
        detail::attach(out);
        auto st = table.storage(), so = out.storage();
        auto id_copy = std::make_shared<std::vector<idx>>(ids);
        Tape<S>::active()->record([st, so, id_copy, T, d] {
            if (!detail::has_upstream(so)) return;
            st->ensure_grad();
            const S* g = so->grad.data();
            for (idx t = 0; t < T; ++t) {
                S* drow = st->grad.data() + (*id_copy)[static_cast<size_t>(t)] * d;
                for (idx j = 0; j < d; ++j) drow[j] += g[t * d + j];
            }
        });
    }
    return out;
}

// out[i] = mask[i] ? value : x[i]; masked positions block gradient
template <class S>
Tensor<S> masked_fill(const Tensor<S>& x, const std::vector<std::uint8_t>& mask, S value) {
    if (static_cast<idx>(mask.size()) != x.numel())
        throw ShapeError(strf("masked_fill: mask size %zu vs tensor %s", mask.size(),
                              shape_str(x.shape()).c_str()));
    Tensor<S> out(x.shape());
    const S* px = x.data();
    S* po = out.data();
    const idx n = x.numel();
    for (idx i = 0; i < n; ++i) po[i] = mask[static_cast<size_t>(i)] ? value : px[i];
    if (detail::track(x)) {
        detail::attach(out);
        auto sx = x.storage(), so = out.storage();
        auto mk = std::make_shared<std::vector<std::uint8_t>>(mask);
        Tape<S>::active()->record([sx, so, mk, n] {
            if (!detail::has_upstream(so)) return;
            sx->ensure_grad();
            for (idx i = 0; i < n; ++i)
                if (!(*mk)[static_cast<size_t>(i)])
                    sx->grad[static_cast<size_t>(i)] += so->grad[static_cast<size_t>(i)];
        });
    }
    return out;
}

namespace detail {

template <class S>
Tensor<S> dropout_with_seed(const Tensor<S>& x, double rate, std::uint64_t seed) {
    if (rate < 0.0 || rate >= 1.0) throw ContractError(strf("dropout rate %g out of [0, 1)", rate));
    const double keep = 1.0 - rate;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const idx n = x.numel();
    auto mask = std::make_shared<std::vector<std::uint8_t>>(static_cast<size_t>(n));
    Tensor<S> out(x.shape());
    const S* px = x.data();
    S* po = out.data();
    const S inv_keep = static_cast<S>(1.0 / keep);
    for (idx i = 0; i < n; ++i) {
        const bool kept = u(rng) < keep;
        (*mask)[static_cast<size_t>(i)] = kept ? 1 : 0;
        po[i] = kept ? px[i] * inv_keep : S(0);
    }
    if (detail::track(x)) {
        detail::attach(out);
        auto sx = x.storage(), so = out.storage();
        Tape<S>::active()->record([sx, so, mask, n, inv_keep] {
            if (!detail::has_upstream(so)) return;
            sx->ensure_grad();
            for (idx i = 0; i < n; ++i)
                if ((*mask)[static_cast<size_t>(i)])
                    sx->grad[static_cast<size_t>(i)] += so->grad[static_cast<size_t>(i)] * inv_keep;
        });
    }
    return out;
}

}  // namespace detail

// Inverted dropout. Identity when rate == 0 or no tape is active (eval mode);
// otherwise the mask seed comes from the tape's (seed, step, call counter).
template <class S>
Tensor<S> dropout(const Tensor<S>& x, double rate) {
    auto* tape = Tape<S>::active();
    if (rate == 0.0 || tape == nullptr) return x;
    return detail::dropout_with_seed(x, rate, tape->next_dropout_seed());
}

template <class S>
Tensor<S> dropout(const Tensor<S>& x, double rate, std::uint64_t seed) {
    if (rate == 0.0) return x;
    return detail::dropout_with_seed(x, rate, seed);
}

// ---------------------------------------------------------------------------
// im2col for small strided convolutions (zero padding)

template <class S>
Tensor<S> im2col(const Tensor<S>& x, idx k, idx stride, idx pad) {
    if (x.rank() != 3) throw ShapeError("im2col wants [H, W, C], got " + shape_str(x.shape()));
    if (k <= 0 || stride <= 0 || pad < 0) throw ContractError("im2col: bad kernel/stride/pad");
    const idx H = x.extent(0), W = x.extent(1), C = x.extent(2);
    const idx Ho = (H + 2 * pad - k) / stride + 1;
    const idx Wo = (W + 2 * pad - k) / stride + 1;
    if (Ho <= 0 || Wo <= 0)
        throw ShapeError(strf("im2col: kernel %lld does not fit input %s",
                              static_cast<long long>(k), shape_str(x.shape()).c_str()));
    const idx cols = k * k * C;
    Tensor<S> out(Shape{Ho * Wo, cols});
    const S* px = x.data();
    S* po = out.data();
    for (idx oy = 0; oy < Ho; ++oy)
        for (idx ox = 0; ox < Wo; ++ox) {
            S* orow = po + (oy * Wo + ox) * cols;
            idx c = 0;
            for (idx ky = 0; ky < k; ++ky)
                for (idx kx = 0; kx < k; ++kx) {
                    const idx iy = oy * stride + ky - pad;
                    const idx ix = ox * stride + kx - pad;
                    if (iy >= 0 && iy < H && ix >= 0 && ix < W) {
                        const S* src = px + (iy * W + ix) * C;
                        for (idx ch = 0; ch < C; ++ch) orow[c + ch] = src[ch];
                    }
                    c += C;
                }
        }
    if (detail::track(x)) {
        detail::attach(out);
        auto sx = x.storage(), so = out.storage();
        Tape<S>::active()->record([sx, so, H, W, C, Ho, Wo, k, stride, pad, cols] {
            if (!detail::has_upstream(so)) return;
            sx->ensure_grad();
            const S* g = so->grad.data();
            S* dx = sx->grad.data();
            for (idx oy = 0; oy < Ho; ++oy)
                for (idx ox = 0; ox < Wo; ++ox) {
                    const S* grow = g + (oy * Wo + ox) * cols;
                    idx c = 0;
                    for (idx ky = 0; ky < k; ++ky)
                        for (idx kx = 0; kx < k; ++kx) {
                            const idx iy = oy * stride + ky - pad;
                            const idx ix = ox * stride + kx - pad;
                            if (iy >= 0 && iy < H && ix >= 0 && ix < W) {
                                S* dst = dx + (iy * W + ix) * C;
                                for (idx ch = 0; ch < C; ++ch) dst[ch] += grow[c + ch];
                            }
                            c += C;
                        }
                }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// point-wise (1x1) convolution over a [H, W, C] block

template <class S>
Tensor<S> pointwise_conv(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
    if (x.rank() != 3)
        throw ShapeError("pointwise_conv wants [H, W, C] input, got " + shape_str(x.shape()));
    if (w.rank() != 2 || x.extent(2) != w.extent(0))
        throw ShapeError(strf("pointwise_conv channels disagree: %s vs %s",
                              shape_str(x.shape()).c_str(), shape_str(w.shape()).c_str()));
    if (b.numel() != w.extent(1))
        throw ShapeError(strf("pointwise_conv bias %s vs weight %s", shape_str(b.shape()).c_str(),
                              shape_str(w.shape()).c_str()));
    const idx H = x.extent(0), W = x.extent(1);
    Tensor<S> flat = reshape(x, {H * W, x.extent(2)});
    Tensor<S> y = add_bias(matmul(flat, w), b);
    return reshape(y, {H, W, w.extent(1)});
}

// ---------------------------------------------------------------------------
// cross entropy over [T, V] logits with pad exclusion

enum class LossReduction { Mean, Sum };

template <class S>
Tensor<S> cross_entropy(const Tensor<S>& logits, const std::vector<idx>& targets, idx pad_id,
                        LossReduction reduction = LossReduction::Mean) {
    if (logits.rank() != 2)
        throw ShapeError("cross_entropy wants [T, V] logits, got " + shape_str(logits.shape()));
    const idx T = logits.extent(0), V = logits.extent(1);
    if (static_cast<idx>(targets.size()) != T)
        throw ShapeError(strf("cross_entropy: %zu targets for %lld logit rows", targets.size(),
                              static_cast<long long>(T)));
    idx count = 0;
    for (idx t = 0; t < T; ++t) {
        const idx id = targets[static_cast<size_t>(t)];
        if (id == pad_id) continue;
        if (id < 0 || id >= V)
            throw IndexError(strf("cross_entropy target %lld out of range [0, %lld)",
                                  static_cast<long long>(id), static_cast<long long>(V)));
        ++count;
    }

    const S* px = logits.data();
    std::vector<S> lse(static_cast<size_t>(T), S(0));
    double total = 0.0;
    for (idx t = 0; t < T; ++t) {
        const idx id = targets[static_cast<size_t>(t)];
        if (id == pad_id) continue;
        const S* row = px + t * V;
        S mx = row[0];
        for (idx j = 1; j < V; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (idx j = 0; j < V; ++j) z += std::exp(static_cast<double>(row[j] - mx));
        const double l = static_cast<double>(mx) + std::log(z);
        lse[static_cast<size_t>(t)] = static_cast<S>(l);
        total += l - static_cast<double>(row[id]);
    }
    const double denom = (reduction == LossReduction::Mean) ? std::max<idx>(count, 1) : 1;
    Tensor<S> out = Tensor<S>::scalar(static_cast<S>(total / denom));

    if (detail::track(logits)) {
        detail::attach(out);
        auto sx = logits.storage(), so = out.storage();
        auto tg = std::make_shared<std::vector<idx>>(targets);
        auto ls = std::make_shared<std::vector<S>>(std::move(lse));
        const S w = static_cast<S>(1.0 / denom);
        Tape<S>::active()->record([sx, so, tg, ls, T, V, pad_id, w] {
            if (!detail::has_upstream(so)) return;
            sx->ensure_grad();
            const S go = so->grad[0] * w;
            const S* xv = sx->value.data();
            S* dx = sx->grad.data();
            for (idx t = 0; t < T; ++t) {
                const idx id = (*tg)[static_cast<size_t>(t)];
                if (id == pad_id) continue;
                const S l = (*ls)[static_cast<size_t>(t)];
                for (idx j = 0; j < V; ++j) {
                    const S p = static_cast<S>(std::exp(static_cast<double>(xv[t * V + j] - l)));
                    dx[t * V + j] += go * (p - (j == id ? S(1) : S(0)));
                }
            }
        });
    }
    return out;
}

}  // namespace m3t
