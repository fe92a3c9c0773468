#pragma once

#include <cmath>
#include <cstddef>
#include <cstring>
#include <limits>
#include <memory>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "amc/error.hpp"
#include "amc/random.hpp"
#include "amc/tensor.hpp"

namespace amc {

// Additive score for forbidden attention positions. Finite so that
// 0 * sentinel never produces NaN in a gradient path.
inline constexpr double kMaskSentinel = -1e9;

// softmax treats entries at or below this as masked.
inline constexpr double kMaskedThreshold = kMaskSentinel / 2;

namespace detail {

// 8 x 8 register tile; GNU vector extension, lowered to whatever SIMD width
// the target offers.
typedef double v8d __attribute__((vector_size(64)));

inline v8d load8(const double* p) {
    v8d v;
    std::memcpy(&v, p, sizeof v);
    return v;
}

inline void store8(double* p, v8d v) { std::memcpy(p, &v, sizeof v); }

template <int MR>
inline void gemm_tile(const double* a, const double* b, double* c, std::size_t k, std::size_t n) {
    v8d acc[MR];
    for (int r = 0; r < MR; ++r) acc[r] = v8d{};
    for (std::size_t p = 0; p < k; ++p) {
        const v8d bv = load8(b + p * n);
        for (int r = 0; r < MR; ++r) acc[r] += a[r * k + p] * bv;
    }
    for (int r = 0; r < MR; ++r) store8(c + r * n, load8(c + r * n) + acc[r]);
}

// c[M,N] += a[M,K] * b[K,N]
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
    const std::size_t n8 = n - n % 8;
    std::size_t i = 0;
    for (; i + 8 <= m; i += 8)
        for (std::size_t j = 0; j < n8; j += 8) gemm_tile<8>(a + i * k, b + j, c + i * n + j, k, n);
    for (; i < m; ++i)
        for (std::size_t j = 0; j < n8; j += 8) gemm_tile<1>(a + i * k, b + j, c + i * n + j, k, n);
    if (n8 == n) return;
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        const double* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = b + p * n;
            for (std::size_t j = n8; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

inline void transpose_into(const double* src, double* dst, std::size_t rows, std::size_t cols);

// c[K,N] += a[M,K]^T * g[M,N]
inline void gemm_tn(const double* a, const double* g, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
    std::vector<double> at(k * m);
    transpose_into(a, at.data(), m, k);
    gemm_nn(at.data(), g, c, k, m, n);
}

inline void transpose_into(const double* src, double* dst, std::size_t rows, std::size_t cols) {
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) {
            dst[j * rows + i] = src[i * cols + j];
        }
    }
}

struct BatchMap {
    Shape batch_shape;
    std::vector<std::size_t> a_offset;
    std::vector<std::size_t> b_offset;
};

// Leading-dimension broadcast for matmul: dims must agree or be 1/missing.
inline BatchMap broadcast_batches(const Shape& as, const Shape& bs, std::size_t a_mat,
                                  std::size_t b_mat) {
    const std::size_t ra = as.size() - 2;
    const std::size_t rb = bs.size() - 2;
    const std::size_t r = std::max(ra, rb);
    BatchMap map;
    map.batch_shape.assign(r, 1);
    std::vector<std::size_t> da(r, 1), db(r, 1);
    for (std::size_t i = 0; i < r; ++i) {
        if (i >= r - ra) da[i] = as[i - (r - ra)];
        if (i >= r - rb) db[i] = bs[i - (r - rb)];
        if (da[i] != db[i] && da[i] != 1 && db[i] != 1) {
            fail(ErrorKind::dimension,
                 "matmul batch dimensions do not broadcast: " + shape_str(as) + " x " + shape_str(bs));
        }
        map.batch_shape[i] = std::max(da[i], db[i]);
    }
    const std::size_t total = shape_numel(map.batch_shape);
    map.a_offset.resize(total);
    map.b_offset.resize(total);
    std::vector<std::size_t> idx(r, 0);
    for (std::size_t t = 0; t < total; ++t) {
        std::size_t ao = 0, bo = 0, sa = 1, sb = 1;
        for (std::size_t i = r; i-- > 0;) {
            if (da[i] != 1) ao += idx[i] * sa;
            if (db[i] != 1) bo += idx[i] * sb;
            sa *= da[i];
            sb *= db[i];
        }
        map.a_offset[t] = ao * a_mat;
        map.b_offset[t] = bo * b_mat;
        for (std::size_t i = r; i-- > 0;) {
            if (++idx[i] < map.batch_shape[i]) break;
            idx[i] = 0;
        }
    }
    return map;
}

}  // namespace detail

// a[..., M, K] x b[..., K, N] -> [..., M, N] with leading-dim broadcasting.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() < 2 || b.rank() < 2 || a.dim(-1) != b.dim(-2)) {
        fail(ErrorKind::dimension,
             "matmul shape mismatch: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    const std::size_t m = a.dim(-2), k = a.dim(-1), n = b.dim(-1);
    auto map = std::make_shared<detail::BatchMap>(
        detail::broadcast_batches(a.shape(), b.shape(), m * k, k * n));
    const std::size_t batches = map->a_offset.size();

    // A shared right operand over a contiguous left batch is one tall GEMM.
    bool fused = true;
    for (std::size_t t = 0; t < batches && fused; ++t)
        fused = map->b_offset[t] == map->b_offset[0] && map->a_offset[t] == t * m * k;
    if (fused) {
        map->a_offset = {0};
        map->b_offset = {map->b_offset[0]};
    }
    const std::size_t mm = fused ? batches * m : m;

    std::vector<double> out(batches * m * n, 0.0);
    const double* ad = a.data().data();
    const double* bd = b.data().data();
    for (std::size_t t = 0; t < map->a_offset.size(); ++t) {
        detail::gemm_nn(ad + map->a_offset[t], bd + map->b_offset[t], out.data() + t * m * n, mm, k, n);
    }
    Shape shape = map->batch_shape;
    shape.push_back(m);
    shape.push_back(n);

    auto ai = a.impl_ptr();
    auto bi = b.impl_ptr();
    return detail::make_result(std::move(shape), std::move(out), {&a, &b},
                               [ai, bi, map, mm, k, n](const std::vector<double>& g) {
                                   const std::size_t batches = map->a_offset.size();
                                   const std::size_t m = mm;
                                   if (double* ga = detail::grad_target(*ai)) {
                                       std::vector<double> bt(k * n);
                                       for (std::size_t t = 0; t < batches; ++t) {
                                           detail::transpose_into(bi->data.data() + map->b_offset[t],
                                                                  bt.data(), k, n);
                                           detail::gemm_nn(g.data() + t * m * n, bt.data(),
                                                           ga + map->a_offset[t], m, n, k);
                                       }
                                   }
                                   if (double* gb = detail::grad_target(*bi)) {
                                       for (std::size_t t = 0; t < batches; ++t) {
                                           detail::gemm_tn(ai->data.data() + map->a_offset[t],
                                                           g.data() + t * m * n, gb + map->b_offset[t],
                                                           m, k, n);
                                       }
                                   }
                               });
}

// Swaps the last two dimensions.
inline Tensor transpose_last2(const Tensor& x) {
    if (x.rank() < 2) {
        fail(ErrorKind::dimension, "transpose_last2 needs rank >= 2, got " + shape_str(x.shape()));
    }
    const std::size_t r = x.dim(-2), c = x.dim(-1);
    const std::size_t batches = x.numel() / (r * c);
    std::vector<double> out(x.numel());
    for (std::size_t t = 0; t < batches; ++t) {
        detail::transpose_into(x.data().data() + t * r * c, out.data() + t * r * c, r, c);
    }
    Shape shape = x.shape();
    std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
    auto xi = x.impl_ptr();
    return detail::make_result(std::move(shape), std::move(out), {&x},
                               [xi, r, c, batches](const std::vector<double>& g) {
                                   if (double* gx = detail::grad_target(*xi)) {
                                       for (std::size_t t = 0; t < batches; ++t) {
                                           const double* src = g.data() + t * r * c;
                                           double* dst = gx + t * r * c;
                                           for (std::size_t i = 0; i < c; ++i) {
                                               for (std::size_t j = 0; j < r; ++j) {
                                                   dst[j * c + i] += src[i * r + j];
                                               }
                                           }
                                       }
                                   }
                               });
}

// a + b where b's shape is a suffix of a's shape (same shape, bias, or mask).
inline Tensor add(const Tensor& a, const Tensor& b) {
    const auto& as = a.shape();
    const auto& bs = b.shape();
    bool ok = bs.size() <= as.size();
    for (std::size_t i = 0; ok && i < bs.size(); ++i) {
        ok = bs[bs.size() - 1 - i] == as[as.size() - 1 - i];
    }
    if (!ok) {
        fail(ErrorKind::dimension, "add shape mismatch: " + shape_str(as) + " + " + shape_str(bs));
    }
    const std::size_t inner = b.numel();
    const std::size_t reps = a.numel() / inner;
    std::vector<double> out(a.values());
    const double* bd = b.data().data();
    for (std::size_t r = 0; r < reps; ++r) {
        double* row = out.data() + r * inner;
        for (std::size_t j = 0; j < inner; ++j) {
            row[j] += bd[j];
        }
    }
    auto ai = a.impl_ptr();
    auto bi = b.impl_ptr();
    return detail::make_result(as, std::move(out), {&a, &b},
                               [ai, bi, inner, reps](const std::vector<double>& g) {
                                   if (double* ga = detail::grad_target(*ai)) {
                                       for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                                   }
                                   if (double* gb = detail::grad_target(*bi)) {
                                       for (std::size_t r = 0; r < reps; ++r) {
                                           const double* row = g.data() + r * inner;
                                           for (std::size_t j = 0; j < inner; ++j) gb[j] += row[j];
                                       }
                                   }
                               });
}

// Elementwise product of equal shapes.
inline Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        fail(ErrorKind::dimension,
             "mul shape mismatch: " + shape_str(a.shape()) + " * " + shape_str(b.shape()));
    }
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    auto ai = a.impl_ptr();
    auto bi = b.impl_ptr();
    return detail::make_result(a.shape(), std::move(out), {&a, &b},
                               [ai, bi](const std::vector<double>& g) {
                                   if (double* ga = detail::grad_target(*ai)) {
                                       for (std::size_t i = 0; i < g.size(); ++i)
                                           ga[i] += g[i] * bi->data[i];
                                   }
                                   if (double* gb = detail::grad_target(*bi)) {
                                       for (std::size_t i = 0; i < g.size(); ++i)
                                           gb[i] += g[i] * ai->data[i];
                                   }
                               });
}

inline Tensor scale(const Tensor& x, double s) {
    std::vector<double> out(x.values());
    for (double& v : out) v *= s;
    auto xi = x.impl_ptr();
    return detail::make_result(x.shape(), std::move(out), {&x}, [xi, s](const std::vector<double>& g) {
        if (double* gx = detail::grad_target(*xi)) {
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += s * g[i];
        }
    });
}

inline Tensor sum(const Tensor& x) {
    double total = 0.0;
    for (double v : x.data()) total += v;
    auto xi = x.impl_ptr();
    return detail::make_result({}, {total}, {&x}, [xi](const std::vector<double>& g) {
        if (double* gx = detail::grad_target(*xi)) {
            for (std::size_t i = 0; i < xi->data.size(); ++i) gx[i] += g[0];
        }
    });
}

// Mean over one axis; the axis is removed from the result.
inline Tensor mean_axis(const Tensor& x, std::size_t axis) {
    if (axis >= x.rank()) {
        fail(ErrorKind::dimension,
             "mean_axis axis " + std::to_string(axis) + " out of range for " + shape_str(x.shape()));
    }
    const auto& s = x.shape();
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    const std::size_t n = s[axis];
    std::vector<double> out(outer * inner, 0.0);
    const double* xd = x.data().data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t a = 0; a < n; ++a) {
            const double* src = xd + (o * n + a) * inner;
            double* dst = out.data() + o * inner;
            for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
        }
    }
    const double inv = 1.0 / static_cast<double>(n);
    for (double& v : out) v *= inv;
    Shape shape;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i != axis) shape.push_back(s[i]);
    }
    auto xi = x.impl_ptr();
    return detail::make_result(std::move(shape), std::move(out), {&x},
                               [xi, outer, inner, n, inv](const std::vector<double>& g) {
                                   if (double* gx = detail::grad_target(*xi)) {
                                       for (std::size_t o = 0; o < outer; ++o) {
                                           for (std::size_t a = 0; a < n; ++a) {
                                               double* dst = gx + (o * n + a) * inner;
                                               const double* src = g.data() + o * inner;
                                               for (std::size_t i = 0; i < inner; ++i)
                                                   dst[i] += inv * src[i];
                                           }
                                       }
                                   }
                               });
}

// Joins tensors that agree on all but the last dimension.
inline Tensor concat_lastdim(const std::vector<Tensor>& parts) {
    if (parts.empty()) {
        fail(ErrorKind::dimension, "concat_lastdim of zero tensors");
    }
    Shape lead = parts[0].shape();
    lead.pop_back();
    std::vector<std::size_t> widths;
    std::size_t total_w = 0;
    for (const auto& p : parts) {
        Shape l = p.shape();
        const std::size_t w = l.back();
        l.pop_back();
        if (l != lead) {
            fail(ErrorKind::dimension, "concat_lastdim shape mismatch: " + shape_str(parts[0].shape()) +
                                           " vs " + shape_str(p.shape()));
        }
        widths.push_back(w);
        total_w += w;
    }
    const std::size_t rows = shape_numel(lead);
    std::vector<double> out(rows * total_w);
    std::size_t off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const double* src = parts[k].data().data();
        for (std::size_t r = 0; r < rows; ++r) {
            std::copy_n(src + r * widths[k], widths[k], out.data() + r * total_w + off);
        }
        off += widths[k];
    }
    Shape shape = lead;
    shape.push_back(total_w);
    std::vector<std::shared_ptr<detail::TensorImpl>> impls;
    for (const auto& p : parts) impls.push_back(p.impl_ptr());
    return detail::make_result(std::move(shape), std::move(out), parts,
                               [impls, widths, rows, total_w](const std::vector<double>& g) {
                                   std::size_t off = 0;
                                   for (std::size_t k = 0; k < impls.size(); ++k) {
                                       if (double* gp = detail::grad_target(*impls[k])) {
                                           for (std::size_t r = 0; r < rows; ++r) {
                                               const double* src = g.data() + r * total_w + off;
                                               double* dst = gp + r * widths[k];
                                               for (std::size_t j = 0; j < widths[k]; ++j)
                                                   dst[j] += src[j];
                                           }
                                       }
                                       off += widths[k];
                                   }
                               });
}

inline Tensor relu(const Tensor& x) {
    std::vector<double> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
    auto xi = x.impl_ptr();
    return detail::make_result(x.shape(), std::move(out), {&x}, [xi](const std::vector<double>& g) {
        if (double* gx = detail::grad_target(*xi)) {
            // subgradient at exactly 0 is 0
            for (std::size_t i = 0; i < g.size(); ++i)
                if (xi->data[i] > 0.0) gx[i] += g[i];
        }
    });
}

// tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
inline Tensor gelu(const Tensor& x) {
    constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
    constexpr double a = 0.044715;
    auto th = std::make_shared<std::vector<double>>(x.numel());
    std::vector<double> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = x[i];
        // tanh(u) = 1 - 2 / (exp(2u) + 1); exp is markedly cheaper than tanh in libm.
        (*th)[i] = 1.0 - 2.0 / (std::exp(2.0 * c * (v + a * v * v * v)) + 1.0);
        out[i] = 0.5 * v * (1.0 + (*th)[i]);
    }
    auto xi = x.impl_ptr();
    return detail::make_result(x.shape(), std::move(out), {&x}, [xi, th](const std::vector<double>& g) {
        if (double* gx = detail::grad_target(*xi)) {
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double v = xi->data[i];
                const double t = (*th)[i];
                const double du = c * (1.0 + 3.0 * a * v * v);
                gx[i] += g[i] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du);
            }
        }
    });
}

// Row-wise softmax over the last dimension, stabilized by max subtraction.
inline Tensor softmax_lastdim(const Tensor& x) {
    if (x.rank() < 1) {
        fail(ErrorKind::dimension, "softmax_lastdim on a scalar");
    }
    const std::size_t n = x.dim(-1);
    const std::size_t rows = x.numel() / n;
    auto y = std::make_shared<std::vector<double>>(x.numel());
    const double* xd = x.data().data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = xd + r * n;
        double* out = y->data() + r * n;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, in[j]);
        if (!(mx > kMaskedThreshold)) {
            fail(ErrorKind::masked_row, "softmax row " + std::to_string(r) + " is entirely masked");
        }
        double total = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            out[j] = std::exp(in[j] - mx);
            total += out[j];
        }
        const double inv = 1.0 / total;
        for (std::size_t j = 0; j < n; ++j) out[j] *= inv;
    }
    auto xi = x.impl_ptr();
    return detail::make_result(x.shape(), *y, {&x}, [xi, y, n, rows](const std::vector<double>& g) {
        if (double* gx = detail::grad_target(*xi)) {
            for (std::size_t r = 0; r < rows; ++r) {
                const double* yr = y->data() + r * n;
                const double* gr = g.data() + r * n;
                double dot = 0.0;
                for (std::size_t j = 0; j < n; ++j) dot += yr[j] * gr[j];
                double* out = gx + r * n;
                for (std::size_t j = 0; j < n; ++j) out[j] += yr[j] * (gr[j] - dot);
            }
        }
    });
}

// Inverted dropout: survivors are scaled by 1/(1-p) so eval mode is identity.
inline Tensor dropout(const Tensor& x, double p, Mode mode, Rng& rng) {
    if (!(p >= 0.0 && p < 1.0)) {
        fail(ErrorKind::parameter, "dropout probability must be in [0, 1), got " + std::to_string(p));
    }
    if (mode == Mode::eval || p == 0.0) {
        return x;
    }
    const double keep_scale = 1.0 / (1.0 - p);
    auto mask = std::make_shared<std::vector<double>>(x.numel());
    // Each 64-bit draw yields two 32-bit uniforms; drop when u < p * 2^32.
    const auto threshold = static_cast<std::uint64_t>(std::ldexp(p, 32));
    std::vector<double> out(x.numel());
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (i % 2 == 0) bits = rng();
        const std::uint64_t u = i % 2 == 0 ? bits >> 32 : bits & 0xffffffffULL;
        (*mask)[i] = u < threshold ? 0.0 : keep_scale;
        out[i] = x[i] * (*mask)[i];
    }
    auto xi = x.impl_ptr();
    return detail::make_result(x.shape(), std::move(out), {&x}, [xi, mask](const std::vector<double>& g) {
        if (double* gx = detail::grad_target(*xi)) {
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (*mask)[i];
        }
    });
}

// Cross-correlation (no kernel flip) with symmetric zero padding.
// x[B, C_in, L], w[C_out, C_in, k], bias[C_out] -> [B, C_out, L_out]
inline Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride,
                     std::size_t padding) {
    if (x.rank() != 3 || w.rank() != 3 || bias.rank() != 1 || x.dim(1) != w.dim(1) ||
        bias.dim(0) != w.dim(0)) {
        fail(ErrorKind::dimension, "conv1d shape mismatch: x " + shape_str(x.shape()) + ", w " +
                                       shape_str(w.shape()) + ", bias " + shape_str(bias.shape()));
    }
    if (stride == 0) {
        fail(ErrorKind::parameter, "conv1d stride must be positive");
    }
    const std::size_t nb = x.dim(0), cin = x.dim(1), len = x.dim(2);
    const std::size_t cout = w.dim(0), k = w.dim(2);
    const std::size_t lp = len + 2 * padding;
    if (lp < k) {
        fail(ErrorKind::dimension, "conv1d kernel " + std::to_string(k) + " larger than padded input " +
                                       std::to_string(lp));
    }
    const std::size_t lout = (lp - k) / stride + 1;

    // im2col per sample: col[b] is [cin * k, lout], so conv = W[cout, cin * k] x col.
    const std::size_t ck = cin * k;
    auto col = std::make_shared<std::vector<double>>(nb * ck * lout, 0.0);
    const double* xd = x.data().data();
    for (std::size_t b = 0; b < nb; ++b) {
        for (std::size_t c = 0; c < cin; ++c) {
            const double* xrow = xd + (b * cin + c) * len;
            for (std::size_t q = 0; q < k; ++q) {
                double* dst = col->data() + (b * ck + c * k + q) * lout;
                for (std::size_t t = 0; t < lout; ++t) {
                    const std::size_t pos = t * stride + q;
                    if (pos >= padding && pos - padding < len) dst[t] = xrow[pos - padding];
                }
            }
        }
    }
    std::vector<double> out(nb * cout * lout);
    const double* wd = w.data().data();
    for (std::size_t b = 0; b < nb; ++b) {
        double* ob = out.data() + b * cout * lout;
        for (std::size_t o = 0; o < cout; ++o) std::fill_n(ob + o * lout, lout, bias[o]);
        detail::gemm_nn(wd, col->data() + b * ck * lout, ob, cout, ck, lout);
    }

    auto xi = x.impl_ptr();
    auto wi = w.impl_ptr();
    auto bi = bias.impl_ptr();
    return detail::make_result(
        {nb, cout, lout}, std::move(out), {&x, &w, &bias},
        [xi, wi, bi, col, nb, cin, len, cout, k, ck, lout, stride, padding](const std::vector<double>& g) {
            double* gx = detail::grad_target(*xi);
            double* gw = detail::grad_target(*wi);
            double* gb = detail::grad_target(*bi);
            std::vector<double> colt(gw ? lout * ck : 0);
            std::vector<double> gcol(gx ? ck * lout : 0);
            for (std::size_t b = 0; b < nb; ++b) {
                const double* gbat = g.data() + b * cout * lout;
                if (gb) {
                    for (std::size_t o = 0; o < cout; ++o) {
                        double s = 0.0;
                        for (std::size_t t = 0; t < lout; ++t) s += gbat[o * lout + t];
                        gb[o] += s;
                    }
                }
                if (gw) {
                    detail::transpose_into(col->data() + b * ck * lout, colt.data(), ck, lout);
                    detail::gemm_nn(gbat, colt.data(), gw, cout, lout, ck);
                }
                if (gx) {
                    std::fill(gcol.begin(), gcol.end(), 0.0);
                    detail::gemm_tn(wi->data.data(), gbat, gcol.data(), cout, ck, lout);
                    for (std::size_t c = 0; c < cin; ++c) {
                        double* dst = gx + (b * cin + c) * len;
                        for (std::size_t q = 0; q < k; ++q) {
                            const double* src = gcol.data() + (c * k + q) * lout;
                            for (std::size_t t = 0; t < lout; ++t) {
                                const std::size_t pos = t * stride + q;
                                if (pos >= padding && pos - padding < len) dst[pos - padding] += src[t];
                            }
                        }
                    }
                }
            }
        });
}

struct BatchNormState {
    std::vector<double> running_mean;
    std::vector<double> running_var;
    double momentum = 0.1;
    double eps = 1e-5;

    BatchNormState() = default;
    explicit BatchNormState(std::size_t channels)
        : running_mean(channels, 0.0), running_var(channels, 1.0) {}
};

namespace detail {

// Normalized activations and per-group inverse std kept for backward.
struct NormSaved {
    std::vector<double> xhat;
    std::vector<double> invstd;
};

}  // namespace detail

// Training-mode batch normalization over (B, L) per channel; updates `state`.
inline Tensor batchnorm1d_train(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                                BatchNormState& state) {
    if (x.rank() != 3 || gamma.numel() != x.dim(1) || beta.numel() != x.dim(1) ||
        state.running_mean.size() != x.dim(1)) {
        fail(ErrorKind::dimension, "batchnorm1d shape mismatch: x " + shape_str(x.shape()) +
                                       ", gamma " + shape_str(gamma.shape()));
    }
    const std::size_t nb = x.dim(0), nc = x.dim(1), len = x.dim(2);
    const std::size_t n = nb * len;
    if (n <= 1) {
        fail(ErrorKind::degenerate, "batchnorm1d in train mode needs B*L > 1, got B*L = " +
                                        std::to_string(n));
    }
    auto saved = std::make_shared<detail::NormSaved>();
    saved->xhat.resize(x.numel());
    saved->invstd.resize(nc);
    std::vector<double> out(x.numel());
    const double* xd = x.data().data();
    for (std::size_t c = 0; c < nc; ++c) {
        double mean = 0.0;
        for (std::size_t b = 0; b < nb; ++b) {
            const double* row = xd + (b * nc + c) * len;
            for (std::size_t t = 0; t < len; ++t) mean += row[t];
        }
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t b = 0; b < nb; ++b) {
            const double* row = xd + (b * nc + c) * len;
            for (std::size_t t = 0; t < len; ++t) var += (row[t] - mean) * (row[t] - mean);
        }
        var /= static_cast<double>(n);
        const double invstd = 1.0 / std::sqrt(var + state.eps);
        saved->invstd[c] = invstd;
        for (std::size_t b = 0; b < nb; ++b) {
            const std::size_t off = (b * nc + c) * len;
            for (std::size_t t = 0; t < len; ++t) {
                const double xh = (xd[off + t] - mean) * invstd;
                saved->xhat[off + t] = xh;
                out[off + t] = gamma[c] * xh + beta[c];
            }
        }
        const double unbiased = var * static_cast<double>(n) / static_cast<double>(n - 1);
        state.running_mean[c] = (1.0 - state.momentum) * state.running_mean[c] + state.momentum * mean;
        state.running_var[c] = (1.0 - state.momentum) * state.running_var[c] + state.momentum * unbiased;
    }
    auto xi = x.impl_ptr();
    auto gi = gamma.impl_ptr();
    auto bi = beta.impl_ptr();
    return detail::make_result(
        x.shape(), std::move(out), {&x, &gamma, &beta},
        [xi, gi, bi, saved, nb, nc, len, n](const std::vector<double>& g) {
            double* gx = detail::grad_target(*xi);
            double* gg = detail::grad_target(*gi);
            double* gbeta = detail::grad_target(*bi);
            for (std::size_t c = 0; c < nc; ++c) {
                double sum_g = 0.0, sum_gx = 0.0;
                for (std::size_t b = 0; b < nb; ++b) {
                    const std::size_t off = (b * nc + c) * len;
                    for (std::size_t t = 0; t < len; ++t) {
                        sum_g += g[off + t];
                        sum_gx += g[off + t] * saved->xhat[off + t];
                    }
                }
                if (gg) gg[c] += sum_gx;
                if (gbeta) gbeta[c] += sum_g;
                if (gx) {
                    const double gam = gi->data[c];
                    const double k = gam * saved->invstd[c] / static_cast<double>(n);
                    for (std::size_t b = 0; b < nb; ++b) {
                        const std::size_t off = (b * nc + c) * len;
                        for (std::size_t t = 0; t < len; ++t) {
                            gx[off + t] += k * (static_cast<double>(n) * g[off + t] - sum_g -
                                                saved->xhat[off + t] * sum_gx);
                        }
                    }
                }
            }
        });
}

// Eval-mode batch normalization with frozen running statistics.
inline Tensor batchnorm1d_eval(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                               const BatchNormState& state) {
    if (x.rank() != 3 || gamma.numel() != x.dim(1) || beta.numel() != x.dim(1) ||
        state.running_mean.size() != x.dim(1)) {
        fail(ErrorKind::dimension, "batchnorm1d shape mismatch: x " + shape_str(x.shape()) +
                                       ", gamma " + shape_str(gamma.shape()));
    }
    const std::size_t nb = x.dim(0), nc = x.dim(1), len = x.dim(2);
    auto scale_c = std::make_shared<std::vector<double>>(nc);
    std::vector<double> out(x.numel());
    for (std::size_t c = 0; c < nc; ++c) {
        const double invstd = 1.0 / std::sqrt(state.running_var[c] + state.eps);
        (*scale_c)[c] = gamma[c] * invstd;
        for (std::size_t b = 0; b < nb; ++b) {
            const std::size_t off = (b * nc + c) * len;
            for (std::size_t t = 0; t < len; ++t) {
                out[off + t] = (x[off + t] - state.running_mean[c]) * invstd * gamma[c] + beta[c];
            }
        }
    }
    auto xi = x.impl_ptr();
    auto gi = gamma.impl_ptr();
    auto bi = beta.impl_ptr();
    const std::vector<double> mean = state.running_mean;
    const std::vector<double> var = state.running_var;
    const double eps = state.eps;
    return detail::make_result(
        x.shape(), std::move(out), {&x, &gamma, &beta},
        [xi, gi, bi, scale_c, mean, var, eps, nb, nc, len](const std::vector<double>& g) {
            double* gx = detail::grad_target(*xi);
            double* gg = detail::grad_target(*gi);
            double* gbeta = detail::grad_target(*bi);
            for (std::size_t c = 0; c < nc; ++c) {
                const double invstd = 1.0 / std::sqrt(var[c] + eps);
                for (std::size_t b = 0; b < nb; ++b) {
                    const std::size_t off = (b * nc + c) * len;
                    for (std::size_t t = 0; t < len; ++t) {
                        if (gx) gx[off + t] += g[off + t] * (*scale_c)[c];
                        if (gg) gg[c] += g[off + t] * (xi->data[off + t] - mean[c]) * invstd;
                        if (gbeta) gbeta[c] += g[off + t];
                    }
                }
            }
        });
}

inline Tensor batchnorm1d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                          BatchNormState& state, Mode mode) {
    return mode == Mode::train ? batchnorm1d_train(x, gamma, beta, state)
                               : batchnorm1d_eval(x, gamma, beta, state);
}

// Normalizes over the last dimension (eps 1e-5).
inline Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5) {
    if (x.rank() < 1 || gamma.numel() != x.dim(-1) || beta.numel() != x.dim(-1)) {
        fail(ErrorKind::dimension, "layernorm shape mismatch: x " + shape_str(x.shape()) + ", gamma " +
                                       shape_str(gamma.shape()));
    }
    const std::size_t d = x.dim(-1);
    const std::size_t rows = x.numel() / d;
    auto saved = std::make_shared<detail::NormSaved>();
    saved->xhat.resize(x.numel());
    saved->invstd.resize(rows);
    std::vector<double> out(x.numel());
    const double* xd = x.data().data();
    const double* gd = gamma.data().data();
    const double* bd = beta.data().data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = xd + r * d;
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= static_cast<double>(d);
        const double invstd = 1.0 / std::sqrt(var + eps);
        saved->invstd[r] = invstd;
        for (std::size_t j = 0; j < d; ++j) {
            const double xh = (row[j] - mean) * invstd;
            saved->xhat[r * d + j] = xh;
            out[r * d + j] = gd[j] * xh + bd[j];
        }
    }
    auto xi = x.impl_ptr();
    auto gi = gamma.impl_ptr();
    auto bi = beta.impl_ptr();
    return detail::make_result(
        x.shape(), std::move(out), {&x, &gamma, &beta},
        [xi, gi, bi, saved, d, rows](const std::vector<double>& g) {
            double* gx = detail::grad_target(*xi);
            double* gg = detail::grad_target(*gi);
            double* gbeta = detail::grad_target(*bi);
            const double* gam = gi->data.data();
            for (std::size_t r = 0; r < rows; ++r) {
                const double* gr = g.data() + r * d;
                const double* xh = saved->xhat.data() + r * d;
                double sum_gh = 0.0, sum_ghx = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    const double gh = gr[j] * gam[j];
                    sum_gh += gh;
                    sum_ghx += gh * xh[j];
                    if (gg) gg[j] += gr[j] * xh[j];
                    if (gbeta) gbeta[j] += gr[j];
                }
                if (gx) {
                    const double k = saved->invstd[r] / static_cast<double>(d);
                    for (std::size_t j = 0; j < d; ++j) {
                        gx[r * d + j] +=
                            k * (static_cast<double>(d) * gr[j] * gam[j] - sum_gh - xh[j] * sum_ghx);
                    }
                }
            }
        });
}

// Mean over the batch of -log softmax(logits)[label], via fused log-sum-exp.
inline Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
    if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
        fail(ErrorKind::dimension, "cross_entropy shape mismatch: logits " + shape_str(logits.shape()) +
                                       ", labels [" + std::to_string(labels.size()) + "]");
    }
    const std::size_t nb = logits.dim(0), nk = logits.dim(1);
    for (std::size_t b = 0; b < nb; ++b) {
        if (labels[b] < 0 || static_cast<std::size_t>(labels[b]) >= nk) {
            fail(ErrorKind::label, "label " + std::to_string(labels[b]) + " at batch index " +
                                       std::to_string(b) + " outside [0, " + std::to_string(nk) + ")");
        }
    }
    auto probs = std::make_shared<std::vector<double>>(logits.numel());
    double loss = 0.0;
    for (std::size_t b = 0; b < nb; ++b) {
        const double* row = logits.data().data() + b * nk;
        double mx = row[0];
        for (std::size_t j = 1; j < nk; ++j) mx = std::max(mx, row[j]);
        double total = 0.0;
        for (std::size_t j = 0; j < nk; ++j) total += std::exp(row[j] - mx);
        const double lse = mx + std::log(total);
        loss += lse - row[labels[b]];
        for (std::size_t j = 0; j < nk; ++j) (*probs)[b * nk + j] = std::exp(row[j] - lse);
    }
    loss /= static_cast<double>(nb);
    auto li = logits.impl_ptr();
    auto lab = std::make_shared<std::vector<int>>(labels.begin(), labels.end());
    return detail::make_result({}, {loss}, {&logits}, [li, probs, lab, nb, nk](const std::vector<double>& g) {
        if (double* gl = detail::grad_target(*li)) {
            const double s = g[0] / static_cast<double>(nb);
            for (std::size_t b = 0; b < nb; ++b) {
                for (std::size_t j = 0; j < nk; ++j) {
                    const double onehot = static_cast<int>(j) == (*lab)[b] ? 1.0 : 0.0;
                    gl[b * nk + j] += s * ((*probs)[b * nk + j] - onehot);
                }
            }
        }
    });
}

// x[..., in] W[in, out] + b[out]
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    return add(matmul(x, w), b);
}

}  // namespace amc
