#pragma once

// Forward-only attention kernels and the latency benchmark.
//
// The dense kernel scores every (i, j) pair and adds the mask; the banded and
// triangular kernels visit only the allowed columns of each row. All three
// share one inner loop so that timing differences come from the work done.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "amc/attention.hpp"
#include "amc/model.hpp"

namespace amc {

namespace detail {

// One head over all L rows; row i visits columns range(i) = [lo, hi].
// mask, when given, is an L x L additive mask applied to the scaled scores.
template <class Range>
inline void attention_rows(const double* q, const double* k, const double* v, double* out, std::size_t ld_out,
                           std::size_t L, std::size_t d, const double* mask, Range range, std::vector<double>& s) {
    const double sc = 1.0 / std::sqrt(static_cast<double>(d));
    s.resize(L);
    for (std::size_t i = 0; i < L; ++i) {
        const auto [lo, hi] = range(i);
        const double* qi = q + i * d;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = lo; j <= hi; ++j) {
            const double* kj = k + j * d;
            double dot = 0;
            for (std::size_t c = 0; c < d; ++c) dot += qi[c] * kj[c];
            double val = dot * sc;
            if (mask) val += mask[i * L + j];
            s[j] = val;
            mx = std::max(mx, val);
        }
        require(mx > kMaskedThreshold, ErrorKind::masked_row, "attention row " + std::to_string(i) + " fully masked");
        double z = 0;
        for (std::size_t j = lo; j <= hi; ++j) z += (s[j] = std::exp(s[j] - mx));
        double* oi = out + i * ld_out;
        std::fill(oi, oi + d, 0.0);
        for (std::size_t j = lo; j <= hi; ++j) {
            const double p = s[j] / z;
            const double* vj = v + j * d;
            for (std::size_t c = 0; c < d; ++c) oi[c] += p * vj[c];
        }
    }
}

struct ColumnRange {
    std::size_t lo, hi;
};

inline void dense_head(const double* q, const double* k, const double* v, double* out, std::size_t ld_out,
                       std::size_t L, std::size_t d, const double* mask, std::vector<double>& s) {
    attention_rows(q, k, v, out, ld_out, L, d, mask, [L](std::size_t) { return ColumnRange{0, L - 1}; }, s);
}

inline void banded_head(const double* q, const double* k, const double* v, double* out, std::size_t ld_out,
                        std::size_t L, std::size_t d, std::size_t w, std::vector<double>& s) {
    const std::size_t half = w / 2;
    attention_rows(q, k, v, out, ld_out, L, d, nullptr,
                   [L, half](std::size_t i) { return ColumnRange{i > half ? i - half : 0, std::min(L - 1, i + half)}; },
                   s);
}

inline void causal_head(const double* q, const double* k, const double* v, double* out, std::size_t ld_out,
                        std::size_t L, std::size_t d, std::vector<double>& s) {
    attention_rows(q, k, v, out, ld_out, L, d, nullptr, [](std::size_t i) { return ColumnRange{0, i}; }, s);
}

inline void check_qkv(const Tensor& q, const Tensor& k, const Tensor& v) {
    require(q.rank() >= 2 && q.shape() == k.shape() && q.shape() == v.shape(), ErrorKind::dimension,
            "Q, K, V must share a shape [..., L, d], got " + shape_str(q.shape()) + ", " + shape_str(k.shape()) +
                ", " + shape_str(v.shape()));
    require(q.numel() > 0, ErrorKind::dimension, "empty attention input");
}

template <class Head>
inline Tensor per_slice(const Tensor& q, const Tensor& k, const Tensor& v, Head head) {
    check_qkv(q, k, v);
    const std::size_t L = q.dim(q.rank() - 2), d = q.dim(q.rank() - 1), slices = q.numel() / (L * d);
    std::vector<double> out(q.numel()), s;
    for (std::size_t b = 0; b < slices; ++b) {
        const std::size_t off = b * L * d;
        head(q.data().data() + off, k.data().data() + off, v.data().data() + off, out.data() + off, L, d, s);
    }
    return Tensor(q.shape(), std::move(out));
}

}  // namespace detail

// softmax(Q K^T / sqrt(d) + M) V over every (i, j) pair; Q, K, V: [..., L, d].
inline Tensor dense_attention_forward(const Tensor& q, const Tensor& k, const Tensor& v,
                                      const AttentionMask* mask = nullptr) {
    const std::size_t L = q.rank() >= 2 ? q.dim(q.rank() - 2) : 0;
    require(!mask || mask->length() == L, ErrorKind::dimension, "mask length does not match L");
    const double* m = mask ? mask->additive().data().data() : nullptr;
    return detail::per_slice(q, k, v,
                             [m](const double* qp, const double* kp, const double* vp, double* op, std::size_t L_,
                                 std::size_t d, std::vector<double>& s) { detail::dense_head(qp, kp, vp, op, d, L_, d, m, s); });
}

// Scores only |i - j| <= w / 2. A window of 2L or more covers every pair, so
// the dense kernel is used instead.
inline Tensor banded_attention_forward(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t w) {
    detail::check_qkv(q, k, v);
    const std::size_t L = q.dim(q.rank() - 2);
    if (w >= 2 * L) return dense_attention_forward(q, k, v);
    return detail::per_slice(q, k, v,
                             [w](const double* qp, const double* kp, const double* vp, double* op, std::size_t L_,
                                 std::size_t d, std::vector<double>& s) { detail::banded_head(qp, kp, vp, op, d, L_, d, w, s); });
}

// Scores only j <= i.
inline Tensor causal_attention_forward(const Tensor& q, const Tensor& k, const Tensor& v) {
    return detail::per_slice(q, k, v,
                             [](const double* qp, const double* kp, const double* vp, double* op, std::size_t L,
                                std::size_t d, std::vector<double>& s) { detail::causal_head(qp, kp, vp, op, d, L, d, s); });
}

// Scalar score evaluations (each costing d multiply-adds) per head.
inline std::size_t dense_score_count(std::size_t L) { return L * L; }
inline std::size_t causal_score_count(std::size_t L) { return L * (L + 1) / 2; }
inline std::size_t banded_score_count(std::size_t L, std::size_t w) {
    if (w >= 2 * L) return dense_score_count(L);
    const std::size_t half = w / 2;
    std::size_t n = 0;
    for (std::size_t i = 0; i < L; ++i) n += std::min(L - 1, i + half) - (i > half ? i - half : 0) + 1;
    return n;
}

enum class BenchKernel { dense, specialized };

inline std::string_view kernel_name(BenchKernel k) { return k == BenchKernel::dense ? "dense" : "specialized"; }

inline std::optional<BenchKernel> parse_kernel(std::string_view s) {
    if (s == "dense") return BenchKernel::dense;
    if (s == "specialized") return BenchKernel::specialized;
    return std::nullopt;
}

// Batch-1 self-attention block: Q/K/V projections, per-head attention with
// the chosen kernel, concatenation and output projection. Buffers are reused
// across calls.
class AttentionBlock {
   public:
    AttentionBlock(const AttentionConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
        cfg_.validate();
        Rng rng = derive_rng(seed, {0x4243});
        params_ = init_attention(cfg_, rng);
        std::uniform_real_distribution<double> uni(-0.1, 0.1);
        std::vector<Tensor*> biases{&params_.bo};
        for (auto& h : params_.heads) biases.insert(biases.end(), {&h.bq, &h.bk, &h.bv});
        for (Tensor* t : biases)
            for (double& x : t->mutable_data()) x = uni(rng);
    }

    const AttentionConfig& config() const { return cfg_; }
    const AttentionParams& params() const { return params_; }

    void forward(const double* h, std::size_t L, BenchKernel kernel, double* out) {
        const std::size_t d = cfg_.d_model, dk = cfg_.head_dim();
        q_.resize(L * dk);
        k_.resize(L * dk);
        v_.resize(L * dk);
        concat_.resize(L * d);
        const AttentionMask* mask = nullptr;
        const bool masked = cfg_.variant != AttentionVariant::baseline;
        if (kernel == BenchKernel::dense && masked) {
            if (!mask_ || mask_->length() != L) mask_ = cached_mask(cfg_.variant, L, cfg_.mask_window());
            mask = mask_.get();
        }
        for (std::size_t hi = 0; hi < cfg_.heads; ++hi) {
            const auto& p = params_.heads[hi];
            project(h, L, p.wq, p.bq, q_);
            project(h, L, p.wk, p.bk, k_);
            project(h, L, p.wv, p.bv, v_);
            double* o = concat_.data() + hi * dk;
            if (kernel == BenchKernel::dense || !masked) {
                detail::dense_head(q_.data(), k_.data(), v_.data(), o, d, L, dk,
                                   mask ? mask->additive().data().data() : nullptr, s_);
            } else if (cfg_.variant == AttentionVariant::causal) {
                detail::causal_head(q_.data(), k_.data(), v_.data(), o, d, L, dk, s_);
            } else if (cfg_.window >= 2 * L) {
                detail::dense_head(q_.data(), k_.data(), v_.data(), o, d, L, dk, nullptr, s_);
            } else {
                detail::banded_head(q_.data(), k_.data(), v_.data(), o, d, L, dk, cfg_.window, s_);
            }
        }
        for (std::size_t i = 0; i < L; ++i) std::copy_n(params_.bo.data().data(), d, out + i * d);
        detail::gemm_nn(concat_.data(), params_.wo.data().data(), out, L, d, d);
    }

   private:
    static void project(const double* h, std::size_t L, const Tensor& w, const Tensor& b, std::vector<double>& dst) {
        const std::size_t d = w.dim(0), dk = w.dim(1);
        for (std::size_t i = 0; i < L; ++i) std::copy_n(b.data().data(), dk, dst.data() + i * dk);
        detail::gemm_nn(h, w.data().data(), dst.data(), L, d, dk);
    }

    AttentionConfig cfg_;
    AttentionParams params_;
    std::shared_ptr<const AttentionMask> mask_;
    std::vector<double> q_, k_, v_, concat_, s_;
};

struct BenchConfig {
    std::vector<std::size_t> lengths{64, 128, 256, 512};
    std::size_t warmup = 50;
    std::size_t iterations = 500;
    std::uint64_t seed = 0;

    void validate() const {
        require(!lengths.empty(), ErrorKind::parameter, "bench needs at least one sequence length");
        for (auto L : lengths) require(L >= 1, ErrorKind::parameter, "bench sequence lengths must be >= 1");
        require(warmup >= 1, ErrorKind::parameter, "bench warmup must be >= 1");
        require(iterations >= 100, ErrorKind::parameter, "bench iterations must be >= 100");
    }
};

struct LatencyStats {
    double mean_us = 0;
    double std_us = 0;  // population std over iterations
    std::size_t iterations = 0;
};

struct BenchRow {
    AttentionVariant variant;
    BenchKernel kernel;
    std::size_t length;
    LatencyStats stats;
};

struct BenchResult {
    std::vector<BenchRow> rows;
    std::vector<std::string> warnings;
};

// Smallest positive step of the monotonic clock observed over a short probe.
inline double timer_resolution_us() {
    using clock = std::chrono::steady_clock;
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i < 200; ++i) {
        const auto a = clock::now();
        auto b = clock::now();
        while (b == a) b = clock::now();
        best = std::min(best, std::chrono::duration<double, std::micro>(b - a).count());
    }
    return best;
}

inline std::vector<std::string> timer_warnings() {
    const double res = timer_resolution_us();
    if (res <= 1.0) return {};
    return {"timer resolution " + std::to_string(res) + " us is coarser than 1 us; latencies are imprecise"};
}

template <class F>
inline LatencyStats time_calls(F&& f, std::size_t warmup, std::size_t iterations) {
    using clock = std::chrono::steady_clock;
    for (std::size_t i = 0; i < warmup; ++i) f();
    std::vector<double> us(iterations);
    for (auto& t : us) {
        const auto a = clock::now();
        f();
        t = std::chrono::duration<double, std::micro>(clock::now() - a).count();
    }
    LatencyStats s;
    s.iterations = iterations;
    s.mean_us = std::accumulate(us.begin(), us.end(), 0.0) / static_cast<double>(iterations);
    double var = 0;
    for (double t : us) var += (t - s.mean_us) * (t - s.mean_us);
    s.std_us = std::sqrt(var / static_cast<double>(iterations));
    return s;
}

inline LatencyStats bench_attention_block(AttentionBlock& block, std::size_t L, BenchKernel kernel,
                                          std::size_t warmup, std::size_t iterations, std::uint64_t seed) {
    const std::size_t d = block.config().d_model;
    Rng rng = derive_rng(seed, {0x4849, L});
    std::normal_distribution<double> nd(0.0, 1.0);
    std::vector<double> h(L * d), out(L * d);
    for (double& x : h) x = nd(rng);
    return time_calls([&] { block.forward(h.data(), L, kernel, out.data()); }, warmup, iterations);
}

// Attention-block latency for each variant, kernel and length in cfg.
inline BenchResult bench_attention(const std::vector<AttentionVariant>& variants,
                                   const std::vector<BenchKernel>& kernels, const BenchConfig& cfg,
                                   const AttentionConfig& base = {}) {
    cfg.validate();
    BenchResult r;
    r.warnings = timer_warnings();
    for (auto variant : variants) {
        AttentionConfig ac = base;
        ac.variant = variant;
        AttentionBlock block(ac, cfg.seed);
        for (auto kernel : kernels)
            for (auto L : cfg.lengths)
                r.rows.push_back({variant, kernel, L,
                                  bench_attention_block(block, L, kernel, cfg.warmup, cfg.iterations, cfg.seed)});
    }
    return r;
}

// Whole-model eval forward at batch 1 on a fixed random frame.
inline LatencyStats bench_model(const ModelParams& params, std::size_t warmup, std::size_t iterations,
                                std::uint64_t seed = 0) {
    require(warmup >= 1 && iterations >= 1, ErrorKind::parameter, "bench_model needs warmup and iterations >= 1");
    Rng rng = derive_rng(seed, {0x4d4f});
    std::normal_distribution<double> nd(0.0, 1.0);
    std::vector<double> x(2 * params.config.T);
    for (double& v : x) v = nd(rng);
    const Tensor input({1, 2, params.config.T}, std::move(x));
    NoGradGuard guard;
    return time_calls([&] { (void)forward_eval(params, input); }, warmup, iterations);
}

// Least-squares slope of log(y) against log(x).
inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
    require(x.size() == y.size() && x.size() >= 2, ErrorKind::parameter, "slope fit needs >= 2 matching points");
    const double n = static_cast<double>(x.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        require(x[i] > 0 && y[i] > 0, ErrorKind::parameter, "slope fit needs positive values");
        const double lx = std::log(x[i]), ly = std::log(y[i]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

inline std::string bench_csv(const BenchResult& r) {
    std::string out = "variant,kernel,L,mean_us,std_us\n";
    char buf[160];
    for (const auto& row : r.rows) {
        std::snprintf(buf, sizeof buf, "%s,%s,%zu,%.3f,%.3f\n", std::string(variant_name(row.variant)).c_str(),
                      std::string(kernel_name(row.kernel)).c_str(), row.length, row.stats.mean_us, row.stats.std_us);
        out += buf;
    }
    return out;
}

}  // namespace amc
