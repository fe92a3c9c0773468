#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "amc/error.hpp"
#include "amc/ops.hpp"
#include "amc/random.hpp"
#include "amc/tensor.hpp"

namespace amc {

enum class AttentionVariant { baseline, causal, sparse };

inline constexpr std::string_view variant_name(AttentionVariant v) {
    switch (v) {
        case AttentionVariant::baseline: return "baseline";
        case AttentionVariant::causal: return "causal";
        case AttentionVariant::sparse: return "sparse";
    }
    return "?";
}

inline std::optional<AttentionVariant> parse_variant(std::string_view s) {
    if (s == "baseline") return AttentionVariant::baseline;
    if (s == "causal") return AttentionVariant::causal;
    if (s == "sparse") return AttentionVariant::sparse;
    return std::nullopt;
}

inline constexpr AttentionVariant kAllVariants[] = {AttentionVariant::baseline, AttentionVariant::causal,
                                                    AttentionVariant::sparse};

struct AttentionConfig {
    AttentionVariant variant = AttentionVariant::baseline;
    std::size_t d_model = 64;
    std::size_t heads = 4;
    std::size_t window = 8;  // only read by the sparse variant
    double attn_dropout = 0.1;

    std::size_t head_dim() const { return d_model / heads; }

    void validate() const {
        require(d_model > 0 && heads > 0, ErrorKind::dimension, "attention d_model and heads must be positive");
        require(d_model % heads == 0, ErrorKind::dimension,
                "d_model " + std::to_string(d_model) + " not divisible by heads " + std::to_string(heads));
        require(window >= 2 && window % 2 == 0, ErrorKind::parameter,
                "attention window must be even and >= 2, got " + std::to_string(window));
        require(attn_dropout >= 0.0 && attn_dropout < 1.0, ErrorKind::parameter,
                "attention dropout must be in [0, 1)");
    }

    std::optional<std::size_t> mask_window() const {
        return variant == AttentionVariant::sparse ? std::optional<std::size_t>(window) : std::nullopt;
    }
};

// L x L allowed/forbidden pattern. Forbidden entries become kMaskSentinel in
// the additive form that is summed onto scaled scores before softmax.
class AttentionMask {
   public:
    AttentionMask(std::size_t length, std::vector<unsigned char> allowed)
        : length_(length), allowed_(std::move(allowed)) {
        std::vector<double> add(length_ * length_);
        for (std::size_t i = 0; i < add.size(); ++i) add[i] = allowed_[i] ? 0.0 : kMaskSentinel;
        additive_ = Tensor({length_, length_}, std::move(add));
    }

    std::size_t length() const { return length_; }
    bool allowed(std::size_t i, std::size_t j) const { return allowed_[i * length_ + j] != 0; }
    const Tensor& additive() const { return additive_; }

    std::size_t allowed_count() const {
        std::size_t n = 0;
        for (auto a : allowed_) n += a;
        return n;
    }

   private:
    std::size_t length_;
    std::vector<unsigned char> allowed_;
    Tensor additive_;
};

// baseline: everything; causal: j <= i; sparse: |i - j| <= w / 2.
inline AttentionMask build_mask(AttentionVariant variant, std::size_t length,
                                std::optional<std::size_t> window = std::nullopt) {
    require(length > 0, ErrorKind::dimension, "attention mask length must be >= 1");
    const bool sparse = variant == AttentionVariant::sparse;
    require(sparse == window.has_value(), ErrorKind::parameter,
            sparse ? "sparse mask needs a window size" : "window size given for a non-sparse mask");
    const std::size_t half = sparse ? *window / 2 : 0;
    std::vector<unsigned char> allowed(length * length);
    for (std::size_t i = 0; i < length; ++i) {
        for (std::size_t j = 0; j < length; ++j) {
            bool ok = true;
            if (variant == AttentionVariant::causal) {
                ok = j <= i;
            } else if (sparse) {
                ok = (i > j ? i - j : j - i) <= half;
            }
            allowed[i * length + j] = ok ? 1 : 0;
        }
    }
    return AttentionMask(length, std::move(allowed));
}

// Masks are immutable once built and shared between model instances.
inline std::shared_ptr<const AttentionMask> cached_mask(AttentionVariant variant, std::size_t length,
                                                        std::optional<std::size_t> window) {
    using Key = std::tuple<int, std::size_t, std::size_t>;
    static std::mutex mu;
    static std::map<Key, std::shared_ptr<const AttentionMask>> cache;
    const Key key{static_cast<int>(variant), length, window.value_or(0)};
    std::lock_guard lock(mu);
    auto it = cache.find(key);
    if (it == cache.end()) {
        it = cache.emplace(key, std::make_shared<const AttentionMask>(build_mask(variant, length, window))).first;
    }
    return it->second;
}

// One head's projections; weights are [d_model, d_k], biases [d_k].
struct AttentionHead {
    Tensor wq, bq, wk, bk, wv, bv;
};

struct AttentionParams {
    std::vector<AttentionHead> heads;
    Tensor wo;  // [d_model, d_model]
    Tensor bo;  // [d_model]
};

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.
inline Tensor uniform_weight(Shape shape, std::size_t fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> uni(-bound, bound);
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = uni(rng);
    return Tensor(std::move(shape), std::move(v), true);
}

inline AttentionParams init_attention(const AttentionConfig& cfg, Rng& rng) {
    cfg.validate();
    const std::size_t d = cfg.d_model, dk = cfg.head_dim();
    AttentionParams p;
    for (std::size_t h = 0; h < cfg.heads; ++h) {
        AttentionHead head;
        head.wq = uniform_weight({d, dk}, d, rng);
        head.bq = Tensor::zeros({dk}, true);
        head.wk = uniform_weight({d, dk}, d, rng);
        head.bk = Tensor::zeros({dk}, true);
        head.wv = uniform_weight({d, dk}, d, rng);
        head.bv = Tensor::zeros({dk}, true);
        p.heads.push_back(std::move(head));
    }
    p.wo = uniform_weight({d, d}, d, rng);
    p.bo = Tensor::zeros({d}, true);
    return p;
}

inline std::size_t attention_param_count(const AttentionConfig& cfg) {
    const std::size_t d = cfg.d_model, dk = cfg.head_dim();
    return cfg.heads * 3 * (d * dk + dk) + d * d + d;
}

namespace detail {

inline void check_attention_input(const Tensor& h, const AttentionParams& params, const AttentionConfig& cfg) {
    cfg.validate();
    require(h.rank() == 3 && h.dim(2) == cfg.d_model, ErrorKind::dimension,
            "attention input " + shape_str(h.shape()) + " does not end in d_model " + std::to_string(cfg.d_model));
    require(params.heads.size() == cfg.heads, ErrorKind::dimension,
            "attention params have " + std::to_string(params.heads.size()) + " heads, config expects " +
                std::to_string(cfg.heads));
}

// Post-softmax weights of one head: [B, L, L].
inline Tensor head_weights(const Tensor& q, const Tensor& k, const AttentionConfig& cfg, std::size_t length) {
    Tensor scores = scale(matmul(q, transpose_last2(k)), 1.0 / std::sqrt(static_cast<double>(cfg.head_dim())));
    if (cfg.variant != AttentionVariant::baseline) {
        scores = add(scores, cached_mask(cfg.variant, length, cfg.mask_window())->additive());
    }
    return softmax_lastdim(scores);
}

}  // namespace detail

// Masked multi-head self-attention: per-head Q/K/V projections, scaled dot
// products, additive mask, softmax, attention dropout, weighted values,
// concatenation and the output projection. h: [B, L, d_model].
inline Tensor multi_head_attention(const Tensor& h, const AttentionParams& params, const AttentionConfig& cfg,
                                   Mode mode, Rng& rng) {
    detail::check_attention_input(h, params, cfg);
    const std::size_t length = h.dim(1);
    std::vector<Tensor> heads;
    heads.reserve(cfg.heads);
    for (const auto& p : params.heads) {
        Tensor q = linear(h, p.wq, p.bq);
        Tensor k = linear(h, p.wk, p.bk);
        Tensor v = linear(h, p.wv, p.bv);
        Tensor a = detail::head_weights(q, k, cfg, length);
        a = dropout(a, cfg.attn_dropout, mode, rng);
        heads.push_back(matmul(a, v));
    }
    Tensor c = heads.size() == 1 ? heads[0] : concat_lastdim(heads);
    return linear(c, params.wo, params.bo);
}

// Diagnostic: post-softmax, pre-dropout weights as [B, heads, L, L].
inline Tensor attention_weights(const Tensor& h, const AttentionParams& params, const AttentionConfig& cfg) {
    detail::check_attention_input(h, params, cfg);
    NoGradGuard no_grad;
    const std::size_t nb = h.dim(0), length = h.dim(1), nh = cfg.heads;
    std::vector<double> out(nb * nh * length * length);
    for (std::size_t hi = 0; hi < nh; ++hi) {
        const auto& p = params.heads[hi];
        Tensor a = detail::head_weights(linear(h, p.wq, p.bq), linear(h, p.wk, p.bk), cfg, length);
        for (std::size_t b = 0; b < nb; ++b) {
            std::copy_n(a.data().data() + b * length * length, length * length,
                        out.data() + (b * nh + hi) * length * length);
        }
    }
    return Tensor({nb, nh, length, length}, std::move(out));
}

}  // namespace amc
