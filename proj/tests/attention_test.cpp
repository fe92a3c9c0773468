#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "amc/attention.hpp"
#include "attention_properties.hpp"
#include "gradcheck.hpp"

namespace amc {
namespace {

using testing::grad_check;
using testing::projected;
using testing::randn;

std::vector<int> allowed_matrix(const AttentionMask& m) {
    std::vector<int> out;
    for (std::size_t i = 0; i < m.length(); ++i)
        for (std::size_t j = 0; j < m.length(); ++j) out.push_back(m.allowed(i, j) ? 1 : 0);
    return out;
}

TEST(BuildMask, CausalLowerTriangular) {
    auto m = build_mask(AttentionVariant::causal, 3);
    EXPECT_EQ(allowed_matrix(m), (std::vector<int>{1, 0, 0, 1, 1, 0, 1, 1, 1}));
    EXPECT_EQ(m.additive()[1], kMaskSentinel);
    EXPECT_EQ(m.additive()[3], 0.0);
}

TEST(BuildMask, SparseWindowWiderThanSequence) {
    auto m = build_mask(AttentionVariant::sparse, 3, 8);
    EXPECT_EQ(m.allowed_count(), 9u);
}

TEST(BuildMask, SparseTridiagonal) {
    auto m = build_mask(AttentionVariant::sparse, 5, 2);
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 5; ++j)
            EXPECT_EQ(m.allowed(i, j), (i > j ? i - j : j - i) <= 1) << i << "," << j;
}

TEST(BuildMask, Errors) {
    EXPECT_THROW(build_mask(AttentionVariant::causal, 0), Error);
    EXPECT_THROW(build_mask(AttentionVariant::sparse, 4), Error);
    EXPECT_THROW(build_mask(AttentionVariant::baseline, 4, 8), Error);
}

TEST(BuildMask, DiagonalAlwaysAllowed) {
    for (auto v : kAllVariants) {
        for (std::size_t len = 1; len < 20; ++len) {
            auto window = v == AttentionVariant::sparse ? std::optional<std::size_t>(2 + 2 * (len % 4)) : std::nullopt;
            auto m = build_mask(v, len, window);
            for (std::size_t i = 0; i < len; ++i) EXPECT_TRUE(m.allowed(i, i));
        }
    }
}

TEST(BuildMask, CacheReturnsSharedInstance) {
    auto a = cached_mask(AttentionVariant::sparse, 64, 8);
    auto b = cached_mask(AttentionVariant::sparse, 64, 8);
    EXPECT_EQ(a.get(), b.get());
    EXPECT_NE(a.get(), cached_mask(AttentionVariant::causal, 64, std::nullopt).get());
}

TEST(AttentionConfig, Validation) {
    AttentionConfig cfg;
    EXPECT_NO_THROW(cfg.validate());
    EXPECT_EQ(cfg.head_dim(), 16u);
    cfg.heads = 3;
    EXPECT_THROW(cfg.validate(), Error);
    cfg = {};
    cfg.window = 5;
    EXPECT_THROW(cfg.validate(), Error);
}

TEST(MultiHeadAttention, LengthOneIsOutputProjectionOfValues) {
    Rng rng(11);
    AttentionConfig cfg;
    cfg.d_model = 8;
    cfg.heads = 2;
    for (auto v : kAllVariants) {
        cfg.variant = v;
        auto p = init_attention(cfg, rng);
        for (auto& head : p.heads) head.bv = randn({4}, rng);
        p.bo = randn({8}, rng);
        Tensor h = randn({1, 1, 8}, rng, false);
        Tensor out = multi_head_attention(h, p, cfg, Mode::eval, rng);
        std::vector<Tensor> vals;
        for (auto& head : p.heads) vals.push_back(linear(h, head.wv, head.bv));
        Tensor want = linear(concat_lastdim(vals), p.wo, p.bo);
        for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(out[i], want[i], 1e-12);
    }
}

// Scalar-loop evaluation of softmax(QK^T / sqrt(dk) + M) V, single head.
std::vector<double> brute_force_attention(const std::vector<double>& h, std::size_t length, std::size_t d,
                                          const AttentionHead& p, const Tensor& wo, AttentionVariant v,
                                          std::size_t window) {
    auto proj = [&](const Tensor& w, const Tensor& b) {
        std::vector<double> out(length * d);
        for (std::size_t i = 0; i < length; ++i)
            for (std::size_t j = 0; j < d; ++j) {
                double s = b[j];
                for (std::size_t k = 0; k < d; ++k) s += h[i * d + k] * w[k * d + j];
                out[i * d + j] = s;
            }
        return out;
    };
    auto q = proj(p.wq, p.bq), k = proj(p.wk, p.bk), val = proj(p.wv, p.bv);
    std::vector<double> head(length * d, 0.0);
    for (std::size_t i = 0; i < length; ++i) {
        std::vector<double> w(length);
        double mx = -1e300;
        for (std::size_t j = 0; j < length; ++j) {
            bool allowed = true;
            if (v == AttentionVariant::causal) allowed = j <= i;
            if (v == AttentionVariant::sparse) allowed = (i > j ? i - j : j - i) <= window / 2;
            double s = 0;
            for (std::size_t c = 0; c < d; ++c) s += q[i * d + c] * k[j * d + c];
            w[j] = allowed ? s / std::sqrt(static_cast<double>(d)) : -1e300;
            mx = std::max(mx, w[j]);
        }
        double z = 0;
        for (std::size_t j = 0; j < length; ++j) {
            w[j] = w[j] == -1e300 ? 0.0 : std::exp(w[j] - mx);
            z += w[j];
        }
        for (std::size_t j = 0; j < length; ++j)
            for (std::size_t c = 0; c < d; ++c) head[i * d + c] += w[j] / z * val[j * d + c];
    }
    std::vector<double> out(length * d, 0.0);
    for (std::size_t i = 0; i < length; ++i)
        for (std::size_t j = 0; j < d; ++j)
            for (std::size_t k2 = 0; k2 < d; ++k2) out[i * d + j] += head[i * d + k2] * wo[k2 * d + j];
    return out;
}

TEST(MultiHeadAttention, MatchesBruteForceScalarOracle) {
    AttentionConfig cfg;
    cfg.d_model = 4;
    cfg.heads = 1;
    cfg.window = 2;
    auto ints = [](std::vector<double> v) { return Tensor({4, 4}, std::move(v), true); };
    AttentionParams p;
    AttentionHead head;
    head.wq = ints({1, 0, 0, 1, 0, 1, 1, 0, 0, 0, 1, 0, 1, 0, 0, 0});
    head.wk = ints({0, 1, 0, 0, 1, 0, 0, 1, 0, 0, 1, 1, 0, 1, 0, 0});
    head.wv = ints({2, 0, 1, 0, 0, 1, 0, -1, 1, 0, 0, 1, 0, 2, 1, 0});
    head.bq = Tensor::zeros({4}, true);
    head.bk = Tensor::zeros({4}, true);
    head.bv = Tensor::zeros({4}, true);
    p.heads.push_back(head);
    p.wo = ints({1, 0, 0, 0, 0, 0, 1, 0, 0, 1, 0, 0, 1, 0, 0, 1});
    p.bo = Tensor::zeros({4}, true);
    std::vector<double> h{0.5, -1, 0.25, 1, 1, 0, -0.5, 0.5, -1, 0.5, 1, 0, 0, 1, 0.5, -0.5};
    Rng rng(0);
    for (auto v : kAllVariants) {
        cfg.variant = v;
        Tensor out = multi_head_attention(Tensor({1, 4, 4}, h), p, cfg, Mode::eval, rng);
        auto want = brute_force_attention(h, 4, 4, head, p.wo, v, cfg.window);
        for (std::size_t i = 0; i < 16; ++i) EXPECT_NEAR(out[i], want[i], 1e-12) << variant_name(v) << " " << i;
    }
}

TEST(MultiHeadAttention, SparseWideWindowEqualsBaseline) {
    Rng rng(5);
    AttentionConfig cfg;
    cfg.d_model = 16;
    auto p = init_attention(cfg, rng);
    Tensor h = randn({2, 10, 16}, rng, false);
    Tensor a = multi_head_attention(h, p, cfg, Mode::eval, rng);
    cfg.variant = AttentionVariant::sparse;
    cfg.window = 20;
    Tensor b = multi_head_attention(h, p, cfg, Mode::eval, rng);
    for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a[i], b[i], 1e-9);
}

TEST(MultiHeadAttention, ShapeMismatch) {
    Rng rng(1);
    AttentionConfig cfg;
    auto p = init_attention(cfg, rng);
    EXPECT_THROW(multi_head_attention(Tensor::zeros({1, 4, 32}), p, cfg, Mode::eval, rng), Error);
    AttentionConfig two = cfg;
    two.heads = 2;
    EXPECT_THROW(multi_head_attention(Tensor::zeros({1, 4, 64}), p, two, Mode::eval, rng), Error);
}

TEST(MultiHeadAttention, OutputShapeEqualsInputShape) {
    Rng rng(2);
    for (std::size_t heads : {1, 2, 4, 8}) {
        AttentionConfig cfg;
        cfg.d_model = 32;
        cfg.heads = heads;
        auto p = init_attention(cfg, rng);
        Tensor h = randn({3, 7, 32}, rng, false);
        EXPECT_EQ(multi_head_attention(h, p, cfg, Mode::train, rng).shape(), h.shape());
    }
}

TEST(MultiHeadAttention, GradientMatchesFiniteDifferences) {
    for (auto v : kAllVariants) {
        for (int seed = 0; seed < 20; ++seed) {
            Rng rng(900 + seed);
            AttentionConfig cfg;
            cfg.variant = v;
            cfg.d_model = 4;
            cfg.heads = 2;
            cfg.window = 2;
            auto p = init_attention(cfg, rng);
            Tensor h = randn({2, 5, 4}, rng);
            Tensor r = randn({2, 5, 4}, rng, false);
            std::vector<Tensor> inputs{h, p.wo, p.bo};
            for (auto& head : p.heads) {
                for (auto* t : {&head.wq, &head.bq, &head.wk, &head.bk, &head.wv, &head.bv}) {
                    *t = randn(t->shape(), rng);
                    inputs.push_back(*t);
                }
            }
            auto res = grad_check(inputs, [&] {
                Rng drop(seed);  // same dropout mask for every evaluation
                return projected(multi_head_attention(h, p, cfg, Mode::train, drop), r);
            });
            EXPECT_LT(res.max_rel_err, 1e-4) << variant_name(v) << " seed " << seed << " " << res.worst;
        }
    }
}

TEST(AttentionWeights, CausalFirstRowAttendsToItself) {
    Rng rng(3);
    AttentionConfig cfg;
    cfg.variant = AttentionVariant::causal;
    auto p = init_attention(cfg, rng);
    Tensor w = attention_weights(randn({1, 6, 64}, rng, false), p, cfg);
    ASSERT_EQ(w.shape(), (Shape{1, 4, 6, 6}));
    for (std::size_t h = 0; h < 4; ++h) {
        EXPECT_DOUBLE_EQ(w[h * 36], 1.0);
        for (std::size_t j = 1; j < 6; ++j) EXPECT_EQ(w[h * 36 + j], 0.0);
    }
}

TEST(AttentionWeights, ZeroProjectionsGiveUniformRows) {
    Rng rng(3);
    AttentionConfig cfg;
    auto p = init_attention(cfg, rng);
    for (auto& head : p.heads) {
        head.wq = Tensor::zeros(head.wq.shape());
        head.wk = Tensor::zeros(head.wk.shape());
    }
    Tensor w = attention_weights(randn({2, 5, 64}, rng, false), p, cfg);
    for (double x : w.data()) EXPECT_NEAR(x, 0.2, 1e-15);
}

TEST(AttentionWeights, SparseSupportAndRowStochasticity) {
    Rng rng(4);
    AttentionConfig cfg;
    cfg.variant = AttentionVariant::sparse;
    cfg.window = 2;
    cfg.d_model = 8;
    cfg.heads = 2;
    auto p = init_attention(cfg, rng);
    Tensor w = attention_weights(randn({1, 5, 8}, rng, false), p, cfg);
    for (std::size_t h = 0; h < 2; ++h) {
        for (std::size_t i = 0; i < 5; ++i) {
            double s = 0;
            for (std::size_t j = 0; j < 5; ++j) {
                const double x = w[(h * 5 + i) * 5 + j];
                s += x;
                const bool in_window = (i > j ? i - j : j - i) <= 1;
                if (in_window) {
                    EXPECT_GT(x, 0.0);
                } else {
                    EXPECT_LT(x, 1e-6);
                }
            }
            EXPECT_NEAR(s, 1.0, 1e-9);
        }
    }
}

TEST(MaskProperties, CausalInvariance) {
    auto r = testing::causal_invariance(50, 1);
    EXPECT_TRUE(r.ok) << r.detail;
}

TEST(MaskProperties, SparseLocality) {
    auto r = testing::sparse_locality(50, 2);
    EXPECT_TRUE(r.ok) << r.detail;
}

TEST(MaskProperties, WideSparseEqualsBaseline) {
    auto r = testing::sparse_wide_equals_baseline(50, 3);
    EXPECT_TRUE(r.ok) << r.detail;
}

TEST(MaskProperties, LengthOneAgreement) {
    auto r = testing::length_one_agreement(50, 4);
    EXPECT_TRUE(r.ok) << r.detail;
}

}  // namespace
}  // namespace amc
