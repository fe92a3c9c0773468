#pragma once

// CNN front end -> transformer blocks -> average pooling -> MLP classifier.

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "amc/attention.hpp"
#include "amc/error.hpp"
#include "amc/ops.hpp"
#include "amc/random.hpp"
#include "amc/tensor.hpp"

namespace amc {

struct ModelConfig {
    std::size_t T = 128;
    std::size_t d_model = 64;
    std::size_t conv1_filters = 32;
    std::size_t conv1_kernel = 7;
    std::size_t conv2_kernel = 5;
    std::size_t conv2_stride = 2;
    std::size_t n_layers = 2;
    std::size_t ffn_dim = 256;
    std::size_t n_classes = 11;
    std::size_t classifier_hidden = 128;
    double dropout = 0.1;
    // d_model is taken from the enclosing config, see attention_config().
    AttentionConfig attention{};

    AttentionConfig attention_config() const {
        AttentionConfig a = attention;
        a.d_model = d_model;
        return a;
    }

    // Same padding on both convolutions: L = ceil(T / conv2_stride).
    std::size_t sequence_length() const { return (T + conv2_stride - 1) / conv2_stride; }

    void validate() const {
        for (auto [v, name] : {std::pair{T, "T"}, {d_model, "d_model"}, {conv1_filters, "conv1_filters"},
                               {conv2_stride, "conv2_stride"}, {n_layers, "n_layers"}, {ffn_dim, "ffn_dim"},
                               {classifier_hidden, "classifier_hidden"}}) {
            require(v > 0, ErrorKind::dimension, std::string(name) + " must be positive");
        }
        require(n_classes >= 2, ErrorKind::dimension, "n_classes must be >= 2");
        require(conv1_kernel % 2 == 1 && conv2_kernel % 2 == 1, ErrorKind::dimension,
                "same padding needs odd conv kernels");
        require(dropout >= 0.0 && dropout < 1.0, ErrorKind::parameter, "dropout must be in [0, 1)");
        attention_config().validate();
    }

    bool operator==(const ModelConfig& o) const {
        const auto a = attention_config(), b = o.attention_config();
        return T == o.T && d_model == o.d_model && conv1_filters == o.conv1_filters &&
               conv1_kernel == o.conv1_kernel && conv2_kernel == o.conv2_kernel && conv2_stride == o.conv2_stride &&
               n_layers == o.n_layers && ffn_dim == o.ffn_dim && n_classes == o.n_classes &&
               classifier_hidden == o.classifier_hidden && dropout == o.dropout && a.variant == b.variant &&
               a.heads == b.heads && a.window == b.window && a.attn_dropout == b.attn_dropout;
    }
};

struct ConvBlock {
    Tensor weight;  // [C_out, C_in, k]
    Tensor bias;    // [C_out]
    Tensor gamma;   // batch norm scale
    Tensor beta;
    BatchNormState bn;
};

struct TransformerLayer {
    AttentionParams attn;
    Tensor ln1_gamma, ln1_beta;
    Tensor ffn_w1, ffn_b1;  // [d_model, ffn_dim]
    Tensor ffn_w2, ffn_b2;  // [ffn_dim, d_model]
    Tensor ln2_gamma, ln2_beta;
};

struct ClassifierHead {
    Tensor w1, b1;  // [d_model, hidden]
    Tensor w2, b2;  // [hidden, K]
};

struct ModelParams {
    ModelConfig config;
    ConvBlock conv1, conv2;
    std::vector<TransformerLayer> layers;
    ClassifierHead classifier;

    // Visits every trainable tensor in the fixed checkpoint order.
    // f(name, tensor, decays) where `decays` is false for biases and norm
    // scale/shift parameters.
    template <class F>
    void for_each_parameter(F&& f) {
        visit(*this, f);
    }
    template <class F>
    void for_each_parameter(F&& f) const {
        visit(*this, f);
    }

    std::size_t count() const {
        std::size_t n = 0;
        for_each_parameter([&](const std::string&, const Tensor& t, bool) { n += t.numel(); });
        return n;
    }

    std::vector<Tensor> tensors() const {
        std::vector<Tensor> out;
        for_each_parameter([&](const std::string&, const Tensor& t, bool) { out.push_back(t); });
        return out;
    }

    void zero_grad() {
        for_each_parameter([](const std::string&, Tensor& t, bool) { t.zero_grad(); });
    }

    // Deep copy; the result shares no storage with *this.
    ModelParams clone() const {
        ModelParams copy = *this;
        copy.for_each_parameter([](const std::string&, Tensor& t, bool) { t = t.clone(); });
        return copy;
    }

   private:
    template <class Self, class F>
    static void visit(Self& p, F& f) {
        auto conv = [&](auto& c, const std::string& cn, const std::string& bn) {
            f(cn + ".weight", c.weight, true);
            f(cn + ".bias", c.bias, false);
            f(bn + ".gamma", c.gamma, false);
            f(bn + ".beta", c.beta, false);
        };
        conv(p.conv1, "conv1", "bn1");
        conv(p.conv2, "conv2", "bn2");
        for (std::size_t l = 0; l < p.layers.size(); ++l) {
            auto& L = p.layers[l];
            const std::string pre = "layers." + std::to_string(l) + ".";
            for (std::size_t h = 0; h < L.attn.heads.size(); ++h) {
                auto& hd = L.attn.heads[h];
                const std::string hp = pre + "attn.head" + std::to_string(h) + ".";
                f(hp + "wq", hd.wq, true);
                f(hp + "bq", hd.bq, false);
                f(hp + "wk", hd.wk, true);
                f(hp + "bk", hd.bk, false);
                f(hp + "wv", hd.wv, true);
                f(hp + "bv", hd.bv, false);
            }
            f(pre + "attn.wo", L.attn.wo, true);
            f(pre + "attn.bo", L.attn.bo, false);
            f(pre + "ln1.gamma", L.ln1_gamma, false);
            f(pre + "ln1.beta", L.ln1_beta, false);
            f(pre + "ffn.w1", L.ffn_w1, true);
            f(pre + "ffn.b1", L.ffn_b1, false);
            f(pre + "ffn.w2", L.ffn_w2, true);
            f(pre + "ffn.b2", L.ffn_b2, false);
            f(pre + "ln2.gamma", L.ln2_gamma, false);
            f(pre + "ln2.beta", L.ln2_beta, false);
        }
        f("classifier.w1", p.classifier.w1, true);
        f("classifier.b1", p.classifier.b1, false);
        f("classifier.w2", p.classifier.w2, true);
        f("classifier.b2", p.classifier.b2, false);
    }
};

// Exact trainable-scalar count, derived from the config alone.
inline std::size_t param_count(const ModelConfig& cfg) {
    const std::size_t d = cfg.d_model, c1 = cfg.conv1_filters;
    const std::size_t conv1 = c1 * 2 * cfg.conv1_kernel + c1 + 2 * c1;
    const std::size_t conv2 = d * c1 * cfg.conv2_kernel + d + 2 * d;
    const std::size_t layer = attention_param_count(cfg.attention_config()) + 2 * d + (d * cfg.ffn_dim + cfg.ffn_dim) +
                              (cfg.ffn_dim * d + d) + 2 * d;
    const std::size_t head = (d * cfg.classifier_hidden + cfg.classifier_hidden) +
                             (cfg.classifier_hidden * cfg.n_classes + cfg.n_classes);
    return conv1 + conv2 + cfg.n_layers * layer + head;
}

// Fan-in uniform weights (bound 1/sqrt(fan_in)), zero biases, unit norm scales.
inline ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng = derive_rng(seed, {0x1217});
    const std::size_t d = cfg.d_model, c1 = cfg.conv1_filters;
    auto conv = [&](std::size_t cout, std::size_t cin, std::size_t k) {
        ConvBlock b;
        b.weight = uniform_weight({cout, cin, k}, cin * k, rng);
        b.bias = Tensor::zeros({cout}, true);
        b.gamma = Tensor::full({cout}, 1.0, true);
        b.beta = Tensor::zeros({cout}, true);
        b.bn = BatchNormState(cout);
        return b;
    };
    ModelParams p;
    p.config = cfg;
    p.conv1 = conv(c1, 2, cfg.conv1_kernel);
    p.conv2 = conv(d, c1, cfg.conv2_kernel);
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        TransformerLayer L;
        L.attn = init_attention(cfg.attention_config(), rng);
        L.ln1_gamma = Tensor::full({d}, 1.0, true);
        L.ln1_beta = Tensor::zeros({d}, true);
        L.ffn_w1 = uniform_weight({d, cfg.ffn_dim}, d, rng);
        L.ffn_b1 = Tensor::zeros({cfg.ffn_dim}, true);
        L.ffn_w2 = uniform_weight({cfg.ffn_dim, d}, cfg.ffn_dim, rng);
        L.ffn_b2 = Tensor::zeros({d}, true);
        L.ln2_gamma = Tensor::full({d}, 1.0, true);
        L.ln2_beta = Tensor::zeros({d}, true);
        p.layers.push_back(std::move(L));
    }
    p.classifier.w1 = uniform_weight({d, cfg.classifier_hidden}, d, rng);
    p.classifier.b1 = Tensor::zeros({cfg.classifier_hidden}, true);
    p.classifier.w2 = uniform_weight({cfg.classifier_hidden, cfg.n_classes}, cfg.classifier_hidden, rng);
    p.classifier.b2 = Tensor::zeros({cfg.n_classes}, true);
    return p;
}

namespace detail {

inline Tensor conv_block(const Tensor& x, const ConvBlock& c, std::size_t stride, BatchNormState* train_bn) {
    const std::size_t pad = (c.weight.dim(2) - 1) / 2;
    Tensor y = conv1d(x, c.weight, c.bias, stride, pad);
    y = train_bn ? batchnorm1d_train(y, c.gamma, c.beta, *train_bn) : batchnorm1d_eval(y, c.gamma, c.beta, c.bn);
    return relu(y);
}

inline Tensor forward_impl(const ModelParams& p, const Tensor& x, Mode mode, Rng& rng, BatchNormState* bn1,
                           BatchNormState* bn2) {
    const ModelConfig& cfg = p.config;
    require(x.rank() == 3 && x.dim(1) == 2 && x.dim(2) == cfg.T, ErrorKind::dimension,
            "model input " + shape_str(x.shape()) + " does not match [B, 2, " + std::to_string(cfg.T) + "]");
    const AttentionConfig acfg = cfg.attention_config();

    Tensor h = conv_block(x, p.conv1, 1, bn1);
    h = conv_block(h, p.conv2, cfg.conv2_stride, bn2);
    h = transpose_last2(h);  // [B, L, d_model]

    for (const auto& L : p.layers) {
        Tensor a = multi_head_attention(h, L.attn, acfg, mode, rng);
        h = layernorm(add(h, dropout(a, cfg.dropout, mode, rng)), L.ln1_gamma, L.ln1_beta);
        Tensor f = dropout(gelu(linear(h, L.ffn_w1, L.ffn_b1)), cfg.dropout, mode, rng);
        f = linear(f, L.ffn_w2, L.ffn_b2);
        h = layernorm(add(h, dropout(f, cfg.dropout, mode, rng)), L.ln2_gamma, L.ln2_beta);
    }

    Tensor z = mean_axis(h, 1);
    Tensor c = dropout(gelu(linear(z, p.classifier.w1, p.classifier.b1)), cfg.dropout, mode, rng);
    return linear(c, p.classifier.w2, p.classifier.b2);
}

}  // namespace detail

// x: [B, 2, T] -> logits [B, K]. Train mode updates the batch-norm running
// statistics held in `params`.
inline Tensor forward(ModelParams& params, const Tensor& x, Mode mode, Rng& rng) {
    if (mode == Mode::train) {
        return detail::forward_impl(params, x, mode, rng, &params.conv1.bn, &params.conv2.bn);
    }
    return detail::forward_impl(params, x, mode, rng, nullptr, nullptr);
}

// Eval-mode forward on frozen parameters; safe for concurrent readers.
inline Tensor forward_eval(const ModelParams& params, const Tensor& x) {
    Rng unused(0);
    return detail::forward_impl(params, x, Mode::eval, unused, nullptr, nullptr);
}

inline std::vector<int> argmax_rows(const Tensor& logits) {
    const std::size_t nb = logits.dim(0), nk = logits.dim(1);
    std::vector<int> out(nb);
    for (std::size_t b = 0; b < nb; ++b) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < nk; ++k)
            if (logits[b * nk + k] > logits[b * nk + best]) best = k;
        out[b] = static_cast<int>(best);
    }
    return out;
}

}  // namespace amc
